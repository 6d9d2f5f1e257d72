use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::potentials::PotentialField;

/// A discretised path: fixed endpoints plus `n` interior images.
///
/// `images` holds all `n + 2` points, so interior image `i` lives at index `i`
/// for `1 <= i <= n`.
#[derive(Clone, Debug)]
pub struct Band {
    pub images: Vec<Vector>,
    /// Mean energies for every point, endpoints included.
    pub energies: Vec<f64>,
    /// Unit tangents (meaningful for interior indices only).
    pub tangents: Vec<Vector>,
    /// Relaxed tangent state used by smoothing.
    pub smoothed: Vec<Option<Vector>>,
    pub climbing: Option<usize>,
}

impl Band {
    pub fn new(images: Vec<Vector>) -> Result<Self> {
        if images.len() < 3 {
            return Err(Error::InvalidParameter("a band needs two endpoints and at least one image".into()));
        }
        let d = images[0].len();
        for x in &images {
            crate::error::check_dim(d, x.len())?;
        }
        let m = images.len();
        Ok(Self {
            images,
            energies: vec![f64::NAN; m],
            tangents: vec![Vector::zeros(d); m],
            smoothed: vec![None; m],
            climbing: None,
        })
    }

    /// Straight-line band with `n` equally spaced interior images.
    pub fn linear(a: &Vector, b: &Vector, n: usize) -> Result<Self> {
        let images = (0..n + 2).map(|i| a + (b - a) * (i as f64 / (n + 1) as f64)).collect();
        Self::new(images)
    }

    pub fn n_interior(&self) -> usize {
        self.images.len() - 2
    }

    pub fn dim(&self) -> usize {
        self.images[0].len()
    }

    pub fn interior(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n_interior()
    }

    /// Refresh cached mean energies at every point (diagnostic evaluations).
    pub fn refresh_energies(&mut self, mean: &dyn PotentialField) -> Result<()> {
        for (e, x) in self.energies.iter_mut().zip(&self.images) {
            *e = mean.energy(x)?;
        }
        Ok(())
    }

    /// Interior image of highest cached energy; ties go to the smallest index.
    pub fn highest_image(&self) -> usize {
        let mut best = 1;
        for i in self.interior() {
            if self.energies[i] > self.energies[best] {
                best = i;
            }
        }
        best
    }

    /// `max_i E(x_i) - E(x_0)` over interior images.
    pub fn barrier(&self) -> f64 {
        self.energies[self.highest_image()] - self.energies[0]
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.images.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
    }

    /// Redistribute interior images to equal arc length along the
    /// piecewise-linear band. With a climbing image, each side of it is
    /// redistributed separately and the climbing image stays put.
    pub fn reparametrize(&mut self) {
        let last = self.images.len() - 1;
        match self.climbing {
            Some(c) if c > 0 && c < last => {
                redistribute(&mut self.images, 0, c);
                redistribute(&mut self.images, c, last);
            }
            _ => redistribute(&mut self.images, 0, last),
        }
        for i in 1..last {
            self.energies[i] = f64::NAN;
        }
        self.smoothed.iter_mut().for_each(|s| *s = None);
    }
}

/// Equal-arc-length redistribution of `images[lo+1..hi]` along the polyline
/// `images[lo..=hi]`.
fn redistribute(images: &mut [Vector], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let pts: Vec<Vector> = images[lo..=hi].to_vec();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (&w[1] - &w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return;
    }
    let m = hi - lo;
    let mut seg = 0;
    for j in 1..m {
        let s = total * j as f64 / m as f64;
        while seg + 1 < pts.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        images[lo + j] = &pts[seg] + (&pts[seg + 1] - &pts[seg]) * t;
    }
}

/// Henkelman-Jonsson improved tangent at interior image `i`, blended with the
/// previous relaxed tangent by weight `omega` and normalised.
///
/// Updates the relaxed-tangent state and the stored tangent of image `i`.
pub fn hj_tangent(band: &mut Band, i: usize, omega: f64) -> Result<Vector> {
    let raw = raw_tangent(band, i)?;
    let out = match (&band.smoothed[i], omega > 0.0) {
        (Some(prev), true) => {
            let blend = &raw * (1.0 - omega) + prev * omega;
            let n = blend.norm();
            if n > 1e-12 {
                blend / n
            } else {
                raw
            }
        }
        _ => raw,
    };
    band.smoothed[i] = Some(out.clone());
    band.tangents[i] = out.clone();
    Ok(out)
}

fn raw_tangent(band: &Band, i: usize) -> Result<Vector> {
    if i == 0 || i > band.n_interior() {
        return Err(Error::InvalidParameter(format!("tangent requested at non-interior index {i}")));
    }
    let (em, e0, ep) = (band.energies[i - 1], band.energies[i], band.energies[i + 1]);
    if !(em.is_finite() && e0.is_finite() && ep.is_finite()) {
        return Err(Error::NonFinite("band energies"));
    }
    let tp = &band.images[i + 1] - &band.images[i];
    let tm = &band.images[i] - &band.images[i - 1];
    let t = if ep > e0 && e0 > em {
        tp
    } else if ep < e0 && e0 < em {
        tm
    } else {
        let dmax = (ep - e0).abs().max((em - e0).abs());
        let dmin = (ep - e0).abs().min((em - e0).abs());
        if ep > em {
            tp * dmax + tm * dmin
        } else {
            tp * dmin + tm * dmax
        }
    };
    let n = t.norm();
    if !(n > 0.0) {
        return Err(Error::DegenerateTangent(n));
    }
    Ok(t / n)
}
