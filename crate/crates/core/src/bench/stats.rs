use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Boltzmann constant in eV/K.
pub const K_B: f64 = 8.617333262e-5;

/// Largest sample size handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean, `sample_std / sqrt(n)`.
pub fn sem(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Ranks of `|d|` with ties averaged, doubled so that they are integers.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // average of 1-based ranks i+1 ..= j+1, doubled
        let r = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Signed-rank statistic and (doubled) ranks of the nonzero differences.
fn signed_rank(diffs: &[f64]) -> (Vec<u64>, u64, Vec<bool>) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let positive: Vec<bool> = nz.iter().map(|d| *d > 0.0).collect();
    let w2 = ranks.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| *r).sum();
    (ranks, w2, positive)
}

/// Exact `P(W+ >= w)` under the null by dynamic programming over the
/// rank-sum distribution (`2^n` equally likely sign patterns).
fn exact_upper_tail(ranks: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let tail: f64 = counts[w2 as usize..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

/// Normal approximation with continuity and tie corrections.
fn normal_upper_tail(ranks: &[u64], w2: u64) -> f64 {
    let n = ranks.len() as f64;
    let w = w2 as f64 / 2.0;
    let mu = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        var -= (t * t * t - t) / 48.0;
        i += j;
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mu - 0.5) / var.sqrt();
    Normal::standard().sf(z)
}

/// One-sided paired Wilcoxon signed-rank p-value for the alternative that the
/// differences `d_i = first_i - second_i` are positive (second variant
/// smaller). Zero differences are dropped; all-zero input gives 1.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> f64 {
    let (ranks, w2, _) = signed_rank(diffs);
    if ranks.is_empty() {
        return 1.0;
    }
    if ranks.len() <= WILCOXON_EXACT_MAX {
        exact_upper_tail(&ranks, w2)
    } else {
        normal_upper_tail(&ranks, w2)
    }
}

/// The normal approximation alone, for comparison with the exact tail.
pub fn wilcoxon_normal_approx(diffs: &[f64]) -> f64 {
    let (ranks, w2, _) = signed_rank(diffs);
    if ranks.is_empty() {
        return 1.0;
    }
    normal_upper_tail(&ranks, w2)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of the Walsh averages `(d_i + d_j) / 2`, `i <= j`.
pub fn hodges_lehmann(diffs: &[f64]) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::InsufficientData("Hodges-Lehmann needs at least one difference".into()));
    }
    let mut walsh = Vec::with_capacity(diffs.len() * (diffs.len() + 1) / 2);
    for i in 0..diffs.len() {
        for j in i..diffs.len() {
            walsh.push(0.5 * (diffs[i] + diffs[j]));
        }
    }
    walsh.sort_by(f64::total_cmp);
    Ok(median_sorted(&walsh))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Statistical, optimisation and model parts of a barrier error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorDecomposition {
    /// Sample standard deviation of the per-seed barriers.
    pub statistical: f64,
    /// `|mean barrier - mean-target barrier|`.
    pub optimization: f64,
    /// `|mean-target barrier - reference|`.
    pub model: f64,
    /// Root-mean-square error against the reference.
    pub rms: f64,
}

impl ErrorDecomposition {
    /// `rms <= statistical + optimization + model`.
    pub fn bound_holds(&self) -> bool {
        self.rms <= (self.statistical + self.optimization + self.model) * (1.0 + 1e-12) + 1e-15
    }
}

pub fn error_decomposition(barriers: &[f64], mean_target: f64, reference: f64) -> Result<ErrorDecomposition> {
    if barriers.len() < 2 {
        return Err(Error::InsufficientData("error decomposition needs at least two seeds".into()));
    }
    let m = mean(barriers);
    let rms = (barriers.iter().map(|b| (b - reference).powi(2)).sum::<f64>() / barriers.len() as f64).sqrt();
    Ok(ErrorDecomposition {
        statistical: sample_std(barriers),
        optimization: (m - mean_target).abs(),
        model: (mean_target - reference).abs(),
        rms,
    })
}

/// Arrhenius rate factor `exp(-delta / (k_B T))` of a barrier shift `delta` (eV).
pub fn rate_shift(delta_ev: f64, t_kelvin: f64) -> Result<f64> {
    if !(t_kelvin > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {t_kelvin}")));
    }
    Ok((-delta_ev / (K_B * t_kelvin)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    /// Tail probability by listing all sign patterns.
    fn enumerate_tail(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
        let ranks = doubled_ranks(&abs);
        let observed: u64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| *r).sum();
        let n = nz.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w >= observed {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_reference_values() {
        assert_eq!(wilcoxon_one_sided(&[0.5, 1.0, 2.0]), 0.125);
        let all: Vec<f64> = (1..=24).map(|i| i as f64 * 0.1).collect();
        assert_eq!(wilcoxon_one_sided(&all), 2f64.powi(-24));
        assert!((wilcoxon_one_sided(&all) - 5.96e-8).abs() < 1e-10);
        assert!(wilcoxon_one_sided(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]) >= 0.5);
        assert_eq!(wilcoxon_one_sided(&[0.0, 0.0]), 1.0);
        assert_eq!(wilcoxon_one_sided(&[]), 1.0);
    }

    #[test]
    fn exact_tail_matches_enumeration() {
        for seed in 0..200u64 {
            let mut s = StreamKey::new(seed, 0, 3).stream();
            let n = 1 + (seed % 10) as usize;
            // rounding produces ties and zeros
            let d: Vec<f64> = (0..n).map(|_| (s.normal() * 3.0 + 0.5).round()).collect();
            assert_eq!(wilcoxon_one_sided(&d), enumerate_tail(&d), "{d:?}");
        }
    }

    #[test]
    fn normal_approximation_is_close_at_the_switch() {
        for seed in 0..50u64 {
            let mut s = StreamKey::new(seed, 1, 3).stream();
            let d: Vec<f64> = (0..25).map(|_| s.normal() + 0.3).collect();
            let exact = wilcoxon_one_sided(&d);
            let approx = wilcoxon_normal_approx(&d);
            assert!((exact - approx).abs() < 0.01, "{exact} vs {approx}");
        }
    }

    #[test]
    fn hodges_lehmann_values() {
        assert_eq!(hodges_lehmann(&[1.0, 2.0, 9.0]).unwrap(), 3.5);
        assert_eq!(hodges_lehmann(&[-0.7]).unwrap(), -0.7);
        assert_eq!(hodges_lehmann(&[2.5; 6]).unwrap(), 2.5);
        assert!(hodges_lehmann(&[]).is_err());
    }

    #[test]
    fn hodges_lehmann_matches_walsh_enumeration() {
        for seed in 0..100u64 {
            let mut s = StreamKey::new(seed, 2, 3).stream();
            let n = 1 + (seed % 12) as usize;
            let d: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let mut w = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i <= j {
                        w.push((d[i] + d[j]) / 2.0);
                    }
                }
            }
            w.sort_by(f64::total_cmp);
            let m = w.len();
            let med = if m % 2 == 1 { w[m / 2] } else { (w[m / 2 - 1] + w[m / 2]) / 2.0 };
            assert_eq!(hodges_lehmann(&d).unwrap(), med);
        }
    }

    #[test]
    fn decomposition_values() {
        let d = error_decomposition(&[1.0, 3.0], 2.0, 2.0).unwrap();
        assert!((d.statistical - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((d.optimization, d.model), (0.0, 0.0));
        let z = error_decomposition(&[1.5, 1.5, 1.5], 1.5, 1.5).unwrap();
        assert_eq!((z.statistical, z.optimization, z.model, z.rms), (0.0, 0.0, 0.0, 0.0));
        assert!(error_decomposition(&[1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_bound_on_random_instances() {
        for seed in 0..1000u64 {
            let mut s = StreamKey::new(seed, 5, 3).stream();
            let n = 2 + (seed % 9) as usize;
            let b: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let d = error_decomposition(&b, s.normal(), s.normal()).unwrap();
            assert!(d.bound_holds(), "{d:?}");
        }
    }

    #[test]
    fn rate_shift_values() {
        assert!((rate_shift(-0.010, 600.0).unwrap() - 1.213).abs() < 1e-3);
        assert!((rate_shift(-0.010, 300.0).unwrap() - 1.472).abs() < 1e-3);
        assert_eq!(rate_shift(0.0, 450.0).unwrap(), 1.0);
        assert!(rate_shift(0.01, 0.0).is_err());
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let k: Vec<f64> = (5..=40).map(|k| k as f64).collect();
        let y: Vec<f64> = k.iter().map(|k| 0.7 / k).collect();
        assert!((loglog_slope(&k, &y).unwrap() + 1.0).abs() < 1e-12);
        let y2: Vec<f64> = k.iter().map(|k| 3.0 * k.powf(-1.37)).collect();
        assert!((loglog_slope(&k, &y2).unwrap() + 1.37).abs() < 1e-12);
    }

    #[test]
    fn sem_definition() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((sem(&x) - sample_std(&x) / 2.0).abs() < 1e-15);
        assert_eq!(sem(&[5.0]), 0.0);
    }
}
