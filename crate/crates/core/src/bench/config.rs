use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dimer::DimerParams;
use crate::error::{Error, Result};
use crate::neb::NebParams;
use crate::potentials::TubeField2D;

/// Vacancy-hop setup and covariance model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WvacSettings {
    /// Conventional bcc cells per edge.
    pub n_cells: usize,
    pub core_radius: f64,
    pub midpoint_width: f64,
    pub floor: f64,
    pub parallel_amp: f64,
    pub transverse_amp: f64,
    /// Endpoint relaxation force tolerance (eV/Å).
    pub relax_tol: f64,
    pub relax_max_steps: usize,
    /// Deterministic NEB iterations of the reference barrier.
    pub reference_iterations: usize,
}

impl Default for WvacSettings {
    fn default() -> Self {
        Self {
            n_cells: 4,
            core_radius: 4.2,
            midpoint_width: 0.30,
            floor: 0.010,
            parallel_amp: 0.045,
            transverse_amp: 0.350,
            relax_tol: 1e-4,
            relax_max_steps: 20_000,
            reference_iterations: 320,
        }
    }
}

/// The covariance-structure grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub thetas: Vec<f64>,
    pub sigma_n: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            thetas: vec![0.0, PI / 12.0, PI / 6.0, PI / 4.0, PI / 3.0, 5.0 * PI / 12.0, PI / 2.0],
            sigma_n: vec![0.05, 0.10, 0.18, 0.26, 0.36],
        }
    }
}

/// A fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seeds: usize,
    pub seed_offset: u64,
    pub iterations: usize,
    pub variants: Vec<String>,
    pub noise_multiplier: f64,
    /// Dimer success radius around the saddle.
    pub success_radius: f64,
    pub setfl: Option<PathBuf>,
    pub neb: NebParams,
    pub dimer: DimerParams,
    pub tube: TubeField2D,
    pub wvac: WvacSettings,
    pub sweep: SweepSettings,
}

/// Values a single experiment starts from before the file and CLI overlays.
#[derive(Clone, Debug)]
pub struct ExperimentDefaults {
    pub seeds: usize,
    pub iterations: usize,
    pub variants: &'static [&'static str],
    pub noise_multiplier: f64,
    pub neb: NebParams,
}

/// Command-line overrides; `None` leaves the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<usize>,
    pub seed_offset: Option<u64>,
    pub iterations: Option<usize>,
    pub variants: Option<Vec<String>>,
    pub setfl: Option<PathBuf>,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Value::try_from(v).map_err(|e| Error::Config(e.to_string()))
}

/// `a, b ,c` or an array of strings.
fn variant_list(v: &Value) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        Value::Array(a) => a
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| Error::Config("variants must be strings".into())))
            .collect(),
        _ => Err(Error::Config("variants must be a list or a comma-separated string".into())),
    }
}

fn merge_into(base: &mut Table, overlay: &Table, section: &str) -> Result<()> {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_into(b, o, k)?,
            (_, Value::Table(_)) => return Err(Error::Config(format!("unknown section [{section}.{k}]"))),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parse `text` on top of the defaults of the experiment it names
    /// (or `experiment`, when the file leaves it out). Unknown keys are errors.
    pub fn parse(text: &str, experiment: Option<&str>, defaults: impl Fn(&str) -> Result<ExperimentDefaults>) -> Result<Self> {
        let mut file: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let name = match (file.get("experiment"), experiment) {
            (Some(Value::String(s)), Some(cli)) if s != cli => {
                return Err(Error::Config(format!("config names experiment `{s}` but `{cli}` was requested")))
            }
            (Some(Value::String(s)), _) => s.clone(),
            (Some(_), _) => return Err(Error::Config("experiment must be a string".into())),
            (None, Some(cli)) => cli.to_string(),
            (None, None) => return Err(Error::Config("no experiment given".into())),
        };
        let d = defaults(&name)?;
        if let Some(v) = file.get("variants") {
            let list = variant_list(v)?;
            file.insert("variants".into(), Value::Array(list.into_iter().map(Value::String).collect()));
        }
        let base = ExperimentConfig {
            experiment: name,
            seeds: d.seeds,
            seed_offset: 0,
            iterations: d.iterations,
            variants: d.variants.iter().map(|s| s.to_string()).collect(),
            noise_multiplier: d.noise_multiplier,
            success_radius: 0.08,
            setfl: None,
            neb: d.neb,
            dimer: DimerParams::default(),
            tube: TubeField2D::default(),
            wvac: WvacSettings::default(),
            sweep: SweepSettings::default(),
        };
        let Value::Table(mut table) = to_value(&base)? else { unreachable!("config serialises to a table") };
        merge_into(&mut table, &file, "")?;
        let cfg: ExperimentConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, experiment: Option<&str>, defaults: impl Fn(&str) -> Result<ExperimentDefaults>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, experiment, defaults)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seeds {
            self.seeds = s;
        }
        if let Some(s) = o.seed_offset {
            self.seed_offset = s;
        }
        if let Some(i) = o.iterations {
            self.iterations = i;
        }
        if let Some(v) = &o.variants {
            self.variants = v.clone();
        }
        if let Some(p) = &o.setfl {
            self.setfl = Some(p.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::Config("noise_multiplier must be nonnegative".into()));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::Config("success_radius must be positive".into()));
        }
        self.neb.validate().map_err(|e| Error::Config(format!("[neb] {e}")))?;
        self.dimer.validate().map_err(|e| Error::Config(format!("[dimer] {e}")))?;
        Ok(())
    }

    /// Seed numbers of this shard.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| s + self.seed_offset).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(name: &str) -> Result<ExperimentDefaults> {
        match name {
            "neb2d" => Ok(ExperimentDefaults {
                seeds: 200,
                iterations: 500,
                variants: &["std", "ua"],
                noise_multiplier: 10.0,
                neb: NebParams::default(),
            }),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }

    #[test]
    fn sections_overlay_the_defaults() {
        let text = "experiment = \"neb2d\"\nseeds = 4\nvariants = \"std, diag\"\n\n[neb]\nk_s = 1.5\n\n[tube]\nrotation_theta = 0.5\n";
        let cfg = ExperimentConfig::parse(text, None, defaults).unwrap();
        assert_eq!(cfg.seeds, 4);
        assert_eq!(cfg.iterations, 500);
        assert_eq!(cfg.variants, ["std", "diag"]);
        assert_eq!(cfg.neb.k_s, 1.5);
        assert_eq!(cfg.neb.alpha, NebParams::default().alpha);
        assert_eq!(cfg.tube.rotation_theta, 0.5);
        assert_eq!(cfg.noise_multiplier, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["seedz = 3\n", "[neb]\nkappa = 1\n", "[nope]\nx = 1\n"] {
            let err = ExperimentConfig::parse(text, Some("neb2d"), defaults).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn experiment_name_must_agree() {
        assert!(ExperimentConfig::parse("experiment = \"neb2d\"\n", Some("dimer2d"), defaults).is_err());
        assert!(ExperimentConfig::parse("", None, defaults).is_err());
        assert!(ExperimentConfig::parse("", Some("wat"), defaults).is_err());
    }

    #[test]
    fn overrides_and_shards() {
        let mut cfg = ExperimentConfig::parse("", Some("neb2d"), defaults).unwrap();
        cfg.apply(&Overrides { seeds: Some(3), seed_offset: Some(10), ..Default::default() }).unwrap();
        assert_eq!(cfg.seed_list(), [10, 11, 12]);
        assert!(cfg.apply(&Overrides { seeds: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = ExperimentConfig::parse("[neb]\nalpha = -1.0\n", Some("neb2d"), defaults).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
