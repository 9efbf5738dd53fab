//! Experiment configuration and its TOML loader.
//!
//! A config file only needs the keys it changes. It is merged over the
//! command's built-in defaults; tables merge key by key, arrays are replaced
//! whole, and a `model` table with a different `kind` replaces the default
//! model entirely.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cso::CsoConfig;
use crate::error::{Error, Result};
use crate::filter::PfConfig;
use crate::kld::KldConfig;
use crate::models::{ConstantVelocity2D, LinearGauss1D, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Linear1d {
        sigma1: f64,
        sigma2: f64,
        x0_mean: f64,
        x0_std: f64,
    },
    Cv2d {
        dt: f64,
        sigma_a: f64,
        sigma_r: f64,
        sigma_theta_deg: f64,
        initial_state: [f64; 4],
        init_velocity_std: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model> {
        Ok(match *self {
            ModelConfig::Linear1d {
                sigma1,
                sigma2,
                x0_mean,
                x0_std,
            } => Model::Linear1D(LinearGauss1D::with_initial(sigma1, sigma2, x0_mean, x0_std)?),
            ModelConfig::Cv2d {
                dt,
                sigma_a,
                sigma_r,
                sigma_theta_deg,
                initial_state,
                init_velocity_std,
            } => {
                let m = ConstantVelocity2D::new(dt, sigma_a, sigma_r, sigma_theta_deg)?
                    .with_initial_state(initial_state)
                    .with_init_velocity_std(init_velocity_std);
                m.validate()?;
                Model::ConstantVelocity(m)
            }
        })
    }

    /// A copy with the swept parameter set to `value`.
    pub fn with_sweep(&self, var: SweepVar, value: f64) -> Result<Self> {
        let mut out = self.clone();
        match (&mut out, var) {
            (ModelConfig::Linear1d { sigma1, .. }, SweepVar::Sigma1) => *sigma1 = value,
            (ModelConfig::Linear1d { sigma2, .. }, SweepVar::Sigma2) => *sigma2 = value,
            (ModelConfig::Cv2d { sigma_theta_deg, .. }, SweepVar::SigmaThetaDeg) => *sigma_theta_deg = value,
            _ => {
                return Err(Error::config(format!(
                    "sweep variable {var} does not apply to model {}",
                    self.kind()
                )))
            }
        }
        Ok(out)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Linear1d { .. } => "linear1d",
            ModelConfig::Cv2d { .. } => "cv2d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    Sigma1,
    Sigma2,
    SigmaThetaDeg,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Sigma1 => "sigma1",
            SweepVar::Sigma2 => "sigma2",
            SweepVar::SigmaThetaDeg => "sigma_theta_deg",
        }
    }

    /// Stable code mixed into trial seeds.
    pub(crate) fn code(self) -> u64 {
        match self {
            SweepVar::Sigma1 => 1,
            SweepVar::Sigma2 => 2,
            SweepVar::SigmaThetaDeg => 3,
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma1" => Ok(SweepVar::Sigma1),
            "sigma2" => Ok(SweepVar::Sigma2),
            "sigma_theta_deg" => Ok(SweepVar::SigmaThetaDeg),
            other => Err(Error::config(format!("unknown sweep variable {other:?}"))),
        }
    }
}

/// Which state components the KLD histogram bins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinSpace {
    /// The model's position components.
    #[default]
    Position,
    /// Every state component.
    State,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Time steps per trial.
    pub steps: usize,
    /// Monte Carlo trials per sweep point.
    pub trials: usize,
    /// Size of the initial cloud drawn around the first observation.
    pub n_init: usize,
    /// Write one CSV row per trial next to the summary table.
    pub per_trial: bool,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub kld: KldConfig,
    /// Components binned by the KLD histogram; `kld.bin_width` has one entry per binned component.
    pub bin_space: BinSpace,
    pub cso: CsoConfig,
    /// Carried for completeness. The harness resamples through KLD-sampling
    /// at every step, so the ESS threshold is not consulted there.
    pub pf: PfConfig,
    pub sweep: Vec<SweepAxis>,
}

impl ExperimentConfig {
    /// The 1D random-walk sweeps: `sigma1` with `sigma2 = 1`, then `sigma2`
    /// with `sigma1 = 0.5`.
    pub fn sweep1d_default() -> Self {
        ExperimentConfig {
            seed: 2024,
            steps: 50,
            trials: 20,
            n_init: 1000,
            per_trial: false,
            out_dir: PathBuf::from("out"),
            model: ModelConfig::Linear1d {
                sigma1: 0.5,
                sigma2: 1.0,
                x0_mean: 0.0,
                x0_std: 1.0,
            },
            kld: KldConfig::default(),
            bin_space: BinSpace::Position,
            cso: CsoConfig::default(),
            pf: PfConfig::default(),
            sweep: vec![
                SweepAxis {
                    var: SweepVar::Sigma1,
                    values: vec![0.25, 0.5, 1.0],
                },
                SweepAxis {
                    var: SweepVar::Sigma2,
                    values: vec![0.5, 1.0, 2.0],
                },
            ],
        }
    }

    /// The constant-velocity range/bearing sweep over bearing noise 1..10 degrees.
    pub fn sweepcv_default() -> Self {
        ExperimentConfig {
            steps: 60,
            trials: 50,
            model: ModelConfig::Cv2d {
                dt: 1.0,
                sigma_a: 0.1,
                sigma_r: 1.0,
                sigma_theta_deg: 1.0,
                // away from the sensor; at the origin the bearing is undefined
                initial_state: [100.0, 1.0, 100.0, 1.0],
                init_velocity_std: 1.0,
            },
            kld: KldConfig {
                bin_width: vec![0.5, 0.5],
                ..KldConfig::default()
            },
            cso: CsoConfig {
                rooster_frac: 0.4,
                hen_frac: 0.2,
                rooster_sigma: 0.02,
                lambda_max: 0.05,
                ..CsoConfig::default()
            },
            sweep: vec![SweepAxis {
                var: SweepVar::SigmaThetaDeg,
                values: (1..=10).map(f64::from).collect(),
            }],
            ..Self::sweep1d_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.n_init == 0 {
            return Err(Error::config("n_init must be at least 1"));
        }
        if self.sweep.is_empty() {
            return Err(Error::config("at least one sweep axis is required"));
        }
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(Error::config(format!("sweep grid for {} is empty", axis.var)));
            }
            for &v in &axis.values {
                self.model.with_sweep(axis.var, v)?.build()?;
            }
        }
        self.model.build()?;
        self.kld.validate()?;
        self.cso.validate()?;
        self.pf.validate()?;
        let binned = self.binned_dims().len();
        if self.kld.bin_width.len() != binned {
            return Err(Error::config(format!(
                "kld.bin_width needs {binned} entries for model {}, got {}",
                self.model.kind(),
                self.kld.bin_width.len()
            )));
        }
        Ok(())
    }

    /// State components the KLD histogram bins.
    pub fn binned_dims(&self) -> Vec<usize> {
        use crate::models::StateSpaceModel;
        let model = self.model.build();
        match (self.bin_space, &self.model) {
            (BinSpace::Position, _) => match model {
                Ok(m) => m.position_dims().to_vec(),
                Err(_) => Vec::new(),
            },
            (BinSpace::State, ModelConfig::Linear1d { .. }) => vec![0],
            (BinSpace::State, ModelConfig::Cv2d { .. }) => vec![0, 1, 2, 3],
        }
    }

    /// Parses TOML text and merges it over `base`.
    pub fn from_toml_str(text: &str, base: &ExperimentConfig, origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| parse_err(e.to_string()))?;
        merge_tables(&mut merged, overrides);
        let config: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        Ok(config)
    }

    /// Reads a TOML file and merges it over `base`.
    pub fn load(path: &Path, base: &ExperimentConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, base, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let kind_changes = key == "model" && o.get("kind").is_some_and(|k| Some(k) != b.get("kind"));
                if kind_changes {
                    *b = o;
                } else {
                    merge_tables(b, o);
                }
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::sweep1d_default().validate().unwrap();
        ExperimentConfig::sweepcv_default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        for cfg in [ExperimentConfig::sweep1d_default(), ExperimentConfig::sweepcv_default()] {
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml(), &cfg, Path::new("x.toml")).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let base = ExperimentConfig::sweep1d_default();
        let text = "trials = 3\n[kld]\nepsilon = 0.1\n[[sweep]]\nvar = \"sigma2\"\nvalues = [0.5]\n";
        let cfg = ExperimentConfig::from_toml_str(text, &base, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.kld.epsilon, 0.1);
        assert_eq!(cfg.kld.delta, base.kld.delta);
        assert_eq!(cfg.sweep.len(), 1);
        assert_eq!(cfg.steps, base.steps);
    }

    #[test]
    fn switching_model_kind_replaces_model_table() {
        let base = ExperimentConfig::sweep1d_default();
        let text = "[model]\nkind = \"cv2d\"\ndt = 1.0\nsigma_a = 0.1\nsigma_r = 1.0\nsigma_theta_deg = 2.0\n\
                    initial_state = [0.0, 1.0, 0.0, 1.0]\ninit_velocity_std = 2.0\n";
        let cfg = ExperimentConfig::from_toml_str(text, &base, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.model.kind(), "cv2d");
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let base = ExperimentConfig::sweep1d_default();
        let err = ExperimentConfig::from_toml_str("bogus = 1\n", &base, Path::new("cfg/a.toml")).unwrap_err();
        assert!(err.to_string().contains("cfg/a.toml"), "{err}");
    }

    #[test]
    fn mismatched_sweep_var_fails_validation() {
        let mut cfg = ExperimentConfig::sweep1d_default();
        cfg.sweep = vec![SweepAxis {
            var: SweepVar::SigmaThetaDeg,
            values: vec![1.0],
        }];
        assert!(cfg.validate().is_err());
        cfg.sweep = vec![SweepAxis {
            var: SweepVar::Sigma1,
            values: vec![],
        }];
        assert!(cfg.validate().is_err());
    }
}
