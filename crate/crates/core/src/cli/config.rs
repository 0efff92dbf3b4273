//! Versioned JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{CirParams, OuParams};
use crate::estimators::EstimatorKind;
use crate::metrics::{GaussianMixture, MixtureComponent};
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    Ou(OuParams),
    Cir {
        #[serde(flatten)]
        params: CirParams,
        x0: f64,
    },
    Csv {
        path: String,
        column: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lengthscales: Vec<f64>,
    pub gammas: Vec<f64>,
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub centered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub train: usize,
    pub validation: usize,
    pub initial: usize,
}

/// RKHS in which forecasts are scored by relative MMD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MmdKernel {
    /// The kernel selected for each estimator.
    Fitted,
    /// One Gaussian kernel shared by all methods.
    Fixed { lengthscale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    pub mmd_kernel: MmdKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpsSpec {
    pub train_steps: usize,
    pub test_steps: usize,
    /// Share of the training pairs held out for hyperparameter selection.
    pub validation_fraction: f64,
    /// Paths simulated per horizon for the calibrated CIR forecast.
    pub mc_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub system: SystemSpec,
    pub grid: GridSpec,
    pub estimator: EstimatorSpec,
    pub sizes: SampleSizes,
    pub horizon: usize,
    pub repetitions: usize,
    pub initial: Vec<MixtureComponent>,
    pub evaluation: EvaluationSpec,
    pub crps: CrpsSpec,
    pub output_dir: String,
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 2024,
            system: SystemSpec::Ou(OuParams::default()),
            grid: GridSpec {
                lengthscales: log_grid(0.1, 3.0, 8),
                gammas: log_grid(1e-9, 1e-1, 9),
                ranks: vec![3, 5, 10, 25],
            },
            estimator: EstimatorSpec {
                kind: EstimatorKind::Rrr,
                centered: true,
            },
            sizes: SampleSizes {
                train: 250,
                validation: 500,
                initial: 1000,
            },
            horizon: 200,
            repetitions: 20,
            initial: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: -2.0,
                    variance: 0.04,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: 2.0,
                    variance: 0.04,
                },
            ],
            evaluation: EvaluationSpec {
                mmd_kernel: MmdKernel::Fitted,
            },
            crps: CrpsSpec {
                train_steps: 400,
                test_steps: 104,
                validation_fraction: 0.25,
                mc_samples: 2000,
            },
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the CRPS study on a synthetic CIR world.
    pub fn crps_default() -> Self {
        Self {
            system: SystemSpec::Cir {
                params: CirParams {
                    kappa: 0.5,
                    b: 4.0,
                    sigma: 0.3,
                    dt: 1.0 / 52.0,
                },
                x0: 4.0,
            },
            estimator: EstimatorSpec {
                kind: EstimatorKind::Rrr,
                centered: true,
            },
            repetitions: 10,
            ..Self::default()
        }
    }

    pub fn initial_mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.initial.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported config version {}",
                self.format_version
            )));
        }
        let g = &self.grid;
        if g.lengthscales.is_empty() || g.gammas.is_empty() || g.ranks.is_empty() {
            return Err(Error::invalid("hyperparameter grids must be nonempty"));
        }
        if g.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("lengthscales must be positive"));
        }
        if g.gammas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("regularization values must be positive"));
        }
        if g.ranks.contains(&0) {
            return Err(Error::invalid("ranks must be at least 1"));
        }
        let s = &self.sizes;
        if s.train == 0 || s.validation == 0 || s.initial == 0 {
            return Err(Error::invalid("sample sizes must be at least 1"));
        }
        if self.horizon == 0 || self.repetitions == 0 {
            return Err(Error::invalid("horizon and repetitions must be at least 1"));
        }
        if let MmdKernel::Fixed { lengthscale } = self.evaluation.mmd_kernel {
            if !(lengthscale.is_finite() && lengthscale > 0.0) {
                return Err(Error::invalid("evaluation lengthscale must be positive"));
            }
        }
        let c = &self.crps;
        if c.train_steps < 4 || c.test_steps == 0 || c.mc_samples == 0 {
            return Err(Error::invalid("CRPS study needs train_steps >= 4 and nonempty test window"));
        }
        if !(c.validation_fraction > 0.0 && c.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must lie in (0, 1)"));
        }
        match &self.system {
            SystemSpec::Ou(p) => p.validate()?,
            SystemSpec::Cir { params, x0 } => {
                params.validate()?;
                if !(x0.is_finite() && *x0 >= 0.0) {
                    return Err(Error::invalid("CIR x0 must be nonnegative"));
                }
            }
            SystemSpec::Csv { path, column } => {
                if path.is_empty() || column.is_empty() {
                    return Err(Error::invalid("CSV system needs a path and a column"));
                }
            }
        }
        self.initial_mixture()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = super::io::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::crps_default()] {
            cfg.validate().unwrap();
            let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.grid.lengthscales.len(), 8);
        assert!((cfg.grid.lengthscales[0] - 0.1).abs() < 1e-15);
        assert!((cfg.grid.lengthscales[7] - 3.0).abs() < 1e-14);
        assert!((cfg.grid.gammas[4] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.gammas.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.sizes.train = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.format_version = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.grid.ranks = vec![0];
        assert!(cfg.validate().is_err());
    }
}
