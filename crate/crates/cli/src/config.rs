//! Experiment configuration: JSON schema, validation, and construction of
//! the library objects it describes.

use crate::CliError;
use nalgebra::DMatrix;
use ovsmc::learn::{Optimizer, StepSchedule};
use ovsmc::model::{LinearGaussianModel, Model, ModelParams, StochVolModel};
use ovsmc::proposal::ProposalParams;
use ovsmc::smc::Resampler;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lg1d,
    Lg10dBatch,
    Sv,
    Unbiasedness,
    Gradcheck,
    Meanfield,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearGaussian {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        s_u: Vec<Vec<f64>>,
        s_v: Vec<Vec<f64>>,
    },
    StochasticVolatility {
        alpha: f64,
        sigma: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalConfig {
    Bootstrap,
    LocallyOptimal,
    NeuralGaussian {
        hidden_mean: usize,
        hidden_std: usize,
        #[serde(default)]
        init_seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr_theta: f64,
        lr_lambda: f64,
    },
    Sgd {
        schedule: ScheduleKind,
        c_theta: f64,
        c_lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplerConfig {
    Multinomial,
    Systematic,
}

impl From<ResamplerConfig> for Resampler {
    fn from(r: ResamplerConfig) -> Resampler {
        match r {
            ResamplerConfig::Multinomial => Resampler::Multinomial,
            ResamplerConfig::Systematic => Resampler::Systematic,
        }
    }
}

fn default_true() -> bool {
    true
}

/// One experiment, one file. Field applicability depends on `experiment`;
/// `validate` reports what is missing.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: String,
    pub model: ModelConfig,
    pub proposal: ProposalConfig,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    /// Gradient sample size.
    #[serde(default)]
    pub l: Option<usize>,
    /// Propagation sample size.
    #[serde(default)]
    pub n: Option<usize>,
    /// Record horizon for simulated batch data (length T + 1).
    #[serde(default)]
    pub t: Option<usize>,
    /// Online learning steps.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Batch sweeps (equivalently, the gradient-step budget).
    #[serde(default)]
    pub sweeps: Option<usize>,
    /// Replicates for the unbiasedness study.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Mean-field burn-in and sample count.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default = "default_true")]
    pub learn_theta: bool,
    #[serde(default = "default_true")]
    pub learn_lambda: bool,
    /// Starting model parameters for learning runs (the `model` section
    /// holds the data-generating truth).
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub resampler: Option<ResamplerConfig>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let need = |field: Option<usize>, name: &str| {
            field.filter(|&v| v > 0).ok_or_else(|| {
                CliError::Config(format!("field '{name}' is required and must be positive"))
            })
        };
        match self.experiment {
            ExperimentKind::Lg1d | ExperimentKind::Sv => {
                need(self.l, "l")?;
                need(self.n, "n")?;
                need(self.steps, "steps")?;
                if self.optimizer.is_none() {
                    return Err(CliError::Config("field 'optimizer' is required".into()));
                }
                if self.learn_theta && self.theta0.is_none() {
                    return Err(CliError::Config(
                        "field 'theta0' is required when learn_theta is true".into(),
                    ));
                }
            }
            ExperimentKind::Lg10dBatch => {
                need(self.l, "l")?;
                need(self.t, "t")?;
                need(self.sweeps, "sweeps")?;
                if self.optimizer.is_none() {
                    return Err(CliError::Config("field 'optimizer' is required".into()));
                }
            }
            ExperimentKind::Unbiasedness => {
                need(self.n, "n")?;
                need(self.t, "t")?;
                need(self.replicates, "replicates")?;
            }
            ExperimentKind::Gradcheck => {}
            ExperimentKind::Meanfield => {
                need(self.n, "n")?;
                need(self.samples, "samples")?;
            }
        }
        // the model section must construct cleanly
        self.build_model()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model, CliError> {
        match &self.model {
            ModelConfig::LinearGaussian { a, b, s_u, s_v } => {
                let to_mat = |m: &Vec<Vec<f64>>, name: &str| -> Result<DMatrix<f64>, CliError> {
                    let rows = m.len();
                    if rows == 0 {
                        return Err(CliError::Config(format!("matrix '{name}' is empty")));
                    }
                    let cols = m[0].len();
                    if m.iter().any(|r| r.len() != cols) {
                        return Err(CliError::Config(format!("matrix '{name}' is ragged")));
                    }
                    let flat: Vec<f64> = m.iter().flatten().copied().collect();
                    Ok(DMatrix::from_row_slice(rows, cols, &flat))
                };
                let lg = LinearGaussianModel::new(
                    to_mat(a, "a")?,
                    to_mat(b, "b")?,
                    to_mat(s_u, "s_u")?,
                    to_mat(s_v, "s_v")?,
                )
                .map_err(|e| CliError::Config(format!("model: {e}")))?;
                Ok(Model::LinearGaussian(lg))
            }
            ModelConfig::StochasticVolatility { alpha, sigma, beta } => {
                let sv = StochVolModel::new(*alpha, *sigma, *beta)
                    .map_err(|e| CliError::Config(format!("model: {e}")))?;
                Ok(Model::StochasticVolatility(sv))
            }
        }
    }

    /// The model learning starts from: `model` with `theta0` substituted.
    pub fn build_start_model(&self) -> Result<Model, CliError> {
        let truth = self.build_model()?;
        match &self.theta0 {
            None => Ok(truth),
            Some(values) => truth
                .with_params(&ModelParams::new(truth.kind(), values.clone()))
                .map_err(|e| CliError::Config(format!("theta0: {e}"))),
        }
    }

    pub fn build_proposal(&self, model: &Model) -> Result<ProposalParams, CliError> {
        match &self.proposal {
            ProposalConfig::Bootstrap => Ok(ProposalParams::Bootstrap),
            ProposalConfig::LocallyOptimal => Ok(ProposalParams::LocallyOptimalLg),
            ProposalConfig::NeuralGaussian {
                hidden_mean,
                hidden_std,
                init_seed,
            } => ProposalParams::neural_gaussian(
                model.state_dim(),
                model.obs_dim(),
                *hidden_mean,
                *hidden_std,
                *init_seed,
            )
            .map_err(|e| CliError::Config(format!("proposal: {e}"))),
        }
    }

    /// Optimizer pair `(theta, lambda)` sized for the given objects.
    pub fn build_optimizers(
        &self,
        model: &Model,
        proposal: &ProposalParams,
    ) -> Result<(Optimizer, Optimizer), CliError> {
        let cfg = self
            .optimizer
            .as_ref()
            .ok_or_else(|| CliError::Config("field 'optimizer' is required".into()))?;
        Ok(match cfg {
            OptimizerConfig::Adam {
                lr_theta,
                lr_lambda,
            } => (
                Optimizer::adam(model.param_dim(), *lr_theta),
                Optimizer::adam(proposal.lambda_dim(), *lr_lambda),
            ),
            OptimizerConfig::Sgd {
                schedule,
                c_theta,
                c_lambda,
            } => {
                let sched = |c: f64| match schedule {
                    ScheduleKind::Constant => StepSchedule::Constant { c },
                    ScheduleKind::InverseSqrt => StepSchedule::InverseSqrt { c },
                };
                (
                    Optimizer::sgd(sched(*c_theta)),
                    Optimizer::sgd(sched(*c_lambda)),
                )
            }
        })
    }

    pub fn resampler(&self) -> Resampler {
        self.resampler
            .map(Resampler::from)
            .unwrap_or(Resampler::Multinomial)
    }
}
