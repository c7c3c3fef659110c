//! State-space model abstraction and the two concrete models.
//!
//! A model bundles a latent-state transition density `m(x' | x)`, an
//! emission density `g(y | x')` and an initial distribution, all
//! differentiable in the model parameter vector and in the proposed state.
//! Parameters enter through [`ModelParams`], a flat vector whose layout is
//! model specific (see [`Model::param_names`]); gradients returned by the
//! log-density evaluations use the same layout.
//!
//! The initial distribution is treated as parameter-free during learning:
//! its `grad_params` is identically zero, so streaming updates never couple
//! the (stationary) initialization back into the dynamics parameters.

mod linear_gaussian;
mod stoch_vol;

pub use linear_gaussian::LinearGaussianModel;
pub use stoch_vol::StochVolModel;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::series::Series;
use nalgebra::{DMatrix, DVector};

/// Identifies the parameter layout of a [`ModelParams`] vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearGaussian,
    StochasticVolatility,
}

/// A flat model parameter vector with layout metadata.
///
/// Linear Gaussian: row-major `A` followed by row-major `S_u`
/// (`2 * d_x * d_x` entries; the observation matrix and observation noise
/// scale are structural and not part of the learnable vector).
/// Stochastic volatility: `[alpha, sigma, beta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(kind: ModelKind, values: Vec<f64>) -> Self {
        ModelParams { kind, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Value and exact gradients of a log-density evaluation.
#[derive(Debug, Clone)]
pub struct LogDensityEval {
    /// Natural-log density.
    pub value: f64,
    /// Gradient with respect to the model parameters (layout of [`ModelParams`]).
    pub grad_params: Vec<f64>,
    /// Gradient with respect to the new state `x'`.
    pub grad_state: Vec<f64>,
}

/// A simulated latent path and observation record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Series,
    pub observations: Series,
    pub seed: u64,
}

/// Gaussian distribution with a cached lower Cholesky factor, used for the
/// initial state.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inv: DMatrix<f64>,
    logdet: f64,
}

impl GaussianDist {
    pub(crate) fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::numerical("initial covariance is not positive definite"))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(GaussianDist {
            mean,
            cov,
            chol_lower: chol.l(),
            inv: chol.inverse(),
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + L eps` with `L` the lower Cholesky factor.
    pub fn push_forward(&self, eps: &[f64]) -> Vec<f64> {
        let e = DVector::from_column_slice(eps);
        (&self.mean + &self.chol_lower * e).as_slice().to_vec()
    }

    pub fn sample(&self, rng: &mut RngState) -> Vec<f64> {
        let mut eps = vec![0.0; self.dim()];
        rng.fill_normal(&mut eps);
        self.push_forward(&eps)
    }

    /// Log density and its gradient in `x`.
    pub fn log_density(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let xv = DVector::from_column_slice(x);
        let r = xv - &self.mean;
        let u = &self.inv * &r;
        let value = -0.5 * (self.dim() as f64 * LN_2PI + self.logdet + r.dot(&u));
        let grad = (-u).as_slice().to_vec();
        (value, grad)
    }
}

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// One of the two concrete state-space models, holding current parameter
/// values together with the fixed structural components.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    LinearGaussian(LinearGaussianModel),
    StochasticVolatility(StochVolModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::LinearGaussian(_) => ModelKind::LinearGaussian,
            Model::StochasticVolatility(_) => ModelKind::StochasticVolatility,
        }
    }

    pub fn as_linear_gaussian(&self) -> Option<&LinearGaussianModel> {
        match self {
            Model::LinearGaussian(m) => Some(m),
            _ => None,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Model::LinearGaussian(m) => m.state_dim(),
            Model::StochasticVolatility(_) => 1,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Model::LinearGaussian(m) => m.obs_dim(),
            Model::StochasticVolatility(_) => 1,
        }
    }

    /// Length of the learnable parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            Model::LinearGaussian(m) => 2 * m.state_dim() * m.state_dim(),
            Model::StochasticVolatility(_) => 3,
        }
    }

    /// Current learnable parameters.
    pub fn params(&self) -> ModelParams {
        match self {
            Model::LinearGaussian(m) => ModelParams::new(ModelKind::LinearGaussian, m.theta()),
            Model::StochasticVolatility(m) => {
                ModelParams::new(ModelKind::StochasticVolatility, m.theta())
            }
        }
    }

    /// Column labels for the parameter vector, used in trace output.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::LinearGaussian(m) => {
                let d = m.state_dim();
                if d == 1 {
                    vec!["A".into(), "S_u".into()]
                } else {
                    let mut names = Vec::with_capacity(2 * d * d);
                    for i in 0..d {
                        for j in 0..d {
                            names.push(format!("A_{i}{j}"));
                        }
                    }
                    for i in 0..d {
                        for j in 0..d {
                            names.push(format!("Su_{i}{j}"));
                        }
                    }
                    names
                }
            }
            Model::StochasticVolatility(_) => {
                vec!["alpha".into(), "sigma".into(), "beta".into()]
            }
        }
    }

    /// Rebuild the model with new learnable parameters, keeping the fixed
    /// structural components.
    pub fn with_params(&self, params: &ModelParams) -> Result<Model> {
        if params.kind != self.kind() {
            return Err(Error::invalid("parameter kind does not match model"));
        }
        if params.dim() != self.param_dim() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, expected {}",
                params.dim(),
                self.param_dim()
            )));
        }
        if !params.all_finite() {
            return Err(Error::invalid(
                "parameter vector contains non-finite entries",
            ));
        }
        match self {
            Model::LinearGaussian(m) => Ok(Model::LinearGaussian(m.with_theta(&params.values)?)),
            Model::StochasticVolatility(_) => {
                let v = &params.values;
                Ok(Model::StochasticVolatility(StochVolModel::new(
                    v[0], v[1], v[2],
                )?))
            }
        }
    }

    /// Clip a candidate parameter vector back into the valid set.
    ///
    /// Stochastic volatility: `alpha` into `[1e-4, 1 - 1e-4]`, `sigma` and
    /// `beta` into `[1e-4, inf)`. Linear Gaussian: identity.
    pub fn project_params(&self, params: &ModelParams) -> ModelParams {
        match params.kind {
            ModelKind::LinearGaussian => params.clone(),
            ModelKind::StochasticVolatility => {
                const DELTA: f64 = 1e-4;
                let v = &params.values;
                ModelParams::new(
                    ModelKind::StochasticVolatility,
                    vec![
                        v[0].clamp(DELTA, 1.0 - DELTA),
                        v[1].max(DELTA),
                        v[2].max(DELTA),
                    ],
                )
            }
        }
    }

    /// `log m(x_new | x)` with gradients in the parameters and in `x_new`.
    pub fn log_transition(&self, x: &[f64], x_new: &[f64]) -> Result<LogDensityEval> {
        self.check_state(x)?;
        self.check_state(x_new)?;
        Ok(match self {
            Model::LinearGaussian(m) => m.log_transition(x, x_new),
            Model::StochasticVolatility(m) => m.log_transition(x[0], x_new[0]),
        })
    }

    /// `log g(y | x_new)` with gradients in the parameters and in `x_new`.
    pub fn log_emission(&self, x_new: &[f64], y: &[f64]) -> Result<LogDensityEval> {
        self.check_state(x_new)?;
        self.check_obs(y)?;
        Ok(match self {
            Model::LinearGaussian(m) => m.log_emission(x_new, y),
            Model::StochasticVolatility(m) => m.log_emission(x_new[0], y[0]),
        })
    }

    /// Value-only transition log-density (no gradient work).
    pub fn log_transition_value(&self, x: &[f64], x_new: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        self.check_state(x_new)?;
        Ok(match self {
            Model::LinearGaussian(m) => m.log_transition_value(x, x_new),
            Model::StochasticVolatility(m) => m.log_transition_value(x[0], x_new[0]),
        })
    }

    /// Value-only emission log-density.
    pub fn log_emission_value(&self, x_new: &[f64], y: &[f64]) -> Result<f64> {
        self.check_state(x_new)?;
        self.check_obs(y)?;
        Ok(match self {
            Model::LinearGaussian(m) => m.log_emission_value(x_new, y),
            Model::StochasticVolatility(m) => m.log_emission_value(x_new[0], y[0]),
        })
    }

    /// `log m_0(x0)`; the parameter gradient is zero by convention.
    pub fn log_initial(&self, x0: &[f64]) -> Result<LogDensityEval> {
        self.check_state(x0)?;
        let init = self.initial_distribution()?;
        let (value, grad_state) = init.log_density(x0);
        Ok(LogDensityEval {
            value,
            grad_params: vec![0.0; self.param_dim()],
            grad_state,
        })
    }

    /// Initial state distribution.
    ///
    /// Scalar-state models use the stationary law (`N(0, S_u^2/(1-A^2))`,
    /// `N(0, sigma^2/(1-alpha^2))`); a multivariate linear Gaussian state is
    /// initialized from `N(0, I)`.
    pub fn initial_distribution(&self) -> Result<GaussianDist> {
        match self {
            Model::LinearGaussian(m) => m.initial_distribution(),
            Model::StochasticVolatility(m) => m.initial_distribution(),
        }
    }

    /// Stationary mean and covariance of the state process, where defined.
    pub fn stationary_init(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.initial_distribution()?;
        Ok((d.mean, d.cov))
    }

    /// Push noise through the model's own transition: `A x + S_u^T eps` for
    /// the linear Gaussian model, `alpha x + sigma eps` for stochastic
    /// volatility. This is the bootstrap proposal's reparameterization.
    pub fn transition_reparam(&self, x: &[f64], eps: &[f64]) -> Vec<f64> {
        match self {
            Model::LinearGaussian(m) => m.transition_reparam(x, eps),
            Model::StochasticVolatility(m) => vec![m.alpha() * x[0] + m.sigma() * eps[0]],
        }
    }

    fn emission_reparam(&self, x_new: &[f64], eps: &[f64]) -> Vec<f64> {
        match self {
            Model::LinearGaussian(m) => m.emission_reparam(x_new, eps),
            Model::StochasticVolatility(m) => {
                vec![m.beta() * (0.5 * x_new[0]).exp() * eps[0]]
            }
        }
    }

    /// Draw a latent path and observations of length `t_max + 1`.
    /// Pure in `(self, t_max, seed)`: identical inputs give bit-identical
    /// output.
    pub fn simulate(&self, t_max: usize, seed: u64) -> Result<Trajectory> {
        let init = self.initial_distribution()?;
        let dx = self.state_dim();
        let dy = self.obs_dim();
        let mut rng = RngState::from_seed(seed);
        let mut states = Series::with_capacity(dx, t_max + 1);
        let mut observations = Series::with_capacity(dy, t_max + 1);
        let mut eps_x = vec![0.0; dx];
        let mut eps_y = vec![0.0; dy];

        rng.fill_normal(&mut eps_x);
        let mut x = init.push_forward(&eps_x);
        for t in 0..=t_max {
            rng.fill_normal(&mut eps_y);
            let y = self.emission_reparam(&x, &eps_y);
            states.push_row(&x);
            observations.push_row(&y);
            if t == t_max {
                break;
            }
            rng.fill_normal(&mut eps_x);
            x = self.transition_reparam(&x, &eps_x);
        }
        Ok(Trajectory {
            states,
            observations,
            seed,
        })
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::invalid(format!(
                "state vector has length {}, expected {}",
                x.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn check_obs(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.obs_dim() {
            return Err(Error::invalid(format!(
                "observation vector has length {}, expected {}",
                y.len(),
                self.obs_dim()
            )));
        }
        Ok(())
    }
}
