//! Optimizers, step-size schedules and the learning loops.
//!
//! Both optimizers follow the ascent convention (`params += step`): the
//! objective everywhere is a lower bound to be maximized. Adam is the
//! workhorse for the experiments; plain SGD with a validated decaying
//! schedule exists to exercise the stochastic-approximation step-size
//! conditions.

mod batch;
mod online;

pub use batch::{repeated_stream, vsmc_fit, VsmcConfig, VsmcFit};
pub use online::{
    estimate_mean_field, ovsmc_run, ovsmc_step, ovsmc_step_modified, MeanFieldEstimate,
    ModifiedStep, OvsmcConfig, OvsmcStep,
};

/// Deterministic step-size sequence `gamma_t`, `t >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { c: f64 },
    InverseSqrt { c: f64 },
}

impl StepSchedule {
    pub fn gamma(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        match self {
            StepSchedule::Constant { c } => *c,
            StepSchedule::InverseSqrt { c } => c / (t as f64).sqrt(),
        }
    }

    pub fn validate(&self, a: f64, a_prime: f64, c: f64, horizon: u64) -> bool {
        schedule_validate(|t| self.gamma(t), a, a_prime, c, horizon)
    }
}

/// Check the decaying-step-size conditions on `[1, horizon]`:
/// `gamma_{t+1} <= gamma_t`, `gamma_t <= a gamma_{t+1}`,
/// `gamma_t - gamma_{t+1} <= a' gamma_{t+1}^2`, and `gamma_1 <= c`.
pub fn schedule_validate<G: Fn(u64) -> f64>(
    gamma: G,
    a: f64,
    a_prime: f64,
    c: f64,
    horizon: u64,
) -> bool {
    if gamma(1) > c {
        return false;
    }
    for t in 1..=horizon {
        let g = gamma(t);
        let g_next = gamma(t + 1);
        if g_next > g {
            return false;
        }
        if g > a * g_next {
            return false;
        }
        if g - g_next > a_prime * g_next * g_next {
            return false;
        }
    }
    true
}

/// Bias-corrected Adam moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One ascent SGD step: `params += gamma * grad`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], gamma: f64) {
    assert_eq!(params.len(), grad.len());
    for (p, g) in params.iter_mut().zip(grad) {
        *p += gamma * g;
    }
}

/// One ascent Adam step with bias-corrected moments.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] += state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// Ascent optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { schedule: StepSchedule, t: u64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn sgd(schedule: StepSchedule) -> Self {
        Optimizer::Sgd { schedule, t: 0 }
    }

    pub fn adam(dim: usize, lr: f64) -> Self {
        Optimizer::Adam(AdamState::new(dim, lr))
    }

    /// A placeholder for parameters that are not being learned.
    pub fn frozen() -> Self {
        Optimizer::sgd(StepSchedule::Constant { c: 0.0 })
    }

    /// Apply one ascent step in place. A non-finite gradient skips the
    /// update entirely and logs the event.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("skipping optimizer step: non-finite gradient");
            return;
        }
        match self {
            Optimizer::Sgd { schedule, t } => {
                *t += 1;
                sgd_step(params, grad, schedule.gamma(*t));
            }
            Optimizer::Adam(state) => adam_step(state, params, grad),
        }
    }
}

/// Per-step learning diagnostics.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    /// Model parameter snapshot after the step's update.
    pub theta: Vec<f64>,
    /// `log((1/N) sum_i w_t^i)` of the propagation sample.
    pub incremental_elbo: f64,
    /// Normalized ESS of the new cloud.
    pub ess: f64,
    /// Euclidean norm of the proposal parameter vector.
    pub lambda_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LearningTrace {
    pub records: Vec<StepRecord>,
}

impl LearningTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean of `f` over the final `window` records (or all, if shorter).
    pub fn window_mean<F: Fn(&StepRecord) -> f64>(&self, window: usize, f: F) -> f64 {
        let n = self.records.len();
        let start = n.saturating_sub(window);
        let slice = &self.records[start..];
        slice.iter().map(f).sum::<f64>() / slice.len().max(1) as f64
    }
}
