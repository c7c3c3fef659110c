//! Particle filter core: weighting, resampling, likelihood estimates.
//!
//! All weight arithmetic stays in log space; normalized weights are
//! materialized only for resampling and the effective sample size.
//! Resampling happens every step (no ESS trigger), with a multinomial
//! default and a systematic variant behind [`Resampler`]. Only current
//! positions are kept; trajectories are never stored, so memory does not
//! grow with the stream.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::proposal::{reparam_value, ProposalParams};
use crate::rng::RngState;
use crate::series::Series;

/// Numerically stable `log sum_i exp(x_i)`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Self-normalize log-weights: returns the simplex weights and
/// `log((1/N) sum_i w_i)`.
pub fn normalize(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    if log_weights.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight vector"));
    }
    let lse = logsumexp(log_weights);
    if !lse.is_finite() {
        return Err(Error::ParticleCollapse { t: 0 });
    }
    let weights = log_weights.iter().map(|&lw| (lw - lse).exp()).collect();
    Ok((weights, lse - (log_weights.len() as f64).ln()))
}

/// Normalized effective sample size `1 / (N sum_i w_i^2)`, in `(0, 1]` for
/// simplex weights.
pub fn ess(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / (weights.len() as f64 * sum_sq)
}

/// Resampling scheme for the selection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampler {
    /// Independent categorical draws.
    #[default]
    Multinomial,
    /// Stratified offsets `(u + k) / count` with a single uniform `u`.
    Systematic,
}

impl Resampler {
    pub fn draw(&self, weights: &[f64], count: usize, rng: &mut RngState) -> Vec<usize> {
        match self {
            Resampler::Multinomial => resample_multinomial(weights, count, rng),
            Resampler::Systematic => resample_systematic(weights, count, rng),
        }
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    cum
}

/// `count` i.i.d. categorical draws by inverse-CDF binary search.
/// Consumes exactly `count` uniforms.
pub fn resample_multinomial(weights: &[f64], count: usize, rng: &mut RngState) -> Vec<usize> {
    let cum = cumulative(weights);
    let total = *cum.last().expect("weights must be non-empty");
    (0..count)
        .map(|_| {
            let u = rng.uniform() * total;
            cum.partition_point(|&c| c <= u).min(weights.len() - 1)
        })
        .collect()
}

/// Systematic resampling: inverse-CDF lookups at `(u + k) / count`,
/// `u ~ U[0, 1)`. Consumes exactly one uniform.
pub fn resample_systematic(weights: &[f64], count: usize, rng: &mut RngState) -> Vec<usize> {
    let cum = cumulative(weights);
    let total = *cum.last().expect("weights must be non-empty");
    let u = rng.uniform();
    let mut indices = Vec::with_capacity(count);
    let mut i = 0;
    for k in 0..count {
        let p = (u + k as f64) / count as f64 * total;
        while i + 1 < weights.len() && cum[i] <= p {
            i += 1;
        }
        indices.push(i);
    }
    indices
}

/// N particle positions with unnormalized log-weights.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    positions: Vec<f64>,
    dim: usize,
    log_weights: Vec<f64>,
    log_sum_w: f64,
    t: usize,
}

impl ParticleCloud {
    pub fn new(positions: Vec<f64>, dim: usize, log_weights: Vec<f64>, t: usize) -> Result<Self> {
        if dim == 0 || positions.len() != dim * log_weights.len() {
            return Err(Error::invalid(
                "particle positions do not match the weight count",
            ));
        }
        let log_sum_w = logsumexp(&log_weights);
        Ok(ParticleCloud {
            positions,
            dim,
            log_weights,
            log_sum_w,
            t,
        })
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Cached `log sum_i w_i`.
    pub fn log_sum_w(&self) -> f64 {
        self.log_sum_w
    }

    /// `log((1/N) sum_i w_i)`, the incremental evidence term.
    pub fn log_mean_w(&self) -> f64 {
        self.log_sum_w - (self.len() as f64).ln()
    }

    /// Simplex weights; fails on particle collapse.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights)
            .map(|(w, _)| w)
            .map_err(|_| Error::ParticleCollapse { t: self.t })
    }

    /// Normalized effective sample size of the current weights.
    pub fn ess(&self) -> Result<f64> {
        Ok(ess(&self.normalized_weights()?))
    }
}

/// Initialize the filter at `y_0`: positions drawn from the model's initial
/// distribution (which also serves as the initial proposal, so the initial
/// weight reduces to the emission likelihood).
pub fn pf_init(
    model: &Model,
    proposal: &ProposalParams,
    y0: &[f64],
    n: usize,
    rng: &mut RngState,
) -> Result<ParticleCloud> {
    let _ = proposal; // the initial proposal is the prior for every kernel
    if n == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    let init = model.initial_distribution()?;
    let dx = model.state_dim();
    let mut positions = Vec::with_capacity(n * dx);
    let mut log_weights = Vec::with_capacity(n);
    let mut eps = vec![0.0; dx];
    for _ in 0..n {
        rng.fill_normal(&mut eps);
        let x0 = init.push_forward(&eps);
        log_weights.push(model.log_emission_value(&x0, y0)?);
        positions.extend_from_slice(&x0);
    }
    ParticleCloud::new(positions, dx, log_weights, 0)
}

/// One select-mutate-weight sweep: resample N ancestors from the current
/// weights, push fresh noise through the proposal, and reweight with
/// `log m + log g - log q`.
pub fn pf_step(
    cloud: &ParticleCloud,
    model: &Model,
    proposal: &ProposalParams,
    y_next: &[f64],
    resampler: Resampler,
    rng: &mut RngState,
) -> Result<ParticleCloud> {
    let n = cloud.len();
    let dx = cloud.dim();
    let weights = cloud.normalized_weights()?;
    let ancestors = resampler.draw(&weights, n, rng);

    let mut eps = vec![0.0; n * dx];
    rng.fill_normal(&mut eps);

    let mut positions = Vec::with_capacity(n * dx);
    let mut log_weights = Vec::with_capacity(n);
    for (i, &a) in ancestors.iter().enumerate() {
        let parent = cloud.position(a);
        let e = &eps[i * dx..(i + 1) * dx];
        let (x_new, logq) = reparam_value(proposal, model, parent, y_next, e)?;
        let log_m = model.log_transition_value(parent, &x_new)?;
        let log_g = model.log_emission_value(&x_new, y_next)?;
        log_weights.push(log_m + log_g - logq);
        positions.extend_from_slice(&x_new);
    }
    ParticleCloud::new(positions, dx, log_weights, cloud.t() + 1)
}

/// Full filtering pass output.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// `sum_t log((1/N) sum_i w_t^i)`, the log-likelihood estimate.
    pub loglik_estimate: f64,
    /// Normalized ESS after each weighting, length `T + 1`.
    pub ess_trace: Vec<f64>,
    /// Per-step increments `log((1/N) sum_i w_t^i)`, length `T + 1`.
    pub step_log_mean_w: Vec<f64>,
}

/// Run the particle filter over the whole record.
pub fn run_filter(
    model: &Model,
    proposal: &ProposalParams,
    ys: &Series,
    n: usize,
    resampler: Resampler,
    rng: &mut RngState,
) -> Result<FilterRun> {
    if ys.is_empty() {
        return Err(Error::invalid("observation record is empty"));
    }
    let mut cloud = pf_init(model, proposal, ys.row(0), n, rng)?;
    let mut ess_trace = Vec::with_capacity(ys.len());
    let mut step_log_mean_w = Vec::with_capacity(ys.len());
    ess_trace.push(cloud.ess()?);
    step_log_mean_w.push(cloud.log_mean_w());
    for t in 1..ys.len() {
        cloud = pf_step(&cloud, model, proposal, ys.row(t), resampler, rng)?;
        ess_trace.push(cloud.ess()?);
        step_log_mean_w.push(cloud.log_mean_w());
    }
    Ok(FilterRun {
        loglik_estimate: step_log_mean_w.iter().sum(),
        ess_trace,
        step_log_mean_w,
    })
}

/// Sequential importance sampling bound (no resampling): each particle
/// carries its full-trajectory weight product in log space; returns
/// `log((1/N) sum_i prod_t w_t^i)`.
pub fn elbo_iwae(
    model: &Model,
    proposal: &ProposalParams,
    ys: &Series,
    n: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::invalid("observation record is empty"));
    }
    if n == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    let init = model.initial_distribution()?;
    let dx = model.state_dim();
    let mut positions = Vec::with_capacity(n * dx);
    let mut cum = Vec::with_capacity(n);
    let mut eps = vec![0.0; dx];
    for _ in 0..n {
        rng.fill_normal(&mut eps);
        let x0 = init.push_forward(&eps);
        cum.push(model.log_emission_value(&x0, ys.row(0))?);
        positions.extend_from_slice(&x0);
    }
    for t in 1..ys.len() {
        let y = ys.row(t);
        for i in 0..n {
            rng.fill_normal(&mut eps);
            let parent = positions[i * dx..(i + 1) * dx].to_vec();
            let (x_new, logq) = reparam_value(proposal, model, &parent, y, &eps)?;
            let log_m = model.log_transition_value(&parent, &x_new)?;
            let log_g = model.log_emission_value(&x_new, y)?;
            cum[i] += log_m + log_g - logq;
            positions[i * dx..(i + 1) * dx].copy_from_slice(&x_new);
        }
    }
    let lse = logsumexp(&cum);
    if !lse.is_finite() {
        return Err(Error::ParticleCollapse { t: ys.len() - 1 });
    }
    Ok(lse - (n as f64).ln())
}
