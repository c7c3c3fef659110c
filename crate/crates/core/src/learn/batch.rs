//! Batch learning: repeated sweeps over a fixed record.
//!
//! Each sweep runs one full particle-filter pass, accumulates the surrogate
//! gradient of the evidence lower bound, and applies one joint optimizer
//! step. The online loop applied to [`repeated_stream`] output is the
//! streaming counterpart of this procedure.

use super::{LearningTrace, Optimizer, StepRecord};
use crate::error::{Error, Result};
use crate::grad::vsmc_surrogate_grad;
use crate::model::Model;
use crate::proposal::ProposalParams;
use crate::rng::RngState;
use crate::series::Series;
use crate::smc::Resampler;

/// Cyclic repetition of a record, `m` copies back to back. Feeding the
/// result to the online loop keeps the particle cloud across record
/// boundaries (no reinitialization).
pub fn repeated_stream(ys: &Series, m: usize) -> Series {
    ys.repeat(m)
}

#[derive(Debug, Clone)]
pub struct VsmcConfig {
    pub n: usize,
    pub sweeps: usize,
    pub learn_theta: bool,
    pub learn_lambda: bool,
    pub resampler: Resampler,
}

impl VsmcConfig {
    pub fn new(n: usize, sweeps: usize) -> Self {
        VsmcConfig {
            n,
            sweeps,
            learn_theta: true,
            learn_lambda: true,
            resampler: Resampler::Multinomial,
        }
    }
}

/// Fitted parameters plus the per-sweep trace.
#[derive(Debug, Clone)]
pub struct VsmcFit {
    pub trace: LearningTrace,
    pub model: Model,
    pub proposal: ProposalParams,
}

/// Alternate full-record sweeps with joint gradient steps. With
/// `sweeps == 0` a single evaluation sweep is recorded and no parameter is
/// touched. Each record holds the sweep's bound estimate (computed at the
/// pre-update parameters) and the post-update parameter snapshot.
pub fn vsmc_fit(
    model0: &Model,
    proposal0: &ProposalParams,
    ys: &Series,
    cfg: &VsmcConfig,
    opt_theta: &mut Optimizer,
    opt_lambda: &mut Optimizer,
    rng: &mut RngState,
) -> Result<VsmcFit> {
    if ys.is_empty() {
        return Err(Error::invalid("observation record is empty"));
    }
    let mut model = model0.clone();
    let mut proposal = proposal0.clone();
    let mut trace = LearningTrace::default();

    if cfg.sweeps == 0 {
        let sg = vsmc_surrogate_grad(&model, &proposal, ys, cfg.n, cfg.resampler, rng)?;
        trace.records.push(StepRecord {
            t: 0,
            theta: model.params().values,
            incremental_elbo: sg.elbo_estimate,
            ess: sg.mean_ess,
            lambda_norm: proposal.lambda_norm(),
        });
        return Ok(VsmcFit {
            trace,
            model,
            proposal,
        });
    }

    for sweep in 1..=cfg.sweeps {
        let sg = vsmc_surrogate_grad(&model, &proposal, ys, cfg.n, cfg.resampler, rng)?;
        if cfg.learn_theta {
            let mut theta = model.params();
            opt_theta.step(&mut theta.values, &sg.grad_theta);
            model = model.with_params(&model.project_params(&theta))?;
        }
        if cfg.learn_lambda && proposal.lambda_dim() > 0 {
            let mut lambda = proposal.lambda();
            opt_lambda.step(&mut lambda, &sg.grad_lambda);
            proposal.set_lambda(&lambda)?;
        }
        trace.records.push(StepRecord {
            t: sweep,
            theta: model.params().values,
            incremental_elbo: sg.elbo_estimate,
            ess: sg.mean_ess,
            lambda_norm: proposal.lambda_norm(),
        });
    }
    Ok(VsmcFit {
        trace,
        model,
        proposal,
    })
}
