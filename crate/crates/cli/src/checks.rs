//! Built-in verification checks: gradient correctness against finite
//! differences, estimator unbiasedness and bound ordering against the exact
//! Kalman oracle, brute-force quadrature agreement, step-size conditions,
//! mean-field reproducibility, and byte-level run determinism.
//!
//! Each check returns a [`CheckOutcome`]; the `check` subcommand prints one
//! line per outcome and exits nonzero if any failed. The same functions
//! back the crate's acceptance test suite.

use crate::config::ExperimentConfig;
use crate::CliError;
use ovsmc::grad::{finite_diff, grad_log_sum, log_weight_grads};
use ovsmc::kalman::kalman_filter;
use ovsmc::learn::{estimate_mean_field, schedule_validate, StepSchedule};
use ovsmc::model::{LinearGaussianModel, Model, ModelParams, StochVolModel};
use ovsmc::proposal::{reparam_value, ProposalParams};
use ovsmc::rng::RngState;
use ovsmc::series::Series;
use ovsmc::smc::{pf_step, run_filter, ParticleCloud, Resampler};
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn report_line(&self) -> String {
        format!(
            "[{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// JSON summary of a batch of outcomes, with an aggregate `pass` flag.
pub fn outcome_summary(outcomes: &[CheckOutcome]) -> serde_json::Value {
    json!({
        "pass": outcomes.iter().all(|o| o.passed),
        "checks": outcomes
            .iter()
            .map(|o| json!({"name": o.name, "pass": o.passed, "detail": o.detail}))
            .collect::<Vec<_>>(),
    })
}

fn lg_reference() -> Model {
    Model::LinearGaussian(LinearGaussianModel::scalar(0.8, 1.0, 0.5, 0.2).unwrap())
}

fn sv_reference() -> Model {
    Model::StochasticVolatility(StochVolModel::new(0.975, 0.165, 0.641).unwrap())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Exact Kalman log-likelihood under the model's own initial distribution.
pub fn exact_loglik(model: &Model, ys: &Series) -> Result<f64, CliError> {
    let lg = model
        .as_linear_gaussian()
        .ok_or_else(|| CliError::Config("exact likelihood needs a linear Gaussian model".into()))?;
    let init = model.initial_distribution()?;
    Ok(kalman_filter(lg, ys, &init.mean, &init.cov)?.total_loglik)
}

/// Gradients of `log sum_i w_i` versus central finite differences with
/// common random numbers, for both models under a neural proposal.
/// Passes when the max relative error over >= 10 random points per model
/// stays within 1e-4.
pub fn gradcheck(seed: u64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for (model, tag) in [(lg_reference(), "lg"), (sv_reference(), "sv")] {
        let proposal = ProposalParams::neural_gaussian(1, 1, 3, 2, seed ^ 0x5eed).unwrap();
        let mut rng = RngState::from_seed(seed.wrapping_add(11));
        for point in 0..10 {
            let batch = 5usize;
            let ancestors: Vec<f64> = (0..batch).map(|_| 0.6 * rng.normal()).collect();
            let eps: Vec<f64> = (0..batch).map(|_| rng.normal()).collect();
            let y = [0.5 * rng.normal()];

            let wgs: Vec<_> = (0..batch)
                .map(|i| {
                    log_weight_grads(&model, &proposal, &[ancestors[i]], &y, &[eps[i]]).unwrap()
                })
                .collect();
            let gls = grad_log_sum(&wgs).unwrap();

            // lambda: re-push the particles through the proposal
            let lambda0 = proposal.lambda();
            let fd_lambda = finite_diff(
                |lam| {
                    let mut p = proposal.clone();
                    p.set_lambda(lam).unwrap();
                    let lws: Vec<f64> = (0..batch)
                        .map(|i| {
                            let (x_new, logq) =
                                reparam_value(&p, &model, &[ancestors[i]], &y, &[eps[i]]).unwrap();
                            model.log_transition_value(&[ancestors[i]], &x_new).unwrap()
                                + model.log_emission_value(&x_new, &y).unwrap()
                                - logq
                        })
                        .collect();
                    ovsmc::smc::logsumexp(&lws)
                },
                &lambda0,
                1e-5,
            );
            for (a, b) in gls.grad_lambda.iter().zip(&fd_lambda) {
                worst = worst.max(rel_err(*a, *b));
            }

            // theta: proposed positions and the proposal density are frozen;
            // the frozen log q still enters each weight as a constant offset
            let theta0 = model.params().values;
            let x_news: Vec<f64> = wgs.iter().map(|w| w.x_new[0]).collect();
            let logqs: Vec<f64> = (0..batch)
                .map(|i| {
                    model
                        .log_transition_value(&[ancestors[i]], &[x_news[i]])
                        .unwrap()
                        + model.log_emission_value(&[x_news[i]], &y).unwrap()
                        - wgs[i].log_w
                })
                .collect();
            let fd_theta = finite_diff(
                |th| {
                    let m = model
                        .with_params(&ModelParams::new(model.kind(), th.to_vec()))
                        .unwrap();
                    let lws: Vec<f64> = (0..batch)
                        .map(|i| {
                            m.log_transition_value(&[ancestors[i]], &[x_news[i]])
                                .unwrap()
                                + m.log_emission_value(&[x_news[i]], &y).unwrap()
                                - logqs[i]
                        })
                        .collect();
                    ovsmc::smc::logsumexp(&lws)
                },
                &theta0,
                1e-5,
            );
            for (a, b) in gls.grad_theta.iter().zip(&fd_theta) {
                worst = worst.max(rel_err(*a, *b));
            }
            let _ = (tag, point);
        }
    }
    CheckOutcome::new(
        "gradcheck",
        worst <= 1e-4,
        format!("max relative error {worst:.3e} (tolerance 1e-4)"),
    )
}

/// Brute-force likelihood by iterated grid marginalization (scalar state).
pub fn grid_loglik_1d(model: &Model, ys: &Series, span_std: f64, nodes: usize) -> f64 {
    let init = model.initial_distribution().unwrap();
    let stat_std = init.cov[(0, 0)].sqrt();
    let lo = -span_std * stat_std;
    let step = 2.0 * span_std * stat_std / (nodes - 1) as f64;
    let grid: Vec<f64> = (0..nodes).map(|i| lo + i as f64 * step).collect();

    let mut log_alpha: Vec<f64> = grid
        .iter()
        .map(|&x| init.log_density(&[x]).0 + model.log_emission_value(&[x], ys.row(0)).unwrap())
        .collect();
    let mut total = 0.0;
    for t in 1..ys.len() {
        let max_a = log_alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let alpha: Vec<f64> = log_alpha.iter().map(|&l| (l - max_a).exp()).collect();
        total += max_a;
        let mut next = Vec::with_capacity(nodes);
        for &xn in &grid {
            let mut acc = 0.0;
            for (j, &xp) in grid.iter().enumerate() {
                acc += alpha[j] * model.log_transition_value(&[xp], &[xn]).unwrap().exp();
            }
            next.push((acc * step).ln() + model.log_emission_value(&[xn], ys.row(t)).unwrap());
        }
        log_alpha = next;
    }
    let max_a = log_alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    total + max_a + (log_alpha.iter().map(|&l| (l - max_a).exp()).sum::<f64>() * step).ln()
}

/// Kalman total log-likelihood versus the grid-quadrature oracle on a short
/// scalar record.
pub fn kalman_vs_quadrature(seed: u64) -> CheckOutcome {
    let model = lg_reference();
    let ys = model.simulate(3, seed).unwrap().observations;
    let exact = exact_loglik(&model, &ys).unwrap();
    let grid = grid_loglik_1d(&model, &ys, 6.0, 2001);
    let diff = (exact - grid).abs();
    CheckOutcome::new(
        "kalman_vs_quadrature",
        diff < 1e-4,
        format!("|kalman - grid| = {diff:.3e} (tolerance 1e-4)"),
    )
}

/// Under the locally optimal proposal every particle sharing an ancestor
/// carries the same weight, equal to the closed-form predictive density.
pub fn locally_optimal_identity(seed: u64) -> CheckOutcome {
    let model = lg_reference();
    let n = 64;
    let cloud = ParticleCloud::new(vec![0.0; n], 1, vec![0.0; n], 0).unwrap();
    let mut rng = RngState::from_seed(seed);
    let next = pf_step(
        &cloud,
        &model,
        &ProposalParams::LocallyOptimalLg,
        &[0.0],
        Resampler::Multinomial,
        &mut rng,
    )
    .unwrap();
    let lw = next.log_weights();
    let spread = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - lw.iter().cloned().fold(f64::INFINITY, f64::min);
    // predictive N(0; 0, B Q B^T + R) with Q = 0.25, R = 0.04
    let expected = -0.5 * (2.0 * std::f64::consts::PI * 0.29).ln();
    let err = (lw[0] - expected).abs();
    let near_quoted = (lw[0] + 0.30005).abs() < 1e-3;
    CheckOutcome::new(
        "locally_optimal_identity",
        spread < 1e-10 && err < 1e-10 && near_quoted,
        format!(
            "weight spread {spread:.3e}, |value - closed form| = {err:.3e} (value {:.5})",
            lw[0]
        ),
    )
}

/// Mean of `Z_hat / Z` over independent replicates must sit within four
/// standard errors of one.
pub fn unbiasedness(
    model: &Model,
    t_max: usize,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<CheckOutcome, CliError> {
    let data = model.simulate(t_max, seed)?;
    let exact = exact_loglik(model, &data.observations)?;
    let ratios: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<f64, CliError> {
            let mut rng = RngState::stream(seed, 100 + r as u64);
            let run = run_filter(
                model,
                &ProposalParams::Bootstrap,
                &data.observations,
                n,
                Resampler::Multinomial,
                &mut rng,
            )?;
            Ok((run.loglik_estimate - exact).exp())
        })
        .collect::<Result<_, _>>()?;
    let mean = ratios.iter().sum::<f64>() / replicates as f64;
    let var = ratios.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (replicates - 1) as f64;
    let se = (var / replicates as f64).sqrt();
    let bias = mean - 1.0;
    Ok(CheckOutcome::new(
        "unbiasedness",
        bias.abs() <= 4.0 * se,
        format!(
            "mean Z_hat/Z = {mean:.5} (bias {bias:+.2e}, SE {se:.2e}, {replicates} replicates)"
        ),
    ))
}

/// Jensen ordering: mean log-estimate below the exact value by more than
/// three standard errors, and the no-resampling bound nondecreasing in the
/// sample count within two standard errors.
pub fn elbo_bounds(seed: u64) -> Result<CheckOutcome, CliError> {
    let model = lg_reference();
    let data = model.simulate(20, seed)?;
    let ys = &data.observations;
    let exact = exact_loglik(&model, ys)?;

    let reps = 1000;
    let logs: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<f64, CliError> {
            let mut rng = RngState::stream(seed, 5_000 + r as u64);
            Ok(run_filter(
                &model,
                &ProposalParams::Bootstrap,
                ys,
                64,
                Resampler::Multinomial,
                &mut rng,
            )?
            .loglik_estimate)
        })
        .collect::<Result<_, _>>()?;
    let mean_log = logs.iter().sum::<f64>() / reps as f64;
    let var = logs
        .iter()
        .map(|x| (x - mean_log) * (x - mean_log))
        .sum::<f64>()
        / (reps - 1) as f64;
    let se_log = (var / reps as f64).sqrt();
    let jensen_ok = mean_log < exact - 3.0 * se_log;

    let mut means = Vec::new();
    let mut ses = Vec::new();
    for (k, n) in [1usize, 4, 16].iter().enumerate() {
        let vals: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngState::stream(seed, 20_000 + (k * reps + r) as u64);
                Ok(ovsmc::smc::elbo_iwae(
                    &model,
                    &ProposalParams::Bootstrap,
                    ys,
                    *n,
                    &mut rng,
                )?)
            })
            .collect::<Result<_, CliError>>()?;
        let m = vals.iter().sum::<f64>() / reps as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (reps - 1) as f64;
        means.push(m);
        ses.push((v / reps as f64).sqrt());
    }
    let mut monotone_ok = true;
    for k in 0..2 {
        let se_diff = (ses[k] * ses[k] + ses[k + 1] * ses[k + 1]).sqrt();
        if means[k + 1] - means[k] < -2.0 * se_diff {
            monotone_ok = false;
        }
    }
    Ok(CheckOutcome::new(
        "elbo_bounds",
        jensen_ok && monotone_ok,
        format!(
            "mean log estimate {mean_log:.4} vs exact {exact:.4} (SE {se_log:.2e}); \
             sis bounds at N=1,4,16: {:.4}, {:.4}, {:.4}",
            means[0], means[1], means[2]
        ),
    ))
}

/// The decaying schedule `c / sqrt(t)` satisfies the step-size conditions
/// with ratio bound 2 over a long horizon; an increasing schedule must be
/// rejected.
pub fn schedule_hooks() -> CheckOutcome {
    let sched = StepSchedule::InverseSqrt { c: 0.5 };
    let accept = sched.validate(2.0, 2.0, 0.5, 1_000_000);
    let reject = !schedule_validate(|t| t as f64, 2.0, 2.0, 1.0, 100);
    CheckOutcome::new(
        "schedule_hooks",
        accept && reject,
        format!("inverse-sqrt accepted: {accept}, increasing rejected: {reject}"),
    )
}

/// Two independent mean-field runs at the same parameter must agree within
/// three combined standard errors, coordinate-wise.
pub fn meanfield_split_runs(
    model: &Model,
    proposal: &ProposalParams,
    n: usize,
    burn_in: usize,
    samples: usize,
    seed: u64,
) -> Result<CheckOutcome, CliError> {
    let mut rng_a = RngState::stream(seed, 7);
    let a = estimate_mean_field(model, proposal, n, burn_in, samples, &mut rng_a)?;
    let mut rng_b = RngState::stream(seed, 8);
    let b = estimate_mean_field(model, proposal, n, burn_in, samples, &mut rng_b)?;
    let se_a =
        a.se.ok_or_else(|| CliError::Config("need >= 2 samples".into()))?;
    let se_b =
        b.se.ok_or_else(|| CliError::Config("need >= 2 samples".into()))?;
    let mut worst = 0.0f64;
    let mut ok = true;
    for c in 0..a.mean.len() {
        let combined = (se_a[c] * se_a[c] + se_b[c] * se_b[c]).sqrt();
        let z = (a.mean[c] - b.mean[c]).abs() / combined.max(1e-300);
        worst = worst.max(z);
        if z > 3.0 {
            ok = false;
        }
    }
    Ok(CheckOutcome::new(
        "meanfield_split_runs",
        ok,
        format!(
            "max |mean difference| = {worst:.2} combined SEs over {} coordinates ({} samples each)",
            a.mean.len(),
            a.samples
        ),
    ))
}

/// Re-running an experiment with an identical config and seed must produce
/// a byte-identical trace file.
pub fn determinism(work_dir: &Path, seed: u64) -> Result<CheckOutcome, CliError> {
    let cfg: ExperimentConfig = serde_json::from_value(json!({
        "experiment": "lg1d",
        "seed": seed,
        "output_dir": "unused",
        "model": {"kind": "linear_gaussian",
                   "a": [[0.8]], "b": [[1.0]], "s_u": [[0.5]], "s_v": [[0.2]]},
        "proposal": {"kind": "neural_gaussian", "hidden_mean": 3, "hidden_std": 2, "init_seed": 1},
        "optimizer": {"kind": "adam", "lr_theta": 0.01, "lr_lambda": 0.01},
        "l": 5, "n": 100, "steps": 300,
        "theta0": [0.2, 1.0]
    }))
    .map_err(|e| CliError::Config(e.to_string()))?;
    let dir_a = work_dir.join("det_a");
    let dir_b = work_dir.join("det_b");
    crate::experiments::run_experiment(&cfg, &dir_a)?;
    crate::experiments::run_experiment(&cfg, &dir_b)?;
    let a = std::fs::read(dir_a.join("trace.csv")).map_err(CliError::io)?;
    let b = std::fs::read(dir_b.join("trace.csv")).map_err(CliError::io)?;
    let identical = a == b;
    Ok(CheckOutcome::new(
        "determinism",
        identical,
        format!(
            "trace.csv byte-identical across reruns: {identical} ({} bytes)",
            a.len()
        ),
    ))
}

/// The full quick verification suite behind the `check` subcommand.
pub fn run_all(work_dir: &Path, seed: u64) -> Result<Vec<CheckOutcome>, CliError> {
    let model = lg_reference();
    Ok(vec![
        gradcheck(seed),
        kalman_vs_quadrature(seed),
        locally_optimal_identity(seed),
        unbiasedness(&model, 20, 64, 2000, seed)?,
        elbo_bounds(seed)?,
        schedule_hooks(),
        meanfield_split_runs(
            &model,
            &ProposalParams::LocallyOptimalLg,
            32,
            200,
            10_000,
            seed,
        )?,
        determinism(work_dir, seed)?,
    ])
}
