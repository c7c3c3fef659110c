//! Differentiable importance weights and the batch surrogate gradient.
//!
//! The log-weight of a proposed particle is
//! `log w = log m(x'|x) + log g(y|x') - log q(x'|x,y)` with
//! `x' = r(x, y, eps)`. Its parameter gradients follow two different rules:
//!
//! - **model parameters**: `d log m + d log g` holding `x'` fixed; the
//!   proposal (even when it reuses the transition, as the bootstrap kernel
//!   does) is a frozen copy, and `r` carries no model-parameter dependence;
//! - **proposal parameters**: the `x'` sensitivity of all three densities
//!   pulled back through `d r / d lambda`, minus the direct
//!   `d log q / d lambda` term.
//!
//! Resampling indices and inherited positions are treated as constants
//! (the sampling-law score term is discarded), so the batch gradient
//! decomposes into per-step `grad log sum_i w_i` contributions; that
//! decomposition is what [`vsmc_surrogate_grad`] accumulates and what the
//! online updates consume one step at a time.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::proposal::{reparam_eval, reparam_value, ProposalParams};
use crate::rng::RngState;
use crate::series::Series;
use crate::smc::{ess, logsumexp, normalize, Resampler};

/// Log-weight of one proposed particle with its parameter gradients.
#[derive(Debug, Clone)]
pub struct WeightGrad {
    /// The proposed position `x' = r(x, y, eps)`.
    pub x_new: Vec<f64>,
    pub log_w: f64,
    /// Gradient in the model parameters (layout of `ModelParams`).
    pub grad_theta: Vec<f64>,
    /// Gradient in the proposal parameters (layout of the lambda vector).
    pub grad_lambda: Vec<f64>,
}

/// Evaluate one importance weight and both gradients at `(ancestor, y, eps)`.
pub fn log_weight_grads(
    model: &Model,
    proposal: &ProposalParams,
    ancestor: &[f64],
    y: &[f64],
    eps: &[f64],
) -> Result<WeightGrad> {
    let pe = reparam_eval(proposal, model, ancestor, y, eps)?;
    let lt = model.log_transition(ancestor, &pe.x_new)?;
    let le = model.log_emission(&pe.x_new, y)?;

    let log_w = lt.value + le.value - pe.logq;
    let grad_theta: Vec<f64> = lt
        .grad_params
        .iter()
        .zip(&le.grad_params)
        .map(|(a, b)| a + b)
        .collect();

    let grad_lambda = if proposal.lambda_dim() == 0 {
        Vec::new()
    } else {
        // (d/dx')[log m + log g - log q] pulled back through r, minus the
        // direct log q term at fixed x'.
        let cot: Vec<f64> = (0..eps.len())
            .map(|i| lt.grad_state[i] + le.grad_state[i] - pe.grad_x_new_logq[i])
            .collect();
        let mut g = pe.lambda_pullback(proposal, &cot)?;
        for (gi, d) in g.iter_mut().zip(&pe.grad_lambda_logq) {
            *gi -= d;
        }
        g
    };

    Ok(WeightGrad {
        x_new: pe.x_new,
        log_w,
        grad_theta,
        grad_lambda,
    })
}

/// Model-parameter-only variant used on the large propagation sample, where
/// no proposal gradient is needed.
pub(crate) fn log_weight_theta_grad(
    model: &Model,
    proposal: &ProposalParams,
    ancestor: &[f64],
    y: &[f64],
    eps: &[f64],
) -> Result<WeightGrad> {
    let (x_new, logq) = reparam_value(proposal, model, ancestor, y, eps)?;
    let lt = model.log_transition(ancestor, &x_new)?;
    let le = model.log_emission(&x_new, y)?;
    let grad_theta = lt
        .grad_params
        .iter()
        .zip(&le.grad_params)
        .map(|(a, b)| a + b)
        .collect();
    Ok(WeightGrad {
        x_new,
        log_w: lt.value + le.value - logq,
        grad_theta,
        grad_lambda: Vec::new(),
    })
}

/// `log sum_i w_i` and its gradients, using the exact identity
/// `grad log sum_i w_i = sum_i softmax(log w)_i grad log w_i`.
#[derive(Debug, Clone)]
pub struct GradLogSum {
    pub log_sum: f64,
    pub grad_theta: Vec<f64>,
    pub grad_lambda: Vec<f64>,
}

pub fn grad_log_sum(weight_grads: &[WeightGrad]) -> Result<GradLogSum> {
    if weight_grads.is_empty() {
        return Err(Error::invalid("grad_log_sum needs at least one weight"));
    }
    let log_ws: Vec<f64> = weight_grads.iter().map(|w| w.log_w).collect();
    let log_sum = logsumexp(&log_ws);
    if !log_sum.is_finite() {
        return Err(Error::ParticleCollapse { t: 0 });
    }
    let theta_dim = weight_grads[0].grad_theta.len();
    let lambda_dim = weight_grads[0].grad_lambda.len();
    let mut grad_theta = vec![0.0; theta_dim];
    let mut grad_lambda = vec![0.0; lambda_dim];
    for wg in weight_grads {
        let w = (wg.log_w - log_sum).exp();
        for (acc, g) in grad_theta.iter_mut().zip(&wg.grad_theta) {
            *acc += w * g;
        }
        for (acc, g) in grad_lambda.iter_mut().zip(&wg.grad_lambda) {
            *acc += w * g;
        }
    }
    Ok(GradLogSum {
        log_sum,
        grad_theta,
        grad_lambda,
    })
}

/// One-sweep estimate of the evidence lower bound and its surrogate
/// gradient over a whole record.
#[derive(Debug, Clone)]
pub struct SurrogateGrad {
    /// `sum_t log((1/N) sum_i w_t^i)`.
    pub elbo_estimate: f64,
    pub grad_theta: Vec<f64>,
    pub grad_lambda: Vec<f64>,
    /// Mean normalized ESS across the sweep.
    pub mean_ess: f64,
}

/// Run one particle-filter sweep, accumulating `grad log sum_i w_t^i` over
/// all steps. The initial distribution is parameter-free, so the `t = 0`
/// contribution reduces to the emission terms.
pub fn vsmc_surrogate_grad(
    model: &Model,
    proposal: &ProposalParams,
    ys: &Series,
    n: usize,
    resampler: Resampler,
    rng: &mut RngState,
) -> Result<SurrogateGrad> {
    if ys.is_empty() {
        return Err(Error::invalid("observation record is empty"));
    }
    if n == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    let dx = model.state_dim();
    let lambda_dim = proposal.lambda_dim();
    let init = model.initial_distribution()?;

    let mut eps = vec![0.0; dx];
    let mut step_grads: Vec<WeightGrad> = Vec::with_capacity(n);
    for _ in 0..n {
        rng.fill_normal(&mut eps);
        let x0 = init.push_forward(&eps);
        let le = model.log_emission(&x0, ys.row(0))?;
        step_grads.push(WeightGrad {
            x_new: x0,
            log_w: le.value,
            grad_theta: le.grad_params,
            grad_lambda: vec![0.0; lambda_dim],
        });
    }

    let mut elbo = 0.0;
    let mut grad_theta = vec![0.0; model.param_dim()];
    let mut grad_lambda = vec![0.0; lambda_dim];
    let mut ess_sum = 0.0;
    let ln_n = (n as f64).ln();

    for t in 0..ys.len() {
        let gls = grad_log_sum(&step_grads).map_err(|e| match e {
            Error::ParticleCollapse { .. } => Error::ParticleCollapse { t },
            other => other,
        })?;
        elbo += gls.log_sum - ln_n;
        for (acc, g) in grad_theta.iter_mut().zip(&gls.grad_theta) {
            *acc += g;
        }
        for (acc, g) in grad_lambda.iter_mut().zip(&gls.grad_lambda) {
            *acc += g;
        }

        let log_ws: Vec<f64> = step_grads.iter().map(|w| w.log_w).collect();
        let (weights, _) = normalize(&log_ws).map_err(|_| Error::ParticleCollapse { t })?;
        ess_sum += ess(&weights);

        if t + 1 == ys.len() {
            break;
        }
        let y = ys.row(t + 1);
        let ancestors = resampler.draw(&weights, n, rng);
        let mut eps_all = vec![0.0; n * dx];
        rng.fill_normal(&mut eps_all);
        let mut next = Vec::with_capacity(n);
        for (i, &a) in ancestors.iter().enumerate() {
            let parent = step_grads[a].x_new.clone();
            let e = &eps_all[i * dx..(i + 1) * dx];
            next.push(log_weight_grads(model, proposal, &parent, y, e)?);
        }
        step_grads = next;
    }

    Ok(SurrogateGrad {
        elbo_estimate: elbo,
        grad_theta,
        grad_lambda,
        mean_ess: ess_sum / ys.len() as f64,
    })
}

/// Central finite differences, coordinate-wise: the gradient oracle used
/// throughout the test suites.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Vec::with_capacity(point.len());
    let mut p = point.to_vec();
    for i in 0..point.len() {
        p[i] = point[i] + h;
        let up = f(&p);
        p[i] = point[i] - h;
        let down = f(&p);
        p[i] = point[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearGaussianModel, Model, ModelParams, StochVolModel};
    use approx::assert_relative_eq;

    fn lg_model() -> Model {
        Model::LinearGaussian(LinearGaussianModel::scalar(0.8, 1.0, 0.5, 0.2).unwrap())
    }

    fn sv_model() -> Model {
        Model::StochasticVolatility(StochVolModel::new(0.9, 0.3, 0.6).unwrap())
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff(|p| p[0] * p[0] + p[1] * p[1], &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);

        let g = finite_diff(|_| 3.5, &[0.3, -0.2, 1.0], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));

        let g = finite_diff(|p| p[0].exp(), &[0.0], 1e-5);
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grad_log_sum_degenerate_cases() {
        let one = WeightGrad {
            x_new: vec![0.1],
            log_w: -0.7,
            grad_theta: vec![0.3, -0.2],
            grad_lambda: vec![1.0],
        };
        let g = grad_log_sum(std::slice::from_ref(&one)).unwrap();
        assert_relative_eq!(g.log_sum, -0.7, epsilon = 1e-15);
        assert_eq!(g.grad_theta, one.grad_theta);
        assert_eq!(g.grad_lambda, one.grad_lambda);

        let g2 = grad_log_sum(&[one.clone(), one.clone()]).unwrap();
        assert_relative_eq!(g2.log_sum, -0.7 + std::f64::consts::LN_2, epsilon = 1e-12);
        for (a, b) in g2.grad_theta.iter().zip(&one.grad_theta) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }

        assert!(grad_log_sum(&[]).is_err());
    }

    /// theta -> log w at fixed (x', q): the fd oracle for the frozen-proposal
    /// model gradient.
    fn theta_fd_log_w(
        model: &Model,
        theta: &[f64],
        ancestor: &[f64],
        x_new: &[f64],
        y: &[f64],
    ) -> f64 {
        let m = model
            .with_params(&ModelParams::new(model.kind(), theta.to_vec()))
            .unwrap();
        m.log_transition_value(ancestor, x_new).unwrap() + m.log_emission_value(x_new, y).unwrap()
    }

    #[test]
    fn bootstrap_theta_grad_matches_finite_differences() {
        for model in [lg_model(), sv_model()] {
            let mut rng = RngState::from_seed(17);
            for _ in 0..5 {
                let anc = [0.5 * rng.normal()];
                let y = [0.4 * rng.normal()];
                let eps = [rng.normal()];
                let wg =
                    log_weight_grads(&model, &ProposalParams::Bootstrap, &anc, &y, &eps).unwrap();
                // value reduces to the emission term under the bootstrap kernel
                let g = model.log_emission_value(&wg.x_new, &y).unwrap();
                assert!((wg.log_w - g).abs() < 1e-12);

                let theta0 = model.params().values;
                let fd = finite_diff(
                    |th| theta_fd_log_w(&model, th, &anc, &wg.x_new, &y),
                    &theta0,
                    1e-5,
                );
                for (a, b) in wg.grad_theta.iter().zip(&fd) {
                    let scale = a.abs().max(b.abs()).max(1e-6);
                    assert!((a - b).abs() / scale < 1e-4, "grad {a} vs fd {b}");
                }
            }
        }
    }

    #[test]
    fn neural_lambda_grad_matches_finite_differences() {
        for model in [lg_model(), sv_model()] {
            let mut rng = RngState::from_seed(23);
            let proposal = ProposalParams::neural_gaussian(1, 1, 3, 2, 31).unwrap();
            for rep in 0..3 {
                let anc = [0.6 * rng.normal()];
                let y = [0.5 * rng.normal()];
                let eps = [rng.normal()];
                let wg = log_weight_grads(&model, &proposal, &anc, &y, &eps).unwrap();

                let lambda0 = proposal.lambda();
                let fd = finite_diff(
                    |lam| {
                        let mut p = proposal.clone();
                        p.set_lambda(lam).unwrap();
                        let (x_new, logq) = reparam_value(&p, &model, &anc, &y, &eps).unwrap();
                        model.log_transition_value(&anc, &x_new).unwrap()
                            + model.log_emission_value(&x_new, &y).unwrap()
                            - logq
                    },
                    &lambda0,
                    1e-5,
                );
                for (i, (a, b)) in wg.grad_lambda.iter().zip(&fd).enumerate() {
                    let scale = a.abs().max(b.abs()).max(1e-6);
                    assert!(
                        (a - b).abs() / scale < 1e-4,
                        "rep {rep} coord {i}: grad {a} vs fd {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn locally_optimal_weight_is_noise_free() {
        let model = lg_model();
        let wg1 = log_weight_grads(
            &model,
            &ProposalParams::LocallyOptimalLg,
            &[0.3],
            &[0.1],
            &[1.7],
        )
        .unwrap();
        let wg2 = log_weight_grads(
            &model,
            &ProposalParams::LocallyOptimalLg,
            &[0.3],
            &[0.1],
            &[-0.4],
        )
        .unwrap();
        assert!((wg1.log_w - wg2.log_w).abs() < 1e-10);
        assert!(wg1.grad_lambda.is_empty());
    }

    #[test]
    fn grad_log_sum_matches_composite_finite_differences() {
        // five-particle neural-proposal instance with common random numbers
        let model = lg_model();
        let proposal = ProposalParams::neural_gaussian(1, 1, 3, 2, 7).unwrap();
        let mut rng = RngState::from_seed(41);
        let ancestors: Vec<f64> = (0..5).map(|_| 0.4 * rng.normal()).collect();
        let eps: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let y = [0.35];

        let wgs: Vec<WeightGrad> = (0..5)
            .map(|i| log_weight_grads(&model, &proposal, &[ancestors[i]], &y, &[eps[i]]).unwrap())
            .collect();
        let gls = grad_log_sum(&wgs).unwrap();

        let lambda0 = proposal.lambda();
        let fd = finite_diff(
            |lam| {
                let mut p = proposal.clone();
                p.set_lambda(lam).unwrap();
                let lws: Vec<f64> = (0..5)
                    .map(|i| {
                        let (x_new, logq) =
                            reparam_value(&p, &model, &[ancestors[i]], &y, &[eps[i]]).unwrap();
                        model.log_transition_value(&[ancestors[i]], &x_new).unwrap()
                            + model.log_emission_value(&x_new, &y).unwrap()
                            - logq
                    })
                    .collect();
                logsumexp(&lws)
            },
            &lambda0,
            1e-5,
        );
        for (a, b) in gls.grad_lambda.iter().zip(&fd) {
            let scale = a.abs().max(b.abs()).max(1e-6);
            assert!((a - b).abs() / scale < 1e-4, "grad {a} vs fd {b}");
        }
    }

    #[test]
    fn surrogate_single_step_single_particle() {
        // T = 0, N = 1: the sweep reduces to the initial emission evaluation.
        let model = lg_model();
        let ys = Series::new(vec![0.25], 1).unwrap();
        let mut rng = RngState::from_seed(9);
        let sg = vsmc_surrogate_grad(
            &model,
            &ProposalParams::Bootstrap,
            &ys,
            1,
            Resampler::Multinomial,
            &mut rng,
        )
        .unwrap();

        let mut check_rng = RngState::from_seed(9);
        let init = model.initial_distribution().unwrap();
        let x0 = init.sample(&mut check_rng);
        let le = model.log_emission(&x0, &[0.25]).unwrap();
        assert_relative_eq!(sg.elbo_estimate, le.value, epsilon = 1e-12);
        for (a, b) in sg.grad_theta.iter().zip(&le.grad_params) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn locally_optimal_proposal_has_empty_lambda_grad() {
        let model = lg_model();
        let ys = model.simulate(10, 33).unwrap().observations;
        let mut rng = RngState::from_seed(2);
        let sg = vsmc_surrogate_grad(
            &model,
            &ProposalParams::LocallyOptimalLg,
            &ys,
            32,
            Resampler::Multinomial,
            &mut rng,
        )
        .unwrap();
        assert!(sg.grad_lambda.is_empty());
        assert!(sg.elbo_estimate.is_finite());
    }

    #[test]
    fn surrogate_grad_is_reproducible() {
        let model = lg_model();
        let proposal = ProposalParams::neural_gaussian(1, 1, 3, 2, 4).unwrap();
        let ys = model.simulate(12, 8).unwrap().observations;
        let run = || {
            let mut rng = RngState::from_seed(55);
            vsmc_surrogate_grad(&model, &proposal, &ys, 20, Resampler::Multinomial, &mut rng)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.elbo_estimate.to_bits(), b.elbo_estimate.to_bits());
        assert_eq!(a.grad_theta, b.grad_theta);
        assert_eq!(a.grad_lambda, b.grad_lambda);
    }
}
