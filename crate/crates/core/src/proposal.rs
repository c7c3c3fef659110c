//! Proposal kernels with reparameterized sampling.
//!
//! A proposal draws the new particle position as a deterministic,
//! parameter-differentiable push-forward `x' = r(x, y, eps)` of standard
//! normal noise. Three kernels are provided:
//!
//! - `Bootstrap`: the model's own transition (no free parameters; the
//!   density is evaluated at the model parameters current when the sample
//!   is drawn, and is treated as a constant in the parameter gradients);
//! - `LocallyOptimalLg`: the exact conditional `q ∝ m(x'|x) g(y|x')`,
//!   available in closed form for the linear Gaussian model;
//! - `NeuralGaussian`: a diagonal Gaussian whose mean and standard
//!   deviation are two separate relu networks of `(x, y)`; the std network
//!   has a softplus output plus a small additive floor so the proposal
//!   variance stays bounded away from zero.

use crate::error::{Error, Result};
use crate::model::{Model, LN_2PI};
use crate::nn::{mlp_forward, mlp_init, mlp_vjp, MlpParams, MlpSpec, OutputActivation};

/// Additive floor on the neural proposal's standard deviation.
pub const STD_FLOOR: f64 = 1e-3;

/// Proposal kind plus learnable parameters (the lambda vector).
#[derive(Debug, Clone)]
pub enum ProposalParams {
    Bootstrap,
    LocallyOptimalLg,
    NeuralGaussian {
        mean_net: MlpParams,
        std_net: MlpParams,
    },
}

impl ProposalParams {
    /// Build a neural Gaussian proposal for a `d_x`-state, `d_y`-observation
    /// model with single hidden layers of the given widths.
    pub fn neural_gaussian(
        state_dim: usize,
        obs_dim: usize,
        hidden_mean: usize,
        hidden_std: usize,
        seed: u64,
    ) -> Result<Self> {
        let input = state_dim + obs_dim;
        let mean_spec = MlpSpec::new(
            vec![input, hidden_mean, state_dim],
            OutputActivation::Linear,
        )?;
        let std_spec = MlpSpec::new(
            vec![input, hidden_std, state_dim],
            OutputActivation::Softplus,
        )?;
        Ok(ProposalParams::NeuralGaussian {
            mean_net: mlp_init(mean_spec, seed),
            std_net: mlp_init(std_spec, seed.wrapping_add(1)),
        })
    }

    /// Length of the flattened lambda vector (0 for parameter-free kernels).
    pub fn lambda_dim(&self) -> usize {
        match self {
            ProposalParams::Bootstrap | ProposalParams::LocallyOptimalLg => 0,
            ProposalParams::NeuralGaussian { mean_net, std_net } => {
                mean_net.flat.len() + std_net.flat.len()
            }
        }
    }

    /// Flattened lambda vector: mean-net weights then std-net weights.
    pub fn lambda(&self) -> Vec<f64> {
        match self {
            ProposalParams::Bootstrap | ProposalParams::LocallyOptimalLg => Vec::new(),
            ProposalParams::NeuralGaussian { mean_net, std_net } => {
                let mut v = mean_net.flat.clone();
                v.extend_from_slice(&std_net.flat);
                v
            }
        }
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.lambda_dim() {
            return Err(Error::invalid(format!(
                "lambda has length {}, proposal expects {}",
                lambda.len(),
                self.lambda_dim()
            )));
        }
        if let ProposalParams::NeuralGaussian { mean_net, std_net } = self {
            let split = mean_net.flat.len();
            mean_net.flat.copy_from_slice(&lambda[..split]);
            std_net.flat.copy_from_slice(&lambda[split..]);
        }
        Ok(())
    }

    pub fn lambda_norm(&self) -> f64 {
        self.lambda().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Data needed to pull an `x'` cotangent back to a lambda gradient after
/// the evaluation.
#[derive(Debug, Clone)]
enum PullbackCtx {
    /// Parameter-free kernel: the pullback is the empty vector.
    Empty,
    Neural {
        input: Vec<f64>,
        eps: Vec<f64>,
    },
}

/// One reparameterized proposal evaluation at `(x, y, eps)`.
#[derive(Debug, Clone)]
pub struct ProposalEval {
    /// `x' = r(x, y, eps)`.
    pub x_new: Vec<f64>,
    /// `log q(x' | x, y)`.
    pub logq: f64,
    /// Partial derivative of `log q` in lambda at fixed `x'`.
    pub grad_lambda_logq: Vec<f64>,
    /// Derivative of `log q` in `x'`.
    pub grad_x_new_logq: Vec<f64>,
    pullback: PullbackCtx,
}

impl ProposalEval {
    /// Apply `(d r / d lambda)^T` to an `x'` cotangent.
    pub fn lambda_pullback(&self, params: &ProposalParams, cotangent: &[f64]) -> Result<Vec<f64>> {
        match (&self.pullback, params) {
            (PullbackCtx::Empty, _) => Ok(Vec::new()),
            (
                PullbackCtx::Neural { input, eps },
                ProposalParams::NeuralGaussian { mean_net, std_net },
            ) => {
                if cotangent.len() != eps.len() {
                    return Err(Error::invalid("cotangent length does not match the state"));
                }
                // x' = mu + s .* eps, so d x'/d lambda factors through the
                // two networks with cotangents v and v .* eps.
                let (g_mean, _) = mlp_vjp(mean_net, input, cotangent)?;
                let scaled: Vec<f64> = cotangent.iter().zip(eps).map(|(c, e)| c * e).collect();
                let (g_std, _) = mlp_vjp(std_net, input, &scaled)?;
                let mut out = g_mean;
                out.extend(g_std);
                Ok(out)
            }
            _ => Err(Error::invalid(
                "pullback context does not match the proposal",
            )),
        }
    }
}

/// Push `eps ~ N(0, I)` through the proposal at `(x, y)` and evaluate the
/// log-density with its gradients.
pub fn reparam_eval(
    proposal: &ProposalParams,
    model: &Model,
    x: &[f64],
    y: &[f64],
    eps: &[f64],
) -> Result<ProposalEval> {
    if eps.len() != model.state_dim() {
        return Err(Error::invalid(
            "noise vector length must equal the state dimension",
        ));
    }
    match proposal {
        ProposalParams::Bootstrap => {
            let x_new = model.transition_reparam(x, eps);
            let eval = model.log_transition(x, &x_new)?;
            Ok(ProposalEval {
                x_new,
                logq: eval.value,
                grad_lambda_logq: Vec::new(),
                grad_x_new_logq: eval.grad_state,
                pullback: PullbackCtx::Empty,
            })
        }
        ProposalParams::LocallyOptimalLg => {
            let lg = model.as_linear_gaussian().ok_or_else(|| {
                Error::invalid(
                    "the locally optimal proposal is only defined for linear Gaussian models",
                )
            })?;
            let (mu, chol, inv, logdet) = lg.locally_optimal_pieces(x, y);
            let d = mu.len();
            let e = nalgebra::DVector::from_column_slice(eps);
            let x_new_v = &mu + chol * e;
            let r = &x_new_v - &mu;
            let u = inv * &r;
            let logq = -0.5 * (d as f64 * LN_2PI + logdet + r.dot(&u));
            Ok(ProposalEval {
                x_new: x_new_v.as_slice().to_vec(),
                logq,
                grad_lambda_logq: Vec::new(),
                grad_x_new_logq: (-u).as_slice().to_vec(),
                pullback: PullbackCtx::Empty,
            })
        }
        ProposalParams::NeuralGaussian { mean_net, std_net } => {
            let mut input = Vec::with_capacity(x.len() + y.len());
            input.extend_from_slice(x);
            input.extend_from_slice(y);
            let mu = mlp_forward(mean_net, &input)?;
            let sp = mlp_forward(std_net, &input)?;
            if mu.len() != eps.len() || sp.len() != eps.len() {
                return Err(Error::invalid("proposal networks must emit d_x outputs"));
            }
            let s: Vec<f64> = sp.iter().map(|v| v + STD_FLOOR).collect();
            debug_assert!(s.iter().all(|&v| v > 0.0));

            let d = eps.len();
            let mut x_new = vec![0.0; d];
            let mut logq = 0.0;
            let mut grad_x = vec![0.0; d];
            let mut cot_mu = vec![0.0; d];
            let mut cot_s = vec![0.0; d];
            for i in 0..d {
                x_new[i] = mu[i] + s[i] * eps[i];
                let r = x_new[i] - mu[i];
                let s2 = s[i] * s[i];
                logq += -0.5 * LN_2PI - s[i].ln() - 0.5 * r * r / s2;
                grad_x[i] = -r / s2;
                cot_mu[i] = r / s2;
                cot_s[i] = -1.0 / s[i] + r * r / (s2 * s[i]);
            }
            let (g_mean, _) = mlp_vjp(mean_net, &input, &cot_mu)?;
            let (g_std, _) = mlp_vjp(std_net, &input, &cot_s)?;
            let mut grad_lambda_logq = g_mean;
            grad_lambda_logq.extend(g_std);

            Ok(ProposalEval {
                x_new,
                logq,
                grad_lambda_logq,
                grad_x_new_logq: grad_x,
                pullback: PullbackCtx::Neural {
                    input,
                    eps: eps.to_vec(),
                },
            })
        }
    }
}

/// Value-only variant: `(x', log q)` without any gradient work.
pub fn reparam_value(
    proposal: &ProposalParams,
    model: &Model,
    x: &[f64],
    y: &[f64],
    eps: &[f64],
) -> Result<(Vec<f64>, f64)> {
    match proposal {
        ProposalParams::Bootstrap => {
            let x_new = model.transition_reparam(x, eps);
            let logq = model.log_transition_value(x, &x_new)?;
            Ok((x_new, logq))
        }
        ProposalParams::LocallyOptimalLg => {
            let eval = reparam_eval(proposal, model, x, y, eps)?;
            Ok((eval.x_new, eval.logq))
        }
        ProposalParams::NeuralGaussian { mean_net, std_net } => {
            if eps.len() != model.state_dim() {
                return Err(Error::invalid(
                    "noise vector length must equal the state dimension",
                ));
            }
            let mut input = Vec::with_capacity(x.len() + y.len());
            input.extend_from_slice(x);
            input.extend_from_slice(y);
            let mu = mlp_forward(mean_net, &input)?;
            let sp = mlp_forward(std_net, &input)?;
            let mut x_new = vec![0.0; eps.len()];
            let mut logq = 0.0;
            for i in 0..eps.len() {
                let s = sp[i] + STD_FLOOR;
                x_new[i] = mu[i] + s * eps[i];
                logq += -0.5 * LN_2PI - s.ln() - 0.5 * eps[i] * eps[i];
            }
            Ok((x_new, logq))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearGaussianModel;
    use crate::rng::RngState;
    use approx::assert_relative_eq;

    fn lg_model() -> Model {
        Model::LinearGaussian(LinearGaussianModel::scalar(0.8, 1.0, 0.5, 0.2).unwrap())
    }

    fn zeroed_neural(dx: usize, dy: usize) -> ProposalParams {
        let mut p = ProposalParams::neural_gaussian(dx, dy, 3, 2, 0).unwrap();
        let dim = p.lambda_dim();
        p.set_lambda(&vec![0.0; dim]).unwrap();
        p
    }

    #[test]
    fn zero_nets_at_zero_noise() {
        let model = lg_model();
        let p = zeroed_neural(1, 1);
        let eval = reparam_eval(&p, &model, &[0.3], &[-0.2], &[0.0]).unwrap();
        assert_relative_eq!(eval.x_new[0], 0.0, epsilon = 1e-15);
        let s = std::f64::consts::LN_2 + STD_FLOOR;
        assert_relative_eq!(eval.logq, -0.5 * LN_2PI - s.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_pushforward_noise_free() {
        let model = lg_model();
        let eval =
            reparam_eval(&ProposalParams::Bootstrap, &model, &[1.0], &[0.0], &[0.0]).unwrap();
        assert_relative_eq!(eval.x_new[0], 0.8, epsilon = 1e-15);
        assert_eq!(eval.grad_lambda_logq.len(), 0);
    }

    #[test]
    fn locally_optimal_moments() {
        let model = lg_model();
        let eval = reparam_eval(
            &ProposalParams::LocallyOptimalLg,
            &model,
            &[1.0],
            &[0.8],
            &[0.0],
        )
        .unwrap();
        assert_relative_eq!(eval.x_new[0], 0.8, epsilon = 1e-12);
        // log N(mu*; mu*, 1/29)
        assert_relative_eq!(
            eval.logq,
            -0.5 * (LN_2PI + (1.0f64 / 29.0).ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn locally_optimal_rejected_for_sv() {
        let sv =
            Model::StochasticVolatility(crate::model::StochVolModel::new(0.9, 0.3, 0.5).unwrap());
        assert!(reparam_eval(
            &ProposalParams::LocallyOptimalLg,
            &sv,
            &[0.0],
            &[0.0],
            &[0.0]
        )
        .is_err());
    }

    #[test]
    fn neural_sample_moments_match_network_outputs() {
        let model = lg_model();
        let p = ProposalParams::neural_gaussian(1, 1, 3, 2, 77).unwrap();
        let (x, y) = ([0.4], [-0.9]);
        let (mean_net, std_net) = match &p {
            ProposalParams::NeuralGaussian { mean_net, std_net } => (mean_net, std_net),
            _ => unreachable!(),
        };
        let input = [x[0], y[0]];
        let mu = mlp_forward(mean_net, &input).unwrap()[0];
        let s = mlp_forward(std_net, &input).unwrap()[0] + STD_FLOOR;

        let n = 100_000;
        let mut rng = RngState::from_seed(4);
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let eval = reparam_eval(&p, &model, &x, &y, &[rng.normal()]).unwrap();
            sum += eval.x_new[0];
            sumsq += eval.x_new[0] * eval.x_new[0];
        }
        let emp_mean = sum / n as f64;
        let emp_var = sumsq / n as f64 - emp_mean * emp_mean;
        // three standard errors of the mean and of the variance estimate
        let se_mean = s / (n as f64).sqrt();
        let se_var = s * s * (2.0 / n as f64).sqrt();
        assert!((emp_mean - mu).abs() < 3.0 * se_mean);
        assert!((emp_var - s * s).abs() < 3.0 * se_var);
    }

    #[test]
    fn composite_lambda_gradient_matches_finite_differences() {
        // d/d lambda of log q(r_lambda(x, y, eps) | x, y) at fixed eps,
        // i.e. grad_lambda_logq + pullback(grad_x_new_logq).
        let model = lg_model();
        let p = ProposalParams::neural_gaussian(1, 1, 3, 2, 3).unwrap();
        let (x, y, eps) = ([0.5], [-0.3], [0.8]);

        let eval = reparam_eval(&p, &model, &x, &y, &eps).unwrap();
        let pulled = eval.lambda_pullback(&p, &eval.grad_x_new_logq).unwrap();
        let analytic: Vec<f64> = eval
            .grad_lambda_logq
            .iter()
            .zip(&pulled)
            .map(|(a, b)| a + b)
            .collect();

        let lambda0 = p.lambda();
        let h = 1e-5;
        for i in 0..lambda0.len() {
            let mut lp = lambda0.clone();
            lp[i] += h;
            let mut q = p.clone();
            q.set_lambda(&lp).unwrap();
            let up = reparam_eval(&q, &model, &x, &y, &eps).unwrap().logq;
            lp[i] = lambda0[i] - h;
            q.set_lambda(&lp).unwrap();
            let dn = reparam_eval(&q, &model, &x, &y, &eps).unwrap().logq;
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (fd - analytic[i]).abs() / scale < 1e-4,
                "coord {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn value_only_path_agrees_with_full_eval() {
        let model = lg_model();
        for p in [
            ProposalParams::Bootstrap,
            ProposalParams::LocallyOptimalLg,
            ProposalParams::neural_gaussian(1, 1, 3, 2, 5).unwrap(),
        ] {
            let eval = reparam_eval(&p, &model, &[0.2], &[0.6], &[-1.1]).unwrap();
            let (x_new, logq) = reparam_value(&p, &model, &[0.2], &[0.6], &[-1.1]).unwrap();
            assert_relative_eq!(eval.x_new[0], x_new[0], epsilon = 1e-12);
            assert_relative_eq!(eval.logq, logq, epsilon = 1e-12);
        }
    }
}
