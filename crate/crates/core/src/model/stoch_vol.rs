//! Univariate stochastic volatility model.
//!
//! Transition `N(alpha x, sigma^2)`, emission `N(0, beta^2 exp(x'))`,
//! stationary initialization `N(0, sigma^2 / (1 - alpha^2))`. Parameters
//! `[alpha, sigma, beta]` with `alpha` in `(0, 1)` and positive scales;
//! stochastic-approximation iterates are kept in this set by clipping
//! (see [`super::Model::project_params`]).

use super::{GaussianDist, LogDensityEval, LN_2PI};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct StochVolModel {
    alpha: f64,
    sigma: f64,
    beta: f64,
}

impl StochVolModel {
    pub fn new(alpha: f64, sigma: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && sigma.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(
                "stochastic volatility parameters must be finite",
            ));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha = {alpha} must lie in (0, 1)"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::invalid(format!("sigma = {sigma} must be positive")));
        }
        if beta <= 0.0 {
            return Err(Error::invalid(format!("beta = {beta} must be positive")));
        }
        Ok(StochVolModel { alpha, sigma, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub(super) fn theta(&self) -> Vec<f64> {
        vec![self.alpha, self.sigma, self.beta]
    }

    pub(super) fn log_transition_value(&self, x: f64, x_new: f64) -> f64 {
        let r = x_new - self.alpha * x;
        -0.5 * LN_2PI - self.sigma.ln() - 0.5 * r * r / (self.sigma * self.sigma)
    }

    pub(super) fn log_transition(&self, x: f64, x_new: f64) -> LogDensityEval {
        let s2 = self.sigma * self.sigma;
        let r = x_new - self.alpha * x;
        LogDensityEval {
            value: -0.5 * LN_2PI - self.sigma.ln() - 0.5 * r * r / s2,
            grad_params: vec![
                r * x / s2,
                -1.0 / self.sigma + r * r / (s2 * self.sigma),
                0.0,
            ],
            grad_state: vec![-r / s2],
        }
    }

    pub(super) fn log_emission_value(&self, x_new: f64, y: f64) -> f64 {
        let v = self.beta * self.beta * x_new.exp();
        -0.5 * LN_2PI - self.beta.ln() - 0.5 * x_new - 0.5 * y * y / v
    }

    pub(super) fn log_emission(&self, x_new: f64, y: f64) -> LogDensityEval {
        let b2 = self.beta * self.beta;
        let ex = x_new.exp();
        let value = -0.5 * LN_2PI - self.beta.ln() - 0.5 * x_new - 0.5 * y * y / (b2 * ex);
        LogDensityEval {
            value,
            grad_params: vec![0.0, 0.0, -1.0 / self.beta + y * y / (b2 * self.beta * ex)],
            grad_state: vec![-0.5 + 0.5 * y * y / (b2 * ex)],
        }
    }

    pub(super) fn initial_distribution(&self) -> Result<GaussianDist> {
        let var = self.sigma * self.sigma / (1.0 - self.alpha * self.alpha);
        GaussianDist::new(DVector::zeros(1), DMatrix::from_element(1, 1, var))
    }
}
