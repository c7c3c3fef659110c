//! Linear Gaussian state-space model.
//!
//! Transition `N(Ax, S_u^T S_u)`, emission `N(Bx', S_v^T S_v)`. Noise is
//! parameterized by the scale factors `S_u`, `S_v` directly; covariances are
//! never formed by inversion in the per-particle path (triangular solves via
//! cached Cholesky factors). The learnable parameter vector is
//! `[vec(A), vec(S_u)]` (row-major); `B` and `S_v` are structural.

use super::{GaussianDist, LogDensityEval, LN_2PI};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    s_u: DMatrix<f64>,
    s_v: DMatrix<f64>,
    // cached from the factors
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    logdet_q: f64,
    logdet_r: f64,
    s_u_t: DMatrix<f64>,
    s_v_t: DMatrix<f64>,
    // locally optimal proposal pieces (depend on the model only):
    // Sigma* = (Q^-1 + B^T R^-1 B)^-1, mu* = M_x x + M_y y
    opt_cov: DMatrix<f64>,
    opt_cov_inv: DMatrix<f64>,
    opt_cov_chol: DMatrix<f64>,
    opt_cov_logdet: f64,
    opt_mean_x: DMatrix<f64>,
    opt_mean_y: DMatrix<f64>,
}

fn chol_pieces(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol.l(), chol.inverse(), logdet))
}

impl LinearGaussianModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        s_u: DMatrix<f64>,
        s_v: DMatrix<f64>,
    ) -> Result<Self> {
        let dx = a.nrows();
        if dx == 0 || a.ncols() != dx {
            return Err(Error::invalid("A must be square and non-empty"));
        }
        let dy = b.nrows();
        if dy == 0 || b.ncols() != dx {
            return Err(Error::invalid("B must be d_y x d_x with d_y > 0"));
        }
        if s_u.nrows() != dx || s_u.ncols() != dx {
            return Err(Error::invalid("S_u must be d_x x d_x"));
        }
        if s_v.nrows() != dy || s_v.ncols() != dy {
            return Err(Error::invalid("S_v must be d_y x d_y"));
        }
        for m in [&a, &b, &s_u, &s_v] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("model matrices must be finite"));
            }
        }

        let q = s_u.transpose() * &s_u;
        let r = s_v.transpose() * &s_v;
        let (_, q_inv, logdet_q) = chol_pieces(&q, "state noise covariance S_u^T S_u")?;
        let (_, r_inv, logdet_r) = chol_pieces(&r, "observation noise covariance S_v^T S_v")?;

        let opt_cov_inv = &q_inv + b.transpose() * &r_inv * &b;
        let (_, opt_cov, _) = chol_pieces(&opt_cov_inv, "locally optimal precision")?;
        let (opt_cov_chol, _, opt_cov_logdet) =
            chol_pieces(&opt_cov, "locally optimal covariance")?;
        let opt_mean_x = &opt_cov * &q_inv * &a;
        let opt_mean_y = &opt_cov * b.transpose() * &r_inv;

        Ok(LinearGaussianModel {
            s_u_t: s_u.transpose(),
            s_v_t: s_v.transpose(),
            a,
            b,
            s_u,
            s_v,
            q,
            r,
            q_inv,
            r_inv,
            logdet_q,
            logdet_r,
            opt_cov,
            opt_cov_inv,
            opt_cov_chol,
            opt_cov_logdet,
            opt_mean_x,
            opt_mean_y,
        })
    }

    /// Scalar model shorthand.
    pub fn scalar(a: f64, b: f64, s_u: f64, s_v: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, s_u),
            DMatrix::from_element(1, 1, s_v),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn s_u(&self) -> &DMatrix<f64> {
        &self.s_u
    }

    pub fn s_v(&self) -> &DMatrix<f64> {
        &self.s_v
    }

    /// State noise covariance `S_u^T S_u`.
    pub fn state_cov(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Observation noise covariance `S_v^T S_v`.
    pub fn obs_cov(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Learnable parameters `[vec(A), vec(S_u)]`, row-major.
    pub(super) fn theta(&self) -> Vec<f64> {
        let d = self.state_dim();
        let mut v = Vec::with_capacity(2 * d * d);
        for i in 0..d {
            for j in 0..d {
                v.push(self.a[(i, j)]);
            }
        }
        for i in 0..d {
            for j in 0..d {
                v.push(self.s_u[(i, j)]);
            }
        }
        v
    }

    pub(super) fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let d = self.state_dim();
        let a = DMatrix::from_row_slice(d, d, &theta[..d * d]);
        let s_u = DMatrix::from_row_slice(d, d, &theta[d * d..]);
        Self::new(a, self.b.clone(), s_u, self.s_v.clone())
    }

    pub(super) fn log_transition_value(&self, x: &[f64], x_new: &[f64]) -> f64 {
        let d = self.state_dim() as f64;
        let r = DVector::from_column_slice(x_new) - &self.a * DVector::from_column_slice(x);
        let u = &self.q_inv * &r;
        -0.5 * (d * LN_2PI + self.logdet_q + r.dot(&u))
    }

    pub(super) fn log_transition(&self, x: &[f64], x_new: &[f64]) -> LogDensityEval {
        let d = self.state_dim();
        let xv = DVector::from_column_slice(x);
        let r = DVector::from_column_slice(x_new) - &self.a * &xv;
        let u = &self.q_inv * &r;
        let value = -0.5 * (d as f64 * LN_2PI + self.logdet_q + r.dot(&u));

        // d/dA = u x^T; d/dS_u = -S_u Q^-1 + (S_u u) u^T
        let mut grad_params = Vec::with_capacity(2 * d * d);
        for i in 0..d {
            for j in 0..d {
                grad_params.push(u[i] * xv[j]);
            }
        }
        let su_qinv = &self.s_u * &self.q_inv;
        let su_u = &self.s_u * &u;
        for i in 0..d {
            for j in 0..d {
                grad_params.push(-su_qinv[(i, j)] + su_u[i] * u[j]);
            }
        }
        LogDensityEval {
            value,
            grad_params,
            grad_state: (-u).as_slice().to_vec(),
        }
    }

    pub(super) fn log_emission_value(&self, x_new: &[f64], y: &[f64]) -> f64 {
        let dy = self.obs_dim() as f64;
        let s = DVector::from_column_slice(y) - &self.b * DVector::from_column_slice(x_new);
        let u = &self.r_inv * &s;
        -0.5 * (dy * LN_2PI + self.logdet_r + s.dot(&u))
    }

    pub(super) fn log_emission(&self, x_new: &[f64], y: &[f64]) -> LogDensityEval {
        let value = self.log_emission_value(x_new, y);
        let s = DVector::from_column_slice(y) - &self.b * DVector::from_column_slice(x_new);
        let grad_state = self.b.transpose() * &self.r_inv * s;
        LogDensityEval {
            value,
            grad_params: vec![0.0; 2 * self.state_dim() * self.state_dim()],
            grad_state: grad_state.as_slice().to_vec(),
        }
    }

    pub(super) fn initial_distribution(&self) -> Result<GaussianDist> {
        let d = self.state_dim();
        if d == 1 {
            let a = self.a[(0, 0)];
            if a.abs() >= 1.0 {
                return Err(Error::NonStationary(format!(
                    "|A| = {} >= 1, stationary initialization undefined",
                    a.abs()
                )));
            }
            let var = self.q[(0, 0)] / (1.0 - a * a);
            GaussianDist::new(DVector::zeros(1), DMatrix::from_element(1, 1, var))
        } else {
            GaussianDist::new(DVector::zeros(d), DMatrix::identity(d, d))
        }
    }

    pub(super) fn transition_reparam(&self, x: &[f64], eps: &[f64]) -> Vec<f64> {
        let out =
            &self.a * DVector::from_column_slice(x) + &self.s_u_t * DVector::from_column_slice(eps);
        out.as_slice().to_vec()
    }

    pub(super) fn emission_reparam(&self, x_new: &[f64], eps: &[f64]) -> Vec<f64> {
        let out = &self.b * DVector::from_column_slice(x_new)
            + &self.s_v_t * DVector::from_column_slice(eps);
        out.as_slice().to_vec()
    }

    /// Mean and covariance of the locally optimal proposal
    /// `q(x' | x, y) ∝ m(x' | x) g(y | x')`.
    pub fn locally_optimal_params(&self, x: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mu = &self.opt_mean_x * DVector::from_column_slice(x)
            + &self.opt_mean_y * DVector::from_column_slice(y);
        (mu, self.opt_cov.clone())
    }

    /// `(mu*, chol(Sigma*), Sigma*^-1, logdet Sigma*)` for sampling and
    /// density evaluation without re-factorizing per particle.
    pub(crate) fn locally_optimal_pieces(
        &self,
        x: &[f64],
        y: &[f64],
    ) -> (DVector<f64>, &DMatrix<f64>, &DMatrix<f64>, f64) {
        let mu = &self.opt_mean_x * DVector::from_column_slice(x)
            + &self.opt_mean_y * DVector::from_column_slice(y);
        (
            mu,
            &self.opt_cov_chol,
            &self.opt_cov_inv,
            self.opt_cov_logdet,
        )
    }
}
