//! Exact filtering and log-likelihood for linear Gaussian models.
//!
//! This is the ground-truth side of the likelihood and bound checks: the
//! particle estimator's mean is compared against [`kalman_filter`]'s exact
//! `log p(y_{0:T})`, and each per-step increment against
//! [`predictive_loglik`]. Covariance updates use the Joseph form so that
//! long runs stay symmetric positive semidefinite.

use crate::error::{Error, Result};
use crate::model::{LinearGaussianModel, LN_2PI};
use crate::series::Series;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Filter moments and per-step predictive log-likelihoods.
#[derive(Debug, Clone)]
pub struct KalmanResult {
    /// Posterior means `E[x_t | y_{0:t}]`.
    pub filter_means: Vec<DVector<f64>>,
    /// Posterior covariances.
    pub filter_covs: Vec<DMatrix<f64>>,
    /// `log p(y_t | y_{0:t-1})` for each `t`.
    pub step_loglik: Vec<f64>,
    /// `log p(y_{0:T})`, the sum of the step terms.
    pub total_loglik: f64,
}

/// Run the filter over `ys` starting from the prior `N(init_mean, init_cov)`
/// on the initial state.
pub fn kalman_filter(
    model: &LinearGaussianModel,
    ys: &Series,
    init_mean: &DVector<f64>,
    init_cov: &DMatrix<f64>,
) -> Result<KalmanResult> {
    let dx = model.state_dim();
    let dy = model.obs_dim();
    if ys.dim() != dy {
        return Err(Error::invalid(format!(
            "observations have dimension {}, model emits {}",
            ys.dim(),
            dy
        )));
    }
    if ys.is_empty() {
        return Err(Error::invalid("observation record is empty"));
    }
    if init_mean.len() != dx || init_cov.nrows() != dx || init_cov.ncols() != dx {
        return Err(Error::invalid(
            "initial moments do not match the state dimension",
        ));
    }

    let a = model.a();
    let b = model.b();
    let q = model.state_cov();
    let r = model.obs_cov();
    let eye = DMatrix::<f64>::identity(dx, dx);

    let mut filter_means = Vec::with_capacity(ys.len());
    let mut filter_covs = Vec::with_capacity(ys.len());
    let mut step_loglik = Vec::with_capacity(ys.len());

    let mut m_pred = init_mean.clone();
    let mut p_pred = init_cov.clone();

    for (t, y) in ys.rows().enumerate() {
        let yv = DVector::from_column_slice(y);
        let innov = &yv - b * &m_pred;
        let s = b * &p_pred * b.transpose() + r;
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::numerical(format!("innovation covariance is singular at step {t}"))
        })?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let s_inv_innov = chol.solve(&innov);
        step_loglik.push(-0.5 * (dy as f64 * LN_2PI + logdet + innov.dot(&s_inv_innov)));

        // gain K = P B^T S^-1 via the same factorization
        let pbt = &p_pred * b.transpose();
        let k = chol.solve(&pbt.transpose()).transpose();

        let m_filt = &m_pred + &k * &innov;
        let i_kb = &eye - &k * b;
        let p_filt = &i_kb * &p_pred * i_kb.transpose() + &k * r * k.transpose();
        let p_filt = symmetrize(&p_filt);

        m_pred = a * &m_filt;
        p_pred = symmetrize(&(a * &p_filt * a.transpose() + q));

        filter_means.push(m_filt);
        filter_covs.push(p_filt);
    }

    let total_loglik = step_loglik.iter().sum();
    Ok(KalmanResult {
        filter_means,
        filter_covs,
        step_loglik,
        total_loglik,
    })
}

/// `log N(y; B mu, B P B^T + S_v^T S_v)` for a state prior `N(mu, P)`.
///
/// This is the exact quantity a particle filter's normalized weight-sum
/// increment estimates.
pub fn predictive_loglik(
    model: &LinearGaussianModel,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    y: &[f64],
) -> Result<f64> {
    let dy = model.obs_dim();
    if y.len() != dy {
        return Err(Error::invalid(
            "observation length does not match the model",
        ));
    }
    let b = model.b();
    let s = b * prior_cov * b.transpose() + model.obs_cov();
    let chol =
        Cholesky::new(s).ok_or_else(|| Error::numerical("predictive covariance is singular"))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let innov = DVector::from_column_slice(y) - b * prior_mean;
    let quad = innov.dot(&chol.solve(&innov));
    Ok(-0.5 * (dy as f64 * LN_2PI + logdet + quad))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}
