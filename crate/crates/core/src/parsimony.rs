//! Effective-parameter measures: LOO and WAIC effective numbers of
//! parameters, global-local shrinkage factors and the effective number of
//! coefficients, the Laplace Occam factor, and description length.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::predictive::{pointwise_variance_penalty, ElpdMethod, ElpdResult, PointwiseLogLik};

/// Parsimony metrics reported side by side; no relation between them is
/// asserted.
#[derive(Debug, Clone, Serialize)]
pub struct ParsimonyReport {
    pub enp_loo: Option<f64>,
    pub enp_waic: Option<f64>,
    pub enc_gls: Option<f64>,
    pub occam_factor_log: Option<f64>,
    pub mdl: Option<f64>,
    pub nominal_param_count: usize,
}

/// Sum of pointwise gaps between in-sample and leave-one-out log predictive
/// densities.
pub fn enp_loo(in_sample: &ElpdResult, loo: &ElpdResult) -> Result<f64> {
    if in_sample.method != ElpdMethod::Posterior {
        return Err(Error::invalid("in-sample argument must be a posterior ELPD"));
    }
    if !matches!(loo.method, ElpdMethod::LooIs | ElpdMethod::LooRefit) {
        return Err(Error::invalid("second argument must be a LOO ELPD"));
    }
    if in_sample.pointwise.len() != loo.pointwise.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} observations",
            in_sample.pointwise.len(),
            loo.pointwise.len()
        )));
    }
    Ok(in_sample
        .pointwise
        .iter()
        .zip(&loo.pointwise)
        .map(|(l, o)| l - o)
        .sum())
}

/// Sum of posterior variances of the pointwise log-likelihood; shares its
/// code path with the WAIC penalty.
pub fn enp_waic(loglik: &PointwiseLogLik) -> Result<f64> {
    if loglik.provenance != crate::predictive::Provenance::PosteriorDraws {
        return Err(Error::invalid("effective parameters need posterior draws"));
    }
    Ok(pointwise_variance_penalty(loglik)?.iter().sum())
}

/// Shrinkage factor kappa = 1 / (1 + a lambda^2 tau^2), strictly inside
/// (0,1) and decreasing in each argument.
pub fn shrinkage_kappa(a: f64, lambda: f64, tau: f64) -> Result<f64> {
    if a <= 0.0 || lambda <= 0.0 || tau <= 0.0 {
        return Err(Error::invalid("shrinkage inputs must be positive"));
    }
    Ok(1.0 / (1.0 + a * lambda * lambda * tau * tau))
}

/// Effective number of coefficients sum(1 - kappa_k).
pub fn enc_gls(kappas: &[f64]) -> Result<f64> {
    if kappas.iter().any(|k| !(0.0 < *k && *k < 1.0)) {
        return Err(Error::invalid("shrinkage factors must lie strictly in (0,1)"));
    }
    Ok(kappas.iter().map(|k| 1.0 - k).sum())
}

/// Log Occam factor of the Laplace approximation:
/// log p(theta_mode) - 0.5 (log det H - dim log 2 pi), with H the Hessian of
/// the negative log joint density at the mode. Adding the log-likelihood at
/// the mode gives the Laplace marginal likelihood, exact for Gaussian
/// posteriors.
pub fn occam_factor_laplace(
    prior_logpdf_at_mode: f64,
    log_det_hessian: f64,
    dim: usize,
) -> Result<f64> {
    if !log_det_hessian.is_finite() {
        return Err(Error::invalid("Hessian log-determinant must be finite (positive definite)"));
    }
    Ok(prior_logpdf_at_mode
        - 0.5 * (log_det_hessian - dim as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Description length: the negative log marginal likelihood.
pub fn mdl(log_ml: f64) -> Result<f64> {
    if !log_ml.is_finite() {
        return Err(Error::invalid("log marginal likelihood must be finite"));
    }
    Ok(-log_ml)
}

/// Central-difference Hessian of a negative log density, with steps
/// h_i = rel_step * (1 + |x_i|).
pub fn finite_difference_hessian(
    neg_log_density: impl Fn(&[f64]) -> f64,
    x: &[f64],
    rel_step: f64,
) -> Vec<Vec<f64>> {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|xi| rel_step * (1.0 + xi.abs())).collect();
    let mut out = vec![vec![0.0; d]; d];
    let f0 = neg_log_density(x);
    for i in 0..d {
        for j in i..d {
            let v = if i == j {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h[i];
                xm[i] -= h[i];
                (neg_log_density(&xp) - 2.0 * f0 + neg_log_density(&xm)) / (h[i] * h[i])
            } else {
                let mut xpp = x.to_vec();
                let mut xpm = x.to_vec();
                let mut xmp = x.to_vec();
                let mut xmm = x.to_vec();
                xpp[i] += h[i];
                xpp[j] += h[j];
                xpm[i] += h[i];
                xpm[j] -= h[j];
                xmp[i] -= h[i];
                xmp[j] += h[j];
                xmm[i] -= h[i];
                xmm[j] -= h[j];
                (neg_log_density(&xpp) - neg_log_density(&xpm) - neg_log_density(&xmp)
                    + neg_log_density(&xmm))
                    / (4.0 * h[i] * h[j])
            };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky;
/// errors when the matrix is not positive definite.
pub fn log_det_spd(matrix: &[Vec<f64>]) -> Result<f64> {
    let d = matrix.len();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::numerical("Hessian is not positive definite"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}
