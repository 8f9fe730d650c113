//! Gaussian linear regression with a global-local shrinkage prior (conjugate
//! normal-inverse-gamma form) and the two-group mean-difference model.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Gamma as GammaDist, Normal as NormalDist};
use serde_json::json;

use super::{AnalyticPosterior, Dataset, Model};
use crate::error::{Error, Result};
use crate::models::conjugate::conjugate_normal_posterior;
use crate::stats::normal_logpdf;

/// Linear regression y ~ N(X beta, sigma) with per-coefficient prior
/// beta_k | sigma ~ N(0, sigma^2 lambda_k^2 tau^2) and sigma^2 inverse-gamma.
/// Scaling the coefficient prior by sigma^2 keeps the joint posterior in
/// closed form for unknown noise.
#[derive(Debug, Clone)]
pub struct GlsLinearRegression {
    design: Vec<Vec<f64>>,
    local_scales: Vec<f64>,
    global_scale: f64,
    sigma_shape: f64,
    sigma_scale: f64,
}

impl GlsLinearRegression {
    pub fn new(
        design: Vec<Vec<f64>>,
        local_scales: Vec<f64>,
        global_scale: f64,
        sigma_shape: f64,
        sigma_scale: f64,
    ) -> Result<Self> {
        if design.is_empty() {
            return Err(Error::invalid("empty design matrix"));
        }
        let k = design[0].len();
        if k == 0 || design.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("ragged design matrix".into()));
        }
        if local_scales.len() != k {
            return Err(Error::ShapeMismatch(
                "one local scale per coefficient required".into(),
            ));
        }
        if local_scales.iter().any(|l| *l <= 0.0) || global_scale <= 0.0 {
            return Err(Error::invalid("scales must be positive"));
        }
        if sigma_shape <= 0.0 || sigma_scale <= 0.0 {
            return Err(Error::invalid("inverse-gamma hyperparameters must be positive"));
        }
        Ok(Self {
            design,
            local_scales,
            global_scale,
            sigma_shape,
            sigma_scale,
        })
    }

    /// Deterministic 100 x 3 fixture with exactly orthogonal, unit-scale
    /// columns (Gram-Schmidt over a seeded draw), weak shrinkage.
    pub fn default_fixture() -> Self {
        let design = orthogonal_design(100, 3, 2024);
        GlsLinearRegression::new(design, vec![1.0; 3], 10.0, 2.0, 1.0).expect("valid fixture")
    }

    pub fn n_coefficients(&self) -> usize {
        self.local_scales.len()
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn local_scales(&self) -> &[f64] {
        &self.local_scales
    }

    pub fn global_scale(&self) -> f64 {
        self.global_scale
    }

    fn xt_x(&self) -> DMatrix<f64> {
        let n = self.design.len();
        let k = self.n_coefficients();
        let x = DMatrix::from_fn(n, k, |i, j| self.design[i][j]);
        x.transpose() * x
    }

    /// Scale constant a_k = sum_n x_nk^2 entering the shrinkage factor; with
    /// the sigma-scaled prior the noise variance cancels out of the factor.
    pub fn scale_constant(&self, k: usize) -> f64 {
        self.design.iter().map(|row| row[k] * row[k]).sum()
    }

    /// Shrinkage factor kappa_k = 1 / (1 + a_k lambda_k^2 tau^2).
    pub fn shrinkage_factor(&self, k: usize) -> f64 {
        let a = self.scale_constant(k);
        let l = self.local_scales[k];
        let t = self.global_scale;
        1.0 / (1.0 + a * l * l * t * t)
    }

    /// Flat-prior maximum-likelihood coefficients (X'X)^-1 X'y.
    pub fn ml_estimates(&self, data: &Dataset) -> Result<Vec<f64>> {
        let n = self.design.len();
        if data.len() != n {
            return Err(Error::ShapeMismatch("data/design length mismatch".into()));
        }
        let k = self.n_coefficients();
        let x = DMatrix::from_fn(n, k, |i, j| self.design[i][j]);
        let y = DVector::from_column_slice(&data.observations);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * y;
        let sol = xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| Error::numerical("singular design"))?;
        Ok(sol.iter().copied().collect())
    }

    fn posterior_pieces(&self, data: &Dataset) -> Result<NigPosterior> {
        let n = self.design.len();
        if data.len() != n {
            return Err(Error::ShapeMismatch("data/design length mismatch".into()));
        }
        let k = self.n_coefficients();
        let x = DMatrix::from_fn(n, k, |i, j| self.design[i][j]);
        let y = DVector::from_column_slice(&data.observations);
        let mut a = self.xt_x();
        for j in 0..k {
            let prior_var = (self.local_scales[j] * self.global_scale).powi(2);
            a[(j, j)] += 1.0 / prior_var;
        }
        let xty = x.transpose() * &y;
        let a_chol = Cholesky::new(a.clone())
            .ok_or_else(|| Error::numerical("posterior precision not positive definite"))?;
        let m = a_chol.solve(&xty);
        let v = a_chol.inverse();
        let v_chol = Cholesky::new(v)
            .ok_or_else(|| Error::numerical("posterior covariance not positive definite"))?;
        let shape = self.sigma_shape + n as f64 / 2.0;
        let quad = (y.transpose() * &y)[(0, 0)] - (m.transpose() * a * &m)[(0, 0)];
        let scale = self.sigma_scale + 0.5 * quad.max(0.0);
        Ok(NigPosterior {
            mean: m,
            cov_chol: v_chol,
            shape,
            scale,
        })
    }
}

/// Generate an n x k design whose columns are exactly orthogonal with unit
/// second moment.
pub fn orthogonal_design(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = super::derive_rng(seed, 0, "design");
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    for j in 0..k {
        for prev in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
            let norm: f64 = cols[prev].iter().map(|v| v * v).sum();
            let coef = dot / norm;
            for i in 0..n {
                cols[j][i] -= coef * cols[prev][i];
            }
        }
        let scale = (cols[j].iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        for v in cols[j].iter_mut() {
            *v /= scale;
        }
    }
    let _ = rng.random::<f64>();
    (0..n).map(|i| (0..k).map(|j| cols[j][i]).collect()).collect()
}

struct NigPosterior {
    mean: DVector<f64>,
    cov_chol: Cholesky<f64, nalgebra::Dyn>,
    shape: f64,
    scale: f64,
}

impl AnalyticPosterior for NigPosterior {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let g = GammaDist::new(self.shape, 1.0).expect("positive shape").sample(rng);
        let sigma2 = self.scale / g;
        let sigma = sigma2.sqrt();
        let k = self.mean.len();
        let std_normal = NormalDist::new(0.0, 1.0).unwrap();
        let z = DVector::from_fn(k, |_, _| std_normal.sample(rng));
        let beta = &self.mean + self.cov_chol.l() * z * sigma;
        let mut out: Vec<f64> = beta.iter().copied().collect();
        out.push(sigma);
        out
    }

    fn descriptor(&self) -> serde_json::Value {
        let v = self.cov_chol.l() * self.cov_chol.l().transpose();
        json!({
            "family": "normal_inverse_gamma",
            "coef_mean": self.mean.iter().copied().collect::<Vec<f64>>(),
            "coef_cov_diag": v.diagonal().iter().copied().collect::<Vec<f64>>(),
            "sigma2_shape": self.shape,
            "sigma2_scale": self.scale,
        })
    }
}

impl Model for GlsLinearRegression {
    fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_coefficients())
            .map(|k| format!("beta{k}"))
            .collect();
        names.push("sigma".to_string());
        names
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let g = GammaDist::new(self.sigma_shape, 1.0)
            .expect("positive shape")
            .sample(rng);
        let sigma = (self.sigma_scale / g).sqrt();
        let mut theta: Vec<f64> = self
            .local_scales
            .iter()
            .map(|l| {
                NormalDist::new(0.0, sigma * l * self.global_scale)
                    .expect("positive sd")
                    .sample(rng)
            })
            .collect();
        theta.push(sigma);
        theta
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        let k = self.n_coefficients();
        let sigma = theta[k];
        if sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let sigma2 = sigma * sigma;
        // Inverse-gamma density on sigma^2 with the change of variables to
        // sigma (Jacobian 2 sigma).
        let ig = self.sigma_shape * self.sigma_scale.ln()
            - statrs::function::gamma::ln_gamma(self.sigma_shape)
            - (self.sigma_shape + 1.0) * sigma2.ln()
            - self.sigma_scale / sigma2
            + (2.0 * sigma).ln();
        let betas: f64 = (0..k)
            .map(|j| {
                normal_logpdf(
                    theta[j],
                    0.0,
                    sigma * self.local_scales[j] * self.global_scale,
                )
            })
            .sum();
        ig + betas
    }

    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let k = self.n_coefficients();
        let sigma = theta[k];
        data.observations
            .iter()
            .enumerate()
            .map(|(i, y)| {
                if sigma <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mu: f64 = self.design[i]
                    .iter()
                    .zip(&theta[..k])
                    .map(|(x, b)| x * b)
                    .sum();
                normal_logpdf(*y, mu, sigma)
            })
            .collect()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
        let k = self.n_coefficients();
        let sigma = theta[k].max(f64::MIN_POSITIVE);
        let noise = NormalDist::new(0.0, sigma).expect("positive sd");
        let obs: Vec<f64> = self
            .design
            .iter()
            .map(|row| {
                let mu: f64 = row.iter().zip(&theta[..k]).map(|(x, b)| x * b).sum();
                mu + noise.sample(rng)
            })
            .collect();
        Dataset::with_covariates(obs, self.design.clone()).expect("design is rectangular")
    }

    fn analytic_posterior(&self, data: &Dataset) -> Option<Box<dyn AnalyticPosterior>> {
        self.posterior_pieces(data)
            .ok()
            .map(|p| Box::new(p) as Box<dyn AnalyticPosterior>)
    }

    fn leave_one_out(&self, index: usize) -> Option<Box<dyn Model>> {
        if index >= self.design.len() || self.design.len() < 2 {
            return None;
        }
        let mut fold = self.clone();
        fold.design.remove(index);
        Some(Box::new(fold))
    }

    fn shrinkage_kappas(&self) -> Option<Vec<f64>> {
        Some(
            (0..self.n_coefficients())
                .map(|k| self.shrinkage_factor(k))
                .collect(),
        )
    }
}

/// Two independent group means with known observation noise; the estimand of
/// interest is the difference beta1 - beta2.
#[derive(Debug, Clone)]
pub struct TwoGroupModel {
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub obs_sd: f64,
    pub n1: usize,
    pub n2: usize,
}

impl TwoGroupModel {
    pub fn new(prior_mean: f64, prior_sd: f64, obs_sd: f64, n1: usize, n2: usize) -> Result<Self> {
        if prior_sd <= 0.0 || obs_sd <= 0.0 {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        Ok(Self {
            prior_mean,
            prior_sd,
            obs_sd,
            n1,
            n2,
        })
    }

    fn split<'d>(&self, data: &'d Dataset) -> (&'d [f64], &'d [f64]) {
        data.observations.split_at(self.n1.min(data.len()))
    }
}

struct TwoGroupPosterior {
    g1: (f64, f64),
    g2: (f64, f64),
}

impl AnalyticPosterior for TwoGroupPosterior {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d1 = NormalDist::new(self.g1.0, self.g1.1).unwrap();
        let d2 = NormalDist::new(self.g2.0, self.g2.1).unwrap();
        vec![d1.sample(rng), d2.sample(rng)]
    }

    fn descriptor(&self) -> serde_json::Value {
        json!({
            "family": "independent_normals",
            "beta1": {"mean": self.g1.0, "sd": self.g1.1},
            "beta2": {"mean": self.g2.0, "sd": self.g2.1},
        })
    }
}

impl Model for TwoGroupModel {
    fn parameter_names(&self) -> Vec<String> {
        vec!["beta1".to_string(), "beta2".to_string()]
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let dist = NormalDist::new(self.prior_mean, self.prior_sd).expect("positive sd");
        vec![dist.sample(rng), dist.sample(rng)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        normal_logpdf(theta[0], self.prior_mean, self.prior_sd)
            + normal_logpdf(theta[1], self.prior_mean, self.prior_sd)
    }

    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let n1 = self.n1.min(data.len());
        data.observations
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let mu = if i < n1 { theta[0] } else { theta[1] };
                normal_logpdf(*y, mu, self.obs_sd)
            })
            .collect()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
        let noise = NormalDist::new(0.0, self.obs_sd).expect("positive sd");
        let mut obs = Vec::with_capacity(self.n1 + self.n2);
        let mut cov = Vec::with_capacity(self.n1 + self.n2);
        for _ in 0..self.n1 {
            obs.push(theta[0] + noise.sample(rng));
            cov.push(vec![1.0, 0.0]);
        }
        for _ in 0..self.n2 {
            obs.push(theta[1] + noise.sample(rng));
            cov.push(vec![0.0, 1.0]);
        }
        Dataset::with_covariates(obs, cov).expect("rectangular")
    }

    fn analytic_posterior(&self, data: &Dataset) -> Option<Box<dyn AnalyticPosterior>> {
        let (y1, y2) = self.split(data);
        let g1 = conjugate_normal_posterior(
            self.prior_mean,
            self.prior_sd,
            self.obs_sd,
            &Dataset::new(y1.to_vec()),
        )
        .ok()?;
        let g2 = conjugate_normal_posterior(
            self.prior_mean,
            self.prior_sd,
            self.obs_sd,
            &Dataset::new(y2.to_vec()),
        )
        .ok()?;
        Some(Box::new(TwoGroupPosterior { g1, g2 }))
    }

    fn leave_one_out(&self, index: usize) -> Option<Box<dyn Model>> {
        let mut fold = self.clone();
        if index < self.n1 {
            fold.n1 = fold.n1.checked_sub(1)?;
        } else {
            fold.n2 = fold.n2.checked_sub(1)?;
        }
        Some(Box::new(fold))
    }
}
