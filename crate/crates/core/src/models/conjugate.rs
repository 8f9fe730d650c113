//! Conjugate reference models: normal with known observation noise and
//! Beta-Bernoulli trials. Both provide exact posterior samplers.

use rand::{Rng, RngCore};
use rand_distr::{Beta as BetaDist, Distribution, Normal as NormalDist};
use serde_json::json;

use super::{AnalyticPosterior, Dataset, Model};
use crate::error::{Error, Result};
use crate::stats::normal_logpdf;

/// Standard normal-normal update on the mean. With no data the prior is
/// returned unchanged.
pub fn conjugate_normal_posterior(
    prior_mean: f64,
    prior_sd: f64,
    obs_sd: f64,
    data: &Dataset,
) -> Result<(f64, f64)> {
    if prior_sd <= 0.0 || obs_sd <= 0.0 {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let n = data.len() as f64;
    if data.is_empty() {
        return Ok((prior_mean, prior_sd));
    }
    let sum: f64 = data.observations.iter().sum();
    let precision = 1.0 / (prior_sd * prior_sd) + n / (obs_sd * obs_sd);
    let mean = (prior_mean / (prior_sd * prior_sd) + sum / (obs_sd * obs_sd)) / precision;
    Ok((mean, (1.0 / precision).sqrt()))
}

/// Gaussian mean model with known observation noise and a normal prior.
#[derive(Debug, Clone)]
pub struct NormalKnownVariance {
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub obs_sd: f64,
    /// Number of observations produced by `simulate`.
    pub n_obs: usize,
}

impl NormalKnownVariance {
    pub fn new(prior_mean: f64, prior_sd: f64, obs_sd: f64, n_obs: usize) -> Result<Self> {
        if prior_sd <= 0.0 || obs_sd <= 0.0 {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        Ok(Self {
            prior_mean,
            prior_sd,
            obs_sd,
            n_obs,
        })
    }

    /// Closed-form marginal likelihood of a dataset: each y_n is marginally
    /// N(prior_mean, obs_sd^2 + prior_sd^2) but observations share mu, so the
    /// joint is evaluated through the sequential posterior updates.
    pub fn log_marginal_likelihood(&self, data: &Dataset) -> f64 {
        let mut mean = self.prior_mean;
        let mut sd = self.prior_sd;
        let mut total = 0.0;
        for y in &data.observations {
            let pred_sd = (sd * sd + self.obs_sd * self.obs_sd).sqrt();
            total += normal_logpdf(*y, mean, pred_sd);
            let partial = Dataset::new(vec![*y]);
            let (m, s) = conjugate_normal_posterior(mean, sd, self.obs_sd, &partial)
                .expect("positive sds by construction");
            mean = m;
            sd = s;
        }
        total
    }
}

struct NormalPosterior {
    mean: f64,
    sd: f64,
}

impl AnalyticPosterior for NormalPosterior {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let dist = NormalDist::new(self.mean, self.sd).expect("positive sd");
        vec![dist.sample(rng)]
    }

    fn descriptor(&self) -> serde_json::Value {
        json!({"family": "normal", "mean": self.mean, "sd": self.sd})
    }
}

impl Model for NormalKnownVariance {
    fn parameter_names(&self) -> Vec<String> {
        vec!["mu".to_string()]
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let dist = NormalDist::new(self.prior_mean, self.prior_sd).expect("positive sd");
        vec![dist.sample(rng)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        normal_logpdf(theta[0], self.prior_mean, self.prior_sd)
    }

    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        data.observations
            .iter()
            .map(|y| normal_logpdf(*y, theta[0], self.obs_sd))
            .collect()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
        let dist = NormalDist::new(theta[0], self.obs_sd).expect("positive sd");
        Dataset::new((0..self.n_obs).map(|_| dist.sample(rng)).collect())
    }

    fn analytic_posterior(&self, data: &Dataset) -> Option<Box<dyn AnalyticPosterior>> {
        let (mean, sd) =
            conjugate_normal_posterior(self.prior_mean, self.prior_sd, self.obs_sd, data).ok()?;
        Some(Box::new(NormalPosterior { mean, sd }))
    }

    fn leave_one_out(&self, _index: usize) -> Option<Box<dyn Model>> {
        let mut fold = self.clone();
        fold.n_obs = fold.n_obs.saturating_sub(1);
        Some(Box::new(fold))
    }

    fn analytic_log_marginal_likelihood(&self, data: &Dataset) -> Option<f64> {
        Some(self.log_marginal_likelihood(data))
    }
}

/// Bernoulli trials with a Beta prior on the success probability.
#[derive(Debug, Clone)]
pub struct BetaBinomial {
    pub alpha: f64,
    pub beta: f64,
    pub n_obs: usize,
}

impl BetaBinomial {
    pub fn new(alpha: f64, beta: f64, n_obs: usize) -> Result<Self> {
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::invalid("Beta shape parameters must be positive"));
        }
        Ok(Self { alpha, beta, n_obs })
    }

    pub fn posterior_shapes(&self, data: &Dataset) -> (f64, f64) {
        let successes: f64 = data.observations.iter().sum();
        let n = data.len() as f64;
        (self.alpha + successes, self.beta + n - successes)
    }
}

struct BetaPosterior {
    alpha: f64,
    beta: f64,
}

impl AnalyticPosterior for BetaPosterior {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let dist = BetaDist::new(self.alpha, self.beta).expect("positive shapes");
        vec![dist.sample(rng)]
    }

    fn descriptor(&self) -> serde_json::Value {
        json!({"family": "beta", "alpha": self.alpha, "beta": self.beta})
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b)
        - statrs::function::gamma::ln_gamma(a + b)
}

impl Model for BetaBinomial {
    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".to_string()]
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let dist = BetaDist::new(self.alpha, self.beta).expect("positive shapes");
        vec![dist.sample(rng)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        let t = theta[0];
        if !(0.0..=1.0).contains(&t) {
            return f64::NEG_INFINITY;
        }
        (self.alpha - 1.0) * t.ln() + (self.beta - 1.0) * (1.0 - t).ln()
            - ln_beta(self.alpha, self.beta)
    }

    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let t = theta[0].clamp(0.0, 1.0);
        data.observations
            .iter()
            .map(|y| if *y > 0.5 { t.ln() } else { (1.0 - t).ln() })
            .collect()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
        let t = theta[0];
        Dataset::new(
            (0..self.n_obs)
                .map(|_| if rng.random::<f64>() < t { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    fn analytic_posterior(&self, data: &Dataset) -> Option<Box<dyn AnalyticPosterior>> {
        let (alpha, beta) = self.posterior_shapes(data);
        Some(Box::new(BetaPosterior { alpha, beta }))
    }

    fn leave_one_out(&self, _index: usize) -> Option<Box<dyn Model>> {
        let mut fold = self.clone();
        fold.n_obs = fold.n_obs.saturating_sub(1);
        Some(Box::new(fold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn posterior_of_single_zero_observation() {
        let data = Dataset::new(vec![0.0]);
        let (m, s) = conjugate_normal_posterior(0.0, 1.0, 1.0, &data).unwrap();
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn empty_data_returns_prior() {
        let (m, s) = conjugate_normal_posterior(0.0, 1.0, 1.0, &Dataset::default()).unwrap();
        assert_eq!((m, s), (0.0, 1.0));
    }

    #[test]
    fn single_observation_mean_average() {
        let data = Dataset::new(vec![2.0]);
        let (m, _) = conjugate_normal_posterior(0.0, 1.0, 1.0, &data).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_sd_rejected() {
        assert!(conjugate_normal_posterior(0.0, 0.0, 1.0, &Dataset::default()).is_err());
        assert!(conjugate_normal_posterior(0.0, 1.0, -1.0, &Dataset::default()).is_err());
    }

    #[test]
    fn beta_binomial_update() {
        let model = BetaBinomial::new(1.0, 1.0, 10).unwrap();
        let mut obs = vec![0.0; 10];
        obs[..3].fill(1.0);
        let (a, b) = model.posterior_shapes(&Dataset::new(obs));
        assert_eq!((a, b), (4.0, 8.0));
    }

    #[test]
    fn analytic_log_ml_single_obs() {
        // p(y=0) = N(0 | 0, sqrt(2))
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 1).unwrap();
        let lml = model.log_marginal_likelihood(&Dataset::new(vec![0.0]));
        assert_abs_diff_eq!(lml, normal_logpdf(0.0, 0.0, 2f64.sqrt()), epsilon = 1e-12);
        assert_abs_diff_eq!(lml, -1.2655121234846454, epsilon = 1e-10);
    }

    #[test]
    fn prior_logpdf_integrates_to_one_by_importance_sampling() {
        // Wide normal reference for the normal prior; uniform reference for
        // the beta prior.
        let mut rng = super::super::derive_rng(7, 0, "prior_mass");
        let normal = NormalKnownVariance::new(0.5, 1.3, 1.0, 1).unwrap();
        let reference = NormalDist::new(0.0, 6.0).unwrap();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = reference.sample(&mut rng);
            let logq = normal_logpdf(x, 0.0, 6.0);
            acc += (normal.prior_logpdf(&[x]) - logq).exp();
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.02);

        let beta = BetaBinomial::new(2.0, 3.0, 1).unwrap();
        let mut acc = 0.0;
        for _ in 0..n {
            let x: f64 = rng.random();
            acc += beta.prior_logpdf(&[x]).exp();
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.02);
    }
}
