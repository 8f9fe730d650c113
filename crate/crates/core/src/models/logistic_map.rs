//! Logistic-map simulator y_{t+1} = rho * y_t * (1 - y_t) with additive
//! Gaussian observation noise, fit through its explicit likelihood.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal as NormalDist};

use super::{Dataset, Model};
use crate::error::{Error, Result};
use crate::stats::normal_logpdf;

/// Deterministic trajectory of the map, starting at y0, of length `steps`
/// (the initial state is not included).
pub fn logistic_trajectory(rho: f64, y0: f64, steps: usize) -> Vec<f64> {
    let mut y = y0;
    (0..steps)
        .map(|_| {
            y = rho * y * (1.0 - y);
            y
        })
        .collect()
}

/// Growth-rate/initial-state model with uniform priors rho ~ U(0,4] and
/// y0 ~ U(0,1), observed through independent Gaussian noise.
#[derive(Debug, Clone)]
pub struct LogisticMapModel {
    pub t_steps: usize,
    pub obs_sd: f64,
}

impl LogisticMapModel {
    pub fn new(t_steps: usize, obs_sd: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::invalid("at least one time step required"));
        }
        if obs_sd <= 0.0 {
            return Err(Error::invalid("observation noise must be positive"));
        }
        Ok(Self { t_steps, obs_sd })
    }
}

impl Model for LogisticMapModel {
    fn parameter_names(&self) -> Vec<String> {
        vec!["rho".to_string(), "y0".to_string()]
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(0.0..4.0), rng.random_range(0.0..1.0)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        let (rho, y0) = (theta[0], theta[1]);
        if !(0.0 < rho && rho <= 4.0) || !(0.0 < y0 && y0 < 1.0) {
            return f64::NEG_INFINITY;
        }
        -(4.0f64).ln()
    }

    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let traj = logistic_trajectory(theta[0], theta[1], data.len());
        data.observations
            .iter()
            .zip(traj)
            .map(|(y, mu)| normal_logpdf(*y, mu, self.obs_sd))
            .collect()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
        let noise = NormalDist::new(0.0, self.obs_sd).expect("positive sd");
        Dataset::new(
            logistic_trajectory(theta[0], theta[1], self.t_steps)
                .into_iter()
                .map(|mu| mu + noise.sample(rng))
                .collect(),
        )
    }
}
