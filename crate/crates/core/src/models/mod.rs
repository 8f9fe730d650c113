//! Reference generative models with analytic posteriors where available,
//! plus the approximators (exact conjugate sampler, random-walk Metropolis)
//! used to exercise every diagnostic against an oracle.

mod conjugate;
mod logistic_map;
mod regression;
mod rwm;
mod structured;

pub use conjugate::{conjugate_normal_posterior, BetaBinomial, NormalKnownVariance};
pub use logistic_map::{logistic_trajectory, LogisticMapModel};
pub use regression::{orthogonal_design, GlsLinearRegression, TwoGroupModel};
pub use rwm::RwmApproximator;
pub use structured::{structured_prior_logpdf, StructuredPriorKind};

use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::draws::DrawsTensor;
use crate::error::{Error, Result};

/// Observed (or simulated) data: a response vector plus optional covariates.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub observations: Vec<f64>,
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn new(observations: Vec<f64>) -> Self {
        Self {
            observations,
            covariates: None,
        }
    }

    pub fn with_covariates(observations: Vec<f64>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        if covariates.len() != observations.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} covariate rows for {} observations",
                covariates.len(),
                observations.len()
            )));
        }
        Ok(Self {
            observations,
            covariates: Some(covariates),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Deterministic stream derivation: every consumer of randomness is keyed by
/// (master seed, stream index, purpose tag), so results do not depend on
/// scheduling.
pub fn derive_rng(master_seed: u64, stream: u64, purpose: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    // FNV-1a over the purpose tag.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in purpose.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    key[16..24].copy_from_slice(&h.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A generative model: prior, pointwise likelihood, simulator, and an
/// optional closed-form posterior.
pub trait Model: Send + Sync {
    fn parameter_names(&self) -> Vec<String>;

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn prior_logpdf(&self, theta: &[f64]) -> f64;

    /// log p(y_n | theta) for every observation; the joint log-likelihood is
    /// the sum for the factorizable models shipped here.
    fn loglik_pointwise(&self, theta: &[f64], data: &Dataset) -> Vec<f64>;

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Dataset;

    fn analytic_posterior(&self, _data: &Dataset) -> Option<Box<dyn AnalyticPosterior>> {
        None
    }

    /// Rebuild the model for data with observation `index` removed, for
    /// refit cross-validation. None when the design cannot be reduced.
    fn leave_one_out(&self, _index: usize) -> Option<Box<dyn Model>> {
        None
    }

    /// Closed-form log marginal likelihood, where one exists.
    fn analytic_log_marginal_likelihood(&self, _data: &Dataset) -> Option<f64> {
        None
    }

    /// Per-coefficient shrinkage factors for models carrying a global-local
    /// shrinkage prior.
    fn shrinkage_kappas(&self) -> Option<Vec<f64>> {
        None
    }

    /// Declared parameter dimensionality (the nominal count for parsimony).
    fn nominal_param_count(&self) -> usize {
        self.parameter_names().len()
    }

    fn loglik_joint(&self, theta: &[f64], data: &Dataset) -> f64 {
        self.loglik_pointwise(theta, data).iter().sum()
    }
}

/// Closed-form posterior with an exact sampler.
pub trait AnalyticPosterior: Send + Sync {
    /// One exact posterior draw of the full parameter vector.
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Human- and machine-readable description of the closed form.
    fn descriptor(&self) -> serde_json::Value;
}

/// Wall-clock and acceptance bookkeeping for one fit.
#[derive(Debug, Clone, Copy)]
pub struct FitDiagnostics {
    pub acceptance_rate: Option<f64>,
    /// Seconds since the Unix epoch.
    pub t_start: f64,
    pub t_end: f64,
}

impl FitDiagnostics {
    pub fn elapsed_seconds(&self) -> f64 {
        self.t_end - self.t_start
    }
}

pub(crate) fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub draws: DrawsTensor,
    pub diagnostics: FitDiagnostics,
}

/// Anything that turns (model, data, seed) into posterior draws. Identical
/// seeds and hyperparameters must reproduce bit-identical tensors.
pub trait PosteriorApproximator: Send + Sync {
    fn name(&self) -> &str;

    /// Named hyperparameters; the count is the A-parsimony proxy.
    fn hyperparameter_names(&self) -> Vec<&'static str>;

    fn hyperparameter_count(&self) -> usize {
        self.hyperparameter_names().len()
    }

    fn fit(&self, model: &dyn Model, data: &Dataset, seed: u64) -> Result<Fit>;
}

/// Draws exactly from the model's closed-form posterior. Errors for models
/// without one.
#[derive(Debug, Clone, Copy)]
pub struct ExactApproximator {
    pub n_chains: usize,
    pub draws_per_chain: usize,
}

impl ExactApproximator {
    pub fn new(n_chains: usize, draws_per_chain: usize) -> Self {
        Self {
            n_chains,
            draws_per_chain,
        }
    }
}

impl PosteriorApproximator for ExactApproximator {
    fn name(&self) -> &str {
        "exact"
    }

    fn hyperparameter_names(&self) -> Vec<&'static str> {
        vec!["n_chains", "draws_per_chain", "seed"]
    }

    fn fit(&self, model: &dyn Model, data: &Dataset, seed: u64) -> Result<Fit> {
        let posterior = model.analytic_posterior(data).ok_or_else(|| {
            Error::FitFailure("model has no analytic posterior; use a sampler".into())
        })?;
        let t_start = unix_seconds();
        let names = model.parameter_names();
        let mut values = Vec::with_capacity(self.n_chains * self.draws_per_chain * names.len());
        for c in 0..self.n_chains {
            let mut rng = derive_rng(seed, c as u64, "exact_posterior");
            for _ in 0..self.draws_per_chain {
                values.extend(posterior.sample(&mut rng));
            }
        }
        let draws = DrawsTensor::new(self.n_chains, self.draws_per_chain, names, values)?;
        let t_end = unix_seconds();
        Ok(Fit {
            draws,
            diagnostics: FitDiagnostics {
                acceptance_rate: None,
                t_start,
                t_end,
            },
        })
    }
}

/// Ship the reference models, addressable by string id from the CLI.
pub fn model_ids() -> Vec<&'static str> {
    vec![
        "normal_known_var",
        "beta_binomial",
        "linreg_gls",
        "two_group",
        "logistic_map",
    ]
}

/// Default-configured instance of each reference model.
pub fn model_zoo() -> Vec<(String, Box<dyn Model>)> {
    model_ids()
        .into_iter()
        .map(|id| (id.to_string(), model_by_id(id).expect("zoo id")))
        .collect()
}

pub fn model_by_id(id: &str) -> Result<Box<dyn Model>> {
    match id {
        "normal_known_var" => Ok(Box::new(NormalKnownVariance::new(0.0, 1.0, 1.0, 10)?)),
        "beta_binomial" => Ok(Box::new(BetaBinomial::new(1.0, 1.0, 10)?)),
        "linreg_gls" => Ok(Box::new(GlsLinearRegression::default_fixture())),
        "two_group" => Ok(Box::new(TwoGroupModel::new(0.0, 1.0, 1.0, 10, 10)?)),
        "logistic_map" => Ok(Box::new(LogisticMapModel::new(20, 0.05)?)),
        other => Err(Error::invalid(format!("unknown model id `{other}`"))),
    }
}
