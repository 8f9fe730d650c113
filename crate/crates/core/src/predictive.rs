//! Prior and posterior predictive metrics: marginal likelihood, Bayes
//! factors, posterior model probabilities, Gibbs loss, ELPD, truncated
//! importance-sampled LOO, WAIC, and brute-force refit LOO as the oracle.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::draws::DrawsTensor;
use crate::error::{Error, Result};
use crate::models::{derive_rng, Dataset, Model, PosteriorApproximator};
use crate::recoverability::splitmix;
use crate::stats;

/// Where a log-likelihood matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    PriorDraws,
    PosteriorDraws,
}

/// Per-draw, per-observation log-likelihood matrix. Entries may be negative
/// infinity (flagged); NaN and positive infinity are rejected.
#[derive(Debug, Clone)]
pub struct PointwiseLogLik {
    n_draws: usize,
    n_obs: usize,
    /// Draw-major: values[s * n_obs + n].
    values: Vec<f64>,
    pub provenance: Provenance,
    pub has_neg_infinity: bool,
}

impl PointwiseLogLik {
    pub fn new(
        n_draws: usize,
        n_obs: usize,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_draws == 0 || n_obs == 0 {
            return Err(Error::invalid("empty log-likelihood matrix"));
        }
        if values.len() != n_draws * n_obs {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                n_draws * n_obs,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::invalid(
                "log-likelihood entries must be finite or -infinity",
            ));
        }
        let has_neg_infinity = values.iter().any(|v| *v == f64::NEG_INFINITY);
        Ok(Self {
            n_draws,
            n_obs,
            values,
            provenance,
            has_neg_infinity,
        })
    }

    /// Evaluate a model's pointwise likelihood on every draw of a tensor.
    pub fn from_model(
        model: &dyn Model,
        draws: &DrawsTensor,
        data: &Dataset,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(draws.total_draws() * data.len());
        for c in 0..draws.chain_count() {
            for s in 0..draws.draws_per_chain() {
                values.extend(model.loglik_pointwise(draws.parameter_vector(c, s), data));
            }
        }
        Self::new(draws.total_draws(), data.len(), values, provenance)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    #[inline]
    pub fn value(&self, draw: usize, obs: usize) -> f64 {
        self.values[draw * self.n_obs + obs]
    }

    pub fn column(&self, obs: usize) -> Vec<f64> {
        (0..self.n_draws).map(|s| self.value(s, obs)).collect()
    }

    /// Joint log-likelihood per draw (sum over observations).
    pub fn joint(&self) -> Vec<f64> {
        (0..self.n_draws)
            .map(|s| (0..self.n_obs).map(|n| self.value(s, n)).sum())
            .collect()
    }

    /// Read the long-form CSV `draw,obs,loglik` (1-based indices).
    pub fn read_csv<R: Read>(reader: R, path: &str, provenance: Provenance) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_string(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        if headers.len() != 3 || &headers[0] != "draw" || &headers[1] != "obs" {
            return Err(parse_err("expected header `draw,obs,loglik`".into()));
        }
        let mut entries = Vec::new();
        let mut max_draw = 0usize;
        let mut max_obs = 0usize;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let draw: usize = rec[0]
                .parse()
                .map_err(|_| parse_err(format!("row {}: bad draw index", line + 2)))?;
            let obs: usize = rec[1]
                .parse()
                .map_err(|_| parse_err(format!("row {}: bad obs index", line + 2)))?;
            let ll: f64 = match &rec[2] {
                "-inf" => f64::NEG_INFINITY,
                v => v
                    .parse()
                    .map_err(|_| parse_err(format!("row {}: bad loglik", line + 2)))?,
            };
            if draw == 0 || obs == 0 {
                return Err(parse_err(format!("row {}: indices are 1-based", line + 2)));
            }
            max_draw = max_draw.max(draw);
            max_obs = max_obs.max(obs);
            entries.push((draw, obs, ll));
        }
        if entries.is_empty() {
            return Err(parse_err("no entries".into()));
        }
        if entries.len() != max_draw * max_obs {
            return Err(parse_err(format!(
                "expected {} rows for {max_draw} draws x {max_obs} obs, got {}",
                max_draw * max_obs,
                entries.len()
            )));
        }
        let mut values = vec![f64::NAN; max_draw * max_obs];
        for (draw, obs, ll) in entries {
            values[(draw - 1) * max_obs + (obs - 1)] = ll;
        }
        Self::new(max_draw, max_obs, values, provenance)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["draw", "obs", "loglik"])?;
        for s in 0..self.n_draws {
            for n in 0..self.n_obs {
                let v = self.value(s, n);
                let cell = if v == f64::NEG_INFINITY {
                    "-inf".to_string()
                } else {
                    format!("{v}")
                };
                w.write_record([(s + 1).to_string(), (n + 1).to_string(), cell])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ElpdMethod {
    Prior,
    Posterior,
    LooIs,
    LooRefit,
    Waic,
}

impl ElpdMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ElpdMethod::Prior => "prior",
            ElpdMethod::Posterior => "posterior",
            ElpdMethod::LooIs => "loo_is",
            ElpdMethod::LooRefit => "loo_refit",
            ElpdMethod::Waic => "waic",
        }
    }
}

/// Total and pointwise expected log predictive density with its standard
/// error sqrt(N * Var(pointwise)).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ElpdResult {
    pub total: f64,
    pub pointwise: Vec<f64>,
    pub se: f64,
    pub method: ElpdMethod,
    pub flags: Vec<String>,
    /// Effective draw count per observation for importance-sampled variants.
    pub weight_diagnostics: Option<Vec<f64>>,
}

fn finish_elpd(
    pointwise: Vec<f64>,
    method: ElpdMethod,
    flags: Vec<String>,
    weight_diagnostics: Option<Vec<f64>>,
) -> ElpdResult {
    let total: f64 = pointwise.iter().sum();
    let n = pointwise.len() as f64;
    let se = if pointwise.len() > 1 && pointwise.iter().all(|v| v.is_finite()) {
        (n * stats::sample_variance(&pointwise)).sqrt()
    } else {
        f64::NAN
    };
    ElpdResult {
        total,
        pointwise,
        se,
        method,
        flags,
        weight_diagnostics,
    }
}

/// Naive Monte Carlo marginal likelihood over prior draws, with the
/// max-shift trick. The flag mirrors the pre-asymptotic warning: it is
/// raised when the effective number of contributing draws (exp of the
/// normalized-weight entropy) falls below 100.
pub fn log_marginal_likelihood_mc(
    model: &dyn Model,
    data: &Dataset,
    n_prior_draws: usize,
    seed: u64,
) -> Result<(f64, bool)> {
    if n_prior_draws < 100 {
        return Err(Error::invalid("need at least 100 prior draws"));
    }
    if data.is_empty() {
        // Empty product of likelihood terms.
        return Ok((0.0, false));
    }
    let joints: Vec<f64> = (0..n_prior_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, i as u64, "lml_prior");
            let theta = model.prior_sample(&mut rng);
            model.loglik_joint(&theta, data)
        })
        .collect();
    log_marginal_from_joints(&joints)
}

fn log_marginal_from_joints(joints: &[f64]) -> Result<(f64, bool)> {
    let lse = stats::log_sum_exp(joints);
    if lse == f64::NEG_INFINITY {
        return Err(Error::numerical(
            "all prior draws have zero likelihood; marginal likelihood underflows",
        ));
    }
    let log_ml = lse - (joints.len() as f64).ln();
    let weights: Vec<f64> = joints.iter().map(|j| (j - lse).exp()).collect();
    let effective = stats::weight_entropy(&weights).exp();
    Ok((log_ml, effective < 100.0))
}

/// BF_jk = exp(log_ml_j - log_ml_k).
pub fn bayes_factor(log_ml_j: f64, log_ml_k: f64) -> Result<f64> {
    if !log_ml_j.is_finite() || !log_ml_k.is_finite() {
        return Err(Error::invalid("marginal likelihoods must be finite"));
    }
    Ok((log_ml_j - log_ml_k).exp())
}

/// Softmax of log marginal likelihoods plus log prior model probabilities.
pub fn posterior_model_probs(log_mls: &[f64], prior_probs: &[f64]) -> Result<Vec<f64>> {
    if log_mls.len() != prior_probs.len() || log_mls.is_empty() {
        return Err(Error::ShapeMismatch("need one prior probability per model".into()));
    }
    if prior_probs.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid("prior probabilities must be nonnegative"));
    }
    let total: f64 = prior_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "prior probabilities sum to {total}, not 1"
        )));
    }
    let scores: Vec<f64> = log_mls
        .iter()
        .zip(prior_probs)
        .map(|(l, p)| l + p.ln())
        .collect();
    let lse = stats::log_sum_exp(&scores);
    Ok(scores.iter().map(|s| (s - lse).exp()).collect())
}

/// Gibbs loss: sum over observations of the prior-draw average of
/// log p(y_i | theta). Minus-infinity entries propagate with a flag.
pub fn gibbs_loss(loglik: &PointwiseLogLik) -> Result<(f64, bool)> {
    if loglik.provenance != Provenance::PriorDraws {
        return Err(Error::invalid("Gibbs loss is defined over prior draws"));
    }
    let mut total = 0.0;
    for n in 0..loglik.n_obs() {
        let col = loglik.column(n);
        total += col.iter().sum::<f64>() / col.len() as f64;
    }
    Ok((total, loglik.has_neg_infinity))
}

fn validate_weights(weights: &[f64], n_draws: usize) -> Result<()> {
    if weights.len() != n_draws {
        return Err(Error::ShapeMismatch("one weight per draw required".into()));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::invalid("weights must be nonnegative and finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Pointwise log E_w[p(y_i | theta)] with optional normalized draw weights;
/// unweighted uses 1/S.
pub fn elpd(loglik: &PointwiseLogLik, weights: Option<&[f64]>) -> Result<ElpdResult> {
    if let Some(w) = weights {
        validate_weights(w, loglik.n_draws())?;
    }
    let uniform;
    let w = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / loglik.n_draws() as f64; loglik.n_draws()];
            &uniform
        }
    };
    let mut pointwise = Vec::with_capacity(loglik.n_obs());
    let mut flags = Vec::new();
    for n in 0..loglik.n_obs() {
        let col = loglik.column(n);
        let v = stats::log_weighted_sum_exp(&col, w);
        if v == f64::NEG_INFINITY {
            return Err(Error::numerical(format!(
                "observation {} has zero predictive density under every draw",
                n + 1
            )));
        }
        pointwise.push(v);
    }
    if loglik.has_neg_infinity {
        flags.push("some log-likelihood entries are -inf".into());
    }
    let method = match loglik.provenance {
        Provenance::PriorDraws => ElpdMethod::Prior,
        Provenance::PosteriorDraws => ElpdMethod::Posterior,
    };
    Ok(finish_elpd(pointwise, method, flags, None))
}

/// Joint aggregation variant: log E_w[prod_i p(y_i | theta)], the
/// draw-based conditional marginal likelihood.
pub fn elpd_joint(loglik: &PointwiseLogLik, weights: Option<&[f64]>) -> Result<f64> {
    if let Some(w) = weights {
        validate_weights(w, loglik.n_draws())?;
    }
    let joints = loglik.joint();
    let v = match weights {
        Some(w) => stats::log_weighted_sum_exp(&joints, w),
        None => stats::log_sum_exp(&joints) - (loglik.n_draws() as f64).ln(),
    };
    if v == f64::NEG_INFINITY {
        return Err(Error::numerical("joint predictive density underflows"));
    }
    Ok(v)
}

/// Truncated importance sampling LOO: per observation the raw weights
/// 1 / p(y_n | theta^s) are truncated at (mean raw weight) * S^(3/4) and
/// renormalized. Per-observation effective draw counts are reported; an
/// observation whose weights collapse onto one draw is flagged.
pub fn loo_is(loglik: &PointwiseLogLik) -> Result<ElpdResult> {
    if loglik.provenance != Provenance::PosteriorDraws {
        return Err(Error::invalid("LOO requires posterior draws"));
    }
    let s = loglik.n_draws();
    if s < 100 {
        return Err(Error::invalid("LOO needs at least 100 draws"));
    }
    let log_cap_shift = 0.75 * (s as f64).ln();
    let mut pointwise = Vec::with_capacity(loglik.n_obs());
    let mut effective = Vec::with_capacity(loglik.n_obs());
    let mut flags = Vec::new();
    for n in 0..loglik.n_obs() {
        let col = loglik.column(n);
        // Raw log weights are -loglik; truncate at log(mean) + 3/4 log S.
        let raw: Vec<f64> = col.iter().map(|v| -v).collect();
        let log_mean = stats::log_sum_exp(&raw) - (s as f64).ln();
        let cap = log_mean + log_cap_shift;
        let truncated: Vec<f64> = raw.iter().map(|w| w.min(cap)).collect();
        let lse = stats::log_sum_exp(&truncated);
        let weights: Vec<f64> = truncated.iter().map(|w| (w - lse).exp()).collect();
        let eff = stats::weight_entropy(&weights).exp();
        effective.push(eff);
        if eff < 1.5 {
            flags.push(format!("observation {}: degenerate importance weights", n + 1));
        }
        let v = stats::log_weighted_sum_exp(&col, &weights);
        if v == f64::NEG_INFINITY {
            return Err(Error::numerical(format!(
                "observation {}: zero leave-one-out density",
                n + 1
            )));
        }
        pointwise.push(v);
    }
    Ok(finish_elpd(pointwise, ElpdMethod::LooIs, flags, Some(effective)))
}

/// Brute-force leave-one-out: refit on every y_{-n} and evaluate the
/// held-out predictive density. Desk-scale guard at N <= 200.
pub fn loo_refit(
    model: &dyn Model,
    approximator: &dyn PosteriorApproximator,
    data: &Dataset,
    seed: u64,
) -> Result<ElpdResult> {
    let n_obs = data.len();
    if n_obs == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    if n_obs > 200 {
        return Err(Error::invalid("refit LOO is guarded to N <= 200"));
    }
    let pointwise: Vec<f64> = (0..n_obs)
        .into_par_iter()
        .map(|n| -> Result<f64> {
            let fold_model = model.leave_one_out(n).ok_or_else(|| {
                Error::invalid("model does not support leave-one-out refitting")
            })?;
            let fold_data = remove_observation(data, n);
            let fit = approximator.fit(fold_model.as_ref(), &fold_data, splitmix(seed, n as u64))?;
            // Held-out density evaluated through the original model so the
            // observation keeps its design row.
            let mut lls = Vec::with_capacity(fit.draws.total_draws());
            for c in 0..fit.draws.chain_count() {
                for s in 0..fit.draws.draws_per_chain() {
                    lls.push(model.loglik_pointwise(fit.draws.parameter_vector(c, s), data)[n]);
                }
            }
            let v = stats::log_sum_exp(&lls) - (lls.len() as f64).ln();
            if v == f64::NEG_INFINITY {
                return Err(Error::numerical(format!(
                    "fold {n}: zero held-out density"
                )));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(finish_elpd(pointwise, ElpdMethod::LooRefit, Vec::new(), None))
}

fn remove_observation(data: &Dataset, index: usize) -> Dataset {
    let mut obs = data.observations.clone();
    obs.remove(index);
    match &data.covariates {
        Some(cov) => {
            let mut cov = cov.clone();
            cov.remove(index);
            Dataset::with_covariates(obs, cov).expect("lengths stay aligned")
        }
        None => Dataset::new(obs),
    }
}

/// Per-observation posterior variances of the log-likelihood; shared by WAIC
/// and the effective-parameter count built on it.
pub fn pointwise_variance_penalty(loglik: &PointwiseLogLik) -> Result<Vec<f64>> {
    if loglik.n_draws() < 2 {
        return Err(Error::invalid("variance penalty needs at least 2 draws"));
    }
    Ok((0..loglik.n_obs())
        .map(|n| {
            let col = loglik.column(n);
            if col.iter().any(|v| *v == f64::NEG_INFINITY) {
                f64::INFINITY
            } else {
                stats::sample_variance(&col)
            }
        })
        .collect())
}

/// WAIC: pointwise in-sample log predictive density minus the variance
/// penalty.
pub fn waic(loglik: &PointwiseLogLik) -> Result<ElpdResult> {
    if loglik.provenance != Provenance::PosteriorDraws {
        return Err(Error::invalid("WAIC requires posterior draws"));
    }
    let lpd = elpd(loglik, None)?;
    let penalty = pointwise_variance_penalty(loglik)?;
    let mut flags = lpd.flags.clone();
    if penalty.iter().any(|p| !p.is_finite()) {
        flags.push("infinite variance penalty from -inf log-likelihood".into());
    }
    let pointwise: Vec<f64> = lpd
        .pointwise
        .iter()
        .zip(&penalty)
        .map(|(l, p)| l - p)
        .collect();
    Ok(finish_elpd(pointwise, ElpdMethod::Waic, flags, None))
}
