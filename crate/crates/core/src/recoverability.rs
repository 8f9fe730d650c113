//! Parameter recoverability: posterior contraction, Bayesian surprise,
//! kernel two-sample discrepancies, expected information gain, point and
//! interval recovery over simulated ground truths, and a prior-predictive
//! misspecification score.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::convergence::{split_rhat, Transform};
use crate::draws::{
    pushforward_draws, read_draws_csv, write_draws_csv, DrawsTensor, Pushforward,
    SummaryStatistic,
};
use crate::error::{Error, Result};
use crate::models::{derive_rng, Dataset, Model, PosteriorApproximator};
use crate::stats;

/// Posterior contraction 1 - Var_post / Var_prior of a pushforward quantity.
#[derive(Debug, Clone, Copy)]
pub struct ContractionResult {
    pub value: f64,
    /// Negative contraction means the posterior is wider than the prior; it
    /// is reported as-is rather than clamped.
    pub widened: bool,
}

pub fn posterior_contraction(
    prior_draws: &DrawsTensor,
    posterior_draws: &DrawsTensor,
    psi: &Pushforward,
) -> Result<ContractionResult> {
    let prior = pushforward_draws(prior_draws, psi)?.pooled(&psi.name)?;
    let posterior = pushforward_draws(posterior_draws, psi)?.pooled(&psi.name)?;
    let var_prior = stats::sample_variance(&prior);
    if var_prior <= 0.0 {
        return Err(Error::degenerate("zero prior variance"));
    }
    let var_post = if posterior.len() < 2 {
        0.0
    } else {
        stats::sample_variance(&posterior)
    };
    let value = 1.0 - var_post / var_prior;
    Ok(ContractionResult {
        value,
        widened: value < 0.0,
    })
}

/// Closed-form KL divergence from the posterior to the prior for Gaussian
/// moment summaries, in nats.
pub fn bayesian_surprise_gaussian(prior: (f64, f64), posterior: (f64, f64)) -> Result<f64> {
    let (mu_pr, sd_pr) = prior;
    let (mu_po, sd_po) = posterior;
    if sd_pr <= 0.0 || sd_po <= 0.0 {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    Ok((sd_pr / sd_po).ln()
        + (sd_po * sd_po + (mu_po - mu_pr) * (mu_po - mu_pr)) / (2.0 * sd_pr * sd_pr)
        - 0.5)
}

/// Kernel bandwidth choice for MMD.
#[derive(Debug, Clone, Copy)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of pairwise distances over the pooled sample.
    MedianHeuristic,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian_kernel(sq: f64, h: f64) -> f64 {
    (-sq / (2.0 * h * h)).exp()
}

pub(crate) fn median_heuristic(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::new();
    // Subsample large clouds; the heuristic only needs the scale.
    let step = (points.len() / 500).max(1);
    let sub: Vec<&Vec<f64>> = points.iter().step_by(step).collect();
    for i in 0..sub.len() {
        for j in (i + 1)..sub.len() {
            dists.push(sq_dist(sub[i], sub[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let med = stats::quantile(&dists, 0.5);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn resolve_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(h) => {
            if h <= 0.0 {
                return Err(Error::invalid("bandwidth must be positive"));
            }
            Ok(h)
        }
        Bandwidth::MedianHeuristic => {
            let pooled: Vec<Vec<f64>> = a.iter().chain(b.iter()).cloned().collect();
            Ok(median_heuristic(&pooled))
        }
    }
}

/// Unbiased U-statistic estimate of the squared maximum mean discrepancy
/// with a Gaussian kernel; slightly negative values are expected under the
/// null by unbiasedness.
pub fn mmd_squared_vectors(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("MMD needs at least 2 draws per sample"));
    }
    let h = resolve_bandwidth(a, b, bandwidth)?;
    let n = a.len() as f64;
    let m = b.len() as f64;
    let mut aa = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            aa += gaussian_kernel(sq_dist(&a[i], &a[j]), h);
        }
    }
    let mut bb = 0.0;
    for i in 0..b.len() {
        for j in (i + 1)..b.len() {
            bb += gaussian_kernel(sq_dist(&b[i], &b[j]), h);
        }
    }
    let mut ab = 0.0;
    for x in a {
        for y in b {
            ab += gaussian_kernel(sq_dist(x, y), h);
        }
    }
    Ok(2.0 * aa / (n * (n - 1.0)) + 2.0 * bb / (m * (m - 1.0)) - 2.0 * ab / (n * m))
}

/// MMD between all-variable parameter vectors of two draw tensors.
pub fn mmd_squared(
    draws_a: &DrawsTensor,
    draws_b: &DrawsTensor,
    bandwidth: Bandwidth,
) -> Result<f64> {
    if draws_a.variable_names() != draws_b.variable_names() {
        return Err(Error::ShapeMismatch("variable sets differ".into()));
    }
    mmd_squared_vectors(&all_vectors(draws_a), &all_vectors(draws_b), bandwidth)
}

fn all_vectors(draws: &DrawsTensor) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(draws.total_draws());
    for c in 0..draws.chain_count() {
        for s in 0..draws.draws_per_chain() {
            out.push(draws.parameter_vector(c, s).to_vec());
        }
    }
    out
}

/// Two-sample permutation test on MMD^2. Returns the observed statistic and
/// the rank (1 + #{perm >= observed}) / (1 + n_permutations).
pub fn mmd_permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Bandwidth,
    n_permutations: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("MMD needs at least 2 draws per sample"));
    }
    let h = resolve_bandwidth(a, b, bandwidth)?;
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let total = pooled.len();
    let mut gram = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let k = gaussian_kernel(sq_dist(pooled[i], pooled[j]), h);
            gram[i * total + j] = k;
            gram[j * total + i] = k;
        }
    }
    let n = a.len();
    let m = b.len();
    let statistic = |idx: &[usize]| -> f64 {
        let mut aa = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                aa += gram[idx[i] * total + idx[j]];
            }
        }
        let mut bb = 0.0;
        for i in n..total {
            for j in (i + 1)..total {
                bb += gram[idx[i] * total + idx[j]];
            }
        }
        let mut ab = 0.0;
        for i in 0..n {
            for j in n..total {
                ab += gram[idx[i] * total + idx[j]];
            }
        }
        2.0 * aa / (n as f64 * (n as f64 - 1.0)) + 2.0 * bb / (m as f64 * (m as f64 - 1.0))
            - 2.0 * ab / (n as f64 * m as f64)
    };
    let identity: Vec<usize> = (0..total).collect();
    let observed = statistic(&identity);
    let mut at_least = 0usize;
    let mut idx = identity;
    for _ in 0..n_permutations {
        for i in (1..total).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        if statistic(&idx) >= observed {
            at_least += 1;
        }
    }
    let rank = (1 + at_least) as f64 / (1 + n_permutations) as f64;
    Ok((observed, rank))
}

/// How ground truths are generated for a simulation study.
#[derive(Debug, Clone, PartialEq)]
pub enum GenerationMode {
    /// Every instance shares one generating parameter vector.
    FixedTruth(Vec<f64>),
    /// Instance truths are drawn from the model prior.
    PriorPredictive,
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerationMode::FixedTruth(_) => write!(f, "fixed_truth"),
            GenerationMode::PriorPredictive => write!(f, "prior_predictive"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyInstance {
    pub truth: f64,
    /// Pushforward posterior draws for this instance.
    pub draws: DrawsTensor,
    pub dataset: Option<Dataset>,
}

/// M simulated ground-truth instances fitted with one model/approximator
/// configuration.
#[derive(Debug, Clone)]
pub struct RecoveryStudy {
    pub mode: GenerationMode,
    pub psi_name: String,
    pub instances: Vec<StudyInstance>,
    /// Instances dropped by the convergence gate under skip-and-flag.
    pub skipped: usize,
}

/// Policy for fits that fail or miss the convergence gate inside a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitPolicy {
    SkipAndFlag,
    Abort,
}

#[derive(Debug, Clone, Copy)]
pub struct StudyConfig {
    pub policy: FitPolicy,
    /// Rank-normal split R-hat gate applied when a fit has >= 2 chains.
    pub gate_rhat: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            policy: FitPolicy::SkipAndFlag,
            gate_rhat: 1.05,
        }
    }
}

pub(crate) fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Simulate M instances, fit each, and collect pushforward draws. The
/// instance loop runs in parallel with per-instance seeds, so aggregation is
/// order-independent.
pub fn run_recovery_study(
    model: &dyn Model,
    approximator: &dyn PosteriorApproximator,
    psi: &Pushforward,
    mode: GenerationMode,
    m_instances: usize,
    seed: u64,
    config: StudyConfig,
) -> Result<RecoveryStudy> {
    if m_instances == 0 {
        return Err(Error::invalid("study needs at least one instance"));
    }
    let results: Vec<Result<Option<StudyInstance>>> = (0..m_instances)
        .into_par_iter()
        .map(|m| {
            let mut rng = derive_rng(seed, m as u64, "study_truth");
            let theta = match &mode {
                GenerationMode::FixedTruth(theta) => theta.clone(),
                GenerationMode::PriorPredictive => model.prior_sample(&mut rng),
            };
            let truth = psi.apply(&theta);
            let dataset = model.simulate(&theta, &mut rng);
            let fit = match approximator.fit(model, &dataset, splitmix(seed, m as u64)) {
                Ok(f) => f,
                Err(e) => {
                    return match config.policy {
                        FitPolicy::SkipAndFlag => Ok(None),
                        FitPolicy::Abort => Err(e),
                    }
                }
            };
            if fit.draws.chain_count() >= 2 && fit.draws.draws_per_chain() >= 4 {
                let names = fit.draws.variable_names().to_vec();
                let worst = names
                    .iter()
                    .filter_map(|v| split_rhat(&fit.draws, v, Transform::RankNormal).ok())
                    .fold(1.0f64, f64::max);
                if worst > config.gate_rhat {
                    return match config.policy {
                        FitPolicy::SkipAndFlag => Ok(None),
                        FitPolicy::Abort => Err(Error::FitFailure(format!(
                            "convergence gate failed: rhat {worst:.3}"
                        ))),
                    };
                }
            }
            let draws = pushforward_draws(&fit.draws, psi)?;
            Ok(Some(StudyInstance {
                truth,
                draws,
                dataset: Some(dataset),
            }))
        })
        .collect();
    let mut instances = Vec::with_capacity(m_instances);
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(inst) => instances.push(inst),
            None => skipped += 1,
        }
    }
    if instances.is_empty() {
        return Err(Error::FitFailure("every instance was skipped".into()));
    }
    Ok(RecoveryStudy {
        mode,
        psi_name: psi.name.clone(),
        instances,
        skipped,
    })
}

/// Central credible interval from the (1-q)/2 and (1+q)/2 draw quantiles.
pub fn central_interval(values: &[f64], q: f64) -> Result<(f64, f64)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("interval probability must be in (0,1)"));
    }
    let lo = stats::quantile(values, (1.0 - q) / 2.0);
    let hi = stats::quantile(values, (1.0 + q) / 2.0);
    Ok((lo, hi))
}

/// Central (equal-tailed) credible intervals per study instance.
#[derive(Debug, Clone)]
pub struct UncertaintyRegions {
    pub q: f64,
    /// (lower, upper) per instance, lower <= upper by construction.
    pub bounds: Vec<(f64, f64)>,
}

pub fn uncertainty_regions(study: &RecoveryStudy, q: f64) -> Result<UncertaintyRegions> {
    let bounds = study
        .instances
        .iter()
        .map(|inst| {
            let pooled = inst.draws.pooled(&study.psi_name)?;
            central_interval(&pooled, q)
        })
        .collect::<Result<_>>()?;
    Ok(UncertaintyRegions { q, bounds })
}

/// Distance between a point estimate and the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    Bias,
    Squared,
    Absolute,
}

/// Mean over instances of d(T(draws_m), truth_m); bias keeps its sign.
pub fn point_recovery(
    study: &RecoveryStudy,
    estimator: SummaryStatistic,
    distance: Distance,
) -> Result<f64> {
    if study.instances.is_empty() {
        return Err(Error::invalid("empty study"));
    }
    let mut acc = 0.0;
    for inst in &study.instances {
        let est = crate::draws::summarize(&inst.draws, &study.psi_name, estimator)?;
        let err = est - inst.truth;
        acc += match distance {
            Distance::Bias => err,
            Distance::Squared => err * err,
            Distance::Absolute => err.abs(),
        };
    }
    Ok(acc / study.instances.len() as f64)
}

/// Posterior z-scores (mean - truth) / sd per instance; an interpretation of
/// the usual contraction companion rather than a fixed formula.
pub fn posterior_z_scores(study: &RecoveryStudy) -> Result<Vec<f64>> {
    study
        .instances
        .iter()
        .map(|inst| {
            let mean =
                crate::draws::summarize(&inst.draws, &study.psi_name, SummaryStatistic::Mean)?;
            let sd = crate::draws::summarize(&inst.draws, &study.psi_name, SummaryStatistic::Sd)?;
            if sd == 0.0 {
                return Err(Error::degenerate("zero posterior sd"));
            }
            Ok((mean - inst.truth) / sd)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageResult {
    pub empirical: f64,
    /// 95% Wilson interval on the empirical coverage.
    pub confidence: (f64, f64),
    pub hits: usize,
    pub total: usize,
}

/// Fraction of instances whose central q-interval contains the truth.
pub fn coverage(study: &RecoveryStudy, q: f64) -> Result<CoverageResult> {
    if study.instances.is_empty() {
        return Err(Error::invalid("empty study"));
    }
    let mut hits = 0usize;
    for inst in &study.instances {
        let pooled = inst.draws.pooled(&study.psi_name)?;
        let (lo, hi) = central_interval(&pooled, q)?;
        if inst.truth >= lo && inst.truth <= hi {
            hits += 1;
        }
    }
    let total = study.instances.len();
    Ok(CoverageResult {
        empirical: hits as f64 / total as f64,
        confidence: stats::binomial_confidence_interval(hits, total, 0.95),
        hits,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharpnessVerdict {
    ASharper,
    BSharper,
    Incomparable,
}

#[derive(Debug, Clone)]
pub struct SharpnessResult {
    pub verdict: SharpnessVerdict,
    pub mean_width_a: f64,
    pub mean_width_b: f64,
    pub under_coverage_flags: Vec<String>,
}

/// Expected interval-width comparison gated on calibration: a study is
/// sharper only if it is at least as well calibrated (up to binomial error)
/// and strictly narrower on average.
pub fn sharpness_compare(
    study_a: &RecoveryStudy,
    study_b: &RecoveryStudy,
    q: f64,
) -> Result<SharpnessResult> {
    if study_a.instances.len() != study_b.instances.len()
        || study_a
            .instances
            .iter()
            .zip(&study_b.instances)
            .any(|(a, b)| a.truth != b.truth)
    {
        return Err(Error::invalid("studies use different ground-truth instances"));
    }
    let mean_width = |study: &RecoveryStudy| -> Result<f64> {
        let mut acc = 0.0;
        for inst in &study.instances {
            let pooled = inst.draws.pooled(&study.psi_name)?;
            let (lo, hi) = central_interval(&pooled, q)?;
            acc += hi - lo;
        }
        Ok(acc / study.instances.len() as f64)
    };
    let cov_a = coverage(study_a, q)?;
    let cov_b = coverage(study_b, q)?;
    let wa = mean_width(study_a)?;
    let wb = mean_width(study_b)?;
    let n = study_a.instances.len() as f64;
    let se = (q * (1.0 - q) / n).sqrt();
    let mut flags = Vec::new();
    if cov_a.empirical < q - 2.0 * se {
        flags.push(format!(
            "study_a under-covers: {:.3} at q={q}",
            cov_a.empirical
        ));
    }
    if cov_b.empirical < q - 2.0 * se {
        flags.push(format!(
            "study_b under-covers: {:.3} at q={q}",
            cov_b.empirical
        ));
    }
    let miss_a = (cov_a.empirical - q).abs();
    let miss_b = (cov_b.empirical - q).abs();
    let tol = 2.0 * std::f64::consts::SQRT_2 * se;
    let a_ok = miss_a <= miss_b + tol && !flags.iter().any(|f| f.starts_with("study_a"));
    let b_ok = miss_b <= miss_a + tol && !flags.iter().any(|f| f.starts_with("study_b"));
    let verdict = if a_ok && wa < wb {
        SharpnessVerdict::ASharper
    } else if b_ok && wb < wa {
        SharpnessVerdict::BSharper
    } else {
        SharpnessVerdict::Incomparable
    };
    Ok(SharpnessResult {
        verdict,
        mean_width_a: wa,
        mean_width_b: wb,
        under_coverage_flags: flags,
    })
}

/// Which per-instance divergence the information-gain estimate averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMeasure {
    /// Gaussian moment approximation of the prior-to-posterior KL.
    EbsGaussianApprox,
    /// Expected posterior contraction.
    Epc,
}

#[derive(Debug, Clone, Copy)]
pub struct EigResult {
    pub estimate: f64,
    /// Standard error over instances; undefined (and flagged None) for M = 1.
    pub mc_error: Option<f64>,
    pub skipped: usize,
}

/// Expected information gain over the model's own generative scope: draw a
/// truth from the prior, simulate, fit, score, average.
pub fn expected_information_gain(
    model: &dyn Model,
    approximator: &dyn PosteriorApproximator,
    psi: &Pushforward,
    m_instances: usize,
    measure: EigMeasure,
    seed: u64,
    config: StudyConfig,
) -> Result<EigResult> {
    if m_instances == 0 {
        return Err(Error::invalid("need at least one instance"));
    }
    let study = run_recovery_study(
        model,
        approximator,
        psi,
        GenerationMode::PriorPredictive,
        m_instances,
        seed,
        config,
    )?;
    let scores: Vec<f64> = study
        .instances
        .iter()
        .enumerate()
        .map(|(m, inst)| -> Result<f64> {
            let n_prior = inst.draws.total_draws().max(1000);
            let mut rng = derive_rng(seed, m as u64, "eig_prior_draws");
            let prior_values: Vec<f64> = (0..n_prior)
                .map(|_| psi.apply(&model.prior_sample(&mut rng)))
                .collect();
            let post = inst.draws.pooled(&study.psi_name)?;
            match measure {
                EigMeasure::Epc => {
                    let var_prior = stats::sample_variance(&prior_values);
                    if var_prior <= 0.0 {
                        return Err(Error::degenerate("zero prior variance"));
                    }
                    Ok(1.0 - stats::sample_variance(&post) / var_prior)
                }
                EigMeasure::EbsGaussianApprox => bayesian_surprise_gaussian(
                    (
                        stats::mean(&prior_values),
                        stats::sample_variance(&prior_values).sqrt(),
                    ),
                    (stats::mean(&post), stats::sample_variance(&post).sqrt()),
                ),
            }
        })
        .collect::<Result<_>>()?;
    let estimate = stats::mean(&scores);
    let mc_error = if scores.len() > 1 {
        Some((stats::sample_variance(&scores) / scores.len() as f64).sqrt())
    } else {
        None
    };
    Ok(EigResult {
        estimate,
        mc_error,
        skipped: study.skipped,
    })
}

/// Scalar summary of a whole dataset, used for prior-predictive checks.
#[derive(Clone)]
pub struct DataSummary {
    pub name: String,
    map: Arc<dyn Fn(&Dataset) -> f64 + Send + Sync>,
}

impl fmt::Debug for DataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataSummary").field("name", &self.name).finish()
    }
}

impl DataSummary {
    pub fn new(name: &str, map: impl Fn(&Dataset) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            map: Arc::new(map),
        }
    }

    pub fn apply(&self, data: &Dataset) -> f64 {
        (self.map)(data)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MisspecificationScore {
    /// Squared MMD between the observed summary and the prior-predictive
    /// cloud (exact on the singleton side, unbiased on the cloud side).
    pub mmd2: f64,
    /// Rank of the observed mean kernel distance within the simulated null
    /// distances; small values mean the observation sits outside the
    /// model-implied data distribution.
    pub null_rank: f64,
}

/// Compare an observed dataset against the model's prior-predictive
/// distribution through a scalar summary.
pub fn misspecification_score(
    model: &dyn Model,
    observed: &Dataset,
    summary: &DataSummary,
    n_sim: usize,
    seed: u64,
) -> Result<MisspecificationScore> {
    if n_sim < 50 {
        return Err(Error::invalid("need at least 50 prior-predictive simulations"));
    }
    let observed_summary = summary.apply(observed);
    if !observed_summary.is_finite() {
        return Err(Error::numerical("observed summary is non-finite"));
    }
    let cloud: Vec<f64> = (0..n_sim)
        .into_par_iter()
        .map(|m| {
            let mut rng = derive_rng(seed, m as u64, "misspec_sim");
            let theta = model.prior_sample(&mut rng);
            let data = model.simulate(&theta, &mut rng);
            summary.apply(&data)
        })
        .collect();
    if cloud.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("prior-predictive summary is non-finite"));
    }
    let mut pooled: Vec<Vec<f64>> = cloud.iter().map(|v| vec![*v]).collect();
    pooled.push(vec![observed_summary]);
    let h = median_heuristic(&pooled);
    let n = n_sim as f64;

    let k0: Vec<f64> = cloud
        .iter()
        .map(|z| gaussian_kernel((observed_summary - z) * (observed_summary - z), h))
        .collect();
    let mut cross_cloud = 0.0;
    let mut row_sums = vec![0.0; n_sim];
    for i in 0..n_sim {
        for j in (i + 1)..n_sim {
            let k = gaussian_kernel((cloud[i] - cloud[j]) * (cloud[i] - cloud[j]), h);
            cross_cloud += k;
            row_sums[i] += k;
            row_sums[j] += k;
        }
    }
    let mmd2 = 1.0 - 2.0 * k0.iter().sum::<f64>() / n + 2.0 * cross_cloud / (n * (n - 1.0));

    // Mean kernel distance of each point to the rest of the cloud
    // (leave-self-out for simulated points).
    let observed_dist = 1.0 - k0.iter().sum::<f64>() / n;
    let mut at_least = 0usize;
    for i in 0..n_sim {
        let d = 1.0 - row_sums[i] / (n - 1.0);
        if d >= observed_dist {
            at_least += 1;
        }
    }
    let null_rank = (1 + at_least) as f64 / (1.0 + n);
    Ok(MisspecificationScore { mmd2, null_rank })
}

/// Persist a study as `truths.csv`, `datasets/m=<k>.csv`, `draws/m=<k>.csv`.
pub fn save_study(study: &RecoveryStudy, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("datasets"))?;
    fs::create_dir_all(dir.join("draws"))?;
    let mut w = csv::Writer::from_path(dir.join("truths.csv"))?;
    w.write_record(["m", "phi"])?;
    for (m, inst) in study.instances.iter().enumerate() {
        w.write_record([(m + 1).to_string(), format!("{}", inst.truth)])?;
    }
    w.flush()?;
    for (m, inst) in study.instances.iter().enumerate() {
        let f = fs::File::create(dir.join(format!("draws/m={}.csv", m + 1)))?;
        write_draws_csv(&inst.draws, f)?;
        if let Some(data) = &inst.dataset {
            let mut dw = csv::Writer::from_path(dir.join(format!("datasets/m={}.csv", m + 1)))?;
            dw.write_record(["y"])?;
            for y in &data.observations {
                dw.write_record([format!("{y}")])?;
            }
            dw.flush()?;
        }
    }
    let meta = serde_json::json!({
        "mode": study.mode.to_string(),
        "psi": study.psi_name,
        "m": study.instances.len(),
        "skipped": study.skipped,
    });
    fs::write(
        dir.join("study.json"),
        serde_json::to_string_pretty(&meta).unwrap(),
    )?;
    Ok(())
}

/// Load a study persisted by `save_study` (datasets are not reloaded).
pub fn load_study(dir: &Path) -> Result<RecoveryStudy> {
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("study.json"))?).map_err(|e| {
            Error::Parse {
                path: dir.join("study.json").display().to_string(),
                message: e.to_string(),
            }
        })?;
    let psi_name = meta["psi"].as_str().unwrap_or("psi").to_string();
    let m = meta["m"].as_u64().unwrap_or(0) as usize;
    let skipped = meta["skipped"].as_u64().unwrap_or(0) as usize;
    let mut truths = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("truths.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        truths.push(rec[1].parse::<f64>().map_err(|e| Error::Parse {
            path: dir.join("truths.csv").display().to_string(),
            message: e.to_string(),
        })?);
    }
    if truths.len() != m {
        return Err(Error::ShapeMismatch("truth count differs from study.json".into()));
    }
    let mut instances = Vec::with_capacity(m);
    for (k, truth) in truths.into_iter().enumerate() {
        let path = dir.join(format!("draws/m={}.csv", k + 1));
        let f = fs::File::open(&path)?;
        let draws = read_draws_csv(f, &path.display().to_string())?;
        instances.push(StudyInstance {
            truth,
            draws,
            dataset: None,
        });
    }
    Ok(RecoveryStudy {
        mode: GenerationMode::PriorPredictive,
        psi_name,
        instances,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExactApproximator, NormalKnownVariance};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn normal_tensor(mean: f64, sd: f64, n: usize, seed: u64) -> DrawsTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = NormalDist::new(mean, sd).unwrap();
        DrawsTensor::from_chains("psi", &[(0..n).map(|_| dist.sample(&mut rng)).collect()])
            .unwrap()
    }

    fn identity_psi() -> Pushforward {
        Pushforward::variable("psi", 0)
    }

    #[test]
    fn contraction_zero_for_identical_sets() {
        let d = normal_tensor(0.0, 1.0, 500, 1);
        let pc = posterior_contraction(&d, &d, &identity_psi()).unwrap();
        assert_abs_diff_eq!(pc.value, 0.0, epsilon = 1e-12);
        assert!(!pc.widened);
    }

    #[test]
    fn contraction_one_for_constant_posterior() {
        let prior = normal_tensor(0.0, 1.0, 500, 2);
        let post = DrawsTensor::from_chains("psi", &[vec![0.3; 100]]).unwrap();
        let pc = posterior_contraction(&prior, &post, &identity_psi()).unwrap();
        assert_abs_diff_eq!(pc.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn contraction_matches_conjugate_ratio() {
        // PC = n / (n + 1) for unit prior and unit noise; n = 1 gives 0.5.
        let prior = normal_tensor(0.0, 1.0, 10_000, 3);
        let post = normal_tensor(0.5, (1.0f64 / 2.0).sqrt(), 10_000, 4);
        let pc = posterior_contraction(&prior, &post, &identity_psi()).unwrap();
        assert!((pc.value - 0.5).abs() < 0.03, "pc {}", pc.value);
    }

    #[test]
    fn contraction_affine_invariant() {
        let prior = normal_tensor(0.0, 1.0, 400, 5);
        let post = normal_tensor(0.2, 0.5, 400, 6);
        let map = |t: &DrawsTensor| {
            let v: Vec<f64> = t
                .pooled("psi")
                .unwrap()
                .iter()
                .map(|x| 2.5 * x - 7.0)
                .collect();
            DrawsTensor::from_chains("psi", &[v]).unwrap()
        };
        let a = posterior_contraction(&prior, &post, &identity_psi()).unwrap();
        let b = posterior_contraction(&map(&prior), &map(&post), &identity_psi()).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-10);
    }

    #[test]
    fn contraction_negative_reported_with_flag() {
        let prior = normal_tensor(0.0, 1.0, 2000, 30);
        let post = normal_tensor(0.0, 3.0, 2000, 31);
        let pc = posterior_contraction(&prior, &post, &identity_psi()).unwrap();
        assert!(pc.value < 0.0);
        assert!(pc.widened);
    }

    #[test]
    fn contraction_rejects_zero_prior_variance() {
        let prior = DrawsTensor::from_chains("psi", &[vec![1.0; 10]]).unwrap();
        let post = normal_tensor(0.0, 1.0, 10, 7);
        assert!(posterior_contraction(&prior, &post, &identity_psi()).is_err());
    }

    #[test]
    fn surprise_identity_zero_and_mean_shift() {
        assert_abs_diff_eq!(
            bayesian_surprise_gaussian((0.0, 1.0), (0.0, 1.0)).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            bayesian_surprise_gaussian((0.0, 1.0), (1.0, 1.0)).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn surprise_detects_pure_scale_change() {
        // Posterior N(0,1) against prior N(0,2): ln 2 + 1/8 - 1/2
        let v = bayesian_surprise_gaussian((0.0, 2.0), (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln() + 0.125 - 0.5, epsilon = 1e-12);
        assert!((v - 0.3181).abs() < 5e-4);
    }

    #[test]
    fn surprise_nonnegative_on_grid_zero_iff_equal() {
        for mu in [-1.0, 0.0, 2.0] {
            for sd in [0.5, 1.0, 3.0] {
                let v = bayesian_surprise_gaussian((0.0, 1.0), (mu, sd)).unwrap();
                if mu == 0.0 && sd == 1.0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.0, "mu {mu} sd {sd}");
                }
            }
        }
    }

    #[test]
    fn mmd_identical_samples_at_or_below_zero() {
        let a: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1]).collect();
        let v = mmd_squared_vectors(&a, &a, Bandwidth::Fixed(1.0)).unwrap();
        assert!(v <= 0.0, "{v}");
    }

    #[test]
    fn mmd_separated_point_masses() {
        let a = vec![vec![0.0], vec![0.0], vec![0.0]];
        let b = vec![vec![10.0], vec![10.0], vec![10.0]];
        let v = mmd_squared_vectors(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn mmd_null_is_small() {
        let a = normal_tensor(0.0, 1.0, 1000, 8);
        let b = normal_tensor(0.0, 1.0, 1000, 9);
        let v = mmd_squared(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
        assert!(v.abs() < 0.01, "{v}");
    }

    #[test]
    fn mmd_unbiased_mean_near_zero_over_replications() {
        let mut acc = 0.0;
        let reps = 200;
        for r in 0..reps {
            let a = normal_tensor(0.0, 1.0, 500, 1000 + 2 * r);
            let b = normal_tensor(0.0, 1.0, 500, 1001 + 2 * r);
            acc += mmd_squared(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
        }
        let mean = acc / reps as f64;
        assert!((-0.005..=0.005).contains(&mean), "mean {mean}");
    }

    #[test]
    fn mmd_rejects_nonpositive_bandwidth_and_tiny_samples() {
        let a = vec![vec![0.0], vec![1.0]];
        assert!(mmd_squared_vectors(&a, &a, Bandwidth::Fixed(0.0)).is_err());
        let single = vec![vec![0.0]];
        assert!(mmd_squared_vectors(&single, &a, Bandwidth::Fixed(1.0)).is_err());
    }

    #[test]
    fn permutation_test_separates_and_calibrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let a: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>()]).collect();
        let b: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>() + 3.0]).collect();
        let (_, rank) =
            mmd_permutation_test(&a, &b, Bandwidth::MedianHeuristic, 199, &mut rng).unwrap();
        assert!(rank <= 0.01, "rank {rank}");
        let c: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>()]).collect();
        let (_, rank0) =
            mmd_permutation_test(&a, &c, Bandwidth::MedianHeuristic, 199, &mut rng).unwrap();
        assert!(rank0 > 0.01, "null rank {rank0}");
    }

    #[test]
    fn eig_epc_near_half_for_single_observation() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 1).unwrap();
        let approx = ExactApproximator::new(1, 2000);
        let psi = Pushforward::variable("mu", 0);
        let r = expected_information_gain(
            &model,
            &approx,
            &psi,
            500,
            EigMeasure::Epc,
            21,
            StudyConfig::default(),
        )
        .unwrap();
        assert!((r.estimate - 0.5).abs() < 0.05, "epc {}", r.estimate);
        assert!(r.mc_error.is_some());
    }

    #[test]
    fn eig_single_instance_has_no_mc_error() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 1).unwrap();
        let approx = ExactApproximator::new(1, 500);
        let psi = Pushforward::variable("mu", 0);
        let r = expected_information_gain(
            &model,
            &approx,
            &psi,
            1,
            EigMeasure::Epc,
            22,
            StudyConfig::default(),
        )
        .unwrap();
        assert!(r.mc_error.is_none());
    }

    struct ThetaBlindModel;

    impl Model for ThetaBlindModel {
        fn parameter_names(&self) -> Vec<String> {
            vec!["theta".into()]
        }
        fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
            let d = NormalDist::new(0.0, 1.0).unwrap();
            vec![d.sample(rng)]
        }
        fn prior_logpdf(&self, theta: &[f64]) -> f64 {
            crate::stats::normal_logpdf(theta[0], 0.0, 1.0)
        }
        fn loglik_pointwise(&self, _theta: &[f64], data: &Dataset) -> Vec<f64> {
            data.observations
                .iter()
                .map(|y| crate::stats::normal_logpdf(*y, 0.0, 1.0))
                .collect()
        }
        fn simulate(&self, _theta: &[f64], rng: &mut dyn RngCore) -> Dataset {
            let d = NormalDist::new(0.0, 1.0).unwrap();
            Dataset::new((0..5).map(|_| d.sample(rng)).collect())
        }
        fn analytic_posterior(&self, _data: &Dataset) -> Option<Box<dyn crate::models::AnalyticPosterior>> {
            struct PriorIsPosterior;
            impl crate::models::AnalyticPosterior for PriorIsPosterior {
                fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
                    let d = NormalDist::new(0.0, 1.0).unwrap();
                    vec![d.sample(rng)]
                }
                fn descriptor(&self) -> serde_json::Value {
                    serde_json::json!({"family": "normal", "mean": 0.0, "sd": 1.0})
                }
            }
            Some(Box::new(PriorIsPosterior))
        }
    }

    #[test]
    fn eig_zero_when_likelihood_ignores_theta() {
        let approx = ExactApproximator::new(1, 2000);
        let psi = Pushforward::variable("theta", 0);
        let r = expected_information_gain(
            &ThetaBlindModel,
            &approx,
            &psi,
            100,
            EigMeasure::Epc,
            23,
            StudyConfig::default(),
        )
        .unwrap();
        assert!(r.estimate.abs() < 0.05, "epc {}", r.estimate);
    }

    fn synthetic_study(truths: &[f64], draw_sets: Vec<Vec<f64>>) -> RecoveryStudy {
        RecoveryStudy {
            mode: GenerationMode::PriorPredictive,
            psi_name: "psi".into(),
            instances: truths
                .iter()
                .zip(draw_sets)
                .map(|(t, d)| StudyInstance {
                    truth: *t,
                    draws: DrawsTensor::from_chains("psi", &[d]).unwrap(),
                    dataset: None,
                })
                .collect(),
            skipped: 0,
        }
    }

    #[test]
    fn point_recovery_symmetric_errors() {
        // Estimates phi+1 and phi-1: bias 0, absolute 1, squared 1.
        let study = synthetic_study(&[0.0, 0.0], vec![vec![1.0; 5], vec![-1.0; 5]]);
        let bias = point_recovery(&study, SummaryStatistic::Mean, Distance::Bias).unwrap();
        let abs = point_recovery(&study, SummaryStatistic::Mean, Distance::Absolute).unwrap();
        let sq = point_recovery(&study, SummaryStatistic::Mean, Distance::Squared).unwrap();
        assert_abs_diff_eq!(bias, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(abs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sq, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn point_recovery_perfect_estimator() {
        let study = synthetic_study(&[2.0], vec![vec![2.0; 5]]);
        for d in [Distance::Bias, Distance::Squared, Distance::Absolute] {
            assert_eq!(
                point_recovery(&study, SummaryStatistic::Mean, d).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn posterior_mean_unbiased_in_the_bayesian_joint() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 1).unwrap();
        let approx = ExactApproximator::new(1, 1000);
        let psi = Pushforward::variable("mu", 0);
        let study = run_recovery_study(
            &model,
            &approx,
            &psi,
            GenerationMode::PriorPredictive,
            1000,
            25,
            StudyConfig::default(),
        )
        .unwrap();
        let bias = point_recovery(&study, SummaryStatistic::Mean, Distance::Bias).unwrap();
        let sq = point_recovery(&study, SummaryStatistic::Mean, Distance::Squared).unwrap();
        let mc_error = (sq / study.instances.len() as f64).sqrt();
        assert!(bias.abs() < 2.0 * mc_error, "bias {bias} vs mc {mc_error}");
    }

    #[test]
    fn coverage_vacuous_and_degenerate() {
        let wide = synthetic_study(&[0.0], vec![(-500..=500).map(|i| i as f64).collect()]);
        assert_eq!(coverage(&wide, 0.9).unwrap().empirical, 1.0);
        let point = synthetic_study(&[0.123456], vec![vec![7.0; 50]]);
        assert_eq!(coverage(&point, 0.9).unwrap().empirical, 0.0);
    }

    #[test]
    fn sharpness_identical_studies_incomparable() {
        let study = synthetic_study(&[0.0], vec![(-50..=50).map(|i| i as f64 / 10.0).collect()]);
        let r = sharpness_compare(&study, &study.clone(), 0.9).unwrap();
        assert_eq!(r.verdict, SharpnessVerdict::Incomparable);
    }

    #[test]
    fn sharpness_halved_widths_win() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let m = 200;
        let mut truths = Vec::new();
        let mut wide = Vec::new();
        let mut narrow = Vec::new();
        for _ in 0..m {
            let t: f64 = normal.sample(&mut rng);
            truths.push(t);
            // Both calibrated: draws centred at the truth.
            wide.push((0..400).map(|_| t + 2.0 * normal.sample(&mut rng)).collect());
            narrow.push((0..400).map(|_| t + normal.sample(&mut rng)).collect());
        }
        let a = synthetic_study(&truths, narrow);
        let b = synthetic_study(&truths, wide);
        let r = sharpness_compare(&a, &b, 0.9).unwrap();
        assert_eq!(r.verdict, SharpnessVerdict::ASharper);
    }

    #[test]
    fn sharpness_undercovering_narrow_study_is_incomparable() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let m = 300;
        let mut truths = Vec::new();
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for _ in 0..m {
            let t: f64 = normal.sample(&mut rng);
            truths.push(t);
            good.push((0..400).map(|_| t + normal.sample(&mut rng)).collect());
            // Overconfident: tiny sd around a biased centre.
            bad.push(
                (0..400)
                    .map(|_| t + 1.0 + 0.05 * normal.sample(&mut rng))
                    .collect(),
            );
        }
        let a = synthetic_study(&truths, bad);
        let b = synthetic_study(&truths, good);
        let r = sharpness_compare(&a, &b, 0.9).unwrap();
        assert_ne!(r.verdict, SharpnessVerdict::ASharper);
        assert!(r
            .under_coverage_flags
            .iter()
            .any(|f| f.starts_with("study_a")));
    }

    #[test]
    fn sharpness_rejects_mismatched_truths() {
        let a = synthetic_study(&[0.0], vec![vec![0.0; 10]]);
        let b = synthetic_study(&[1.0], vec![vec![0.0; 10]]);
        assert!(sharpness_compare(&a, &b, 0.9).is_err());
    }

    #[test]
    fn misspec_score_calibrated_under_null_and_extreme_under_shift() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 30).unwrap();
        let summary = DataSummary::new("mean", |d: &Dataset| {
            d.observations.iter().sum::<f64>() / d.len() as f64
        });
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let theta = model.prior_sample(&mut rng);
        let observed = model.simulate(&theta, &mut rng);
        let ok = misspecification_score(&model, &observed, &summary, 200, 31).unwrap();
        assert!(ok.null_rank >= 0.01, "null rank {}", ok.null_rank);

        // Prior-predictive sd of the mean summary is sqrt(1 + 1/30).
        let shift = 10.0 * (1.0f64 + 1.0 / 30.0).sqrt();
        let shifted = Dataset::new(observed.observations.iter().map(|y| y + shift).collect());
        let bad = misspecification_score(&model, &shifted, &summary, 200, 31).unwrap();
        assert!(bad.null_rank < 0.01, "shifted rank {}", bad.null_rank);
        assert!(bad.mmd2 > ok.mmd2);
    }

    #[test]
    fn misspec_score_rejects_small_n_sim() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 5).unwrap();
        let summary = DataSummary::new("first", |d: &Dataset| d.observations[0]);
        let observed = Dataset::new(vec![0.0; 5]);
        assert!(misspecification_score(&model, &observed, &summary, 10, 1).is_err());
    }

    #[test]
    fn study_round_trip_through_directory() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 3).unwrap();
        let approx = ExactApproximator::new(1, 50);
        let psi = Pushforward::variable("mu", 0);
        let study = run_recovery_study(
            &model,
            &approx,
            &psi,
            GenerationMode::PriorPredictive,
            4,
            9,
            StudyConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_study(&study, dir.path()).unwrap();
        let loaded = load_study(dir.path()).unwrap();
        assert_eq!(loaded.instances.len(), 4);
        assert_eq!(loaded.instances[2].truth, study.instances[2].truth);
        assert_eq!(
            loaded.instances[1].draws.pooled("mu").unwrap(),
            study.instances[1].draws.pooled("mu").unwrap()
        );
    }
}
