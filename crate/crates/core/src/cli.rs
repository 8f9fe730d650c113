//! Command-line entry point: ingest draws/data/config, run the requested
//! diagnostic suites, aggregate them through the goal-specific utility
//! trees, and emit JSON reports plus plot-ready CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::convergence::{
    convergence_report, ess, sampling_efficiency, ConvergenceThresholds, Transform,
};
use crate::draws::{read_draws_csv, write_draws_csv, DrawsTensor, Pushforward, SummaryStatistic};
use crate::error::{Error, Result};
use crate::fairness::{decide, demographic_parity_gap};
use crate::models::{
    derive_rng, model_by_id, Dataset, ExactApproximator, FitDiagnostics, Model,
    PosteriorApproximator, RwmApproximator,
};
use crate::parsimony::{enp_loo, enp_waic};
use crate::predictive::{elpd, loo_is, waic, PointwiseLogLik, Provenance as LlProvenance};
use crate::recoverability::{coverage, run_recovery_study, FitPolicy, GenerationMode, StudyConfig};
use crate::report::{
    config_hash, emit, evaluate_latent_tree, evaluate_observable_tree, timestamp_now, Goal,
    Provenance, Status, TreeInputs, UtilityReport,
};
use crate::sbc::{
    ecdf_diff_envelope, run_sbc, uniformity_chisq, write_ecdf_csv, write_ranks_csv,
};
use crate::sensitivity::{
    is_practically_sensitive, sensitivity_curve, sensitivity_distance, write_sensitivity_csv,
    Component, DistanceKind, PowerScaleContext, SensitivitySpec,
};
use crate::stats;

#[derive(Parser)]
#[command(name = "padbench", version, about = "Posterior-draw diagnostics and utility reports for Bayesian models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the configured diagnostic suites and emit a utility report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulation-based calibration for a zoo model.
    Sbc {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "exact")]
        approximator: String,
        #[arg(short = 'M', long, default_value_t = 200)]
        m: usize,
        #[arg(short = 'L', long, default_value_t = 99)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        thin: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a zoo model to data and export draws as CSV.
    Fit {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "exact")]
        approximator: String,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 500)]
        warmup: usize,
        #[arg(long, default_value_t = 0.8)]
        proposal_sd: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Causal-consistency checks on a DAG and claimed factorization.
    Causal {
        #[arg(long)]
        dag: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "do")]
        do_node: Option<String>,
        #[arg(long)]
        outcome: Option<String>,
    },
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub goal: Goal,
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub draws_csv: Option<PathBuf>,
    #[serde(default)]
    pub data_csv: Option<PathBuf>,
    #[serde(default)]
    pub loglik_csv: Option<PathBuf>,
    #[serde(default)]
    pub analyses: AnalysesConfig,
    #[serde(default)]
    pub fairness: Option<FairnessConfig>,
    #[serde(default)]
    pub causal: Option<CausalConfig>,
    #[serde(default)]
    pub manual: ManualConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default = "default_approximator")]
    pub approximator: String,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default = "default_draws")]
    pub draws_per_chain: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_proposal_sd")]
    pub proposal_sd: f64,
}

fn default_approximator() -> String {
    "exact".into()
}
fn default_chains() -> usize {
    4
}
fn default_draws() -> usize {
    1000
}
fn default_warmup() -> usize {
    500
}
fn default_proposal_sd() -> f64 {
    0.8
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysesConfig {
    #[serde(default)]
    pub convergence: bool,
    #[serde(default)]
    pub recoverability: Option<RecoverabilityConfig>,
    #[serde(default)]
    pub predictive: bool,
    #[serde(default)]
    pub parsimony: bool,
    #[serde(default)]
    pub sensitivity: Option<SensitivityConfig>,
}

impl AnalysesConfig {
    fn is_empty(&self) -> bool {
        !self.convergence
            && self.recoverability.is_none()
            && !self.predictive
            && !self.parsimony
            && self.sensitivity.is_none()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverabilityConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub thin: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_q_list")]
    pub coverage_q: Vec<f64>,
}

fn default_m() -> usize {
    200
}
fn default_l() -> usize {
    99
}
fn default_bins() -> usize {
    10
}
fn default_q_list() -> Vec<f64> {
    vec![0.5, 0.9]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default = "default_component")]
    pub component: Component,
    #[serde(default)]
    pub variable: Option<String>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_component() -> Component {
    Component::Prior
}
fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.8, 1.25, 2.0]
}
fn default_delta() -> f64 {
    0.2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    #[serde(default)]
    pub not_applicable: bool,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub protected_columns: Vec<String>,
    #[serde(default)]
    pub risk_column: Option<String>,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_parity_tolerance")]
    pub parity_tolerance: f64,
}

fn default_parity_tolerance() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalConfig {
    pub dag: PathBuf,
    pub factorization: PathBuf,
    #[serde(default, rename = "do")]
    pub do_node: Option<String>,
    #[serde(default)]
    pub outcome: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualConfig {
    #[serde(default)]
    pub interpretability: Option<String>,
    #[serde(default)]
    pub structural_faithfulness: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_rhat_max")]
    pub rhat_max: f64,
    #[serde(default = "default_ess_min")]
    pub ess_min: f64,
    #[serde(default = "default_sbc_alpha")]
    pub sbc_alpha: f64,
    #[serde(default = "default_coverage_alpha")]
    pub coverage_alpha: f64,
}

fn default_rhat_max() -> f64 {
    1.01
}
fn default_ess_min() -> f64 {
    400.0
}
fn default_sbc_alpha() -> f64 {
    0.001
}
fn default_coverage_alpha() -> f64 {
    0.001
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rhat_max: default_rhat_max(),
            ess_min: default_ess_min(),
            sbc_alpha: default_sbc_alpha(),
            coverage_alpha: default_coverage_alpha(),
        }
    }
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct Bundle {
    draws: DrawsTensor,
    model: Option<Box<dyn Model>>,
    data: Option<Dataset>,
    loglik: Option<PointwiseLogLik>,
    fit_diagnostics: Option<FitDiagnostics>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_data_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || &headers[0] != "y" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "expected header `y[,x1,...]`".into(),
        });
    }
    let mut obs = Vec::new();
    let mut cov: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |field: &str| -> Result<f64> {
            field.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                message: format!("row {}: bad value `{field}`", line + 2),
            })
        };
        obs.push(parse(&rec[0])?);
        if headers.len() > 1 {
            cov.push(rec.iter().skip(1).map(parse).collect::<Result<_>>()?);
        }
    }
    if obs.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "no observations".into(),
        });
    }
    if cov.is_empty() {
        Ok(Dataset::new(obs))
    } else {
        Dataset::with_covariates(obs, cov)
    }
}

fn build_approximator(cfg: &ModelConfig) -> Result<Box<dyn PosteriorApproximator>> {
    match cfg.approximator.as_str() {
        "exact" => Ok(Box::new(ExactApproximator::new(
            cfg.n_chains,
            cfg.draws_per_chain,
        ))),
        "rwm" => Ok(Box::new(RwmApproximator::new(
            cfg.n_chains,
            cfg.draws_per_chain,
            cfg.warmup,
            cfg.proposal_sd,
        )?)),
        other => Err(Error::invalid(format!(
            "unknown approximator `{other}` (expected `exact` or `rwm`)"
        ))),
    }
}

fn ingest(config: &RunConfig, base: &Path) -> Result<Bundle> {
    let model = match &config.model {
        Some(m) => Some(model_by_id(&m.id)?),
        None => None,
    };
    let data = match &config.data_csv {
        Some(p) => Some(read_data_csv(&resolve(base, p))?),
        None => None,
    };
    let (draws, data, fit_diagnostics) = if let Some(p) = &config.draws_csv {
        let path = resolve(base, p);
        let f = fs::File::open(&path)?;
        (
            read_draws_csv(f, &path.display().to_string())?,
            data,
            None,
        )
    } else if let (Some(model), Some(mc)) = (model.as_deref(), &config.model) {
        // No external draws: fit the configured model, simulating data from
        // the prior when none is supplied.
        let data = match data {
            Some(d) => d,
            None => {
                let mut rng = derive_rng(config.seed, 0, "cli_dataset");
                let theta = model.prior_sample(&mut rng);
                model.simulate(&theta, &mut rng)
            }
        };
        let approximator = build_approximator(mc)?;
        let fit = approximator.fit(model, &data, config.seed)?;
        (fit.draws, Some(data), Some(fit.diagnostics))
    } else {
        return Err(Error::invalid(
            "config needs either `draws_csv` or a `model` to fit",
        ));
    };
    let loglik = match &config.loglik_csv {
        Some(p) => {
            let path = resolve(base, p);
            let f = fs::File::open(&path)?;
            let ll = PointwiseLogLik::read_csv(
                f,
                &path.display().to_string(),
                LlProvenance::PosteriorDraws,
            )?;
            if ll.n_draws() != draws.total_draws() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    message: format!(
                        "log-likelihood references {} draws, draws file has {}",
                        ll.n_draws(),
                        draws.total_draws()
                    ),
                });
            }
            Some(ll)
        }
        None => match (&model, &data) {
            (Some(m), Some(d)) if !d.is_empty() => Some(PointwiseLogLik::from_model(
                m.as_ref(),
                &draws,
                d,
                LlProvenance::PosteriorDraws,
            )?),
            _ => None,
        },
    };
    if let Some(s) = &config.analyses.sensitivity {
        if let Some(v) = &s.variable {
            draws.variable_index(v)?;
        }
    }
    Ok(Bundle {
        draws,
        model,
        data,
        loglik,
        fit_diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

fn default_statistics() -> Vec<SummaryStatistic> {
    vec![
        SummaryStatistic::Mean,
        SummaryStatistic::Sd,
        SummaryStatistic::Quantile(0.05),
        SummaryStatistic::Quantile(0.5),
        SummaryStatistic::Quantile(0.95),
    ]
}

fn convergence_suite(
    bundle: &Bundle,
    thresholds: &Thresholds,
    out_dir: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    let report = convergence_report(
        &bundle.draws,
        bundle.draws.variable_names(),
        &default_statistics(),
        ConvergenceThresholds {
            rhat_max: thresholds.rhat_max,
            ess_min: thresholds.ess_min,
        },
    );
    let mut w = csv::Writer::from_path(out_dir.join("convergence.csv"))?;
    w.write_record(["variable", "statistic", "rhat", "ess", "mcse", "flags"])?;
    for row in &report.rows {
        w.write_record([
            row.variable.clone(),
            row.statistic.clone(),
            row.rhat.map(|v| format!("{v}")).unwrap_or_default(),
            row.ess.map(|v| format!("{v}")).unwrap_or_default(),
            row.mcse.map(|v| format!("{v}")).unwrap_or_default(),
            row.flags.join(";"),
        ])?;
    }
    w.flush()?;
    let worst_rhat = report
        .rows
        .iter()
        .filter_map(|r| r.rhat)
        .fold(f64::NAN, f64::max);
    let min_ess = report
        .rows
        .iter()
        .filter_map(|r| r.ess)
        .fold(f64::NAN, f64::min);
    let gating = report.rows.iter().any(|r| {
        r.flags.iter().any(|f| f == "high_rhat" || f == "low_ess" || f == "nonfinite")
    });
    let status = if gating { Status::Fail } else { Status::Pass };
    let metrics = json!({
        "max_rhat": worst_rhat,
        "min_ess": min_ess,
        "rows": report.to_json(),
        "thresholds": {"rhat_max": thresholds.rhat_max, "ess_min": thresholds.ess_min},
    });
    Ok((status, metrics, vec![]))
}

fn recoverability_suite(
    bundle: &Bundle,
    cfg: &RecoverabilityConfig,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    let model = bundle.model.as_deref().ok_or_else(|| {
        Error::invalid("recoverability suite needs a generative model (set `model` in the config)")
    })?;
    let mc = config.model.as_ref().expect("model config present");
    let approximator = build_approximator(mc)?;
    let names = model.parameter_names();
    let psi = Pushforward::variable(&names[0], 0);
    let mut notes = Vec::new();

    let sbc = run_sbc(
        model,
        approximator.as_ref(),
        &psi,
        cfg.m,
        cfg.l,
        cfg.thin,
        config.seed,
        FitPolicy::SkipAndFlag,
    )?;
    if sbc.skipped > 0 {
        notes.push(format!("{} SBC instances skipped by the fit policy", sbc.skipped));
    }
    let (chisq, p_value) = uniformity_chisq(&sbc, cfg.n_bins)?;
    {
        let f = fs::File::create(out_dir.join("ranks.csv"))?;
        write_ranks_csv(&sbc, f)?;
    }
    let mut ecdf_violated = None;
    if sbc.ranks.len() >= 50 {
        let env = ecdf_diff_envelope(&sbc, 0.95, 999, config.seed)?;
        let f = fs::File::create(out_dir.join("ecdf.csv"))?;
        write_ecdf_csv(&env, f)?;
        ecdf_violated = Some(env.violated);
    }

    let study = run_recovery_study(
        model,
        approximator.as_ref(),
        &psi,
        GenerationMode::PriorPredictive,
        cfg.m,
        config.seed.wrapping_add(1),
        StudyConfig::default(),
    )?;
    let z = stats::normal_inverse_cdf(1.0 - config.thresholds.coverage_alpha / 2.0);
    let mut coverage_rows = Vec::new();
    let mut coverage_ok = true;
    for q in &cfg.coverage_q {
        let c = coverage(&study, *q)?;
        let band = z * (q * (1.0 - q) / c.total as f64).sqrt();
        let ok = (c.empirical - q).abs() <= band;
        coverage_ok &= ok;
        coverage_rows.push(json!({
            "q": q,
            "empirical": c.empirical,
            "band": band,
            "within_band": ok,
        }));
    }

    let sbc_ok = p_value >= config.thresholds.sbc_alpha;
    let status = if sbc_ok && coverage_ok {
        Status::Pass
    } else {
        Status::Fail
    };
    let metrics = json!({
        "sbc": {"m": sbc.ranks.len(), "l": sbc.l, "chisq": chisq, "p_value": p_value,
                 "ecdf_violated": ecdf_violated},
        "coverage": coverage_rows,
        "psi": psi.name,
    });
    Ok((status, metrics, notes))
}

fn predictive_suite(
    bundle: &Bundle,
    config: &RunConfig,
    _out_dir: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    let loglik = bundle.loglik.as_ref().ok_or_else(|| {
        Error::invalid("predictive suite needs a pointwise log-likelihood (data plus model, or `loglik_csv`)")
    })?;
    let in_sample = elpd(loglik, None)?;
    let waic_result = waic(loglik)?;
    let loo = loo_is(loglik)?;
    let mut notes = Vec::new();
    let mut status = Status::Pass;
    if !loo.flags.is_empty() {
        status = Status::Flag;
        notes.extend(loo.flags.iter().cloned());
    }
    let refit = match (&bundle.model, &bundle.data, &config.model) {
        (Some(m), Some(d), Some(mc)) if d.len() <= 50 => {
            let approximator = build_approximator(mc)?;
            match crate::predictive::loo_refit(m.as_ref(), approximator.as_ref(), d, config.seed) {
                Ok(r) => Some(r.total),
                Err(_) => None,
            }
        }
        _ => None,
    };
    let to_json = |r: &crate::predictive::ElpdResult| {
        serde_json::to_value(r).expect("elpd result serializes")
    };
    let metrics = json!({
        "elpd_in_sample": to_json(&in_sample),
        "elpd_waic": to_json(&waic_result),
        "elpd_loo_is": to_json(&loo),
        "elpd_loo_refit_total": refit,
        "n_obs": loglik.n_obs(),
        "n_draws": loglik.n_draws(),
    });
    Ok((status, metrics, notes))
}

fn parsimony_suite(
    bundle: &Bundle,
    config: &RunConfig,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    let loglik = bundle.loglik.as_ref().ok_or_else(|| {
        Error::invalid("parsimony suite needs a pointwise log-likelihood")
    })?;
    let enp_w = enp_waic(loglik)?;
    let in_sample = elpd(loglik, None)?;
    let loo = loo_is(loglik)?;
    let enp_l = enp_loo(&in_sample, &loo)?;
    let nominal = bundle
        .model
        .as_ref()
        .map(|m| m.nominal_param_count())
        .unwrap_or_else(|| bundle.draws.variable_names().len());
    let enc = bundle
        .model
        .as_ref()
        .and_then(|m| m.shrinkage_kappas())
        .and_then(|k| crate::parsimony::enc_gls(&k).ok());
    let mdl = match (&bundle.model, &bundle.data) {
        (Some(m), Some(d)) => m
            .analytic_log_marginal_likelihood(d)
            .and_then(|lml| crate::parsimony::mdl(lml).ok()),
        _ => None,
    };
    let _ = config;
    let report = crate::parsimony::ParsimonyReport {
        enp_loo: Some(enp_l),
        enp_waic: Some(enp_w),
        enc_gls: enc,
        occam_factor_log: None,
        mdl,
        nominal_param_count: nominal,
    };
    let metrics = serde_json::to_value(&report)
        .map_err(|e| Error::numerical(format!("parsimony serialization: {e}")))?;
    Ok((Status::Pass, metrics, vec![]))
}

fn sensitivity_suite(
    bundle: &Bundle,
    cfg: &SensitivityConfig,
    out_dir: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    let model = bundle.model.as_deref().ok_or_else(|| {
        Error::invalid("sensitivity suite needs a model to evaluate log densities")
    })?;
    let data = bundle
        .data
        .as_ref()
        .ok_or_else(|| Error::invalid("sensitivity suite needs a dataset"))?;
    let variable = cfg
        .variable
        .clone()
        .unwrap_or_else(|| bundle.draws.variable_names()[0].clone());
    let draws = &bundle.draws;
    let mut log_prior = Vec::with_capacity(draws.total_draws());
    let mut log_lik = Vec::with_capacity(draws.total_draws());
    for c in 0..draws.chain_count() {
        for s in 0..draws.draws_per_chain() {
            let theta = draws.parameter_vector(c, s);
            log_prior.push(model.prior_logpdf(theta));
            log_lik.push(model.loglik_joint(theta, data));
        }
    }
    let ctx = PowerScaleContext {
        log_prior,
        log_lik_joint: log_lik,
    };
    let spec = SensitivitySpec::new(
        cfg.component,
        &variable,
        1.0,
        cfg.alphas.clone(),
        SummaryStatistic::Mean,
        DistanceKind::StandardizedDifference,
        cfg.delta,
    )?;
    let curve = sensitivity_curve(draws, &ctx, &spec)?;
    let f = fs::File::create(out_dir.join("sensitivity.csv"))?;
    write_sensitivity_csv(&curve, f)?;
    let mut max_sen = 0.0f64;
    for alpha in &spec.alphas {
        if *alpha != spec.alpha0 {
            max_sen = max_sen.max(sensitivity_distance(draws, &ctx, &spec, *alpha)?);
        }
    }
    let sensitive = is_practically_sensitive(max_sen, spec.delta)?;
    let status = if sensitive { Status::Flag } else { Status::Pass };
    let notes = if sensitive {
        vec![format!(
            "practically sensitive: max Sen {max_sen:.4} exceeds delta {}",
            spec.delta
        )]
    } else {
        vec![]
    };
    let metrics = json!({
        "component": format!("{:?}", cfg.component).to_lowercase(),
        "variable": variable,
        "max_sensitivity": max_sen,
        "delta": spec.delta,
        "practically_sensitive": sensitive,
    });
    Ok((status, metrics, notes))
}

fn fairness_suite(
    cfg: &FairnessConfig,
    base: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    if cfg.not_applicable {
        return Ok((
            Status::NotApplicable,
            json!({"reason": "fairness marked not applicable in config"}),
            vec![],
        ));
    }
    let path = cfg
        .csv
        .as_ref()
        .ok_or_else(|| Error::invalid("fairness config needs `csv` or `not_applicable`"))?;
    let path = resolve(base, path);
    let mut rdr = csv::Reader::from_path(&path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: format!("missing column `{name}`"),
            })
    };
    let risk_col = col(cfg.risk_column.as_deref().unwrap_or("outcome"))?;
    let protected_cols: Vec<usize> = cfg
        .protected_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    if protected_cols.is_empty() {
        return Err(Error::invalid("fairness config needs `protected_columns`"));
    }
    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let risk: f64 = rec[risk_col].parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            message: format!("bad risk value `{}`", &rec[risk_col]),
        })?;
        decisions.push(decide(risk, cfg.tau)?);
        labels.push(
            protected_cols
                .iter()
                .map(|c| rec[*c].to_string())
                .collect::<Vec<_>>()
                .join("|"),
        );
    }
    let parity = demographic_parity_gap(&decisions, &labels)?;
    let status = if parity.gap <= cfg.parity_tolerance {
        Status::Pass
    } else {
        Status::Fail
    };
    let metrics = json!({
        "demographic_parity_gap": parity.gap,
        "tolerance": cfg.parity_tolerance,
        "per_group_rates": parity.per_group_rates
            .iter()
            .map(|(g, r)| json!({"group": g, "rate": r}))
            .collect::<Vec<_>>(),
        "tau": cfg.tau,
    });
    Ok((status, metrics, vec![]))
}

fn causal_suite(
    cfg: &CausalConfig,
    base: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    use crate::causal::{
        factorization_consistent, is_acyclic, query_identifiable, CausalQuery, Dag,
        FactorizationSpec, IdentifiabilityVerdict,
    };
    let dag_text = fs::read_to_string(resolve(base, &cfg.dag))?;
    let dag = Dag::parse(&dag_text)?;
    if !is_acyclic(&dag) {
        return Err(Error::invalid("declared causal graph is cyclic"));
    }
    let spec_text = fs::read_to_string(resolve(base, &cfg.factorization))?;
    let spec = FactorizationSpec::parse(&spec_text)?;
    let (consistent, violations) = factorization_consistent(&dag, &spec)?;
    let mut metrics = json!({
        "factorization_consistent": consistent,
        "violations": violations,
    });
    let mut status = if consistent { Status::Pass } else { Status::Fail };
    if let (Some(do_node), Some(outcome)) = (&cfg.do_node, &cfg.outcome) {
        let query = CausalQuery::new(outcome, vec![do_node.clone()], vec![])?;
        let r = query_identifiable(&dag, &spec, &query)?;
        let (identifiable, adjustment) = match &r.verdict {
            IdentifiabilityVerdict::Identifiable { adjustment_set } => {
                (true, Some(adjustment_set.clone()))
            }
            IdentifiabilityVerdict::Unknown => (false, None),
        };
        // Query-level consistency decides the gate when a query is declared.
        status = if identifiable && r.required_conditionals_present {
            Status::Pass
        } else {
            Status::Fail
        };
        metrics["query"] = json!({
            "do": do_node,
            "outcome": outcome,
            "identifiable": identifiable,
            "adjustment_set": adjustment,
            "required_conditionals_present": r.required_conditionals_present,
        });
    }
    let notes = vec![
        "causal sufficiency assumed: hidden confounders are not modelled".to_string(),
    ];
    Ok((status, metrics, notes))
}

fn manual_status(value: &Option<String>) -> Result<Status> {
    match value.as_deref() {
        None | Some("manual") => Ok(Status::Manual),
        Some("pass") => Ok(Status::Pass),
        Some("fail") => Ok(Status::Fail),
        Some("not_applicable") => Ok(Status::NotApplicable),
        Some(other) => Err(Error::invalid(format!(
            "manual status must be manual/pass/fail/not_applicable, got `{other}`"
        ))),
    }
}

fn speed_suite(
    bundle: &Bundle,
    out_dir: &Path,
) -> Result<(Status, serde_json::Value, Vec<String>)> {
    match &bundle.fit_diagnostics {
        None => Ok((
            Status::NotRun,
            serde_json::Value::Null,
            vec!["no fit performed in this run".into()],
        )),
        Some(diag) => {
            // Wall-clock numbers go to a side file so report.json stays
            // byte-reproducible up to its timestamp field.
            let first = &bundle.draws.variable_names()[0].clone();
            let ess_value = ess(&bundle.draws, first, Transform::Identity).ok();
            let eff = ess_value
                .and_then(|e| sampling_efficiency(e, diag.t_start, diag.t_end).ok());
            let timing = json!({
                "elapsed_seconds": diag.elapsed_seconds(),
                "ess_per_second": eff,
                "acceptance_rate": diag.acceptance_rate,
            });
            fs::write(
                out_dir.join("timing.json"),
                serde_json::to_string_pretty(&timing).unwrap() + "\n",
            )?;
            let metrics = json!({
                "recorded_in": "timing.json",
                "total_draws": bundle.draws.total_draws(),
                "n_chains": bundle.draws.chain_count(),
                "ess": ess_value,
            });
            Ok((Status::Pass, metrics, vec![]))
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommand drivers
// ---------------------------------------------------------------------------

fn run_report(config_path: &Path, out_dir: &Path) -> Result<UtilityReport> {
    let text = fs::read_to_string(config_path)?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: config_path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(out_dir)?;

    let mut inputs = TreeInputs::default();
    let vacuous = config.analyses.is_empty()
        && config.fairness.is_none()
        && config.causal.is_none();
    if !vacuous {
        let bundle = ingest(&config, &base)?;
        if config.analyses.convergence {
            let (s, m, n) = convergence_suite(&bundle, &config.thresholds, out_dir)?;
            inputs.set("convergence", s, m, n);
        }
        if let Some(rc) = &config.analyses.recoverability {
            let (s, m, n) = recoverability_suite(&bundle, rc, &config, out_dir)?;
            inputs.set("parameter_recoverability", s, m, n);
        }
        if config.analyses.predictive {
            let (s, m, n) = predictive_suite(&bundle, &config, out_dir)?;
            inputs.set("predictive_performance", s, m, n);
        }
        if config.analyses.parsimony {
            let (s, m, n) = parsimony_suite(&bundle, &config)?;
            inputs.set("parsimony", s, m, n);
        }
        if let Some(sc) = &config.analyses.sensitivity {
            let (s, m, n) = sensitivity_suite(&bundle, sc, out_dir)?;
            inputs.set("robustness", s, m, n);
        }
        if let Some(fc) = &config.fairness {
            let (s, m, n) = fairness_suite(fc, &base)?;
            inputs.set("fairness", s, m, n);
        }
        if let Some(cc) = &config.causal {
            let (s, m, n) = causal_suite(cc, &base)?;
            inputs.set("causal_consistency", s, m, n);
        }
        let (s, m, n) = speed_suite(&bundle, out_dir)?;
        inputs.set("estimation_speed", s, m, n);
        inputs.set(
            "interpretability",
            manual_status(&config.manual.interpretability)?,
            json!({"source": "manual checklist"}),
            vec![],
        );
        inputs.set(
            "structural_faithfulness",
            manual_status(&config.manual.structural_faithfulness)?,
            json!({"source": "manual checklist"}),
            vec![],
        );
    }

    let provenance = Provenance {
        config_hash: config_hash(&text),
        seed: config.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: timestamp_now(),
    };
    let report = match config.goal {
        Goal::Observable => evaluate_observable_tree(&inputs, provenance)?,
        Goal::Latent => evaluate_latent_tree(&inputs, provenance)?,
    };
    emit(&report, out_dir)?;
    Ok(report)
}

fn run_sbc_command(
    model_id: &str,
    approximator: &str,
    m: usize,
    l: usize,
    thin: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<f64> {
    let model = model_by_id(model_id)?;
    let approx: Box<dyn PosteriorApproximator> = match approximator {
        "exact" => Box::new(ExactApproximator::new(1, l.max(100))),
        "rwm" => Box::new(RwmApproximator::new(1, l.max(100) * 4, 500, 0.8)?),
        other => return Err(Error::invalid(format!("unknown approximator `{other}`"))),
    };
    let names = model.parameter_names();
    let psi = Pushforward::variable(&names[0], 0);
    let result = run_sbc(
        model.as_ref(),
        approx.as_ref(),
        &psi,
        m,
        l,
        thin,
        seed,
        FitPolicy::SkipAndFlag,
    )?;
    let n_bins = if (l + 1) % 10 == 0 { 10 } else { 4 };
    let (stat, p) = uniformity_chisq(&result, n_bins)?;
    println!(
        "sbc: model={model_id} psi={} M={} L={l} chisq={stat:.3} p={p:.6}",
        psi.name, result.m
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let f = fs::File::create(dir.join("ranks.csv"))?;
        write_ranks_csv(&result, f)?;
        if result.ranks.len() >= 50 {
            let env = ecdf_diff_envelope(&result, 0.95, 999, seed)?;
            let f = fs::File::create(dir.join("ecdf.csv"))?;
            write_ecdf_csv(&env, f)?;
        }
    }
    Ok(p)
}

fn run_fit_command(
    model_id: &str,
    data_path: &Path,
    out: &Path,
    approximator: &str,
    chains: usize,
    iterations: usize,
    warmup: usize,
    proposal_sd: f64,
    seed: u64,
) -> Result<()> {
    let model = model_by_id(model_id)?;
    let data = read_data_csv(data_path)?;
    let approx: Box<dyn PosteriorApproximator> = match approximator {
        "exact" => Box::new(ExactApproximator::new(chains, iterations)),
        "rwm" => Box::new(RwmApproximator::new(chains, iterations, warmup, proposal_sd)?),
        other => return Err(Error::invalid(format!("unknown approximator `{other}`"))),
    };
    let fit = approx.fit(model.as_ref(), &data, seed)?;
    let f = fs::File::create(out)?;
    write_draws_csv(&fit.draws, f)?;
    if let Some(rate) = fit.diagnostics.acceptance_rate {
        println!("fit: acceptance_rate={rate:.3}");
    }
    println!(
        "fit: wrote {} chains x {} draws to {}",
        fit.draws.chain_count(),
        fit.draws.draws_per_chain(),
        out.display()
    );
    Ok(())
}

fn run_causal_command(
    dag_path: &Path,
    spec_path: &Path,
    do_node: Option<&str>,
    outcome: Option<&str>,
) -> Result<bool> {
    let cfg = CausalConfig {
        dag: dag_path.to_path_buf(),
        factorization: spec_path.to_path_buf(),
        do_node: do_node.map(str::to_string),
        outcome: outcome.map(str::to_string),
    };
    let (status, metrics, _) = causal_suite(&cfg, Path::new("."))?;
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap());
    Ok(status == Status::Pass)
}

fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::UnknownVariable(_)
        | Error::ShapeMismatch(_)
        | Error::NonFiniteDraws
        | Error::InvalidArgument(_) => 2,
        Error::Numerical(_)
        | Error::Degenerate(_)
        | Error::ZeroWithinChainVariance
        | Error::FitFailure(_) => 3,
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("PADBENCH_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                // Ignore failure if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    configure_threads();
    let cli = Cli::parse();
    let outcome: Result<i32> = match &cli.command {
        Command::Run { config, out } => run_report(config, out).map(|r| {
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "run: goal={} overall={} gate_failures={:?}",
                serde_json::to_string(&r.goal).unwrap().trim_matches('"'),
                serde_json::to_string(&r.overall).unwrap().trim_matches('"'),
                r.gate_failures
            );
            r.exit_code()
        }),
        Command::Sbc {
            model,
            approximator,
            m,
            l,
            thin,
            seed,
            out,
        } => run_sbc_command(model, approximator, *m, *l, *thin, *seed, out.as_deref()).map(|_| 0),
        Command::Fit {
            model,
            data,
            out,
            approximator,
            chains,
            iterations,
            warmup,
            proposal_sd,
            seed,
        } => run_fit_command(
            model,
            data,
            out,
            approximator,
            *chains,
            *iterations,
            *warmup,
            *proposal_sd,
            *seed,
        )
        .map(|_| 0),
        Command::Causal {
            dag,
            spec,
            do_node,
            outcome,
        } => run_causal_command(dag, spec, do_node.as_deref(), outcome.as_deref())
            .map(|ok| if ok { 0 } else { 1 }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let payload = json!({"errors": [e.to_string()]});
            eprintln!("{payload}");
            error_exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ids_listed_in_help_are_resolvable() {
        for id in crate::models::model_ids() {
            assert!(model_by_id(id).is_ok());
        }
    }

    #[test]
    fn data_csv_reader_handles_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "y,x1\n1.0,0.5\n2.0,0.25\n").unwrap();
        let d = read_data_csv(&p).unwrap();
        assert_eq!(d.observations, vec![1.0, 2.0]);
        assert_eq!(d.covariates.as_ref().unwrap()[1], vec![0.25]);
        fs::write(&p, "z\n1.0\n").unwrap();
        assert!(read_data_csv(&p).is_err());
    }

    #[test]
    fn error_codes_partition_input_and_numerical_failures() {
        assert_eq!(error_exit_code(&Error::invalid("x")), 2);
        assert_eq!(
            error_exit_code(&Error::Parse {
                path: "p".into(),
                message: "m".into()
            }),
            2
        );
        assert_eq!(error_exit_code(&Error::numerical("x")), 3);
        assert_eq!(error_exit_code(&Error::ZeroWithinChainVariance), 3);
    }

    #[test]
    fn manual_status_values() {
        assert_eq!(manual_status(&None).unwrap(), Status::Manual);
        assert_eq!(manual_status(&Some("pass".into())).unwrap(), Status::Pass);
        assert!(manual_status(&Some("bogus".into())).is_err());
    }
}
