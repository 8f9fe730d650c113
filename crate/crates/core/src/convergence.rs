//! Convergence diagnostics for draw-based approximators: split scale
//! reduction, effective sample size, Monte Carlo standard errors, and
//! sampling efficiency.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::draws::{rank_normalize, DrawsTensor, SummaryStatistic};
use crate::error::{Error, Result};
use crate::stats;

/// Transform applied to draws before computing R-hat or ESS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    RankNormal,
}

fn transformed(draws: &DrawsTensor, variable: &str, transform: Transform) -> Result<DrawsTensor> {
    match transform {
        Transform::Identity => {
            // Narrow to the one variable so chain extraction stays cheap.
            let chains: Vec<Vec<f64>> = (0..draws.chain_count())
                .map(|c| draws.chain(c, variable))
                .collect::<Result<_>>()?;
            DrawsTensor::from_chains(variable, &chains)
        }
        Transform::RankNormal => rank_normalize(draws, variable),
    }
}

/// Split each chain in half; odd lengths drop the middle draw so both halves
/// stay equal.
fn split_chains(draws: &DrawsTensor, variable: &str) -> Result<Vec<Vec<f64>>> {
    let n = draws.draws_per_chain();
    if n < 4 {
        return Err(Error::invalid("split R-hat needs at least 4 draws per chain"));
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * draws.chain_count());
    for c in 0..draws.chain_count() {
        let chain = draws.chain(c, variable)?;
        out.push(chain[..half].to_vec());
        out.push(chain[n - half..].to_vec());
    }
    Ok(out)
}

/// Split scale reduction factor sqrt((B + W) / W), with the between-chain
/// term B entering on the scale of subchain-mean variance so that
/// independent chains give values near one.
pub fn split_rhat(draws: &DrawsTensor, variable: &str, transform: Transform) -> Result<f64> {
    if draws.contains_nonfinite() {
        return Err(Error::NonFiniteDraws);
    }
    let t = transformed(draws, variable, transform)?;
    let subchains = split_chains(&t, variable)?;
    let means: Vec<f64> = subchains.iter().map(|s| stats::mean(s)).collect();
    let within = subchains
        .iter()
        .map(|s| stats::sample_variance(s))
        .sum::<f64>()
        / subchains.len() as f64;
    if within == 0.0 {
        return Err(Error::ZeroWithinChainVariance);
    }
    let between = stats::sample_variance(&means);
    Ok(((between + within) / within).sqrt())
}

/// Biased (1/n) autocovariance of a single series for lags 0..n.
fn autocovariance_direct(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let m = stats::mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    (0..n)
        .map(|lag| {
            let mut acc = 0.0;
            for t in 0..n - lag {
                acc += centered[t] * centered[t + lag];
            }
            acc / n as f64
        })
        .collect()
}

fn autocovariance_fft(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let m = stats::mean(series);
    let mut padded = 1usize;
    while padded < 2 * n {
        padded <<= 1;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(padded);
    let ifft = planner.plan_fft_inverse(padded);
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - m, 0.0))
        .chain(std::iter::repeat_n(Complex::new(0.0, 0.0), padded - n))
        .collect();
    fft.process(&mut buf);
    for v in buf.iter_mut() {
        let conj = v.conj();
        *v *= conj;
    }
    ifft.process(&mut buf);
    // rustfft leaves the inverse unnormalized.
    buf.iter()
        .take(n)
        .map(|v| v.re / padded as f64 / n as f64)
        .collect()
}

fn autocovariance(series: &[f64]) -> Vec<f64> {
    if series.len() >= 1024 {
        autocovariance_fft(series)
    } else {
        autocovariance_direct(series)
    }
}

/// Effective sample size S / (1 + 2 sum rho_t) with per-chain autocovariances
/// averaged, combined with the between-chain term, and the lag sum truncated
/// by Geyer's initial monotone positive-pair rule.
pub fn ess(draws: &DrawsTensor, variable: &str, transform: Transform) -> Result<f64> {
    if draws.contains_nonfinite() {
        return Err(Error::NonFiniteDraws);
    }
    let t = transformed(draws, variable, transform)?;
    let n = t.draws_per_chain();
    if n < 2 {
        return Err(Error::invalid("ESS needs at least 2 draws per chain"));
    }
    let c = t.chain_count();
    let chains: Vec<Vec<f64>> = (0..c).map(|i| t.chain(i, variable)).collect::<Result<_>>()?;
    let within = chains
        .iter()
        .map(|s| stats::sample_variance(s))
        .sum::<f64>()
        / c as f64;
    if within == 0.0 {
        return Err(Error::ZeroWithinChainVariance);
    }
    let var_plus = if c > 1 {
        let means: Vec<f64> = chains.iter().map(|s| stats::mean(s)).collect();
        (n as f64 - 1.0) / n as f64 * within + stats::sample_variance(&means)
    } else {
        within
    };

    let mut mean_acov = vec![0.0; n];
    for chain in &chains {
        for (lag, v) in autocovariance(chain).into_iter().enumerate() {
            mean_acov[lag] += v / c as f64;
        }
    }
    let rho: Vec<f64> = mean_acov
        .iter()
        .map(|a| 1.0 - (within - a) / var_plus)
        .collect();

    // Geyer: sum consecutive lag pairs while positive, then enforce
    // monotonicity.
    let mut pair_sums = Vec::new();
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let p = rho[2 * k] + rho[2 * k + 1];
        if p <= 0.0 {
            break;
        }
        pair_sums.push(p);
        k += 1;
    }
    let mut running = f64::INFINITY;
    let mut tau = -1.0;
    for p in pair_sums {
        running = running.min(p);
        tau += 2.0 * running;
    }
    let total = (c * n) as f64;
    // Strongly antithetic chains can push tau below zero; cap the resulting
    // ESS at S * log10(S) as is conventional.
    let tau_floor = 1.0 / total.log10().max(1.0);
    let tau = tau.max(tau_floor);
    Ok(total / tau)
}

/// Monte Carlo standard error of a posterior summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McseResult {
    pub value: f64,
    /// Raised when the draws carry no variation and the error is zero by
    /// convention.
    pub degenerate: bool,
}

/// MCSE for the mean is sqrt(V / ESS) with V the pooled sample variance;
/// quantile errors come from the ESS of the threshold-indicator draws mapped
/// back to the value scale through the order statistics.
pub fn mcse(draws: &DrawsTensor, variable: &str, stat: SummaryStatistic) -> Result<McseResult> {
    if draws.contains_nonfinite() {
        return Err(Error::NonFiniteDraws);
    }
    let pooled = draws.pooled(variable)?;
    let first = pooled[0];
    if pooled.iter().all(|v| *v == first) {
        return Ok(McseResult {
            value: 0.0,
            degenerate: true,
        });
    }
    match stat {
        SummaryStatistic::Mean => {
            let v = stats::sample_variance(&pooled);
            let e = ess(draws, variable, Transform::Identity)?;
            Ok(McseResult {
                value: (v / e).sqrt(),
                degenerate: false,
            })
        }
        SummaryStatistic::Sd => {
            // Delta method through the second moment.
            let m = stats::mean(&pooled);
            let sq: Vec<Vec<f64>> = (0..draws.chain_count())
                .map(|c| {
                    Ok(draws
                        .chain(c, variable)?
                        .into_iter()
                        .map(|x| (x - m) * (x - m))
                        .collect())
                })
                .collect::<Result<_>>()?;
            let sq_tensor = DrawsTensor::from_chains(variable, &sq)?;
            let var_err = mcse(&sq_tensor, variable, SummaryStatistic::Mean)?;
            let sd = stats::sample_variance(&pooled).sqrt();
            Ok(McseResult {
                value: var_err.value / (2.0 * sd),
                degenerate: false,
            })
        }
        SummaryStatistic::Quantile(p) => {
            let q_hat = stats::quantile(&pooled, p);
            let ind: Vec<Vec<f64>> = (0..draws.chain_count())
                .map(|c| {
                    Ok(draws
                        .chain(c, variable)?
                        .into_iter()
                        .map(|x| if x <= q_hat { 1.0 } else { 0.0 })
                        .collect())
                })
                .collect::<Result<_>>()?;
            let ind_tensor = DrawsTensor::from_chains(variable, &ind)?;
            let e = match ess(&ind_tensor, variable, Transform::Identity) {
                Ok(e) => e,
                // Indicators can degenerate when p sits in a flat stretch.
                Err(Error::ZeroWithinChainVariance) => {
                    return Ok(McseResult {
                        value: 0.0,
                        degenerate: true,
                    })
                }
                Err(e) => return Err(e),
            };
            let half_width = (p * (1.0 - p) / e).sqrt();
            let eps = 1.0 / (pooled.len() as f64 + 1.0);
            let lo = stats::quantile(&pooled, (p - half_width).max(eps));
            let hi = stats::quantile(&pooled, (p + half_width).min(1.0 - eps));
            Ok(McseResult {
                value: (hi - lo) / 2.0,
                degenerate: false,
            })
        }
        SummaryStatistic::ProbabilityBelow(threshold) => {
            let ind: Vec<Vec<f64>> = (0..draws.chain_count())
                .map(|c| {
                    Ok(draws
                        .chain(c, variable)?
                        .into_iter()
                        .map(|x| if x <= threshold { 1.0 } else { 0.0 })
                        .collect())
                })
                .collect::<Result<_>>()?;
            let ind_tensor = DrawsTensor::from_chains(variable, &ind)?;
            mcse(&ind_tensor, variable, SummaryStatistic::Mean)
        }
    }
}

/// Average ESS per second over an approximator run.
pub fn sampling_efficiency(ess_value: f64, t_start: f64, t_end: f64) -> Result<f64> {
    if ess_value.is_nan() || ess_value <= 0.0 {
        return Err(Error::invalid("ESS must be positive"));
    }
    if t_end <= t_start {
        return Err(Error::invalid("run duration must be positive"));
    }
    Ok(ess_value / (t_end - t_start))
}

/// Flag thresholds for the convergence report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceThresholds {
    pub rhat_max: f64,
    pub ess_min: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self {
            rhat_max: 1.01,
            ess_min: 400.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub variable: String,
    pub statistic: String,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub mcse: Option<f64>,
    pub flags: Vec<String>,
}

/// Per-(variable, statistic) convergence triplet with threshold flags. For
/// mean statistics, mcse^2 * ess equals the pooled variance estimate by
/// construction.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub thresholds: ConvergenceThresholds,
}

impl ConvergenceReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| !r.flags.is_empty())
    }

    /// Wire form: an array of {variable, statistic, rhat, ess, mcse, flags}.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.rows).expect("rows serialize")
    }
}

/// Evaluate R-hat (rank-normal transform), ESS, and MCSE for each variable
/// and statistic.
pub fn convergence_report(
    draws: &DrawsTensor,
    variables: &[String],
    statistics: &[SummaryStatistic],
    thresholds: ConvergenceThresholds,
) -> ConvergenceReport {
    let mut rows = Vec::new();
    for variable in variables {
        for stat in statistics {
            let mut flags = Vec::new();
            if draws.contains_nonfinite() {
                rows.push(ConvergenceRow {
                    variable: variable.clone(),
                    statistic: stat.label(),
                    rhat: None,
                    ess: None,
                    mcse: None,
                    flags: vec!["nonfinite".into()],
                });
                continue;
            }
            let rhat = split_rhat(draws, variable, Transform::RankNormal).ok();
            let ess_value = ess(draws, variable, Transform::Identity).ok();
            let mcse_value = mcse(draws, variable, *stat).ok();
            if let Some(r) = rhat {
                if r > thresholds.rhat_max {
                    flags.push("high_rhat".into());
                }
            }
            if let Some(e) = ess_value {
                if e < thresholds.ess_min {
                    flags.push("low_ess".into());
                }
            }
            if let Some(m) = mcse_value {
                if m.degenerate {
                    flags.push("degenerate".into());
                }
            }
            rows.push(ConvergenceRow {
                variable: variable.clone(),
                statistic: stat.label(),
                rhat,
                ess: ess_value,
                mcse: mcse_value.map(|m| m.value),
                flags,
            });
        }
    }
    ConvergenceReport { rows, thresholds }
}
