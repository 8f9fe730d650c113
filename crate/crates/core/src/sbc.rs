//! Simulation-based calibration: rank statistics of ground truths within
//! their own posteriors, uniformity tests, ECDF difference envelopes, and
//! the data-averaged-posterior self-consistency check.

use std::io::Write;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::convergence::{ess, Transform};
use crate::draws::{pushforward_draws, Pushforward};
use crate::error::{Error, Result};
use crate::models::{derive_rng, Model, PosteriorApproximator};
use crate::recoverability::{mmd_permutation_test, splitmix, Bandwidth, FitPolicy};
use crate::stats;

/// Ranks of M ground truths within L-draw posteriors; each rank lies in
/// {0, ..., L}.
#[derive(Debug, Clone)]
pub struct SbcResult {
    pub m: usize,
    pub l: usize,
    pub ranks: Vec<u32>,
    pub psi_name: String,
    /// Instances dropped under the skip-and-flag fit policy.
    pub skipped: usize,
}

/// Tie handling for the rank statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreaking {
    /// Count ties with the literal `truth <= draw` indicator.
    DeterministicLte,
    /// Count each tied draw with an independent fair coin; restores rank
    /// uniformity for discrete posteriors.
    Randomized,
}

/// Number of posterior draws at or above the truth.
pub fn rank_statistic(truth: f64, draws: &[f64]) -> Result<u32> {
    rank_statistic_with_ties(truth, draws, TieBreaking::DeterministicLte, None)
}

pub fn rank_statistic_with_ties(
    truth: f64,
    draws: &[f64],
    ties: TieBreaking,
    rng: Option<&mut dyn RngCore>,
) -> Result<u32> {
    if draws.is_empty() {
        return Err(Error::invalid("empty draw vector"));
    }
    if !truth.is_finite() || draws.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteDraws);
    }
    let above = draws.iter().filter(|d| truth < **d).count() as u32;
    let tied = draws.iter().filter(|d| truth == **d).count() as u32;
    match ties {
        TieBreaking::DeterministicLte => Ok(above + tied),
        TieBreaking::Randomized => {
            let rng = rng.ok_or_else(|| Error::invalid("randomized ties need an rng"))?;
            let mut extra = 0;
            for _ in 0..tied {
                if rng.random::<bool>() {
                    extra += 1;
                }
            }
            Ok(above + extra)
        }
    }
}

/// Run simulation-based calibration: for each of M instances draw a truth
/// from the prior, simulate data, fit, thin to L approximately independent
/// draws, and rank the truth within them. Deterministic given the master
/// seed regardless of parallel scheduling.
pub fn run_sbc(
    model: &dyn Model,
    approximator: &dyn PosteriorApproximator,
    psi: &Pushforward,
    m_instances: usize,
    l_draws: usize,
    thin: usize,
    seed: u64,
    policy: FitPolicy,
) -> Result<SbcResult> {
    if m_instances < 20 {
        return Err(Error::invalid("SBC needs at least 20 simulations"));
    }
    if l_draws < 9 {
        return Err(Error::invalid("SBC needs at least 9 posterior draws per fit"));
    }
    let outcomes: Vec<Result<Option<u32>>> = (0..m_instances)
        .into_par_iter()
        .map(|m| {
            let mut rng = derive_rng(seed, m as u64, "sbc_truth");
            let theta = model.prior_sample(&mut rng);
            let truth = psi.apply(&theta);
            let data = model.simulate(&theta, &mut rng);
            let fit = match approximator.fit(model, &data, splitmix(seed, m as u64)) {
                Ok(f) => f,
                Err(e) => {
                    return match policy {
                        FitPolicy::SkipAndFlag => Ok(None),
                        FitPolicy::Abort => Err(e),
                    }
                }
            };
            let available = fit.draws.total_draws();
            let stride = if thin == 0 {
                // Thin by the autocorrelation ratio, bounded by the budget.
                let max_stride = (available / l_draws).max(1);
                match ess(&fit.draws, &psi.name_or_first(&fit.draws), Transform::Identity) {
                    Ok(e) if e > 0.0 => {
                        (((available as f64) / e).ceil() as usize).clamp(1, max_stride)
                    }
                    _ => 1,
                }
            } else {
                thin
            };
            if available < l_draws * stride {
                return Err(Error::invalid(format!(
                    "draw budget {available} below L*thin = {}",
                    l_draws * stride
                )));
            }
            let pf = pushforward_draws(&fit.draws, psi)?;
            let pooled = pf.pooled(&psi.name)?;
            let thinned: Vec<f64> = (0..l_draws).map(|i| pooled[i * stride]).collect();
            let mut tie_rng = derive_rng(seed, m as u64, "sbc_ties");
            rank_statistic_with_ties(truth, &thinned, TieBreaking::Randomized, Some(&mut tie_rng))
                .map(Some)
        })
        .collect();
    let mut ranks = Vec::with_capacity(m_instances);
    let mut skipped = 0;
    for o in outcomes {
        match o? {
            Some(r) => ranks.push(r),
            None => skipped += 1,
        }
    }
    if ranks.is_empty() {
        return Err(Error::FitFailure("every SBC instance was skipped".into()));
    }
    Ok(SbcResult {
        m: ranks.len(),
        l: l_draws,
        ranks,
        psi_name: psi.name.clone(),
        skipped,
    })
}

impl Pushforward {
    /// Variable the ESS-based thinning heuristic inspects; falls back to the
    /// first model parameter when the pushforward is not itself a variable.
    fn name_or_first(&self, draws: &crate::draws::DrawsTensor) -> String {
        if draws.variable_names().contains(&self.name) {
            self.name.clone()
        } else {
            draws.variable_names()[0].clone()
        }
    }
}

/// Pearson chi-square test of rank uniformity over equal-width bins.
pub fn uniformity_chisq(result: &SbcResult, n_bins: usize) -> Result<(f64, f64)> {
    if n_bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    if (result.l + 1) % n_bins != 0 {
        return Err(Error::invalid(format!(
            "L+1 = {} not divisible by {n_bins} bins",
            result.l + 1
        )));
    }
    let expected = result.ranks.len() as f64 / n_bins as f64;
    if expected < 5.0 {
        return Err(Error::invalid(format!(
            "expected count {expected:.1} per bin is below 5"
        )));
    }
    let per_bin = (result.l + 1) / n_bins;
    let mut observed = vec![0usize; n_bins];
    for r in &result.ranks {
        observed[*r as usize / per_bin] += 1;
    }
    let statistic: f64 = observed
        .iter()
        .map(|o| {
            let d = *o as f64 - expected;
            d * d / expected
        })
        .sum();
    let p = stats::chi_squared_upper_tail(statistic, (n_bins - 1) as f64)?;
    Ok((statistic, p))
}

/// ECDF difference curve with a simultaneous simulation-based envelope.
#[derive(Debug, Clone)]
pub struct EcdfEnvelope {
    /// Evaluation points k / (L+1), k = 1..=L+1.
    pub quantiles: Vec<f64>,
    /// ECDF(k) - k/(L+1) at each evaluation point.
    pub diff: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub violated: bool,
}

fn ecdf_diff_curve(ranks: &[u32], l: usize) -> Vec<f64> {
    let m = ranks.len() as f64;
    let mut counts = vec![0usize; l + 1];
    for r in ranks {
        counts[*r as usize] += 1;
    }
    let mut cum = 0usize;
    (1..=l + 1)
        .map(|k| {
            cum += counts[k - 1];
            cum as f64 / m - k as f64 / (l + 1) as f64
        })
        .collect()
}

/// Simultaneous gamma-level envelope for the rank ECDF difference, estimated
/// by simulating `n_null` uniform rank sets and taking the gamma quantile of
/// their sup-norms.
pub fn ecdf_diff_envelope(
    result: &SbcResult,
    gamma: f64,
    n_null: usize,
    seed: u64,
) -> Result<EcdfEnvelope> {
    if result.ranks.len() < 50 {
        return Err(Error::invalid("need at least 50 simulations for the envelope"));
    }
    if n_null < 999 {
        return Err(Error::invalid("need at least 999 null simulations"));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0,1)"));
    }
    let l = result.l;
    let m = result.ranks.len();
    let diff = ecdf_diff_curve(&result.ranks, l);
    let mut sups: Vec<f64> = (0..n_null)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, i as u64, "ecdf_null");
            let ranks: Vec<u32> = (0..m).map(|_| rng.random_range(0..=l as u32)).collect();
            ecdf_diff_curve(&ranks, l)
                .into_iter()
                .fold(0.0f64, |acc, d| acc.max(d.abs()))
        })
        .collect();
    sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((gamma * n_null as f64).ceil() as usize).clamp(1, n_null) - 1;
    let c = sups[idx];
    let quantiles: Vec<f64> = (1..=l + 1).map(|k| k as f64 / (l + 1) as f64).collect();
    let violated = diff.iter().any(|d| d.abs() > c);
    Ok(EcdfEnvelope {
        quantiles,
        lower: vec![-c; l + 1],
        upper: vec![c; l + 1],
        diff,
        violated,
    })
}

/// Write `m,rank` rows.
pub fn write_ranks_csv<W: Write>(result: &SbcResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "rank"])?;
    for (m, r) in result.ranks.iter().enumerate() {
        w.write_record([(m + 1).to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the plot-ready `quantile,diff,lower,upper` curve.
pub fn write_ecdf_csv<W: Write>(envelope: &EcdfEnvelope, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantile", "diff", "lower", "upper"])?;
    for i in 0..envelope.quantiles.len() {
        w.write_record([
            format!("{}", envelope.quantiles[i]),
            format!("{}", envelope.diff[i]),
            format!("{}", envelope.lower[i]),
            format!("{}", envelope.upper[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Self-consistency of the data-averaged posterior: pooled single posterior
/// draws across M fits should be indistinguishable from fresh prior draws.
/// Returns (MMD^2, permutation null rank).
pub fn data_averaged_posterior_check(
    model: &dyn Model,
    approximator: &dyn PosteriorApproximator,
    m_instances: usize,
    draws_per_fit: usize,
    seed: u64,
    policy: FitPolicy,
) -> Result<(f64, f64)> {
    if m_instances < 100 {
        return Err(Error::invalid("need at least 100 instances"));
    }
    let posterior_draws: Vec<Result<Option<Vec<f64>>>> = (0..m_instances)
        .into_par_iter()
        .map(|m| {
            let mut rng = derive_rng(seed, m as u64, "dap_truth");
            let theta = model.prior_sample(&mut rng);
            let data = model.simulate(&theta, &mut rng);
            let fit = match approximator.fit(model, &data, splitmix(seed, m as u64)) {
                Ok(f) => f,
                Err(e) => {
                    return match policy {
                        FitPolicy::SkipAndFlag => Ok(None),
                        FitPolicy::Abort => Err(e),
                    }
                }
            };
            let mut pick = derive_rng(seed, m as u64, "dap_pick");
            let c = pick.random_range(0..fit.draws.chain_count());
            let s = pick.random_range(0..fit.draws.draws_per_chain());
            if draws_per_fit == 0 {
                return Err(Error::invalid("draws_per_fit must be positive"));
            }
            Ok(Some(fit.draws.parameter_vector(c, s).to_vec()))
        })
        .collect();
    let mut pooled = Vec::new();
    for d in posterior_draws {
        if let Some(v) = d? {
            pooled.push(v);
        }
    }
    if pooled.len() < 100 {
        return Err(Error::FitFailure("too many skipped fits".into()));
    }
    let mut prior_rng = derive_rng(seed, u64::MAX, "dap_prior");
    let prior: Vec<Vec<f64>> = (0..pooled.len())
        .map(|_| model.prior_sample(&mut prior_rng))
        .collect();
    let mut perm_rng = derive_rng(seed, u64::MAX, "dap_perm");
    mmd_permutation_test(
        &pooled,
        &prior,
        Bandwidth::MedianHeuristic,
        199,
        &mut perm_rng,
    )
}
