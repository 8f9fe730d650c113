//! Fairness diagnostics: expected risk scores and threshold decisions,
//! anti-classification sweeps, demographic parity, differential item
//! functioning, and entropy parity of person posteriors.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::draws::DrawsTensor;
use crate::error::{Error, Result};

/// Partition of decision inputs into protected and unprotected attribute
/// positions.
#[derive(Debug, Clone)]
pub struct AttributeSchema {
    pub protected: Vec<usize>,
    pub unprotected: Vec<usize>,
}

impl AttributeSchema {
    pub fn new(protected: Vec<usize>, unprotected: Vec<usize>) -> Result<Self> {
        for p in &protected {
            if unprotected.contains(p) {
                return Err(Error::invalid(format!(
                    "attribute {p} is both protected and unprotected"
                )));
            }
        }
        let mut all: Vec<usize> = protected.iter().chain(&unprotected).copied().collect();
        all.sort_unstable();
        all.dedup();
        if all.len() != protected.len() + unprotected.len() {
            return Err(Error::invalid("duplicate attribute indices"));
        }
        if !all.iter().enumerate().all(|(i, v)| i == *v) {
            return Err(Error::invalid(
                "protected and unprotected indices must cover 0..n contiguously",
            ));
        }
        Ok(Self {
            protected,
            unprotected,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.protected.len() + self.unprotected.len()
    }
}

/// Conditional risk score r(x, theta) plus the decision threshold.
#[derive(Clone)]
pub struct DecisionRule {
    risk: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    pub tau: f64,
}

impl std::fmt::Debug for DecisionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecisionRule").field("tau", &self.tau).finish()
    }
}

impl DecisionRule {
    pub fn new(tau: f64, risk: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            risk: Arc::new(risk),
            tau,
        }
    }

    pub fn conditional_risk(&self, x: &[f64], theta: &[f64]) -> f64 {
        (self.risk)(x, theta)
    }
}

/// Posterior expectation of the conditional risk over all draws.
pub fn expected_risk(
    draws: &DrawsTensor,
    x: &[f64],
    conditional_risk: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    let mut acc = 0.0;
    let total = draws.total_draws();
    for c in 0..draws.chain_count() {
        for s in 0..draws.draws_per_chain() {
            let r = conditional_risk(x, draws.parameter_vector(c, s));
            if !r.is_finite() {
                return Err(Error::numerical("non-finite conditional risk"));
            }
            acc += r;
        }
    }
    Ok(acc / total as f64)
}

/// Binary decision: 1 iff risk strictly exceeds the threshold.
pub fn decide(risk: f64, tau: f64) -> Result<u8> {
    if !risk.is_finite() || !tau.is_finite() {
        return Err(Error::invalid("risk and threshold must be finite"));
    }
    Ok(if risk > tau { 1 } else { 0 })
}

#[derive(Debug, Clone)]
pub struct Counterexample {
    pub member_index: usize,
    /// Two protected-value assignments that flip the decision.
    pub assignment_a: Vec<f64>,
    pub assignment_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AntiClassificationResult {
    pub holds: bool,
    pub counterexamples: Vec<Counterexample>,
    /// True when the population was empty and the check passed vacuously.
    pub vacuous: bool,
}

/// Sweep protected attribute values over a grid while holding unprotected
/// attributes fixed; the rule passes iff no member's decision ever changes.
pub fn anti_classification_check(
    rule: &DecisionRule,
    draws: &DrawsTensor,
    population: &[Vec<f64>],
    schema: &AttributeSchema,
    protected_value_grid: &[Vec<f64>],
) -> Result<AntiClassificationResult> {
    if protected_value_grid.len() != schema.protected.len()
        || protected_value_grid.iter().any(|g| g.is_empty())
    {
        return Err(Error::invalid(
            "need one non-empty value grid per protected attribute",
        ));
    }
    if population.is_empty() {
        return Ok(AntiClassificationResult {
            holds: true,
            counterexamples: Vec::new(),
            vacuous: true,
        });
    }
    let mut counterexamples = Vec::new();
    for (idx, member) in population.iter().enumerate() {
        if member.len() != schema.n_attributes() {
            return Err(Error::ShapeMismatch(format!(
                "member {idx} has {} attributes, schema expects {}",
                member.len(),
                schema.n_attributes()
            )));
        }
        let mut assignments = vec![Vec::new()];
        for grid in protected_value_grid {
            let mut next = Vec::new();
            for partial in &assignments {
                for v in grid {
                    let mut a: Vec<f64> = partial.clone();
                    a.push(*v);
                    next.push(a);
                }
            }
            assignments = next;
        }
        let mut first: Option<(u8, Vec<f64>)> = None;
        for assignment in assignments {
            let mut x = member.clone();
            for (slot, value) in schema.protected.iter().zip(&assignment) {
                x[*slot] = *value;
            }
            let r = expected_risk(draws, &x, |x, theta| rule.conditional_risk(x, theta))?;
            let d = decide(r, rule.tau)?;
            match &first {
                None => first = Some((d, assignment)),
                Some((d0, a0)) => {
                    if d != *d0 {
                        counterexamples.push(Counterexample {
                            member_index: idx,
                            assignment_a: a0.clone(),
                            assignment_b: assignment,
                        });
                        break;
                    }
                }
            }
        }
    }
    Ok(AntiClassificationResult {
        holds: counterexamples.is_empty(),
        counterexamples,
        vacuous: false,
    })
}

#[derive(Debug, Clone)]
pub struct ParityResult {
    /// Largest pairwise absolute difference of positive decision rates.
    pub gap: f64,
    pub per_group_rates: Vec<(String, f64)>,
}

/// Demographic parity gap over protected groups.
pub fn demographic_parity_gap(
    decisions: &[u8],
    protected_labels: &[String],
) -> Result<ParityResult> {
    if decisions.len() != protected_labels.len() {
        return Err(Error::ShapeMismatch("one label per decision required".into()));
    }
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (d, g) in decisions.iter().zip(protected_labels) {
        let e = groups.entry(g.as_str()).or_insert((0, 0));
        e.0 += usize::from(*d > 0);
        e.1 += 1;
    }
    if groups.len() < 2 {
        return Err(Error::invalid("need at least 2 protected groups"));
    }
    let rates: Vec<(String, f64)> = groups
        .iter()
        .map(|(g, (pos, n))| (g.to_string(), *pos as f64 / *n as f64))
        .collect();
    let max = rates.iter().map(|(_, r)| *r).fold(f64::MIN, f64::max);
    let min = rates.iter().map(|(_, r)| *r).fold(f64::MAX, f64::min);
    Ok(ParityResult {
        gap: max - min,
        per_group_rates: rates,
    })
}

fn symmetric_kl_gaussian(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    let kl = |p: (f64, f64), q: (f64, f64)| -> f64 {
        (q.1 / p.1).ln() + (p.1 * p.1 + (p.0 - q.0) * (p.0 - q.0)) / (2.0 * q.1 * q.1) - 0.5
    };
    if a.1 <= 0.0 || b.1 <= 0.0 {
        return Err(Error::invalid("group posterior sds must be positive"));
    }
    Ok(kl(a, b) + kl(b, a))
}

#[derive(Debug, Clone)]
pub struct DifResult {
    pub max_divergence: f64,
    /// Group pairs whose symmetric KL exceeds the threshold.
    pub flagged_pairs: Vec<(String, String, f64)>,
}

/// Differential item functioning: symmetric KL between Gaussian-approximated
/// group posteriors of an item parameter.
pub fn dif_check(
    group_posteriors: &[(String, (f64, f64))],
    threshold: f64,
) -> Result<DifResult> {
    if group_posteriors.len() < 2 {
        return Err(Error::invalid("need at least 2 groups"));
    }
    let mut max_divergence = 0.0f64;
    let mut flagged_pairs = Vec::new();
    for i in 0..group_posteriors.len() {
        for j in (i + 1)..group_posteriors.len() {
            let (ga, pa) = &group_posteriors[i];
            let (gb, pb) = &group_posteriors[j];
            let d = symmetric_kl_gaussian(*pa, *pb)?;
            max_divergence = max_divergence.max(d);
            if d > threshold {
                flagged_pairs.push((ga.clone(), gb.clone(), d));
            }
        }
    }
    Ok(DifResult {
        max_divergence,
        flagged_pairs,
    })
}

#[derive(Debug, Clone)]
pub struct EntropyParityResult {
    pub max_abs_entropy_gap: f64,
    pub holds: bool,
}

/// Gaussian differential entropy 0.5 log(2 pi e sd^2) per person; parity
/// holds iff the largest pairwise gap stays within tolerance.
pub fn entropy_parity(posterior_sds: &[(String, f64)], tolerance: f64) -> Result<EntropyParityResult> {
    if posterior_sds.iter().any(|(_, sd)| *sd <= 0.0) {
        return Err(Error::invalid("posterior sds must be positive"));
    }
    if posterior_sds.is_empty() {
        return Err(Error::invalid("no persons given"));
    }
    let entropies: Vec<f64> = posterior_sds
        .iter()
        .map(|(_, sd)| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sd * sd).ln())
        .collect();
    let max = entropies.iter().cloned().fold(f64::MIN, f64::max);
    let min = entropies.iter().cloned().fold(f64::MAX, f64::min);
    let gap = max - min;
    Ok(EntropyParityResult {
        max_abs_entropy_gap: gap,
        holds: gap <= tolerance,
    })
}
