//! Posterior/prior draw tensors, summary statistics, pushforward quantities,
//! and rank-based transforms. Tensors are immutable after construction; every
//! transform returns a new tensor, so downstream diagnostics stay pure.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::stats;

/// Draws indexed by (chain, iteration, variable). The universal currency of
/// all diagnostics in this crate.
#[derive(Debug, Clone)]
pub struct DrawsTensor {
    chain_count: usize,
    draws_per_chain: usize,
    variable_names: Vec<String>,
    /// Chain-major layout: value(c, s, v) = values[(c * S + s) * V + v].
    values: Vec<f64>,
    contains_nonfinite: bool,
}

impl DrawsTensor {
    /// Build a tensor from a flat chain-major buffer. Non-finite values are
    /// detected here and flagged rather than dropped; diagnostics reject
    /// flagged tensors.
    pub fn new(
        chain_count: usize,
        draws_per_chain: usize,
        variable_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if chain_count == 0 || draws_per_chain == 0 {
            return Err(Error::invalid("chain_count and draws_per_chain must be >= 1"));
        }
        if variable_names.is_empty() {
            return Err(Error::invalid("at least one variable required"));
        }
        for (i, a) in variable_names.iter().enumerate() {
            if variable_names[i + 1..].contains(a) {
                return Err(Error::invalid(format!("duplicate variable name `{a}`")));
            }
        }
        let expected = chain_count * draws_per_chain * variable_names.len();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        let contains_nonfinite = values.iter().any(|v| !v.is_finite());
        Ok(Self {
            chain_count,
            draws_per_chain,
            variable_names,
            values,
            contains_nonfinite,
        })
    }

    /// Single-variable tensor from per-chain vectors of equal length.
    pub fn from_chains(name: &str, chains: &[Vec<f64>]) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::invalid("at least one chain required"));
        }
        let len = chains[0].len();
        if chains.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch("chains differ in length".into()));
        }
        let values: Vec<f64> = chains.iter().flatten().copied().collect();
        Self::new(chains.len(), len, vec![name.to_string()], values)
    }

    pub fn chain_count(&self) -> usize {
        self.chain_count
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws_per_chain
    }

    /// Total pooled draw count across chains.
    pub fn total_draws(&self) -> usize {
        self.chain_count * self.draws_per_chain
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn contains_nonfinite(&self) -> bool {
        self.contains_nonfinite
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variable_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    #[inline]
    pub fn value(&self, chain: usize, draw: usize, variable: usize) -> f64 {
        self.values[(chain * self.draws_per_chain + draw) * self.variable_names.len() + variable]
    }

    /// Full parameter vector at (chain, draw), in variable order.
    pub fn parameter_vector(&self, chain: usize, draw: usize) -> &[f64] {
        let v = self.variable_names.len();
        let start = (chain * self.draws_per_chain + draw) * v;
        &self.values[start..start + v]
    }

    /// All draws of one variable pooled across chains, chain-major order.
    pub fn pooled(&self, name: &str) -> Result<Vec<f64>> {
        let vi = self.variable_index(name)?;
        let mut out = Vec::with_capacity(self.total_draws());
        for c in 0..self.chain_count {
            for s in 0..self.draws_per_chain {
                out.push(self.value(c, s, vi));
            }
        }
        Ok(out)
    }

    /// One chain of one variable.
    pub fn chain(&self, chain: usize, name: &str) -> Result<Vec<f64>> {
        let vi = self.variable_index(name)?;
        Ok((0..self.draws_per_chain)
            .map(|s| self.value(chain, s, vi))
            .collect())
    }

    fn reject_nonfinite(&self) -> Result<()> {
        if self.contains_nonfinite {
            Err(Error::NonFiniteDraws)
        } else {
            Ok(())
        }
    }
}

/// A posterior summary functional T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SummaryStatistic {
    Mean,
    Sd,
    Quantile(f64),
    ProbabilityBelow(f64),
}

impl SummaryStatistic {
    pub fn quantile(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "quantile probability must lie strictly inside (0,1), got {p}"
            )));
        }
        Ok(SummaryStatistic::Quantile(p))
    }

    pub fn label(&self) -> String {
        match self {
            SummaryStatistic::Mean => "mean".into(),
            SummaryStatistic::Sd => "sd".into(),
            SummaryStatistic::Quantile(p) => format!("q{:02.0}", p * 100.0),
            SummaryStatistic::ProbabilityBelow(t) => format!("p_below_{t}"),
        }
    }
}

impl fmt::Display for SummaryStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A deterministic scalar function of the full parameter vector.
#[derive(Clone)]
pub struct Pushforward {
    pub name: String,
    map: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Pushforward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pushforward").field("name", &self.name).finish()
    }
}

impl Pushforward {
    pub fn new(name: &str, map: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            map: Arc::new(map),
        }
    }

    /// Identity pushforward of a single variable by position.
    pub fn variable(name: &str, index: usize) -> Self {
        Self::new(name, move |theta| theta[index])
    }

    pub fn apply(&self, theta: &[f64]) -> f64 {
        (self.map)(theta)
    }
}

/// Pooled summary of one variable. Mean and sd pool draws across all chains;
/// sd uses the (n-1) denominator; quantiles interpolate order statistics.
pub fn summarize(draws: &DrawsTensor, variable: &str, stat: SummaryStatistic) -> Result<f64> {
    draws.reject_nonfinite()?;
    let pooled = draws.pooled(variable)?;
    let uniform = vec![1.0 / pooled.len() as f64; pooled.len()];
    summarize_values_weighted(&pooled, &uniform, stat)
}

/// Weighted summary sharing the code path of `summarize`; uniform weights
/// reproduce the unweighted value bit for bit.
pub fn summarize_weighted(
    draws: &DrawsTensor,
    variable: &str,
    stat: SummaryStatistic,
    weights: &[f64],
) -> Result<f64> {
    draws.reject_nonfinite()?;
    let pooled = draws.pooled(variable)?;
    if weights.len() != pooled.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} draws",
            weights.len(),
            pooled.len()
        )));
    }
    summarize_values_weighted(&pooled, weights, stat)
}

pub(crate) fn summarize_values_weighted(
    values: &[f64],
    weights: &[f64],
    stat: SummaryStatistic,
) -> Result<f64> {
    match stat {
        SummaryStatistic::Mean => Ok(stats::weighted_mean(values, weights)),
        SummaryStatistic::Sd => {
            if values.len() < 2 {
                return Err(Error::degenerate("sd of a single draw"));
            }
            Ok(stats::weighted_variance(values, weights).max(0.0).sqrt())
        }
        SummaryStatistic::Quantile(p) => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid("quantile probability outside (0,1)"));
            }
            Ok(stats::weighted_quantile(values, weights, p))
        }
        SummaryStatistic::ProbabilityBelow(t) => Ok(values
            .iter()
            .zip(weights)
            .filter(|(x, _)| **x <= t)
            .map(|(_, w)| w)
            .sum()),
    }
}

/// Apply a pushforward to every draw, yielding a one-variable tensor of the
/// same (chain, draw) shape.
pub fn pushforward_draws(draws: &DrawsTensor, psi: &Pushforward) -> Result<DrawsTensor> {
    let mut values = Vec::with_capacity(draws.total_draws());
    for c in 0..draws.chain_count {
        for s in 0..draws.draws_per_chain {
            let y = psi.apply(draws.parameter_vector(c, s));
            if !y.is_finite() {
                return Err(Error::numerical(format!(
                    "pushforward `{}` non-finite at chain {} draw {}",
                    psi.name,
                    c + 1,
                    s + 1
                )));
            }
            values.push(y);
        }
    }
    DrawsTensor::new(
        draws.chain_count,
        draws.draws_per_chain,
        vec![psi.name.clone()],
        values,
    )
}

/// Average ranks (1-based) of `values`, ties averaged.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged over the tie run
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Replace pooled draws of one variable by normal scores
/// `Phi^-1((rank - 3/8) / (n + 1/4))`, ranks pooled across chains with
/// average ranks for ties. Chain and draw structure is preserved.
pub fn rank_normalize(draws: &DrawsTensor, variable: &str) -> Result<DrawsTensor> {
    draws.reject_nonfinite()?;
    let pooled = draws.pooled(variable)?;
    let first = pooled[0];
    if pooled.iter().all(|v| *v == first) {
        return Err(Error::degenerate("all draws identical; rank normalization undefined"));
    }
    let n = pooled.len() as f64;
    let scores: Vec<f64> = average_ranks(&pooled)
        .into_iter()
        .map(|r| stats::normal_inverse_cdf((r - 0.375) / (n + 0.25)))
        .collect();
    DrawsTensor::new(
        draws.chain_count,
        draws.draws_per_chain,
        vec![variable.to_string()],
        scores,
    )
}

/// Read draws from CSV with header `chain,draw,<var1>,...,<varK>`.
/// Chain and draw indices are 1-based, rows may appear in any order, and each
/// (chain, draw) pair must occur exactly once over a full rectangle.
pub fn read_draws_csv<R: Read>(reader: R, path: &str) -> Result<DrawsTensor> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |message: String| Error::Parse {
        path: path.to_string(),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .clone();
    if headers.len() < 3 || &headers[0] != "chain" || &headers[1] != "draw" {
        return Err(parse_err(
            "expected header `chain,draw,<var1>,...`".to_string(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut max_chain = 0usize;
    let mut max_draw = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != names.len() + 2 {
            return Err(parse_err(format!("row {}: wrong field count", line + 2)));
        }
        let chain: usize = record[0]
            .parse()
            .map_err(|_| parse_err(format!("row {}: bad chain index", line + 2)))?;
        let draw: usize = record[1]
            .parse()
            .map_err(|_| parse_err(format!("row {}: bad draw index", line + 2)))?;
        if chain == 0 || draw == 0 {
            return Err(parse_err(format!("row {}: indices are 1-based", line + 2)));
        }
        let vals: Vec<f64> = record
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(format!("row {}: bad value `{f}`", line + 2)))
            })
            .collect::<Result<_>>()?;
        max_chain = max_chain.max(chain);
        max_draw = max_draw.max(draw);
        rows.push((chain, draw, vals));
    }
    if rows.is_empty() {
        return Err(parse_err("no draws".to_string()));
    }
    let k = names.len();
    let mut values = vec![f64::NAN; max_chain * max_draw * k];
    let mut seen = vec![false; max_chain * max_draw];
    for (chain, draw, vals) in rows {
        let cell = (chain - 1) * max_draw + (draw - 1);
        if seen[cell] {
            return Err(parse_err(format!(
                "duplicate (chain,draw) = ({chain},{draw})"
            )));
        }
        seen[cell] = true;
        values[cell * k..cell * k + k].copy_from_slice(&vals);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(parse_err(format!(
            "missing (chain,draw) = ({},{}); every pair up to ({max_chain},{max_draw}) must occur exactly once",
            missing / max_draw + 1,
            missing % max_draw + 1
        )));
    }
    DrawsTensor::new(max_chain, max_draw, names, values)
}

/// Write draws in the CSV format consumed by `read_draws_csv`.
pub fn write_draws_csv<W: Write>(draws: &DrawsTensor, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(draws.variable_names.iter().cloned());
    wtr.write_record(&header)?;
    for c in 0..draws.chain_count {
        for s in 0..draws.draws_per_chain {
            let mut row = vec![(c + 1).to_string(), (s + 1).to_string()];
            for v in 0..draws.variable_names.len() {
                row.push(format!("{}", draws.value(c, s, v)));
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tensor_1d(values: &[f64]) -> DrawsTensor {
        DrawsTensor::from_chains("theta", &[values.to_vec()]).unwrap()
    }

    #[test]
    fn mean_of_small_set() {
        let d = tensor_1d(&[1.0, 2.0, 3.0]);
        assert_eq!(summarize(&d, "theta", SummaryStatistic::Mean).unwrap(), 2.0);
    }

    #[test]
    fn median_of_odd_set() {
        let d = tensor_1d(&[1.0, 2.0, 3.0]);
        let q = summarize(&d, "theta", SummaryStatistic::quantile(0.5).unwrap()).unwrap();
        assert_eq!(q, 2.0);
    }

    #[test]
    fn sd_of_constant_draws_is_zero() {
        let d = tensor_1d(&[4.2; 6]);
        assert_eq!(summarize(&d, "theta", SummaryStatistic::Sd).unwrap(), 0.0);
    }

    #[test]
    fn sd_of_single_draw_errors() {
        let d = tensor_1d(&[1.0]);
        assert!(summarize(&d, "theta", SummaryStatistic::Sd).is_err());
    }

    #[test]
    fn unknown_variable_errors() {
        let d = tensor_1d(&[1.0, 2.0]);
        assert!(matches!(
            summarize(&d, "beta", SummaryStatistic::Mean),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn nonfinite_draws_rejected() {
        let d = tensor_1d(&[1.0, f64::NAN]);
        assert!(d.contains_nonfinite());
        assert!(matches!(
            summarize(&d, "theta", SummaryStatistic::Mean),
            Err(Error::NonFiniteDraws)
        ));
    }

    #[test]
    fn pushforward_difference_of_constants() {
        let d = DrawsTensor::new(
            1,
            3,
            vec!["b1".into(), "b2".into()],
            vec![3.0, 1.0, 3.0, 1.0, 3.0, 1.0],
        )
        .unwrap();
        let psi = Pushforward::new("effect", |theta| theta[0] - theta[1]);
        let out = pushforward_draws(&d, &psi).unwrap();
        assert_eq!(out.pooled("effect").unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn pushforward_identity_returns_column() {
        let d = tensor_1d(&[-1.0, 0.0, 2.0]);
        let psi = Pushforward::variable("theta", 0);
        let out = pushforward_draws(&d, &psi).unwrap();
        assert_eq!(out.pooled("theta").unwrap(), d.pooled("theta").unwrap());
    }

    #[test]
    fn pushforward_square() {
        let d = tensor_1d(&[-1.0, 0.0, 2.0]);
        let psi = Pushforward::new("sq", |t| t[0] * t[0]);
        let out = pushforward_draws(&d, &psi).unwrap();
        assert_eq!(out.pooled("sq").unwrap(), vec![1.0, 0.0, 4.0]);
    }

    #[test]
    fn pushforward_nonfinite_errors() {
        let d = tensor_1d(&[0.0, 1.0]);
        let psi = Pushforward::new("inv", |t| 1.0 / t[0]);
        assert!(pushforward_draws(&d, &psi).is_err());
    }

    #[test]
    fn rank_normalize_symmetric_increasing() {
        let d = tensor_1d(&[10.0, 20.0, 30.0]);
        let out = rank_normalize(&d, "theta").unwrap();
        let v = out.pooled("theta").unwrap();
        assert!(v[0] < v[1] && v[1] < v[2]);
        assert_abs_diff_eq!(v[0], -v[2], epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_normalize_monotone_invariance() {
        let d = tensor_1d(&[0.3, -1.0, 2.5, 0.9]);
        let mapped = tensor_1d(&[0.3f64.exp(), (-1.0f64).exp(), 2.5f64.exp(), 0.9f64.exp()]);
        let a = rank_normalize(&d, "theta").unwrap().pooled("theta").unwrap();
        let b = rank_normalize(&mapped, "theta")
            .unwrap()
            .pooled("theta")
            .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_normalize_identical_errors() {
        let d = tensor_1d(&[5.0, 5.0]);
        assert!(rank_normalize(&d, "theta").is_err());
    }

    #[test]
    fn csv_round_trip_any_row_order() {
        let csv_text = "chain,draw,mu,sigma\n2,1,3.0,0.5\n1,2,2.0,0.4\n1,1,1.0,0.3\n2,2,4.0,0.6\n";
        let d = read_draws_csv(csv_text.as_bytes(), "inline").unwrap();
        assert_eq!(d.chain_count(), 2);
        assert_eq!(d.draws_per_chain(), 2);
        assert_eq!(d.value(0, 0, 0), 1.0);
        assert_eq!(d.value(1, 1, 1), 0.6);
        let mut buf = Vec::new();
        write_draws_csv(&d, &mut buf).unwrap();
        let d2 = read_draws_csv(buf.as_slice(), "inline").unwrap();
        assert_eq!(d2.pooled("mu").unwrap(), d.pooled("mu").unwrap());
    }

    #[test]
    fn csv_duplicate_cell_rejected() {
        let csv_text = "chain,draw,mu\n1,1,1.0\n1,1,2.0\n";
        assert!(read_draws_csv(csv_text.as_bytes(), "inline").is_err());
    }

    #[test]
    fn summarize_mean_invariant_to_chain_order() {
        let a = DrawsTensor::from_chains("x", &[vec![1.0, 2.0], vec![5.0, 7.0]]).unwrap();
        let b = DrawsTensor::from_chains("x", &[vec![5.0, 7.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(
            summarize(&a, "x", SummaryStatistic::Mean).unwrap(),
            summarize(&b, "x", SummaryStatistic::Mean).unwrap()
        );
    }

    #[test]
    fn probability_below_counts_at_or_under_threshold() {
        let d = tensor_1d(&[-1.0, 0.0, 1.0, 2.0]);
        let p = summarize(&d, "theta", SummaryStatistic::ProbabilityBelow(0.5)).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn finite_draws() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-1e6f64..1e6, 2..40)
        }

        proptest! {
            /// Permuting draws permutes pushforward output identically.
            #[test]
            fn pushforward_commutes_with_permutation(values in finite_draws()) {
                let d = tensor_1d(&values);
                let psi = Pushforward::new("sq", |t| t[0] * t[0]);
                let forward = pushforward_draws(&d, &psi).unwrap().pooled("sq").unwrap();
                let mut reversed = values.clone();
                reversed.reverse();
                let d_rev = tensor_1d(&reversed);
                let mut forward_rev =
                    pushforward_draws(&d_rev, &psi).unwrap().pooled("sq").unwrap();
                forward_rev.reverse();
                prop_assert_eq!(forward, forward_rev);
            }

            /// The pooled mean ignores draw order within the pooled set.
            #[test]
            fn mean_is_permutation_invariant(values in finite_draws()) {
                let d = tensor_1d(&values);
                let mut shuffled = values.clone();
                shuffled.rotate_left(values.len() / 2);
                let d2 = tensor_1d(&shuffled);
                let a = summarize(&d, "theta", SummaryStatistic::Mean).unwrap();
                let b = summarize(&d2, "theta", SummaryStatistic::Mean).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }

            /// Rank normalization only sees the ordering of the input.
            #[test]
            fn rank_normalize_ignores_monotone_maps(values in finite_draws()) {
                prop_assume!(values.iter().any(|v| *v != values[0]));
                let d = tensor_1d(&values);
                // Power-of-two scaling is exact, so distinct values stay
                // distinct under the map.
                let mapped: Vec<f64> = values.iter().map(|v| v * 8.0).collect();
                let dm = tensor_1d(&mapped);
                let a = rank_normalize(&d, "theta").unwrap().pooled("theta").unwrap();
                let b = rank_normalize(&dm, "theta").unwrap().pooled("theta").unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
