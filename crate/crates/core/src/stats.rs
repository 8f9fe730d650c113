//! Shared numeric helpers: weighted summaries, log-sum-exp, tail probabilities.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Numerically stable log(sum(exp(x))).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log(sum(w * exp(x))) for nonnegative weights, max-shifted.
pub fn log_weighted_sum_exp(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - max).exp())
        .sum();
    max + sum.ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the (n-1) denominator.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Weighted mean with weights summing to one. The unweighted mean is the
/// uniform-weight special case so that reweighted and plain summaries share
/// one code path bit for bit.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(x, w)| w * x).sum()
}

/// Weighted variance with the frequency-style small-sample correction
/// `1 / (1 - sum(w^2))`, which reduces to the (n-1) denominator under
/// uniform weights.
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> f64 {
    let m = weighted_mean(values, weights);
    let raw: f64 = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - m) * (x - m))
        .sum();
    let w2: f64 = weights.iter().map(|w| w * w).sum();
    raw / (1.0 - w2)
}

/// Weighted quantile by linear interpolation of order statistics.
///
/// Sorted values x_(1) <= ... <= x_(n) get plotting positions
/// p_i = C_{i-1} / (W - w_(n)) with C_{i-1} the cumulative weight below x_(i);
/// under uniform weights this is exactly the (n-1)p + 1 interpolation rule.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    if values.len() == 1 {
        return values[0];
    }
    let total: f64 = weights.iter().sum();
    let denom = total - weights[idx[values.len() - 1]];
    if denom <= 0.0 {
        // All mass on the largest value.
        return values[idx[values.len() - 1]];
    }
    let mut below = 0.0;
    let mut prev_pos = 0.0;
    let mut prev_val = values[idx[0]];
    for &i in &idx {
        let pos = (below / denom).min(1.0);
        let val = values[i];
        if pos >= p {
            if pos == prev_pos {
                return val;
            }
            let t = (p - prev_pos) / (pos - prev_pos);
            return prev_val + t * (val - prev_val);
        }
        prev_pos = pos;
        prev_val = val;
        below += weights[i];
    }
    values[idx[values.len() - 1]]
}

/// Quantile of unweighted data: linear interpolation of order statistics,
/// index h = (n-1)p + 1 on the sorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    let uniform = vec![1.0 / n as f64; n];
    weighted_quantile(values, &uniform, p)
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn normal_inverse_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Upper-tail probability of a chi-square distribution.
pub fn chi_squared_upper_tail(statistic: f64, dof: f64) -> Result<f64> {
    let dist = ChiSquared::new(dof)
        .map_err(|e| Error::invalid(format!("chi-square dof {dof}: {e}")))?;
    Ok(1.0 - dist.cdf(statistic))
}

/// Wilson score interval for a binomial proportion at the given confidence.
pub fn binomial_confidence_interval(successes: usize, trials: usize, confidence: f64) -> (f64, f64) {
    let n = trials as f64;
    let p_hat = successes as f64 / n;
    let z = normal_inverse_cdf(0.5 + confidence / 2.0);
    let z2 = z * z;
    let center = (p_hat + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * ((p_hat * (1.0 - p_hat) + z2 / (4.0 * n)) / n).sqrt() / (1.0 + z2 / n);
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Shannon entropy of a normalized weight vector, in nats. `exp` of this is
/// the effective number of contributing draws.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| w * w.ln())
        .sum::<f64>()
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0f64, 0.0, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum();
        assert_abs_diff_eq!(log_sum_exp(&xs), direct.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_all_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn quantile_median_of_three() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn quantile_interpolates() {
        // h = (4-1)*0.25 + 1 = 1.75 -> 1 + 0.75*(2-1)
        assert_abs_diff_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn weighted_matches_uniform_exactly() {
        let xs = [0.3, -1.2, 4.0, 2.2, 0.9];
        let w = vec![1.0 / 5.0; 5];
        assert_eq!(weighted_quantile(&xs, &w, 0.3), quantile(&xs, 0.3));
        let sv = sample_variance(&xs);
        assert_abs_diff_eq!(weighted_variance(&xs, &w), sv, epsilon = 1e-14);
    }

    #[test]
    fn quantile_negation_symmetry() {
        let xs = [0.1, 0.7, -2.0, 3.5];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(quantile(&xs, 0.5), -quantile(&neg, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn wilson_interval_contains_point_estimate() {
        let (lo, hi) = binomial_confidence_interval(45, 100, 0.95);
        assert!(lo < 0.45 && 0.45 < hi);
        assert!(lo > 0.3 && hi < 0.6);
    }

    #[test]
    fn ks_statistic_zero_for_exact_grid() {
        // Sample at the midpoints of a uniform grid has D = 1/(2n).
        let n = 10;
        let sample: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert_abs_diff_eq!(d, 0.05, epsilon = 1e-12);
    }
}
