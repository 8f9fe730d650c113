//! Robustness diagnostics: power-scaling perturbations by importance
//! reweighting, sensitivity distances and derivatives, practical-sensitivity
//! thresholds, and Lyapunov exponents for the logistic map.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::draws::{summarize_weighted, DrawsTensor, SummaryStatistic};
use crate::error::{Error, Result};
use crate::stats;

/// Which joint-model component the power perturbation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Prior,
    Likelihood,
}

/// Distance between base and perturbed summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    AbsoluteDifference,
    /// Absolute difference divided by the base posterior sd of the quantity.
    StandardizedDifference,
}

/// Power-scaling setup: component, base exponent, exponent grid, summary,
/// distance, and the practical-sensitivity threshold.
#[derive(Debug, Clone)]
pub struct SensitivitySpec {
    pub component: Component,
    pub variable: String,
    pub alpha0: f64,
    pub alphas: Vec<f64>,
    pub statistic: SummaryStatistic,
    pub distance: DistanceKind,
    pub delta: f64,
}

impl SensitivitySpec {
    pub fn new(
        component: Component,
        variable: &str,
        alpha0: f64,
        mut alphas: Vec<f64>,
        statistic: SummaryStatistic,
        distance: DistanceKind,
        delta: f64,
    ) -> Result<Self> {
        if alpha0 <= 0.0 || alphas.iter().any(|a| *a <= 0.0) {
            return Err(Error::invalid("power-scaling exponents must be positive"));
        }
        if delta < 0.0 {
            return Err(Error::invalid("delta must be nonnegative"));
        }
        if !alphas.iter().any(|a| *a == alpha0) {
            alphas.push(alpha0);
        }
        alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            component,
            variable: variable.to_string(),
            alpha0,
            alphas,
            statistic,
            distance,
            delta,
        })
    }
}

/// Per-draw log densities of the base fit, aligned with the pooled draws.
#[derive(Debug, Clone)]
pub struct PowerScaleContext {
    pub log_prior: Vec<f64>,
    pub log_lik_joint: Vec<f64>,
}

impl PowerScaleContext {
    pub fn component(&self, component: Component) -> &[f64] {
        match component {
            Component::Prior => &self.log_prior,
            Component::Likelihood => &self.log_lik_joint,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerScaleWeights {
    pub weights: Vec<f64>,
    /// exp of the weight entropy: the effective number of draws.
    pub effective_draws: f64,
}

/// Normalized importance weights exp((alpha - 1) * log component density).
/// At alpha = 1 the weights are exactly uniform.
pub fn power_scale_weights(
    log_prior: &[f64],
    log_lik_joint: &[f64],
    alpha: f64,
    component: Component,
) -> Result<PowerScaleWeights> {
    if alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    let target = match component {
        Component::Prior => log_prior,
        Component::Likelihood => log_lik_joint,
    };
    if target.is_empty() {
        return Err(Error::invalid("empty log-density vector"));
    }
    if target.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("log densities must be finite or -inf"));
    }
    let s = target.len();
    if alpha == 1.0 {
        return Ok(PowerScaleWeights {
            weights: vec![1.0 / s as f64; s],
            effective_draws: s as f64,
        });
    }
    let logw: Vec<f64> = target.iter().map(|v| (alpha - 1.0) * v).collect();
    let lse = stats::log_sum_exp(&logw);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(Error::numerical("all power-scaling weights underflow"));
    }
    let weights: Vec<f64> = logw.iter().map(|v| (v - lse).exp()).collect();
    let effective_draws = stats::weight_entropy(&weights).exp();
    Ok(PowerScaleWeights {
        weights,
        effective_draws,
    })
}

const MIN_EFFECTIVE_DRAWS: f64 = 5.0;

fn weighted_summary(
    draws: &DrawsTensor,
    ctx: &PowerScaleContext,
    spec: &SensitivitySpec,
    alpha: f64,
) -> Result<(f64, f64)> {
    let w = power_scale_weights(&ctx.log_prior, &ctx.log_lik_joint, alpha, spec.component)?;
    if w.effective_draws < MIN_EFFECTIVE_DRAWS {
        return Err(Error::degenerate(format!(
            "power-scaling weights at alpha={alpha} collapse to {:.2} effective draws",
            w.effective_draws
        )));
    }
    let value = summarize_weighted(draws, &spec.variable, spec.statistic, &w.weights)?;
    Ok((value, w.effective_draws))
}

fn apply_distance(draws: &DrawsTensor, spec: &SensitivitySpec, raw: f64) -> Result<f64> {
    match spec.distance {
        DistanceKind::AbsoluteDifference => Ok(raw.abs()),
        DistanceKind::StandardizedDifference => {
            // Scale by the unperturbed posterior sd, so the distance stays
            // symmetric in (alpha0, alpha1).
            let sd = crate::draws::summarize(draws, &spec.variable, SummaryStatistic::Sd)?;
            if sd <= 0.0 {
                return Err(Error::degenerate("zero base posterior sd"));
            }
            Ok(raw.abs() / sd)
        }
    }
}

/// Sensitivity distance f(T(alpha0), T(alpha1)) through reweighted
/// summaries; zero iff the weighted summaries coincide.
pub fn sensitivity_distance(
    draws: &DrawsTensor,
    ctx: &PowerScaleContext,
    spec: &SensitivitySpec,
    alpha1: f64,
) -> Result<f64> {
    let (t0, _) = weighted_summary(draws, ctx, spec, spec.alpha0)?;
    let (t1, _) = weighted_summary(draws, ctx, spec, alpha1)?;
    apply_distance(draws, spec, t1 - t0)
}

/// Central finite difference of the reweighted summary at alpha0, with the
/// configured distance applied to the derivative.
pub fn sensitivity_gradient(
    draws: &DrawsTensor,
    ctx: &PowerScaleContext,
    spec: &SensitivitySpec,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 || spec.alpha0 - h <= 0.0 {
        return Err(Error::invalid("step must keep alpha0 - h positive"));
    }
    let (plus, _) = weighted_summary(draws, ctx, spec, spec.alpha0 + h)?;
    let (minus, _) = weighted_summary(draws, ctx, spec, spec.alpha0 - h)?;
    apply_distance(draws, spec, (plus - minus) / (2.0 * h))
}

/// Strict threshold comparison Sen > delta.
pub fn is_practically_sensitive(sen: f64, delta: f64) -> Result<bool> {
    if sen < 0.0 || delta < 0.0 {
        return Err(Error::invalid("sensitivity and threshold must be nonnegative"));
    }
    Ok(sen > delta)
}

/// One row of the exported sensitivity curve.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityCurvePoint {
    pub alpha: f64,
    pub statistic_value: f64,
    pub weight_entropy: f64,
}

/// Evaluate the reweighted summary over the spec's alpha grid.
pub fn sensitivity_curve(
    draws: &DrawsTensor,
    ctx: &PowerScaleContext,
    spec: &SensitivitySpec,
) -> Result<Vec<SensitivityCurvePoint>> {
    spec.alphas
        .iter()
        .map(|alpha| {
            let (value, eff) = weighted_summary(draws, ctx, spec, *alpha)?;
            Ok(SensitivityCurvePoint {
                alpha: *alpha,
                statistic_value: value,
                weight_entropy: eff.ln(),
            })
        })
        .collect()
}

/// Write `alpha,statistic_value,weight_entropy` rows.
pub fn write_sensitivity_csv<W: Write>(points: &[SensitivityCurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["alpha", "statistic_value", "weight_entropy"])?;
    for p in points {
        w.write_record([
            format!("{}", p.alpha),
            format!("{}", p.statistic_value),
            format!("{}", p.weight_entropy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest pairwise absolute difference; the rerun harness for approximator
/// hyperparameter sensitivity applies this to summaries collected across a
/// hyperparameter grid (no reweighting shortcut exists there).
pub fn max_pairwise_abs_difference(values: &[f64]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            max = max.max((values[i] - values[j]).abs());
        }
    }
    max
}

/// Average log-slope (1/T) sum log |rho (1 - 2 y_t)| of the logistic map
/// over post-burn-in iterates; positive values indicate chaos.
pub fn lyapunov_logistic(rho: f64, y0: f64, t_steps: usize, burn_in: usize) -> Result<f64> {
    if !(0.0 < rho && rho <= 4.0) {
        return Err(Error::invalid("rho must lie in (0, 4]"));
    }
    if !(0.0 < y0 && y0 < 1.0) {
        return Err(Error::invalid("y0 must lie in (0, 1)"));
    }
    if t_steps < 1000 {
        return Err(Error::invalid("need at least 1000 iterations"));
    }
    let mut y = y0;
    for _ in 0..burn_in {
        y = rho * y * (1.0 - y);
        if !(0.0 < y && y < 1.0) {
            return Err(Error::degenerate(format!(
                "trajectory left (0,1) during burn-in at y = {y}"
            )));
        }
    }
    let mut acc = 0.0;
    for _ in 0..t_steps {
        let slope = (rho * (1.0 - 2.0 * y)).abs();
        if slope == 0.0 {
            return Err(Error::degenerate(
                "trajectory hit y = 1/2 exactly; derivative collapses to zero",
            ));
        }
        acc += slope.ln();
        y = rho * y * (1.0 - y);
        if !(0.0 < y && y < 1.0) {
            return Err(Error::degenerate(format!("trajectory left (0,1) at y = {y}")));
        }
    }
    Ok(acc / t_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::summarize;
    use crate::models::{
        conjugate_normal_posterior, derive_rng, Dataset, ExactApproximator, Model,
        NormalKnownVariance, PosteriorApproximator,
    };
    use approx::assert_abs_diff_eq;

    fn conjugate_fixture(n: usize, ybar: f64, draws: usize, seed: u64) -> (DrawsTensor, PowerScaleContext) {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, n).unwrap();
        let data = Dataset::new(vec![ybar; n]);
        let fit = ExactApproximator::new(1, draws).fit(&model, &data, seed).unwrap();
        let pooled = fit.draws.pooled("mu").unwrap();
        let ctx = PowerScaleContext {
            log_prior: pooled.iter().map(|t| model.prior_logpdf(&[*t])).collect(),
            log_lik_joint: pooled
                .iter()
                .map(|t| model.loglik_joint(&[*t], &data))
                .collect(),
        };
        (fit.draws, ctx)
    }

    fn spec(distance: DistanceKind) -> SensitivitySpec {
        SensitivitySpec::new(
            Component::Prior,
            "mu",
            1.0,
            vec![0.5, 0.8, 1.25, 2.0],
            SummaryStatistic::Mean,
            distance,
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn alpha_one_gives_exactly_uniform_weights() {
        let lp = vec![-1.0, -2.0, -3.0];
        let w = power_scale_weights(&lp, &lp, 1.0, Component::Prior).unwrap();
        assert_eq!(w.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn prior_doubling_weights_hand_computed() {
        // alpha = 2, prior N(0,1), draws at 0 and 1: w proportional to
        // {1, exp(-1/2)}.
        let draws = [0.0, 1.0];
        let lp: Vec<f64> = draws
            .iter()
            .map(|t| crate::stats::normal_logpdf(*t, 0.0, 1.0))
            .collect();
        let w = power_scale_weights(&lp, &lp, 2.0, Component::Prior).unwrap();
        let z = 1.0 + (-0.5f64).exp();
        assert_abs_diff_eq!(w.weights[0], 1.0 / z, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[1], (-0.5f64).exp() / z, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[0], 0.6224593312018546, epsilon = 1e-12);
    }

    #[test]
    fn inverse_composition_recovers_uniform() {
        let lp = vec![-0.3, -1.7, -0.9, -2.2];
        let w_half = power_scale_weights(&lp, &lp, 0.5, Component::Prior).unwrap();
        // Reweighting back with the reciprocal factor exp((1 - 0.5) lp).
        let back: Vec<f64> = w_half
            .weights
            .iter()
            .zip(&lp)
            .map(|(w, l)| w * ((1.0 - 0.5) * l).exp())
            .collect();
        let total: f64 = back.iter().sum();
        for b in &back {
            assert_abs_diff_eq!(b / total, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_invariant_to_constant_log_density_shift() {
        let lp = vec![-0.3, -1.7, -0.9];
        let shifted: Vec<f64> = lp.iter().map(|v| v + 123.0).collect();
        let a = power_scale_weights(&lp, &lp, 1.7, Component::Prior).unwrap();
        let b = power_scale_weights(&shifted, &shifted, 1.7, Component::Prior).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_summary_at_base_matches_unweighted_bit_for_bit() {
        let (draws, ctx) = conjugate_fixture(4, 0.7, 5000, 1);
        let s = spec(DistanceKind::AbsoluteDifference);
        let (t0, _) = weighted_summary(&draws, &ctx, &s, 1.0).unwrap();
        let plain = summarize(&draws, "mu", SummaryStatistic::Mean).unwrap();
        assert_eq!(t0, plain);
    }

    #[test]
    fn distance_zero_at_base_alpha() {
        let (draws, ctx) = conjugate_fixture(4, 0.7, 2000, 2);
        let s = spec(DistanceKind::AbsoluteDifference);
        assert_eq!(sensitivity_distance(&draws, &ctx, &s, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn distance_symmetric_under_argument_swap() {
        let (draws, ctx) = conjugate_fixture(2, 1.0, 4000, 3);
        let mut a = spec(DistanceKind::AbsoluteDifference);
        let d1 = sensitivity_distance(&draws, &ctx, &a, 0.5).unwrap();
        a.alpha0 = 0.5;
        let d2 = sensitivity_distance(&draws, &ctx, &a, 1.0).unwrap();
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-12);
    }

    #[test]
    fn data_dominated_posterior_insensitive_prior_dominated_not() {
        let (draws_big, ctx_big) = conjugate_fixture(10_000, 1.0, 20_000, 4);
        let (draws_small, ctx_small) = conjugate_fixture(1, 1.0, 20_000, 5);
        let s = spec(DistanceKind::StandardizedDifference);
        let mut sens_big = 0.0f64;
        let mut sens_small = 0.0f64;
        for alpha in [0.5, 2.0] {
            sens_big = sens_big.max(sensitivity_distance(&draws_big, &ctx_big, &s, alpha).unwrap());
            sens_small =
                sens_small.max(sensitivity_distance(&draws_small, &ctx_small, &s, alpha).unwrap());
        }
        assert!(sens_big < 0.01, "data-dominated Sen {sens_big}");
        assert!(
            sens_small >= 10.0 * sens_big,
            "small {sens_small} vs big {sens_big}"
        );
    }

    #[test]
    fn gradient_matches_tempered_posterior_derivative() {
        // Tempered prior posterior mean m(a) = n ybar / (a + n) for unit
        // scales and zero prior mean; dm/da at a=1 is -n ybar / (1+n)^2.
        let n = 1usize;
        let ybar = 2.0;
        let (draws, ctx) = conjugate_fixture(n, ybar, 400_000, 6);
        let s = spec(DistanceKind::AbsoluteDifference);
        let grad = sensitivity_gradient(&draws, &ctx, &s, 1e-3).unwrap();
        let analytic = (n as f64) * ybar / ((1.0 + n as f64) * (1.0 + n as f64));
        assert!(
            (grad - analytic).abs() < 0.01 * analytic,
            "grad {grad} analytic {analytic}"
        );
    }

    #[test]
    fn gradient_zero_for_constant_pushforward() {
        let draws = DrawsTensor::from_chains("mu", &[vec![0.5; 1000]]).unwrap();
        let ctx = PowerScaleContext {
            log_prior: vec![-0.9; 1000],
            log_lik_joint: vec![-1.1; 1000],
        };
        let s = spec(DistanceKind::AbsoluteDifference);
        assert_eq!(sensitivity_gradient(&draws, &ctx, &s, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn gradient_halving_step_stays_within_second_order() {
        let (draws, ctx) = conjugate_fixture(1, 2.0, 200_000, 7);
        let s = spec(DistanceKind::AbsoluteDifference);
        let g1 = sensitivity_gradient(&draws, &ctx, &s, 2e-3).unwrap();
        let g2 = sensitivity_gradient(&draws, &ctx, &s, 1e-3).unwrap();
        assert!((g1 - g2).abs() < 1e-3, "g1 {g1} g2 {g2}");
    }

    #[test]
    fn practical_sensitivity_is_strict() {
        assert!(is_practically_sensitive(0.25, 0.2).unwrap());
        assert!(!is_practically_sensitive(0.2, 0.2).unwrap());
        assert!(!is_practically_sensitive(0.0, 0.0).unwrap());
        assert!(is_practically_sensitive(-0.1, 0.0).is_err());
    }

    #[test]
    fn lyapunov_chaotic_regime_is_ln_two() {
        let v = lyapunov_logistic(4.0, 0.3123, 100_000, 1000).unwrap();
        assert!((v - 2f64.ln()).abs() < 0.02, "exponent {v}");
    }

    #[test]
    fn lyapunov_sign_classifies_regimes() {
        assert!(lyapunov_logistic(2.9, 0.3, 10_000, 1000).unwrap() < 0.0);
        assert!(lyapunov_logistic(3.9, 0.3, 10_000, 1000).unwrap() > 0.0);
        assert!(lyapunov_logistic(3.2, 0.3, 10_000, 1000).unwrap() < 0.0);
        assert!(lyapunov_logistic(2.0, 0.3, 10_000, 1000).unwrap() < 0.0);
    }

    #[test]
    fn lyapunov_preconditions() {
        assert!(lyapunov_logistic(4.1, 0.3, 10_000, 0).is_err());
        assert!(lyapunov_logistic(4.0, 0.0, 10_000, 0).is_err());
        assert!(lyapunov_logistic(4.0, 0.3, 100, 0).is_err());
        // y0 = 1/2 maps to the fixed point at rho = 2 and the slope
        // vanishes immediately.
        assert!(lyapunov_logistic(2.0, 0.5, 10_000, 0).is_err());
    }

    #[test]
    fn rerun_harness_detects_hyperparameter_spread() {
        let model = NormalKnownVariance::new(0.0, 1.0, 1.0, 4).unwrap();
        let mut rng = derive_rng(8, 0, "harness");
        let theta = model.prior_sample(&mut rng);
        let data = model.simulate(&theta, &mut rng);
        let mut summaries = Vec::new();
        for draws_per_chain in [200usize, 400, 800] {
            let fit = ExactApproximator::new(1, draws_per_chain)
                .fit(&model, &data, 3)
                .unwrap();
            summaries.push(summarize(&fit.draws, "mu", SummaryStatistic::Mean).unwrap());
        }
        let spread = max_pairwise_abs_difference(&summaries);
        let (_, post_sd) = conjugate_normal_posterior(0.0, 1.0, 1.0, &data).unwrap();
        // Draw-count changes only move the summary by Monte Carlo error.
        assert!(spread < post_sd, "spread {spread}");
    }
}
