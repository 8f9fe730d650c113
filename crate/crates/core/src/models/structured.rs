//! Structured prior log-densities: exchangeable, random-walk, and
//! conditional-autoregressive (CAR) components.

use crate::error::{Error, Result};
use crate::stats::normal_logpdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredPriorKind {
    Exchangeable,
    RandomWalk,
    Car,
}

/// Sum of component-wise normal log-densities for the three dependency
/// structures.
///
/// The CAR value is the pseudo-likelihood sum of full conditionals
/// `Normal(phi_i | mean of neighbours, sigma)`, not the joint Gaussian
/// Markov random field density.
pub fn structured_prior_logpdf(
    kind: StructuredPriorKind,
    phi: &[f64],
    mu: Option<f64>,
    sigma: f64,
    adjacency: Option<&[Vec<u8>]>,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if phi.is_empty() {
        return Err(Error::invalid("empty coefficient vector"));
    }
    match kind {
        StructuredPriorKind::Exchangeable => {
            let mu = mu.ok_or_else(|| Error::invalid("exchangeable prior needs mu"))?;
            Ok(phi.iter().map(|p| normal_logpdf(*p, mu, sigma)).sum())
        }
        StructuredPriorKind::RandomWalk => {
            if phi.len() < 2 {
                return Err(Error::invalid("random walk needs at least 2 components"));
            }
            Ok(phi
                .windows(2)
                .map(|w| normal_logpdf(w[1], w[0], sigma))
                .sum())
        }
        StructuredPriorKind::Car => {
            let adj = adjacency.ok_or_else(|| Error::invalid("CAR prior needs adjacency"))?;
            let n = phi.len();
            if adj.len() != n || adj.iter().any(|row| row.len() != n) {
                return Err(Error::ShapeMismatch("adjacency must be n x n".into()));
            }
            for i in 0..n {
                if adj[i][i] != 0 {
                    return Err(Error::invalid("self-loops not allowed in adjacency"));
                }
                for j in 0..n {
                    if adj[i][j] != adj[j][i] {
                        return Err(Error::invalid("adjacency must be symmetric"));
                    }
                    if adj[i][j] > 1 {
                        return Err(Error::invalid("adjacency entries must be 0 or 1"));
                    }
                }
            }
            let mut total = 0.0;
            for i in 0..n {
                let neighbours: Vec<usize> =
                    (0..n).filter(|&j| adj[i][j] == 1).collect();
                if neighbours.is_empty() {
                    return Err(Error::invalid(format!("node {i} has no neighbours")));
                }
                let mean: f64 =
                    neighbours.iter().map(|&j| phi[j]).sum::<f64>() / neighbours.len() as f64;
                total += normal_logpdf(phi[i], mean, sigma);
            }
            Ok(total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn exchangeable_at_the_mean() {
        // Two zero deviations: 2 * log N(0 | 0, 1) = -log(2 pi)
        let v = structured_prior_logpdf(
            StructuredPriorKind::Exchangeable,
            &[0.7, 0.7],
            Some(0.7),
            1.0,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(v, -(2.0 * PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn random_walk_single_flat_increment() {
        for a in [-3.0, 0.0, 11.5] {
            let v =
                structured_prior_logpdf(StructuredPriorKind::RandomWalk, &[a, a], None, 1.0, None)
                    .unwrap();
            assert_abs_diff_eq!(v, -0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn car_two_node_path_maximal_at_equality() {
        let adj = vec![vec![0u8, 1], vec![1, 0]];
        let equal = structured_prior_logpdf(
            StructuredPriorKind::Car,
            &[2.0, 2.0],
            None,
            1.0,
            Some(&adj),
        )
        .unwrap();
        let unequal = structured_prior_logpdf(
            StructuredPriorKind::Car,
            &[2.0, 2.5],
            None,
            1.0,
            Some(&adj),
        )
        .unwrap();
        assert!(equal > unequal);
    }

    #[test]
    fn car_rejects_isolated_and_asymmetric() {
        let isolated = vec![vec![0u8, 0], vec![0, 0]];
        assert!(structured_prior_logpdf(
            StructuredPriorKind::Car,
            &[1.0, 2.0],
            None,
            1.0,
            Some(&isolated)
        )
        .is_err());
        let asym = vec![vec![0u8, 1], vec![0, 0]];
        assert!(structured_prior_logpdf(
            StructuredPriorKind::Car,
            &[1.0, 2.0],
            None,
            1.0,
            Some(&asym)
        )
        .is_err());
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(structured_prior_logpdf(
            StructuredPriorKind::Exchangeable,
            &[0.0],
            Some(0.0),
            0.0,
            None
        )
        .is_err());
    }

    #[test]
    fn random_walk_needs_two() {
        assert!(
            structured_prior_logpdf(StructuredPriorKind::RandomWalk, &[1.0], None, 1.0, None)
                .is_err()
        );
    }
}
