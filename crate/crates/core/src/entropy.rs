//! Shannon entropy in nats.
//!
//! Choosing among `k` candidates can never be more uncertain than `ln k`,
//! while free generation over an `m`-token vocabulary is bounded only by
//! `ln m`. These helpers make that comparison checkable.

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// `ln n`, the entropy of the uniform distribution over `n` outcomes.
pub fn max_entropy(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::EmptySupport);
    }
    Ok((n as f64).ln())
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn empirical_entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "probability {bad} is not in [0, inf)"
        )));
    }
    let mass: f64 = dist.iter().sum();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "mass {mass} differs from 1"
        )));
    }
    Ok(-dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Frequencies of each distinct item, in first-seen order, normalised.
pub fn frequency_distribution<T: PartialEq>(samples: &[T]) -> Vec<f64> {
    let mut seen: Vec<(&T, usize)> = Vec::new();
    for s in samples {
        match seen.iter_mut().find(|(t, _)| *t == s) {
            Some((_, c)) => *c += 1,
            None => seen.push((s, 1)),
        }
    }
    let total = samples.len() as f64;
    seen.into_iter().map(|(_, c)| c as f64 / total).collect()
}
