//! Categorical distributions over the real vocabulary and the scalar math the
//! verifiers are built from.

use std::collections::BTreeMap;
use std::ops::Index;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sequence::Token;

/// Tolerance on `Σ p = 1` accepted by [`Distribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floor applied to the second argument of [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-12;

/// A categorical distribution over real tokens. The mask sentinel carries no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates nonnegativity and unit mass (within [`SUM_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights. Fails if they are all zero.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { probs: weights })
    }

    /// Like [`Distribution::from_weights`] but falls back to uniform when all weights vanish.
    pub fn from_weights_or_uniform(weights: Vec<f64>) -> Self {
        let n = weights.len();
        Self::from_weights(weights).unwrap_or_else(|_| Self::uniform(n))
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn one_hot(size: usize, token: Token) -> Self {
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs[token as usize]
    }

    /// Most likely token; ties go to the lower id.
    pub fn argmax(&self) -> Token {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as Token
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        // Validated distributions always have positive total mass.
        let index = WeightedIndex::new(&self.probs).expect("distribution has positive mass");
        index.sample(rng) as Token
    }
}

impl Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// One distribution per sequence position, masked or not.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionDistributions {
    per_position: Vec<Distribution>,
}

impl PositionDistributions {
    pub fn new(per_position: Vec<Distribution>) -> Self {
        Self { per_position }
    }

    pub fn len(&self) -> usize {
        self.per_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_position.is_empty()
    }

    pub fn get(&self, position: usize) -> &Distribution {
        &self.per_position[position]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Distribution> {
        self.per_position.iter()
    }

    pub fn into_inner(self) -> Vec<Distribution> {
        self.per_position
    }
}

impl Index<usize> for PositionDistributions {
    type Output = Distribution;

    fn index(&self, i: usize) -> &Distribution {
        &self.per_position[i]
    }
}

impl FromIterator<Distribution> for PositionDistributions {
    fn from_iter<I: IntoIterator<Item = Distribution>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// `KL(p || q)` in nats with `q` floored at [`KL_EPSILON`]; zero-mass terms of
/// `p` contribute nothing and the result is clamped at zero.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_EPSILON)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Largest probability in `p`.
pub fn confidence(p: &Distribution) -> f64 {
    p.probs.iter().copied().fold(0.0, f64::max)
}

/// Scales nonnegative divergences to sum to one. An all-zero input yields an
/// empty map: no position is a remask candidate.
pub fn normalize_remask_weights<K: Ord + Clone>(divergences: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let total: f64 = divergences.values().sum();
    if total <= 0.0 || !total.is_finite() {
        return BTreeMap::new();
    }
    divergences
        .iter()
        .map(|(k, v)| (k.clone(), v / total))
        .collect()
}
