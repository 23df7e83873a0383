//! Draft verification: decide which drafter-decoded tokens go back to MASK.
//!
//! Three families: trust (accept everything), KL disagreement between the
//! drafter's and verifier's predictive distributions, and verifier
//! confidence. The KL and confidence families each come in a threshold and a
//! probabilistic flavor.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::{confidence, kl_divergence, normalize_remask_weights, PositionDistributions};
use crate::error::{Error, Result};
use crate::sequence::MaskedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerificationAlgorithm {
    Trust,
    /// Remask when `KL(p_D || p_V) > tau`.
    KlThreshold { tau: f64 },
    /// Draw `budget` positions without replacement with probability
    /// proportional to their KL. `None` means `max(1, ceil(0.1 * |scope|))`.
    KlProportional {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
    /// Remask when the verifier's max probability is below `tau`.
    ConfThreshold { tau: f64 },
    /// Remask each position independently with probability `1 - confidence`.
    ConfProbabilistic,
}

impl VerificationAlgorithm {
    pub fn is_trust(&self) -> bool {
        matches!(self, VerificationAlgorithm::Trust)
    }

    pub fn uses_drafter(&self) -> bool {
        matches!(
            self,
            VerificationAlgorithm::KlThreshold { .. } | VerificationAlgorithm::KlProportional { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            VerificationAlgorithm::KlThreshold { tau } if tau.is_nan() || tau <= 0.0 => {
                Err(Error::config(format!("tau_kl must be > 0, got {tau}")))
            }
            VerificationAlgorithm::KlProportional { budget: Some(0) } => {
                Err(Error::config("kl_proportional budget must be >= 1"))
            }
            VerificationAlgorithm::ConfThreshold { tau } if !(tau > 0.0 && tau < 1.0) => {
                Err(Error::config(format!("tau_conf must be in (0, 1), got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            VerificationAlgorithm::Trust => "trust".into(),
            VerificationAlgorithm::KlThreshold { tau } => format!("kl_threshold({tau})"),
            VerificationAlgorithm::KlProportional { budget: Some(m) } => format!("kl_proportional({m})"),
            VerificationAlgorithm::KlProportional { budget: None } => "kl_proportional(auto)".into(),
            VerificationAlgorithm::ConfThreshold { tau } => format!("conf_threshold({tau})"),
            VerificationAlgorithm::ConfProbabilistic => "conf_probabilistic".into(),
        }
    }
}

/// Where the drafter's distribution for the KL comparison comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrafterDistSource {
    /// The distribution the drafter held when it committed the token.
    #[default]
    Stored,
    /// One extra drafter pass over the drafted sequence.
    Fresh,
}

/// Which drafter-decoded positions are eligible for remasking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationScope {
    #[default]
    CurrentCycle,
    AllDrafted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    #[serde(flatten)]
    pub algorithm: VerificationAlgorithm,
    #[serde(default)]
    pub drafter_dist_source: DrafterDistSource,
    #[serde(default)]
    pub scope: VerificationScope,
}

impl VerificationConfig {
    pub fn new(algorithm: VerificationAlgorithm) -> Self {
        Self {
            algorithm,
            drafter_dist_source: DrafterDistSource::default(),
            scope: VerificationScope::default(),
        }
    }

    pub fn trust() -> Self {
        Self::new(VerificationAlgorithm::Trust)
    }

    pub fn with_source(mut self, source: DrafterDistSource) -> Self {
        self.drafter_dist_source = source;
        self
    }

    pub fn with_scope(mut self, scope: VerificationScope) -> Self {
        self.scope = scope;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositionVerdict {
    pub position: usize,
    /// KL divergence or verifier confidence, depending on the algorithm.
    pub score: f64,
    pub remasked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    pub verified: MaskedSequence,
    pub remasked: BTreeSet<usize>,
    pub diagnostics: Vec<PositionVerdict>,
}

impl VerificationOutcome {
    fn build(seq: &MaskedSequence, scored: Vec<(usize, f64)>, remasked: BTreeSet<usize>) -> Self {
        let mut verified = seq.clone();
        for &i in &remasked {
            verified.mask(i);
        }
        let diagnostics = scored
            .into_iter()
            .map(|(position, score)| PositionVerdict {
                position,
                score,
                remasked: remasked.contains(&position),
            })
            .collect();
        Self {
            verified,
            remasked,
            diagnostics,
        }
    }
}

pub fn verify_trust(seq: &MaskedSequence) -> VerificationOutcome {
    VerificationOutcome::build(seq, Vec::new(), BTreeSet::new())
}

fn check_scope(seq: &MaskedSequence, scope: &BTreeSet<usize>, dists: &PositionDistributions) -> Result<()> {
    if dists.len() != seq.len() {
        return Err(Error::Dimension {
            expected: seq.len(),
            got: dists.len(),
        });
    }
    if let Some(&i) = scope.iter().find(|&&i| i >= seq.len() || seq.is_masked(i)) {
        return Err(Error::precondition(format!("scope position {i} is not an unmasked token")));
    }
    Ok(())
}

/// KL-based remasking over `scope`.
pub fn verify_kl<R: Rng + ?Sized>(
    seq: &MaskedSequence,
    drafter: &PositionDistributions,
    verifier: &PositionDistributions,
    scope: &BTreeSet<usize>,
    cfg: &VerificationConfig,
    rng: &mut R,
) -> Result<VerificationOutcome> {
    check_scope(seq, scope, drafter)?;
    check_scope(seq, scope, verifier)?;
    let kls: BTreeMap<usize, f64> = scope
        .iter()
        .map(|&i| Ok((i, kl_divergence(&drafter[i], &verifier[i])?)))
        .collect::<Result<_>>()?;

    let remasked = match cfg.algorithm {
        VerificationAlgorithm::KlThreshold { tau } => {
            kls.iter().filter(|(_, &d)| d > tau).map(|(&i, _)| i).collect()
        }
        VerificationAlgorithm::KlProportional { budget } => {
            let budget = budget.unwrap_or_else(|| default_budget(scope.len()));
            draw_proportional(&normalize_remask_weights(&kls), budget, rng)
        }
        other => {
            return Err(Error::config(format!("verify_kl called with {}", other.label())));
        }
    };
    Ok(VerificationOutcome::build(seq, kls.into_iter().collect(), remasked))
}

/// Confidence-based remasking over `scope`; needs no drafter distributions.
pub fn verify_confidence<R: Rng + ?Sized>(
    seq: &MaskedSequence,
    verifier: &PositionDistributions,
    scope: &BTreeSet<usize>,
    cfg: &VerificationConfig,
    rng: &mut R,
) -> Result<VerificationOutcome> {
    check_scope(seq, scope, verifier)?;
    let confs: Vec<(usize, f64)> = scope.iter().map(|&i| (i, confidence(&verifier[i]))).collect();
    let remasked = match cfg.algorithm {
        VerificationAlgorithm::ConfThreshold { tau } => {
            confs.iter().filter(|(_, c)| *c < tau).map(|(i, _)| *i).collect()
        }
        VerificationAlgorithm::ConfProbabilistic => confs
            .iter()
            .filter(|(_, c)| rng.random::<f64>() < 1.0 - c)
            .map(|(i, _)| *i)
            .collect(),
        other => {
            return Err(Error::config(format!("verify_confidence called with {}", other.label())));
        }
    };
    Ok(VerificationOutcome::build(seq, confs, remasked))
}

/// Dispatches on `cfg.algorithm`. `drafter` may be `None` for non-KL algorithms.
pub fn verify<R: Rng + ?Sized>(
    seq: &MaskedSequence,
    drafter: Option<&PositionDistributions>,
    verifier: &PositionDistributions,
    scope: &BTreeSet<usize>,
    cfg: &VerificationConfig,
    rng: &mut R,
) -> Result<VerificationOutcome> {
    match cfg.algorithm {
        VerificationAlgorithm::Trust => Ok(verify_trust(seq)),
        VerificationAlgorithm::KlThreshold { .. } | VerificationAlgorithm::KlProportional { .. } => {
            let drafter = drafter.ok_or_else(|| Error::precondition("KL verification needs drafter distributions"))?;
            verify_kl(seq, drafter, verifier, scope, cfg, rng)
        }
        VerificationAlgorithm::ConfThreshold { .. } | VerificationAlgorithm::ConfProbabilistic => {
            verify_confidence(seq, verifier, scope, cfg, rng)
        }
    }
}

pub fn default_budget(scope_len: usize) -> usize {
    scope_len.div_ceil(10).max(1)
}

/// Successive categorical draws without replacement. Zero-weight positions
/// are never drawn.
fn draw_proportional<R: Rng + ?Sized>(weights: &BTreeMap<usize, f64>, budget: usize, rng: &mut R) -> BTreeSet<usize> {
    let mut pool: Vec<(usize, f64)> = weights.iter().filter(|(_, &w)| w > 0.0).map(|(&i, &w)| (i, w)).collect();
    let mut chosen = BTreeSet::new();
    while chosen.len() < budget && !pool.is_empty() {
        let index = WeightedIndex::new(pool.iter().map(|(_, w)| *w)).expect("pool weights are positive");
        let (pos, _) = pool.remove(index.sample(rng));
        chosen.insert(pos);
    }
    chosen
}
