//! Forward masking and single-step reverse unmasking.

use std::f64::consts::FRAC_PI_2;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::confidence;
use crate::error::{Error, Result};
use crate::models::DenoisingModel;
use crate::pipeline::{DecodeProvenance, DecoderRole};
use crate::sequence::{masked_positions, MaskedSequence};

/// Masking probability `alpha(t)` with `alpha(0) = 0` and `alpha(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    #[default]
    Linear,
    Cosine,
}

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self {
            NoiseSchedule::Linear => t,
            NoiseSchedule::Cosine => {
                if t >= 1.0 {
                    1.0
                } else {
                    1.0 - (FRAC_PI_2 * t).cos()
                }
            }
        }
    }
}

/// Masks each position of a clean sequence independently with probability `alpha(t)`.
pub fn forward_mask<R: Rng + ?Sized>(
    x0: &MaskedSequence,
    t: f64,
    schedule: NoiseSchedule,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if x0.has_masks() {
        return Err(Error::precondition("forward_mask needs a clean sequence"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::precondition(format!("t = {t} outside [0, 1]")));
    }
    let alpha = schedule.alpha(t);
    let mut out = x0.clone();
    for i in 0..out.len() {
        if rng.random::<f64>() < alpha {
            out.mask(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// The `k` most confident masked positions.
    TopK { k: usize },
    /// Every masked position with confidence `>= theta`; at least one.
    ConfidenceThreshold { theta: f64 },
    /// `k` masked positions chosen uniformly.
    Random { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitMode {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnmaskPolicy {
    #[serde(flatten)]
    pub selection: Selection,
    #[serde(default)]
    pub commit: CommitMode,
}

impl UnmaskPolicy {
    pub fn top_k(k: usize) -> Self {
        Self {
            selection: Selection::TopK { k },
            commit: CommitMode::Argmax,
        }
    }

    pub fn threshold(theta: f64) -> Self {
        Self {
            selection: Selection::ConfidenceThreshold { theta },
            commit: CommitMode::Argmax,
        }
    }

    pub fn random(k: usize) -> Self {
        Self {
            selection: Selection::Random { k },
            commit: CommitMode::Argmax,
        }
    }

    pub fn with_commit(mut self, commit: CommitMode) -> Self {
        self.commit = commit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.selection {
            Selection::TopK { k: 0 } | Selection::Random { k: 0 } => {
                Err(Error::config("unmask policy k must be >= 1"))
            }
            Selection::ConfidenceThreshold { theta } if !(theta > 0.0 && theta < 1.0) => {
                Err(Error::config(format!("confidence threshold must be in (0, 1), got {theta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        let sel = match self.selection {
            Selection::TopK { k } => format!("top_k({k})"),
            Selection::ConfidenceThreshold { theta } => format!("threshold({theta})"),
            Selection::Random { k } => format!("random({k})"),
        };
        match self.commit {
            CommitMode::Argmax => sel,
            CommitMode::Sample => format!("{sel}+sample"),
        }
    }
}

/// Who is decoding and in which cycle; stamped into provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeStamp {
    pub role: DecoderRole,
    pub cycle: usize,
}

/// One forward pass of `model`, then commits the masked positions chosen by
/// `policy`. Returns the committed positions in ascending order.
///
/// Confidence ties are broken toward the lower position index.
pub fn unmask_step<R: Rng + ?Sized>(
    model: &dyn DenoisingModel,
    seq: &mut MaskedSequence,
    policy: &UnmaskPolicy,
    rng: &mut R,
    provenance: &mut DecodeProvenance,
    stamp: DecodeStamp,
) -> Result<Vec<usize>> {
    let masked = masked_positions(seq);
    if masked.is_empty() {
        return Err(Error::precondition("unmask_step on a sequence with no masks"));
    }
    let dists = model.predict(seq)?;
    if dists.len() != seq.len() {
        return Err(Error::Dimension {
            expected: seq.len(),
            got: dists.len(),
        });
    }

    let by_confidence = || {
        let mut ranked: Vec<(usize, f64)> = masked.iter().map(|&i| (i, confidence(&dists[i]))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    };

    let mut selected: Vec<usize> = match policy.selection {
        Selection::TopK { k } => by_confidence().into_iter().take(k).map(|(i, _)| i).collect(),
        Selection::ConfidenceThreshold { theta } => {
            let ranked = by_confidence();
            let above: Vec<usize> = ranked.iter().filter(|(_, c)| *c >= theta).map(|(i, _)| *i).collect();
            if above.is_empty() {
                vec![ranked[0].0]
            } else {
                above
            }
        }
        Selection::Random { k } => index::sample(rng, masked.len(), k.min(masked.len()))
            .into_iter()
            .map(|j| masked[j])
            .collect(),
    };
    selected.sort_unstable();

    for &i in &selected {
        let dist = &dists[i];
        let token = match policy.commit {
            CommitMode::Argmax => dist.argmax(),
            CommitMode::Sample => dist.sample(rng),
        };
        seq.set(i, token)?;
        provenance.record_decode(i, stamp, dist.clone());
    }
    Ok(selected)
}
