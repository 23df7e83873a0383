use serde::Serialize;

use super::Task;
use crate::distribution::KL_EPSILON;
use crate::error::{Error, Result};
use crate::models::{DenoisingModel, Oracle};
use crate::sequence::MaskedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityMetrics {
    pub exact_match: bool,
    /// `ln P(sequence)` under the task oracle; `-inf` when impossible.
    pub gt_loglik: f64,
    /// `-Σ ln p_V(token | rest)` over the answer region, `p_V` floored at 1e-12.
    pub verifier_nll: f64,
}

pub fn score(
    task: &Task,
    generated: &MaskedSequence,
    oracle: &Oracle,
    verifier: &dyn DenoisingModel,
) -> Result<QualityMetrics> {
    if generated.has_masks() {
        return Err(Error::precondition("cannot score a sequence that still has masks"));
    }
    if generated.len() != task.length {
        return Err(Error::Dimension {
            expected: task.length,
            got: generated.len(),
        });
    }
    let answer = task.answer_range();
    let exact_match = generated.tokens()[answer.clone()] == task.reference[..];
    let gt_loglik = oracle.log_joint(generated.tokens());
    let dists = verifier.predict(generated)?;
    let verifier_nll = answer
        .map(|i| -dists[i].prob(generated.get(i)).max(KL_EPSILON).ln())
        .sum();
    Ok(QualityMetrics {
        exact_match,
        gt_loglik,
        verifier_nll,
    })
}
