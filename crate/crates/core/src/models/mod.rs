//! The denoising-model interface and its implementations.
//!
//! Exact oracles ([`MarkovOracle`], [`EnumeratedOracle`]) stand in for the
//! accurate verifier. [`degrade`] wraps any model with approximation error so
//! it can play the fast drafter.

mod degrade;
mod enumerated;
mod markov;
mod oracle;

use std::sync::atomic::{AtomicU64, Ordering};

pub use degrade::{degrade, Degradation, Degraded};
pub use enumerated::EnumeratedOracle;
pub use markov::MarkovOracle;
pub use oracle::{Oracle, OracleModel};

use crate::distribution::PositionDistributions;
use crate::error::Result;
use crate::sequence::{MaskedSequence, VocabSpec};

/// Predicts a distribution over real tokens at every position of a sequence.
///
/// Each `predict` call is one forward pass and bumps `call_count` by exactly one.
/// At unmasked positions implementations return the leave-one-out conditional,
/// i.e. the prediction they would make if that position were masked.
pub trait DenoisingModel: Send + Sync {
    fn vocab(&self) -> VocabSpec;

    fn predict(&self, seq: &MaskedSequence) -> Result<PositionDistributions>;

    fn call_count(&self) -> u64;

    /// Signals a cache boundary. Only stale-context drafters react.
    fn refresh(&self) {}

    fn describe(&self) -> String;
}

impl<M: DenoisingModel + ?Sized> DenoisingModel for Box<M> {
    fn vocab(&self) -> VocabSpec {
        (**self).vocab()
    }

    fn predict(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        (**self).predict(seq)
    }

    fn call_count(&self) -> u64 {
        (**self).call_count()
    }

    fn refresh(&self) {
        (**self).refresh()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Forward-pass counter shared safely between threads.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

pub(crate) fn check_vocab(model: VocabSpec, seq: &MaskedSequence) -> Result<()> {
    if model != seq.vocab() {
        return Err(crate::error::Error::Dimension {
            expected: model.size(),
            got: seq.vocab().size(),
        });
    }
    Ok(())
}
