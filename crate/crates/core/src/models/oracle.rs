use rand::Rng;

use super::{CallCounter, DenoisingModel, EnumeratedOracle, MarkovOracle};
use crate::distribution::PositionDistributions;
use crate::error::{Error, Result};
use crate::sequence::{MaskedSequence, Token, VocabSpec};

/// Either kind of exact joint model.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    Markov(MarkovOracle),
    Enumerated(EnumeratedOracle),
}

impl Oracle {
    pub fn vocab(&self) -> VocabSpec {
        match self {
            Oracle::Markov(m) => m.vocab(),
            Oracle::Enumerated(e) => e.vocab(),
        }
    }

    /// Exact conditional marginals at every position.
    pub fn posterior(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        match self {
            Oracle::Markov(m) => m.posterior(seq),
            Oracle::Enumerated(e) => e.posterior(seq),
        }
    }

    /// Ancestral sample of a full sequence of length `len`.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Vec<Token>> {
        match self {
            Oracle::Markov(m) => Ok(m.sample(len, rng)),
            Oracle::Enumerated(e) if e.len() == len => Ok(e.sample(rng)),
            Oracle::Enumerated(e) => Err(Error::Dimension {
                expected: e.len(),
                got: len,
            }),
        }
    }

    pub fn log_joint(&self, tokens: &[Token]) -> f64 {
        match self {
            Oracle::Markov(m) => m.log_joint(tokens),
            Oracle::Enumerated(e) => e.log_joint(tokens),
        }
    }

    /// Most probable full sequence of length `len` that starts with `prefix`.
    pub fn best_completion(&self, prefix: &[Token], len: usize) -> Result<Vec<Token>> {
        match self {
            Oracle::Markov(m) => m.best_completion(prefix, len),
            Oracle::Enumerated(e) if e.len() == len => e.best_completion(prefix),
            Oracle::Enumerated(e) => Err(Error::Dimension {
                expected: e.len(),
                got: len,
            }),
        }
    }
}

/// An oracle exposed through the [`DenoisingModel`] interface.
#[derive(Debug)]
pub struct OracleModel {
    oracle: Oracle,
    calls: CallCounter,
}

impl OracleModel {
    pub fn new(oracle: Oracle) -> Self {
        Self {
            oracle,
            calls: CallCounter::default(),
        }
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }
}

impl From<MarkovOracle> for OracleModel {
    fn from(m: MarkovOracle) -> Self {
        Self::new(Oracle::Markov(m))
    }
}

impl From<EnumeratedOracle> for OracleModel {
    fn from(e: EnumeratedOracle) -> Self {
        Self::new(Oracle::Enumerated(e))
    }
}

impl DenoisingModel for OracleModel {
    fn vocab(&self) -> VocabSpec {
        self.oracle.vocab()
    }

    fn predict(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        self.calls.bump();
        self.oracle.posterior(seq)
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }

    fn describe(&self) -> String {
        match &self.oracle {
            Oracle::Markov(_) => "markov-oracle".into(),
            Oracle::Enumerated(_) => "enumerated-oracle".into(),
        }
    }
}
