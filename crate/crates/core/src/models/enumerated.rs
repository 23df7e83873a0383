use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;

use crate::distribution::{Distribution, PositionDistributions, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::sequence::{MaskedSequence, Token, VocabSpec};

/// A joint distribution given by an explicit list of weighted full sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedOracle {
    vocab: VocabSpec,
    len: usize,
    support: Vec<(Vec<Token>, f64)>,
}

impl EnumeratedOracle {
    pub fn new(vocab: VocabSpec, support: Vec<(Vec<Token>, f64)>) -> Result<Self> {
        let len = support
            .first()
            .map(|(s, _)| s.len())
            .ok_or_else(|| Error::config("enumerated oracle needs a nonempty support"))?;
        if len == 0 {
            return Err(Error::config("support sequences must be nonempty"));
        }
        for (i, (s, w)) in support.iter().enumerate() {
            if s.len() != len {
                return Err(Error::Dimension {
                    expected: len,
                    got: s.len(),
                });
            }
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::config(format!("support entry {i} has weight {w}")));
            }
            if let Some(t) = s.iter().find(|&&t| !vocab.is_real(t)) {
                return Err(Error::config(format!("support entry {i} contains token {t}")));
            }
        }
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::config(format!("support weights sum to {total}")));
        }
        Ok(Self { vocab, len, support })
    }

    pub fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[(Vec<Token>, f64)] {
        &self.support
    }

    fn consistent(seq: &MaskedSequence, candidate: &[Token], skip: usize) -> bool {
        candidate
            .iter()
            .enumerate()
            .all(|(j, &t)| j == skip || seq.is_masked(j) || seq.get(j) == t)
    }

    /// Brute-force conditional marginals over the support, leave-one-out at
    /// unmasked positions. No consistent support sequence → uniform.
    pub fn posterior(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        super::check_vocab(self.vocab, seq)?;
        if seq.len() != self.len {
            return Err(Error::Dimension {
                expected: self.len,
                got: seq.len(),
            });
        }
        let v = self.vocab.size();
        Ok((0..self.len)
            .map(|i| {
                let mut w = vec![0.0; v];
                for (s, weight) in &self.support {
                    if Self::consistent(seq, s, i) {
                        w[s[i] as usize] += weight;
                    }
                }
                Distribution::from_weights_or_uniform(w)
            })
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Token> {
        let index = WeightedIndex::new(self.support.iter().map(|(_, w)| *w))
            .expect("support weights sum to one");
        self.support[index.sample(rng)].0.clone()
    }

    pub fn log_joint(&self, tokens: &[Token]) -> f64 {
        self.support
            .iter()
            .filter(|(s, _)| s == tokens)
            .map(|(_, w)| w)
            .sum::<f64>()
            .ln()
    }

    /// Heaviest support sequence starting with `prefix`; earlier entries win ties.
    pub fn best_completion(&self, prefix: &[Token]) -> Result<Vec<Token>> {
        let mut best: Option<&(Vec<Token>, f64)> = None;
        for entry in &self.support {
            if entry.1 > 0.0 && entry.0.starts_with(prefix) && best.is_none_or(|b| entry.1 > b.1) {
                best = Some(entry);
            }
        }
        best.map(|(s, _)| s.clone())
            .ok_or_else(|| Error::precondition("no support sequence extends the prompt"))
    }
}
