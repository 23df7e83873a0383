use rand::Rng;

use crate::distribution::{Distribution, PositionDistributions};
use crate::error::{Error, Result};
use crate::models::EnumeratedOracle;
use crate::sequence::{MaskedSequence, Token, VocabSpec};

/// A first-order Markov chain over the vocabulary: `x_0 ~ initial`,
/// `x_{j+1} | x_j ~ transition[x_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovOracle {
    vocab: VocabSpec,
    initial: Distribution,
    transition: Vec<Distribution>,
}

impl MarkovOracle {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let vocab = VocabSpec::new(initial.len())?;
        let initial = Distribution::new(initial)
            .map_err(|e| Error::config(format!("initial distribution: {e}")))?;
        if transition.len() != vocab.size() {
            return Err(Error::Dimension {
                expected: vocab.size(),
                got: transition.len(),
            });
        }
        let transition = transition
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                if row.len() != vocab.size() {
                    return Err(Error::Dimension {
                        expected: vocab.size(),
                        got: row.len(),
                    });
                }
                Distribution::new(row).map_err(|e| Error::config(format!("transition row {r}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocab,
            initial,
            transition,
        })
    }

    pub fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    pub fn initial(&self) -> &Distribution {
        &self.initial
    }

    pub fn transition(&self, from: Token) -> &Distribution {
        &self.transition[from as usize]
    }

    /// Exact posterior marginals by forward/backward message passing.
    ///
    /// At position `i` the evidence at `i` itself is excluded, which yields the
    /// masked conditional at masked slots and the leave-one-out conditional at
    /// unmasked ones. Positions whose remaining evidence has zero probability
    /// get the uniform distribution.
    pub fn posterior(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        super::check_vocab(self.vocab, seq)?;
        let n = seq.len();
        let v = self.vocab.size();

        let evidence = |j: usize, s: usize| -> f64 {
            if seq.is_masked(j) || seq.get(j) as usize == s {
                1.0
            } else {
                0.0
            }
        };

        // predicted[j][s] ∝ P(x_j = s, evidence before j)
        let mut predicted = vec![vec![0.0; v]; n];
        predicted[0].copy_from_slice(self.initial.probs());
        for j in 1..n {
            let mut filtered: Vec<f64> = (0..v).map(|s| predicted[j - 1][s] * evidence(j - 1, s)).collect();
            normalize_in_place(&mut filtered);
            for (r, &fr) in filtered.iter().enumerate() {
                if fr == 0.0 {
                    continue;
                }
                for (s, &a) in self.transition[r].probs().iter().enumerate() {
                    predicted[j][s] += fr * a;
                }
            }
        }

        // backward[j][s] ∝ P(evidence after j | x_j = s)
        let mut backward = vec![vec![1.0; v]; n];
        for j in (0..n.saturating_sub(1)).rev() {
            let next: Vec<f64> = (0..v).map(|u| evidence(j + 1, u) * backward[j + 1][u]).collect();
            for (s, b) in backward[j].iter_mut().enumerate() {
                *b = self.transition[s]
                    .probs()
                    .iter()
                    .zip(&next)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            normalize_in_place(&mut backward[j]);
        }

        Ok((0..n)
            .map(|j| {
                let w = (0..v).map(|s| predicted[j][s] * backward[j][s]).collect();
                Distribution::from_weights_or_uniform(w)
            })
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<Token> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut cur = self.initial.sample(rng);
        out.push(cur);
        for _ in 1..len {
            cur = self.transition[cur as usize].sample(rng);
            out.push(cur);
        }
        out
    }

    /// `ln P(tokens)`; `-inf` for impossible sequences.
    pub fn log_joint(&self, tokens: &[Token]) -> f64 {
        let Some(&first) = tokens.first() else {
            return 0.0;
        };
        let mut lp = self.initial.prob(first).ln();
        for w in tokens.windows(2) {
            lp += self.transition[w[0] as usize].prob(w[1]).ln();
        }
        lp
    }

    /// Maximum-probability full sequence of length `len` extending `prefix`
    /// (Viterbi over the free suffix; ties go to lower token ids).
    pub fn best_completion(&self, prefix: &[Token], len: usize) -> Result<Vec<Token>> {
        if prefix.len() > len {
            return Err(Error::precondition("prefix longer than target length"));
        }
        if prefix.len() == len {
            return Ok(prefix.to_vec());
        }
        let v = self.vocab.size();
        let start = prefix.len();
        let ln = |p: f64| p.ln();

        let mut score: Vec<f64> = match prefix.last() {
            None => self.initial.probs().iter().map(|&p| ln(p)).collect(),
            Some(&last) => self.transition[last as usize].probs().iter().map(|&p| ln(p)).collect(),
        };
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(len - start);
        back.push(vec![0; v]);
        for _ in start + 1..len {
            let mut next = vec![f64::NEG_INFINITY; v];
            let mut ptr = vec![0usize; v];
            for s in 0..v {
                for (r, &prev) in score.iter().enumerate() {
                    let cand = prev + ln(self.transition[r].prob(s as Token));
                    if cand > next[s] {
                        next[s] = cand;
                        ptr[s] = r;
                    }
                }
            }
            score = next;
            back.push(ptr);
        }
        let mut best = 0;
        for s in 1..v {
            if score[s] > score[best] {
                best = s;
            }
        }
        let mut suffix = vec![0 as Token; len - start];
        let mut cur = best;
        for j in (0..suffix.len()).rev() {
            suffix[j] = cur as Token;
            cur = back[j][cur];
        }
        let mut out = prefix.to_vec();
        out.extend(suffix);
        Ok(out)
    }

    /// Expands the chain's joint over all `vocab^len` sequences.
    pub fn to_enumerated(&self, len: usize) -> Result<EnumeratedOracle> {
        let v = self.vocab.size();
        let total = (v as u64)
            .checked_pow(len as u32)
            .filter(|&t| t <= 1 << 20)
            .ok_or_else(|| Error::precondition(format!("{v}^{len} sequences is too many to enumerate")))?;
        let mut support = Vec::with_capacity(total as usize);
        let mut tokens = vec![0 as Token; len];
        for code in 0..total {
            let mut c = code;
            for slot in tokens.iter_mut().rev() {
                *slot = (c % v as u64) as Token;
                c /= v as u64;
            }
            let w = self.log_joint(&tokens).exp();
            if w > 0.0 {
                support.push((tokens.clone(), w));
            }
        }
        let sum: f64 = support.iter().map(|(_, w)| w).sum();
        support.iter_mut().for_each(|(_, w)| *w /= sum);
        EnumeratedOracle::new(self.vocab, support)
    }
}

fn normalize_in_place(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sticky() -> MarkovOracle {
        MarkovOracle::new(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap()
    }

    #[test]
    fn bridge_between_two_zeros() {
        let o = sticky();
        let m = o.vocab().mask_id();
        let seq = MaskedSequence::new(o.vocab(), vec![0, m, 0]).unwrap();
        let post = o.posterior(&seq).unwrap();
        assert!((post[1][0] - 81.0 / 82.0).abs() < 1e-12);
        assert!((post[1][1] - 1.0 / 82.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_first_position_is_initial() {
        let o = MarkovOracle::new(vec![0.7, 0.2, 0.1], vec![vec![0.2, 0.3, 0.5]; 3]).unwrap();
        let seq = MaskedSequence::fully_masked(o.vocab(), 5).unwrap();
        let post = o.posterior(&seq).unwrap();
        for (a, b) in post[0].probs().iter().zip(o.initial().probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unmasked_positions_get_leave_one_out() {
        let o = sticky();
        let seq = MaskedSequence::new(o.vocab(), vec![0, 1, 0]).unwrap();
        let post = o.posterior(&seq).unwrap();
        assert!(post[1][0] > 0.98, "not a one-hot of the present token");
    }

    #[test]
    fn impossible_evidence_falls_back_to_uniform() {
        let o = MarkovOracle::new(vec![1.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = o.vocab().mask_id();
        let seq = MaskedSequence::new(o.vocab(), vec![1, m, m]).unwrap();
        let post = o.posterior(&seq).unwrap();
        assert_eq!(post[1], Distribution::uniform(2));
        // position 0 itself is leave-one-out and stays well defined
        assert_eq!(post[0], Distribution::one_hot(2, 0));
    }

    #[test]
    fn absorbing_chain_samples_zeros() {
        let o = MarkovOracle::new(vec![1.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = stream(3);
        assert_eq!(o.sample(12, &mut rng), vec![0; 12]);
    }

    #[test]
    fn viterbi_matches_enumeration_on_small_case() {
        let o = sticky();
        assert_eq!(o.best_completion(&[0], 3).unwrap(), vec![0, 0, 0]);
        assert!((o.log_joint(&[0, 0, 0]) - (-0.903_868_211_875_597_9)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(MarkovOracle::new(vec![0.5, 0.5], vec![vec![0.9, 0.2], vec![0.5, 0.5]]).is_err());
        assert!(MarkovOracle::new(vec![0.5, 0.5], vec![vec![1.0, 0.0]]).is_err());
    }
}
