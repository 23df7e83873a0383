//! Token vocabularies and partially masked sequences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// A vocabulary of `size` real tokens `0..size`; the mask sentinel is `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VocabSpec {
    size: usize,
}

impl VocabSpec {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::config(format!("vocabulary size must be >= 2, got {size}")));
        }
        if size >= Token::MAX as usize {
            return Err(Error::config(format!("vocabulary size {size} does not fit a token id")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> Token {
        self.size as Token
    }

    pub fn is_real(&self, token: Token) -> bool {
        (token as usize) < self.size
    }
}

/// The diffusion state: a fixed-length token buffer where some entries may be
/// the mask sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    vocab: VocabSpec,
    tokens: Vec<Token>,
}

impl MaskedSequence {
    pub fn new(vocab: VocabSpec, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::precondition("sequence length must be >= 1"));
        }
        if let Some((i, &t)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| !vocab.is_real(t) && t != vocab.mask_id())
        {
            return Err(Error::precondition(format!(
                "token {t} at position {i} is outside vocabulary of size {}",
                vocab.size()
            )));
        }
        Ok(Self { vocab, tokens })
    }

    pub fn fully_masked(vocab: VocabSpec, len: usize) -> Result<Self> {
        Self::new(vocab, vec![vocab.mask_id(); len])
    }

    /// `prompt` followed by masks up to `len`.
    pub fn with_prompt(vocab: VocabSpec, prompt: &[Token], len: usize) -> Result<Self> {
        if prompt.len() >= len {
            return Err(Error::precondition(format!(
                "prompt length {} must be shorter than sequence length {len}",
                prompt.len()
            )));
        }
        if let Some(&t) = prompt.iter().find(|&&t| !vocab.is_real(t)) {
            return Err(Error::precondition(format!("prompt token {t} is not a real token")));
        }
        let mut tokens = prompt.to_vec();
        tokens.resize(len, vocab.mask_id());
        Self::new(vocab, tokens)
    }

    pub fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn get(&self, position: usize) -> Token {
        self.tokens[position]
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.tokens[position] == self.vocab.mask_id()
    }

    pub fn mask(&mut self, position: usize) {
        self.tokens[position] = self.vocab.mask_id();
    }

    /// Commits a real token at `position`.
    pub fn set(&mut self, position: usize, token: Token) -> Result<()> {
        if !self.vocab.is_real(token) {
            return Err(Error::precondition(format!("cannot commit non-real token {token}")));
        }
        self.tokens[position] = token;
        Ok(())
    }

    pub fn masked_count(&self) -> usize {
        let m = self.vocab.mask_id();
        self.tokens.iter().filter(|&&t| t == m).count()
    }

    pub fn has_masks(&self) -> bool {
        self.tokens.contains(&self.vocab.mask_id())
    }

    /// The same sequence with `position` replaced by the mask sentinel.
    pub fn leave_one_out(&self, position: usize) -> MaskedSequence {
        let mut out = self.clone();
        out.mask(position);
        out
    }
}

impl fmt::Display for MaskedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            if t == self.vocab.mask_id() {
                f.write_str("_")?;
            } else {
                write!(f, "{t}")?;
            }
        }
        Ok(())
    }
}

/// Indices whose token is the mask sentinel, ascending.
pub fn masked_positions(seq: &MaskedSequence) -> Vec<usize> {
    let m = seq.vocab.mask_id();
    seq.tokens
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| (t == m).then_some(i))
        .collect()
}
