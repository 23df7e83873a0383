use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::Oracle;
use crate::rng::{mix_seed, stream};
use crate::sequence::Token;

/// Stream tag separating task sampling from generation seeds.
const TASK_STREAM: u64 = 0x7461_736b;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Task {
    pub id: usize,
    pub prompt: Vec<Token>,
    /// Maximum-probability answer region given the prompt.
    pub reference: Vec<Token>,
    pub length: usize,
}

impl Task {
    pub fn answer_range(&self) -> std::ops::Range<usize> {
        self.prompt.len()..self.length
    }
}

/// Prompts are prefixes of oracle samples; references are exact argmax completions.
pub fn make_tasks(oracle: &Oracle, count: usize, prompt_len: usize, len: usize, seed: u64) -> Result<Vec<Task>> {
    if prompt_len >= len {
        return Err(Error::precondition(format!(
            "prompt length {prompt_len} must be shorter than sequence length {len}"
        )));
    }
    (0..count)
        .map(|id| {
            let mut rng = stream(mix_seed(seed, id as u64, TASK_STREAM));
            let full = oracle.sample(len, &mut rng)?;
            let prompt = full[..prompt_len].to_vec();
            let best = oracle.best_completion(&prompt, len)?;
            Ok(Task {
                id,
                prompt,
                reference: best[prompt_len..].to_vec(),
                length: len,
            })
        })
        .collect()
}
