use rand::Rng;
use serde::Serialize;

use crate::diffusion::{forward_mask, NoiseSchedule};
use crate::distribution::KL_EPSILON;
use crate::error::{Error, Result};
use crate::models::DenoisingModel;
use crate::rng::stream;
use crate::sequence::MaskedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboEstimate {
    /// Mean over draws of the summed masked-token loss.
    pub mean: f64,
    /// Standard error of `mean`.
    pub std_err: f64,
    /// Total loss divided by total masked tokens.
    pub per_token_loss: f64,
    pub draws: usize,
    pub masked_tokens: usize,
}

/// Monte-Carlo estimate of the masked-diffusion training loss:
/// `E_t E_{x_t} Σ_{i masked} -ln p(x0_i | x_t)` with `t ~ U(0, 1)`.
///
/// Draws that happen to mask nothing contribute zero loss without a forward pass.
pub fn elbo_eval(
    model: &dyn DenoisingModel,
    corpus: &[MaskedSequence],
    schedule: NoiseSchedule,
    n_samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    if corpus.is_empty() {
        return Err(Error::precondition("ELBO corpus is empty"));
    }
    if n_samples == 0 {
        return Err(Error::precondition("ELBO needs at least one sample per sequence"));
    }
    let mut rng = stream(seed);
    let mut losses = Vec::with_capacity(n_samples * corpus.len());
    let mut masked_tokens = 0;
    for _ in 0..n_samples {
        for x0 in corpus {
            let t: f64 = rng.random();
            let xt = forward_mask(x0, t, schedule, &mut rng)?;
            let mut loss = 0.0;
            if xt.has_masks() {
                let dists = model.predict(&xt)?;
                for i in (0..xt.len()).filter(|&i| xt.is_masked(i)) {
                    loss -= dists[i].prob(x0.get(i)).max(KL_EPSILON).ln();
                    masked_tokens += 1;
                }
            }
            losses.push(loss);
        }
    }
    let n = losses.len() as f64;
    let total: f64 = losses.iter().sum();
    let mean = total / n;
    let var = if losses.len() > 1 {
        losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ElboEstimate {
        mean,
        std_err: (var / n).sqrt(),
        per_token_loss: if masked_tokens > 0 { total / masked_tokens as f64 } else { 0.0 },
        draws: losses.len(),
        masked_tokens,
    })
}

/// Longest sequence [`exact_elbo_linear`] will enumerate.
pub const EXACT_ELBO_MAX_LEN: usize = 16;

/// The quantity [`elbo_eval`] estimates as `mean`, computed by enumerating
/// every mask pattern, for the linear schedule. A pattern with `m` of `L`
/// positions masked has probability `∫ t^m (1-t)^(L-m) dt = 1 / ((L+1) C(L, m))`.
pub fn exact_elbo_linear(model: &dyn DenoisingModel, corpus: &[MaskedSequence]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::precondition("ELBO corpus is empty"));
    }
    let mut total = 0.0;
    for x0 in corpus {
        let len = x0.len();
        if len > EXACT_ELBO_MAX_LEN {
            return Err(Error::precondition(format!(
                "exact ELBO enumerates 2^L patterns; L = {len} exceeds {EXACT_ELBO_MAX_LEN}"
            )));
        }
        if x0.has_masks() {
            return Err(Error::precondition("ELBO corpus sequences must be clean"));
        }
        for pattern in 1u32..(1 << len) {
            let m = pattern.count_ones() as usize;
            let mut xt = x0.clone();
            (0..len).filter(|i| pattern >> i & 1 == 1).for_each(|i| xt.mask(i));
            let dists = model.predict(&xt)?;
            let loss: f64 = (0..len)
                .filter(|&i| xt.is_masked(i))
                .map(|i| -dists[i].prob(x0.get(i)).max(KL_EPSILON).ln())
                .sum();
            total += loss / ((len + 1) as f64 * binomial(len, m));
        }
    }
    Ok(total / corpus.len() as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
