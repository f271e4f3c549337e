//! Temperature, top-k and nucleus sampling over a logits row.

use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    /// Zero selects greedy decoding.
    pub temperature: f64,
    /// Zero disables the top-k cut.
    pub top_k: u32,
    pub top_p: f64,
    pub max_tokens: u32,
    pub rng_seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            top_k: 0,
            top_p: 0.95,
            max_tokens: 80,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid sampling parameter: {0}")]
pub struct InvalidSampling(pub &'static str);

impl SamplingParams {
    pub fn validate(&self) -> Result<(), InvalidSampling> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(InvalidSampling("temperature must be a non-negative number"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(InvalidSampling("top_p must lie in (0, 1]"));
        }
        if self.max_tokens == 0 {
            return Err(InvalidSampling("max_tokens must be at least 1"));
        }
        Ok(())
    }
}

/// Index of the largest logit, lowest index on ties. NaN never wins.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] || logits[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best as u32
}

/// The candidate set a draw is made from: `(token, probability)` in
/// descending probability order (ascending id on ties), renormalised.
///
/// Probabilities are `softmax(logits / temperature)`; the `top_k` most
/// likely tokens are kept when `top_k > 0`, then the shortest prefix whose
/// mass reaches `top_p`.
pub fn candidates(logits: &[f32], params: &SamplingParams) -> Vec<(u32, f64)> {
    if logits.is_empty() {
        return Vec::new();
    }
    if params.temperature == 0.0 {
        return alloc::vec![(argmax(logits), 1.0)];
    }
    let scaled: Vec<f64> = logits
        .iter()
        .map(|&v| if v.is_nan() { f64::NEG_INFINITY } else { v as f64 / params.temperature })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return alloc::vec![(0, 1.0)];
    }
    let mut probs: Vec<(u32, f64)> = scaled
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u32, libm::exp(v - max)))
        .collect();
    let total: f64 = probs.iter().map(|p| p.1).sum();
    probs.iter_mut().for_each(|p| p.1 /= total);
    probs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));

    if params.top_k > 0 {
        probs.truncate(params.top_k as usize);
        renormalise(&mut probs);
    }
    let mut cum = 0.0;
    let mut keep = probs.len();
    for (i, p) in probs.iter().enumerate() {
        cum += p.1;
        if cum >= params.top_p {
            keep = i + 1;
            break;
        }
    }
    probs.truncate(keep);
    renormalise(&mut probs);
    probs
}

fn renormalise(probs: &mut [(u32, f64)]) {
    let total: f64 = probs.iter().map(|p| p.1).sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| p.1 /= total);
    }
}

/// Inverse-CDF draw: the first candidate whose cumulative mass exceeds `u`.
pub fn inverse_cdf(cands: &[(u32, f64)], u: f64) -> u32 {
    let mut cum = 0.0;
    for &(tok, p) in cands {
        cum += p;
        if u < cum {
            return tok;
        }
    }
    cands
        .iter()
        .rev()
        .find(|c| c.1 > 0.0)
        .or(cands.last())
        .map_or(0, |c| c.0)
}

/// Samples the next token. Greedy decoding consumes no randomness.
pub fn sample_next<R: RngCore + ?Sized>(logits: &[f32], params: &SamplingParams, rng: &mut R) -> u32 {
    if params.temperature == 0.0 {
        return argmax(logits);
    }
    let cands = candidates(logits, params);
    let u: f64 = rng.random();
    inverse_cdf(&cands, u)
}
