//! From raw trigger attention to per-word importance.
//!
//! Three steps: softmax over the context slice of the attention row, max over
//! the tokens of each word, then a discrete Gaussian filter over the word
//! scores so that neighbours of high-scoring words inherit part of their mass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionRecord;
use crate::text::{TokenWordMap, Word};

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_RADIUS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("context token span {start}..{end} is empty or exceeds {len} scores")]
    EmptyContext { start: usize, end: usize, len: usize },
    #[error("word {0} has no aligned token")]
    UnmappedWord(usize),
    #[error("word {word} maps to token {token} but only {len} context tokens are scored")]
    TokenOutOfRange { word: usize, token: usize, len: usize },
    #[error("gaussian sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("gaussian radius must be at least 1")]
    BadRadius,
}

/// Word array with its unsmoothed and (optionally) smoothed scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWords {
    pub words: Vec<Word>,
    pub alpha2: Vec<f64>,
    pub alpha3: Option<Vec<f64>>,
    pub sigma: f64,
    pub radius: usize,
}

/// Numerically stable softmax with sequential accumulation.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let mut sum = 0.0;
    for &e in &out {
        sum += e;
    }
    out.iter_mut().for_each(|e| *e /= sum);
    out
}

/// Softmax over `trigger_attention[doc_start..doc_end]`.
///
/// The inputs are themselves probabilities, so this flattens the
/// distribution: every output lies within a factor `e` of uniform.
pub fn renormalize_context(record: &AttentionRecord) -> Result<Vec<f64>, ScoreError> {
    let (start, end, len) = (record.doc_start, record.doc_end, record.trigger_attention.len());
    if start >= end || end > len {
        return Err(ScoreError::EmptyContext { start, end, len });
    }
    Ok(softmax(&record.trigger_attention[start..end]))
}

/// Per-word score = max over the word's tokens. `alpha1` is indexed by context
/// token (0 = first context token), the same indexing as `map`.
pub fn aggregate_to_words(alpha1: &[f64], map: &TokenWordMap) -> Result<Vec<f64>, ScoreError> {
    map.word_to_tokens
        .iter()
        .enumerate()
        .map(|(w, toks)| {
            let mut best: Option<f64> = None;
            for &t in toks {
                let a = *alpha1.get(t).ok_or(ScoreError::TokenOutOfRange {
                    word: w,
                    token: t,
                    len: alpha1.len(),
                })?;
                best = Some(best.map_or(a, |b: f64| b.max(a)));
            }
            best.ok_or(ScoreError::UnmappedWord(w))
        })
        .collect()
}

/// Unit-sum kernel `exp(-d^2 / 2 sigma^2)` for `d` in `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Vec<f64>, ScoreError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ScoreError::BadSigma(sigma));
    }
    if radius == 0 {
        return Err(ScoreError::BadRadius);
    }
    let r = radius as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    Ok(k)
}

/// Reflect an index into `0..n` using half-sample symmetric extension
/// (`c b a | a b c | c b a`), repeated as often as needed.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Discrete Gaussian filter with symmetric reflection at both ends.
///
/// The filter matrix has unit row and column sums: constants are fixed points
/// and total mass is preserved, so nothing leaks at document edges.
pub fn gaussian_smooth(alpha2: &[f64], sigma: f64, radius: usize) -> Result<Vec<f64>, ScoreError> {
    let kernel = gaussian_kernel(sigma, radius)?;
    let n = alpha2.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let r = radius as i64;
    Ok((0..n as i64)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * alpha2[reflect(i + k as i64 - r, n)];
            }
            acc
        })
        .collect())
}
