//! Deterministic single-layer multi-head causal attention.
//!
//! Embeddings and projections are drawn from ChaCha8 streams keyed by the
//! configured seed: stream 0 holds the query/key projections, stream `1 + id`
//! holds the embedding row of token `id`, and stream `2^63 + p` the position
//! embedding of position `p`. Accumulation is sequential so rows
//! are bit-stable across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{context_token_span, AttentionProvider, AttentionRecord, ProviderError};
use crate::scoring::softmax;
use crate::template::FilledPrompt;
use crate::text::Token;

pub const CHUNK_CHARS: usize = 4;
const POSITION_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceModelConfig {
    pub vocab_size: u32,
    pub embed_dim: usize,
    pub head_count: usize,
    pub seed: u64,
}

impl Default for ReferenceModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            embed_dim: 64,
            head_count: 4,
            seed: 0,
        }
    }
}

impl ReferenceModelConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Whitespace split, then runs longer than four characters cut into
/// four-character chunks.
pub fn ref_tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for word in crate::text::segment_words(text) {
        let chars: Vec<char> = word.surface.chars().collect();
        for (k, chunk) in chars.chunks(CHUNK_CHARS).enumerate() {
            let start = word.char_start + k * CHUNK_CHARS;
            tokens.push(Token::new(
                tokens.len(),
                start,
                start + chunk.len(),
                chunk.iter().collect::<String>(),
            ));
        }
    }
    tokens
}

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ReferenceModel {
    config: ReferenceModelConfig,
    /// Row-major `embed_dim x embed_dim`; head `h` owns columns
    /// `h*head_dim..(h+1)*head_dim`.
    w_query: Vec<f64>,
    w_key: Vec<f64>,
}

impl ReferenceModel {
    /// Panics if the config is degenerate (zero sizes, or `embed_dim` not a
    /// multiple of `head_count`).
    pub fn new(config: ReferenceModelConfig) -> Self {
        assert!(config.vocab_size > 0, "vocab_size must be positive");
        assert!(config.head_count > 0 && config.embed_dim > 0);
        assert!(
            config.embed_dim.is_multiple_of(config.head_count),
            "embed_dim must be divisible by head_count"
        );
        let d = config.embed_dim;
        let scale = (3.0 / d as f64).sqrt();
        let mut rng = stream(config.seed, 0);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        let w_query = draw(d * d);
        let w_key = draw(d * d);
        Self {
            config,
            w_query,
            w_key,
        }
    }

    pub fn config(&self) -> &ReferenceModelConfig {
        &self.config
    }

    pub fn token_id(&self, surface: &str) -> u32 {
        (fnv1a(surface.as_bytes()) % u64::from(self.config.vocab_size)) as u32
    }

    fn embed(&self, id: u32, position: usize) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut tok = stream(self.config.seed, 1 + u64::from(id));
        let mut pos = stream(self.config.seed, POSITION_STREAM_BASE + position as u64);
        (0..d)
            .map(|_| tok.gen_range(-1.0..1.0) + 0.5 * pos.gen_range(-1.0..1.0))
            .collect()
    }

    fn project(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut out = vec![0.0; d];
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * d..(i + 1) * d];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        out
    }

    fn queries_and_keys(&self, ids: &[u32]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let embeddings: Vec<Vec<f64>> = ids.iter().enumerate().map(|(p, &id)| self.embed(id, p)).collect();
        let q = embeddings.iter().map(|x| self.project(x, &self.w_query)).collect();
        let k = embeddings.iter().map(|x| self.project(x, &self.w_key)).collect();
        (q, k)
    }

    /// Head-mean causal attention row of position `pos` (length `pos + 1`).
    fn row(&self, q: &[f64], keys: &[Vec<f64>]) -> Vec<f64> {
        let heads = self.config.head_count;
        let hd = self.config.embed_dim / heads;
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut mean = vec![0.0; keys.len()];
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            let logits: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let mut dot = 0.0;
                    for c in cols.clone() {
                        dot += q[c] * k[c];
                    }
                    dot * inv_sqrt
                })
                .collect();
            for (m, p) in mean.iter_mut().zip(softmax(&logits)) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= heads as f64);
        mean
    }

    /// Attention row of the last position over all positions.
    pub fn last_row(&self, ids: &[u32]) -> Vec<f64> {
        if ids.is_empty() {
            return Vec::new();
        }
        let embeddings: Vec<Vec<f64>> = ids.iter().enumerate().map(|(p, &id)| self.embed(id, p)).collect();
        let keys: Vec<Vec<f64>> = embeddings.iter().map(|x| self.project(x, &self.w_key)).collect();
        let query = self.project(&embeddings[ids.len() - 1], &self.w_query);
        self.row(&query, &keys)
    }

    /// Full `n x n` head-mean attention matrix; row `i` is zero past column `i`.
    pub fn attention_matrix(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let n = ids.len();
        let (q, k) = self.queries_and_keys(ids);
        (0..n)
            .map(|i| {
                let mut row = self.row(&q[i], &k[..=i]);
                row.resize(n, 0.0);
                row
            })
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// [`AttentionProvider`] backed by [`ReferenceModel`] and [`ref_tokenize`].
#[derive(Debug, Clone)]
pub struct ReferenceProvider {
    model: ReferenceModel,
}

impl ReferenceProvider {
    pub const ID: &'static str = "reference";
    pub const LAYER_POLICY: &'static str = "single-layer/head-mean";

    pub fn new(config: ReferenceModelConfig) -> Self {
        Self {
            model: ReferenceModel::new(config),
        }
    }

    pub fn model(&self) -> &ReferenceModel {
        &self.model
    }
}

impl AttentionProvider for ReferenceProvider {
    fn id(&self) -> &str {
        Self::ID
    }

    fn trigger_attention(&self, prompt: &FilledPrompt) -> Result<AttentionRecord, ProviderError> {
        let unavailable = |message: &str| ProviderError::Unavailable {
            provider: Self::ID.into(),
            message: message.into(),
        };
        let tokens = ref_tokenize(&prompt.text);
        if tokens.is_empty() {
            return Err(unavailable("prompt has no tokens"));
        }
        let ids: Vec<u32> = tokens.iter().map(|t| self.model.token_id(&t.surface)).collect();
        let (doc_start, doc_end) = context_token_span(&tokens, prompt.context_char_span)
            .ok_or_else(|| unavailable("context span holds no tokens"))?;
        let record = AttentionRecord {
            trigger_attention: self.model.last_row(&ids),
            tokens,
            doc_start,
            doc_end,
            provider_id: Self::ID.into(),
            layer_policy: Self::LAYER_POLICY.into(),
        };
        record
            .validate(super::PROVIDER_SUM_TOLERANCE)
            .map_err(|source| ProviderError::InvalidRecord {
                provider: Self::ID.into(),
                source,
            })?;
        Ok(record)
    }
}
