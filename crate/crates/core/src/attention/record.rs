use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::template::FilledPrompt;
use crate::text::Token;

/// Sum tolerance for rows produced in-process.
pub const PROVIDER_SUM_TOLERANCE: f64 = 1e-6;
/// Sum tolerance for rows read from disk (recorders may write rounded floats).
pub const LOADER_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed attention record: {0}")]
    Malformed(String),
    #[error("record has no tokens")]
    Empty,
    #[error("attention has {scores} entries for {tokens} tokens")]
    LengthMismatch { tokens: usize, scores: usize },
    #[error("attention entry {index} = {value} is not a probability")]
    BadScore { index: usize, value: f64 },
    #[error("attention sums to {sum}, expected 1 within {tolerance}")]
    BadSum { sum: f64, tolerance: f64 },
    #[error("context span {start}..{end} invalid for {tokens} tokens")]
    BadSpan {
        start: usize,
        end: usize,
        tokens: usize,
    },
    #[error("token {index} has offsets {start}..{end} (out of order or past the prompt end)")]
    BadToken {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("prompt hash mismatch: record has {found}, prompt is {expected}")]
    HashMismatch { expected: String, found: String },
}

/// Trigger-token attention over a tokenized prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<Token>,
    pub trigger_attention: Vec<f64>,
    /// Token range of the inserted context, end exclusive.
    pub doc_start: usize,
    pub doc_end: usize,
    pub provider_id: String,
    pub layer_policy: String,
}

impl AttentionRecord {
    pub fn validate(&self, sum_tolerance: f64) -> Result<(), RecordError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(RecordError::Empty);
        }
        if self.trigger_attention.len() != n {
            return Err(RecordError::LengthMismatch {
                tokens: n,
                scores: self.trigger_attention.len(),
            });
        }
        for (index, &value) in self.trigger_attention.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(RecordError::BadScore { index, value });
            }
        }
        let sum: f64 = self.trigger_attention.iter().sum();
        if (sum - 1.0).abs() > sum_tolerance {
            return Err(RecordError::BadSum {
                sum,
                tolerance: sum_tolerance,
            });
        }
        if self.doc_start >= self.doc_end || self.doc_end > n {
            return Err(RecordError::BadSpan {
                start: self.doc_start,
                end: self.doc_end,
                tokens: n,
            });
        }
        let mut prev_start = 0;
        for (index, t) in self.tokens.iter().enumerate() {
            if t.char_start > t.char_end || t.char_start < prev_start {
                return Err(RecordError::BadToken {
                    index,
                    start: t.char_start,
                    end: t.char_end,
                });
            }
            prev_start = t.char_start;
        }
        Ok(())
    }

    /// Serialize to the on-disk interchange format, bound to `prompt`.
    pub fn to_interchange(&self, prompt: &FilledPrompt) -> InterchangeRecord {
        InterchangeRecord {
            provider_id: self.provider_id.clone(),
            layer_policy: self.layer_policy.clone(),
            prompt_sha256: prompt_sha256(&prompt.text),
            tokens: self
                .tokens
                .iter()
                .map(|t| InterchangeToken {
                    s: t.surface.clone(),
                    cs: t.char_start,
                    ce: t.char_end,
                })
                .collect(),
            trigger_attention: self.trigger_attention.clone(),
            doc_start: self.doc_start,
            doc_end: self.doc_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeToken {
    pub s: String,
    pub cs: usize,
    pub ce: usize,
}

/// One attention record as stored on disk (one JSON object per file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeRecord {
    pub provider_id: String,
    pub layer_policy: String,
    pub prompt_sha256: String,
    pub tokens: Vec<InterchangeToken>,
    pub trigger_attention: Vec<f64>,
    pub doc_start: usize,
    pub doc_end: usize,
}

impl InterchangeRecord {
    pub fn into_record(self) -> AttentionRecord {
        AttentionRecord {
            tokens: self
                .tokens
                .into_iter()
                .enumerate()
                .map(|(i, t)| Token::new(i, t.cs, t.ce, t.s))
                .collect(),
            trigger_attention: self.trigger_attention,
            doc_start: self.doc_start,
            doc_end: self.doc_end,
            provider_id: self.provider_id,
            layer_policy: self.layer_policy,
        }
    }
}

pub fn prompt_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Parse and validate an interchange record for `prompt`.
pub fn parse_attention_record(json: &str, prompt: &FilledPrompt) -> Result<AttentionRecord, RecordError> {
    let raw: InterchangeRecord =
        serde_json::from_str(json).map_err(|e| RecordError::Malformed(e.to_string()))?;
    let expected = prompt_sha256(&prompt.text);
    if !raw.prompt_sha256.eq_ignore_ascii_case(&expected) {
        return Err(RecordError::HashMismatch {
            expected,
            found: raw.prompt_sha256,
        });
    }
    let record = raw.into_record();
    record.validate(LOADER_SUM_TOLERANCE)?;
    if let Some((index, t)) = record
        .tokens
        .iter()
        .enumerate()
        .find(|(_, t)| t.char_end > prompt.char_len)
    {
        return Err(RecordError::BadToken {
            index,
            start: t.char_start,
            end: t.char_end,
        });
    }
    Ok(record)
}

pub fn load_attention_record(path: &Path, prompt: &FilledPrompt) -> Result<AttentionRecord, RecordError> {
    let json = std::fs::read_to_string(path).map_err(|e| RecordError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_attention_record(&json, prompt)
}

/// Token range intersecting the character span `[start, end)`, or `None` if no
/// token touches it.
pub fn context_token_span(tokens: &[Token], (start, end): (usize, usize)) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.char_start < end && t.char_end > start {
            first.get_or_insert(i);
            last = i + 1;
        }
    }
    first.map(|f| (f, last))
}
