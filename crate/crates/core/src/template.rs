//! Conversational prompt template and span tracking.
//!
//! A template is a literal string carrying exactly one each of the `{s}`
//! (instruction), `{c}` (context) and `{q}` (query) placeholders. Text after
//! the last placeholder is the generation cue; its final token is the trigger
//! whose attention row scores the context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Token;

pub const DEFAULT_TEMPLATE: &str =
    "System: {s}\nUser: Context:\n{c}\n\nQuestion: {q}\nAssistant: Answer:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("template has more than one {0} placeholder")]
    DuplicatePlaceholder(&'static str),
    #[error("template must end with a non-empty generation cue after the last placeholder")]
    EmptyCue,
    #[error("empty token sequence has no trigger")]
    NoTokens,
    #[error("tokenization stops at char {end} but the prompt has {len} chars")]
    TruncatedTokens { end: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Instruction,
    Context,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    pattern: String,
    #[serde(skip)]
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(pattern: &str) -> Result<Self, TemplateError> {
        const MARKERS: [(&str, Slot, &str); 3] = [
            ("{s}", Slot::Instruction, "{s}"),
            ("{c}", Slot::Context, "{c}"),
            ("{q}", Slot::Query, "{q}"),
        ];
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut seen = [false; 3];
        let mut rest = pattern;
        'outer: while !rest.is_empty() {
            for (i, (marker, slot, name)) in MARKERS.iter().enumerate() {
                if let Some(tail) = rest.strip_prefix(marker) {
                    if seen[i] {
                        return Err(TemplateError::DuplicatePlaceholder(name));
                    }
                    seen[i] = true;
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(*slot));
                    rest = tail;
                    continue 'outer;
                }
            }
            let ch = rest.chars().next().unwrap_or_default();
            literal.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        for (i, (_, _, name)) in MARKERS.iter().enumerate() {
            if !seen[i] {
                return Err(TemplateError::MissingPlaceholder(name));
            }
        }
        if literal.is_empty() {
            return Err(TemplateError::EmptyCue);
        }
        segments.push(Segment::Literal(literal));
        Ok(Self {
            pattern: pattern.to_string(),
            segments,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// The literal text after the last placeholder.
    pub fn generation_cue(&self) -> &str {
        match self.segments.last() {
            Some(Segment::Literal(s)) => s,
            _ => unreachable!("parse guarantees a trailing literal"),
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.pattern
    }
}

/// Template output with the character spans of the inserted context and query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledPrompt {
    pub text: String,
    pub context_char_span: (usize, usize),
    pub query_char_span: (usize, usize),
    /// Length of `text` in chars.
    pub char_len: usize,
}

impl FilledPrompt {
    pub fn context_len(&self) -> usize {
        self.context_char_span.1 - self.context_char_span.0
    }
}

/// Literal substitution; spans come from insertion offsets, never from searching
/// the output.
pub fn fill_template(
    instruction: &str,
    context_text: &str,
    query: &str,
    template: &PromptTemplate,
) -> FilledPrompt {
    let mut text = String::new();
    let mut pos = 0;
    let mut context_char_span = (0, 0);
    let mut query_char_span = (0, 0);
    for seg in &template.segments {
        let piece = match seg {
            Segment::Literal(s) => s.as_str(),
            Segment::Slot(Slot::Instruction) => instruction,
            Segment::Slot(Slot::Context) => context_text,
            Segment::Slot(Slot::Query) => query,
        };
        let len = piece.chars().count();
        match seg {
            Segment::Slot(Slot::Context) => context_char_span = (pos, pos + len),
            Segment::Slot(Slot::Query) => query_char_span = (pos, pos + len),
            _ => {}
        }
        text.push_str(piece);
        pos += len;
    }
    FilledPrompt {
        text,
        context_char_span,
        query_char_span,
        char_len: pos,
    }
}

/// Index of the trigger token: the last one.
///
/// Tokenization must reach the end of the prompt; only trailing whitespace may
/// be left uncovered.
pub fn locate_trigger(prompt: &FilledPrompt, tokens: &[Token]) -> Result<usize, TemplateError> {
    let last = tokens.last().ok_or(TemplateError::NoTokens)?;
    let tail_ws = prompt
        .text
        .chars()
        .rev()
        .take_while(|c| c.is_whitespace())
        .count();
    if last.char_end < prompt.char_len - tail_ws || last.char_end > prompt.char_len {
        return Err(TemplateError::TruncatedTokens {
            end: last.char_end,
            len: prompt.char_len,
        });
    }
    Ok(tokens.len() - 1)
}
