//! Text containers and token/word alignment.
//!
//! All offsets in this crate are character offsets (Unicode scalar values),
//! end-exclusive. A word is a maximal run of non-whitespace characters;
//! punctuation stays attached to the word it touches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A word of a document, addressed by character offsets into the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
}

/// A model token, addressed by character offsets into the prompt it was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
}

impl Token {
    pub fn new(index: usize, char_start: usize, char_end: usize, surface: impl Into<String>) -> Self {
        Self {
            index,
            char_start,
            char_end,
            surface: surface.into(),
        }
    }
}

/// A retrieved document together with its word segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDocument")]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    #[serde(skip)]
    words: Vec<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_gold: Option<bool>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let words = segment_words(&text);
        Self {
            id: id.into(),
            title: None,
            text,
            words,
            is_gold: None,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_gold(mut self, is_gold: bool) -> Self {
        self.is_gold = Some(is_gold);
        self
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len_words(&self) -> usize {
        self.words.len()
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
    #[serde(default)]
    is_gold: Option<bool>,
}

impl From<RawDocument> for Document {
    fn from(raw: RawDocument) -> Self {
        let mut doc = Document::new(raw.id, raw.text);
        doc.title = raw.title;
        doc.is_gold = raw.is_gold;
        doc
    }
}

/// Token-to-word overlap map, stored in both directions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenWordMap {
    pub token_to_words: Vec<Vec<usize>>,
    pub word_to_tokens: Vec<Vec<usize>>,
}

impl TokenWordMap {
    /// Words that received no token.
    pub fn orphan_words(&self) -> Vec<usize> {
        self.word_to_tokens
            .iter()
            .enumerate()
            .filter(|(_, toks)| toks.is_empty())
            .map(|(w, _)| w)
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("token {index} has range {start}..{end} outside text of {len} chars")]
    TokenOutOfRange {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("word {0} has no aligned token")]
    UnmappedWord(usize),
}

/// Split `text` into maximal runs of non-whitespace characters.
pub fn segment_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut start: Option<(usize, usize)> = None; // (char offset, byte offset)
    let mut char_pos = 0;
    for (byte_pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some((cs, bs)) = start.take() {
                words.push(Word {
                    index: words.len(),
                    char_start: cs,
                    char_end: char_pos,
                    surface: text[bs..byte_pos].to_string(),
                });
            }
        } else if start.is_none() {
            start = Some((char_pos, byte_pos));
        }
        char_pos += 1;
    }
    if let Some((cs, bs)) = start {
        words.push(Word {
            index: words.len(),
            char_start: cs,
            char_end: char_pos,
            surface: text[bs..].to_string(),
        });
    }
    words
}

/// Align tokens to words by character-range intersection.
///
/// Both slices must address the same string of `text_len` characters. A token
/// that intersects no word (whitespace, or a zero-width special token) is
/// attached to the closest word ending at or before its start, or to the first
/// word when none precedes it.
pub fn map_tokens_to_words(
    tokens: &[Token],
    words: &[Word],
    text_len: usize,
) -> Result<TokenWordMap, AlignError> {
    let mut map = TokenWordMap {
        token_to_words: vec![Vec::new(); tokens.len()],
        word_to_tokens: vec![Vec::new(); words.len()],
    };
    for (ti, tok) in tokens.iter().enumerate() {
        if tok.char_start > tok.char_end || tok.char_end > text_len {
            return Err(AlignError::TokenOutOfRange {
                index: ti,
                start: tok.char_start,
                end: tok.char_end,
                len: text_len,
            });
        }
        if words.is_empty() {
            continue;
        }
        // words are sorted and disjoint: first word that ends after the token start
        let first = words.partition_point(|w| w.char_end <= tok.char_start);
        let mut hit = false;
        for (wi, w) in words.iter().enumerate().skip(first) {
            if w.char_start >= tok.char_end {
                break;
            }
            map.token_to_words[ti].push(wi);
            map.word_to_tokens[wi].push(ti);
            hit = true;
        }
        if !hit {
            let wi = first.saturating_sub(1);
            map.token_to_words[ti].push(wi);
            map.word_to_tokens[wi].push(ti);
        }
    }
    Ok(map)
}

/// Byte offset of character `char_idx` in `s` (or `s.len()` past the end).
pub(crate) fn byte_offset(s: &str, char_idx: usize) -> usize {
    s.char_indices().nth(char_idx).map_or(s.len(), |(b, _)| b)
}

/// Substring by character range.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let b0 = byte_offset(s, start);
    let b1 = b0 + byte_offset(&s[b0..], end.saturating_sub(start));
    &s[b0..b1]
}
