//! Budget-constrained word selection.
//!
//! Every filter keeps at most `budget_words(L, tau)` of a document's `L` words
//! and emits the survivors in their original order. Ties in score are always
//! broken toward the earlier position.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Word;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("retained fraction tau must lie in (0, 1], got {0}")]
    BadTau(f64),
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Phrase,
    Sentence,
    Dynamic,
}

impl FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phrase" => Ok(Self::Phrase),
            "sentence" => Ok(Self::Sentence),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown filter mode {other:?} (expected phrase, sentence or dynamic)")),
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Phrase => "phrase",
            Self::Sentence => "sentence",
            Self::Dynamic => "dynamic",
        })
    }
}

/// A sentence as a half-open word range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub word_start: usize,
    pub word_end: usize,
    pub score: f64,
}

impl SentenceSpan {
    pub fn len(&self) -> usize {
        self.word_end - self.word_start
    }

    pub fn is_empty(&self) -> bool {
        self.word_end == self.word_start
    }
}

/// Selected words of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedText {
    pub selected_word_indices: Vec<usize>,
    pub rendered: String,
    pub source_words: usize,
    /// `source_words / max(1, kept)`.
    pub achieved_ratio: f64,
    /// Set when the sentence filter found no sentence within budget and fell
    /// back to word selection.
    #[serde(default)]
    pub fallback: bool,
}

impl CompressedText {
    pub fn from_indices(words: &[Word], selected: Vec<usize>, fallback: bool) -> Self {
        let rendered = selected
            .iter()
            .map(|&i| words[i].surface.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let achieved_ratio = words.len() as f64 / selected.len().max(1) as f64;
        Self {
            selected_word_indices: selected,
            rendered,
            source_words: words.len(),
            achieved_ratio,
            fallback,
        }
    }

    pub fn kept_words(&self) -> usize {
        self.selected_word_indices.len()
    }
}

/// `min(L, max(1, floor(tau * L)))`, and 0 for an empty document.
pub fn budget_words(len: usize, tau: f64) -> Result<usize, BudgetError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(BudgetError::BadTau(tau));
    }
    if len == 0 {
        return Ok(0);
    }
    Ok(((tau * len as f64).floor() as usize).clamp(1, len))
}

/// Indices of the `k` best eligible scores, best first; ties go to the smaller
/// index. The result is a prefix of one fixed ranking, so growing `k` only
/// ever adds indices.
pub fn rank_top_k(scores: &[f64], k: usize, eligible: Option<&[bool]>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| eligible.is_none_or(|e| e[i]))
        .collect();
    // sort_by is stable, and indices start ascending
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order
}

/// Top-`k` words by score, returned in ascending index order.
pub fn select_phrase(scores: &[f64], k: usize) -> Vec<usize> {
    let mut picked = rank_top_k(scores, k, None);
    picked.sort_unstable();
    picked
}

/// Greedy best-fit over sentences ordered by score (ties: earlier sentence).
/// Returns the chosen sentence indices in document order. A sentence that does
/// not fit is skipped and the scan continues.
pub fn select_sentences(sentences: &[SentenceSpan], budget: usize) -> Vec<usize> {
    let scores: Vec<f64> = sentences.iter().map(|s| s.score).collect();
    let mut used = 0;
    let mut chosen = Vec::new();
    for s in rank_top_k(&scores, sentences.len(), None) {
        let len = sentences[s].len();
        if used + len <= budget {
            used += len;
            chosen.push(s);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Word indices covered by the given sentences.
fn sentence_words(sentences: &[SentenceSpan], chosen: &[usize]) -> Vec<usize> {
    chosen
        .iter()
        .flat_map(|&s| sentences[s].word_start..sentences[s].word_end)
        .collect()
}

/// Sentence stage, then top up to exactly `budget` words from the words the
/// sentences left out, ranked by `alpha3`.
pub fn select_dynamic(sentences: &[SentenceSpan], alpha3: &[f64], budget: usize) -> Vec<usize> {
    let mut picked = sentence_words(sentences, &select_sentences(sentences, budget));
    let mut free = vec![true; alpha3.len()];
    for &i in &picked {
        free[i] = false;
    }
    let extra = budget.saturating_sub(picked.len());
    picked.extend(rank_top_k(alpha3, extra, Some(&free)));
    picked.sort_unstable();
    picked
}

/// Attach `max(alpha2)` over each sentence's words as its score.
pub fn score_sentences(sentences: &[SentenceSpan], alpha2: &[f64]) -> Vec<SentenceSpan> {
    sentences
        .iter()
        .map(|s| SentenceSpan {
            score: alpha2[s.word_start..s.word_end]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            ..*s
        })
        .collect()
}

const TERMINATORS: [char; 6] = ['.', '!', '?', '。', '！', '？'];
const CLOSERS: [char; 9] = ['"', '\'', '”', '’', ')', ']', '}', '»', '」'];
const OPENERS: [char; 9] = ['"', '\'', '“', '‘', '(', '[', '{', '«', '「'];
const ABBREVIATIONS: [&str; 15] = [
    "Mr", "Mrs", "Ms", "Dr", "Prof", "St", "vs", "etc", "e.g", "i.e", "Fig", "No", "U.S", "a.m", "p.m",
];

fn ends_sentence(surface: &str) -> bool {
    let core = surface.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !TERMINATORS.contains(&last) {
        return false;
    }
    if last == '.' {
        let stem = core[..core.len() - 1].trim_start_matches(OPENERS);
        if ABBREVIATIONS.contains(&stem) {
            return false;
        }
    }
    true
}

/// Rule-based sentence boundaries over a word array. A sentence ends after a
/// word ending in `.`, `!`, `?` (or the full-width forms), optionally followed
/// by closing quotes or brackets, unless the word is a known abbreviation. The
/// returned spans partition `0..words.len()`; scores are left at zero.
pub fn split_sentences(words: &[Word]) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if ends_sentence(&w.surface) {
            spans.push(SentenceSpan {
                word_start: start,
                word_end: i + 1,
                score: 0.0,
            });
            start = i + 1;
        }
    }
    if start < words.len() {
        spans.push(SentenceSpan {
            word_start: start,
            word_end: words.len(),
            score: 0.0,
        });
    }
    spans
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), BudgetError> {
    if got == expected {
        Ok(())
    } else {
        Err(BudgetError::LengthMismatch { what, got, expected })
    }
}

/// Top-`tau L` words by smoothed score, in original order.
pub fn phrase_filter(words: &[Word], alpha3: &[f64], tau: f64) -> Result<CompressedText, BudgetError> {
    check_len("alpha3", alpha3.len(), words.len())?;
    let k = budget_words(words.len(), tau)?;
    Ok(CompressedText::from_indices(words, select_phrase(alpha3, k), false))
}

/// Whole sentences by descending max word score while they fit the budget.
/// Falls back to [`phrase_filter`] on `alpha2` when no sentence fits.
pub fn sentence_filter(
    words: &[Word],
    sentences: &[SentenceSpan],
    alpha2: &[f64],
    tau: f64,
) -> Result<CompressedText, BudgetError> {
    check_len("alpha2", alpha2.len(), words.len())?;
    let k = budget_words(words.len(), tau)?;
    let scored = score_sentences(sentences, alpha2);
    let chosen = select_sentences(&scored, k);
    if chosen.is_empty() && k > 0 {
        return Ok(CompressedText::from_indices(words, select_phrase(alpha2, k), true));
    }
    Ok(CompressedText::from_indices(words, sentence_words(&scored, &chosen), false))
}

/// Sentence selection topped up with single words to hit the budget exactly.
pub fn dynamic_filter(
    words: &[Word],
    sentences: &[SentenceSpan],
    alpha2: &[f64],
    alpha3: &[f64],
    tau: f64,
) -> Result<CompressedText, BudgetError> {
    check_len("alpha2", alpha2.len(), words.len())?;
    check_len("alpha3", alpha3.len(), words.len())?;
    let k = budget_words(words.len(), tau)?;
    let scored = score_sentences(sentences, alpha2);
    Ok(CompressedText::from_indices(words, select_dynamic(&scored, alpha3, k), false))
}
