//! End-to-end compression of retrieved documents.
//!
//! Each document gets its own template fill and provider call, so the context
//! segment of every attention row is exactly one document. Budgets apply either
//! per document (`tau` of each document's words) or globally (`tau` of the
//! words of all documents, shared across them).

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionProvider, AttentionRecord, ProviderError, RecordError, LOADER_SUM_TOLERANCE};
use crate::eval::DatasetRecord;
use crate::filtering::{
    budget_words, dynamic_filter, phrase_filter, score_sentences, select_dynamic, select_phrase,
    select_sentences, sentence_filter, split_sentences, BudgetError, CompressedText, FilterMode,
    SentenceSpan,
};
use crate::scoring::{
    aggregate_to_words, gaussian_smooth, renormalize_context, ScoreError, DEFAULT_RADIUS, DEFAULT_SIGMA,
};
use crate::template::{fill_template, locate_trigger, FilledPrompt, PromptTemplate, TemplateError};
use crate::text::{map_tokens_to_words, AlignError, Document, Token, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScope {
    #[default]
    PerDocument,
    Global,
}

impl FromStr for BudgetScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-doc" | "per_doc" | "per_document" | "per-document" => Ok(Self::PerDocument),
            "global" => Ok(Self::Global),
            other => Err(format!("unknown budget scope {other:?} (expected per-doc or global)")),
        }
    }
}

impl fmt::Display for BudgetScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerDocument => "per-doc",
            Self::Global => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Retained fraction of words; the compression ratio is `1 / tau`.
    pub tau: f64,
    pub mode: FilterMode,
    pub scope: BudgetScope,
    pub sigma: f64,
    pub radius: usize,
    pub template: PromptTemplate,
    /// Worker threads for [`Compressor`].
    pub jobs: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            mode: FilterMode::Phrase,
            scope: BudgetScope::PerDocument,
            sigma: DEFAULT_SIGMA,
            radius: DEFAULT_RADIUS,
            template: PromptTemplate::default(),
            jobs: 1,
        }
    }
}

impl CompressionConfig {
    /// Config for a compression ratio `ratio = 1 / tau` (2.0 keeps half).
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            tau: 1.0 / ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.radius == 0 {
            return bad("radius must be at least 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("attention record: {0}")]
    Record(#[from] RecordError),
    #[error("trigger: {0}")]
    Template(#[from] TemplateError),
    #[error("alignment: {0}")]
    Align(#[from] AlignError),
    #[error("scoring: {0}")]
    Score(#[from] ScoreError),
    #[error("budget: {0}")]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("document {document}: {source}")]
    Document {
        document: String,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    fn at(document: &str) -> impl Fn(StageError) -> PipelineError + '_ {
        move |source| PipelineError::Document {
            document: document.to_string(),
            source,
        }
    }

    /// True when the failure came from the attention provider itself.
    pub fn is_provider_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Document {
                source: StageError::Provider(_),
                ..
            }
        )
    }
}

/// Per-word scores and selection flags, aligned with the source word array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTrace {
    pub words: Vec<String>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<f64>,
    pub selected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedDocument {
    pub id: String,
    pub compressed: CompressedText,
    pub trace: WordTrace,
    pub provider_id: String,
}

/// A document after scoring, before selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub id: String,
    pub words: Vec<Word>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<f64>,
    /// Sentence spans carrying their `alpha2` max score.
    pub sentences: Vec<SentenceSpan>,
    pub provider_id: String,
}

/// Context tokens re-addressed relative to the document text, clipped to it.
fn context_tokens(record: &AttentionRecord, prompt: &FilledPrompt) -> Vec<Token> {
    let (c0, c1) = prompt.context_char_span;
    let len = c1 - c0;
    record.tokens[record.doc_start..record.doc_end]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = t.char_start.saturating_sub(c0).min(len);
            let e = t.char_end.saturating_sub(c0).min(len).max(s);
            Token::new(i, s, e, t.surface.clone())
        })
        .collect()
}

fn score_with<F>(
    doc: &Document,
    query: &str,
    instruction: &str,
    config: &CompressionConfig,
    provider_id: &str,
    call: F,
) -> Result<ScoredDocument, StageError>
where
    F: Fn(&FilledPrompt) -> Result<AttentionRecord, ProviderError>,
{
    let words = doc.words().to_vec();
    if words.is_empty() {
        return Ok(ScoredDocument {
            id: doc.id.clone(),
            words,
            alpha2: Vec::new(),
            alpha3: Vec::new(),
            sentences: Vec::new(),
            provider_id: provider_id.to_string(),
        });
    }
    let prompt = fill_template(instruction, &doc.text, query, &config.template);
    let record = call(&prompt)?;
    record.validate(LOADER_SUM_TOLERANCE)?;
    locate_trigger(&prompt, &record.tokens)?;
    let alpha1 = renormalize_context(&record)?;
    let map = map_tokens_to_words(&context_tokens(&record, &prompt), &words, prompt.context_len())?;
    let alpha2 = aggregate_to_words(&alpha1, &map)?;
    let alpha3 = gaussian_smooth(&alpha2, config.sigma, config.radius)?;
    let sentences = score_sentences(&split_sentences(&words), &alpha2);
    Ok(ScoredDocument {
        id: doc.id.clone(),
        words,
        alpha2,
        alpha3,
        sentences,
        provider_id: record.provider_id,
    })
}

/// Template fill, provider call and scoring of one document.
pub fn score_document(
    doc: &Document,
    query: &str,
    instruction: &str,
    config: &CompressionConfig,
    provider: &dyn AttentionProvider,
) -> Result<ScoredDocument, PipelineError> {
    config.validate()?;
    score_with(doc, query, instruction, config, provider.id(), |p| {
        provider.trigger_attention(p)
    })
    .map_err(PipelineError::at(&doc.id))
}

fn finish(scored: ScoredDocument, compressed: CompressedText) -> CompressedDocument {
    let mut selected = vec![false; scored.words.len()];
    for &i in &compressed.selected_word_indices {
        selected[i] = true;
    }
    CompressedDocument {
        id: scored.id,
        compressed,
        trace: WordTrace {
            words: scored.words.into_iter().map(|w| w.surface).collect(),
            alpha2: scored.alpha2,
            alpha3: scored.alpha3,
            selected,
        },
        provider_id: scored.provider_id,
    }
}

/// Apply the configured filter to one scored document with its own budget.
pub fn select_document(scored: ScoredDocument, config: &CompressionConfig) -> Result<CompressedDocument, PipelineError> {
    let s = &scored;
    let compressed = match config.mode {
        FilterMode::Phrase => phrase_filter(&s.words, &s.alpha3, config.tau),
        FilterMode::Sentence => sentence_filter(&s.words, &s.sentences, &s.alpha2, config.tau),
        FilterMode::Dynamic => dynamic_filter(&s.words, &s.sentences, &s.alpha2, &s.alpha3, config.tau),
    }
    .map_err(|e| PipelineError::at(&scored.id)(e.into()))?;
    Ok(finish(scored, compressed))
}

/// One budget shared by all documents; sentences never cross documents.
pub fn select_global(
    scored: Vec<ScoredDocument>,
    config: &CompressionConfig,
) -> Result<Vec<CompressedDocument>, PipelineError> {
    let mut offsets = Vec::with_capacity(scored.len() + 1);
    let mut alpha2 = Vec::new();
    let mut alpha3 = Vec::new();
    let mut sentences = Vec::new();
    for s in &scored {
        let base = alpha2.len();
        offsets.push(base);
        alpha2.extend_from_slice(&s.alpha2);
        alpha3.extend_from_slice(&s.alpha3);
        sentences.extend(s.sentences.iter().map(|sp| SentenceSpan {
            word_start: sp.word_start + base,
            word_end: sp.word_end + base,
            score: sp.score,
        }));
    }
    offsets.push(alpha2.len());
    let k = budget_words(alpha2.len(), config.tau).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut fallback = false;
    let picked = match config.mode {
        FilterMode::Phrase => select_phrase(&alpha3, k),
        FilterMode::Sentence => {
            let chosen = select_sentences(&sentences, k);
            if chosen.is_empty() && k > 0 {
                fallback = true;
                select_phrase(&alpha2, k)
            } else {
                chosen
                    .iter()
                    .flat_map(|&i| sentences[i].word_start..sentences[i].word_end)
                    .collect()
            }
        }
        FilterMode::Dynamic => select_dynamic(&sentences, &alpha3, k),
    };
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(d, s)| {
            let (lo, hi) = (offsets[d], offsets[d + 1]);
            let local: Vec<usize> = picked
                .iter()
                .filter(|&&i| (lo..hi).contains(&i))
                .map(|&i| i - lo)
                .collect();
            let compressed = CompressedText::from_indices(&s.words, local, fallback);
            finish(s, compressed)
        })
        .collect())
}

/// Compress one document at the configured ratio.
pub fn compress_document(
    doc: &Document,
    query: &str,
    instruction: &str,
    config: &CompressionConfig,
    provider: &dyn AttentionProvider,
) -> Result<CompressedDocument, PipelineError> {
    select_document(score_document(doc, query, instruction, config, provider)?, config)
}

/// Compress every document of a context, sequentially.
pub fn compress_context(
    docs: &[Document],
    query: &str,
    instruction: &str,
    config: &CompressionConfig,
    provider: &dyn AttentionProvider,
) -> Result<Vec<CompressedDocument>, PipelineError> {
    let scored = docs
        .iter()
        .map(|d| score_document(d, query, instruction, config, provider))
        .collect::<Result<Vec<_>, _>>()?;
    select_all(scored, config)
}

fn select_all(scored: Vec<ScoredDocument>, config: &CompressionConfig) -> Result<Vec<CompressedDocument>, PipelineError> {
    match config.scope {
        BudgetScope::PerDocument => scored.into_iter().map(|s| select_document(s, config)).collect(),
        BudgetScope::Global => select_global(scored, config),
    }
}

/// Parallel compression engine bound to one provider.
///
/// Documents are scored on a private thread pool of `config.jobs` threads.
/// Providers that are not concurrency-safe are called one at a time. Output
/// order always follows input order.
pub struct Compressor<P> {
    config: CompressionConfig,
    provider: P,
    gate: Mutex<()>,
    pool: rayon::ThreadPool,
}

impl<P: AttentionProvider> Compressor<P> {
    pub fn new(config: CompressionConfig, provider: P) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            config,
            provider,
            gate: Mutex::new(()),
            pool,
        })
    }

    pub fn config(&self) -> &CompressionConfig {
        &self.config
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    fn score(&self, doc: &Document, query: &str, instruction: &str) -> Result<ScoredDocument, PipelineError> {
        score_with(doc, query, instruction, &self.config, self.provider.id(), |p| {
            if self.provider.is_concurrent() {
                self.provider.trigger_attention(p)
            } else {
                let _guard = self.gate.lock().unwrap_or_else(|e| e.into_inner());
                self.provider.trigger_attention(p)
            }
        })
        .map_err(PipelineError::at(&doc.id))
    }

    pub fn compress_document(
        &self,
        doc: &Document,
        query: &str,
        instruction: &str,
    ) -> Result<CompressedDocument, PipelineError> {
        select_document(self.score(doc, query, instruction)?, &self.config)
    }

    pub fn compress_context(
        &self,
        docs: &[Document],
        query: &str,
        instruction: &str,
    ) -> Result<Vec<CompressedDocument>, PipelineError> {
        let scored = self.pool.install(|| {
            docs.par_iter()
                .map(|d| self.score(d, query, instruction))
                .collect::<Result<Vec<_>, _>>()
        })?;
        select_all(scored, &self.config)
    }

    /// Compress the documents of many records in parallel; element `i` of the
    /// result belongs to record `i`. Records without an instruction use
    /// `default_instruction`.
    pub fn compress_records(
        &self,
        records: &[DatasetRecord],
        default_instruction: &str,
    ) -> Vec<Result<Vec<CompressedDocument>, PipelineError>> {
        self.pool.install(|| {
            records
                .par_iter()
                .map(|r| {
                    let instruction = r.instruction.as_deref().unwrap_or(default_instruction);
                    self.compress_context(&r.documents, &r.query, instruction)
                })
                .collect()
        })
    }
}
