//! Trigger-attention providers and the attention interchange format.
//!
//! A provider turns a [`FilledPrompt`] into an [`AttentionRecord`]: the prompt's
//! tokens, the attention row of the last (trigger) token over all of them, and
//! the token range holding the inserted context.
//!
//! Three providers exist: [`ReferenceProvider`] (a seeded single-layer
//! transformer, no external weights), [`RecordedProvider`] (reads records
//! produced offline by a real model) and a remote provider in the CLI crate.
//! External recorders should emit the final layer's attention averaged over
//! heads and say so in `layer_policy`.

mod record;
mod recorded;
mod reference;

pub use record::{
    context_token_span, load_attention_record, parse_attention_record, prompt_sha256,
    AttentionRecord, InterchangeRecord, InterchangeToken, RecordError, PROVIDER_SUM_TOLERANCE,
    LOADER_SUM_TOLERANCE,
};
pub use recorded::RecordedProvider;
pub use reference::{ref_tokenize, ReferenceModel, ReferenceModelConfig, ReferenceProvider};

use thiserror::Error;

use crate::template::FilledPrompt;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider {provider}: {message}")]
    Unavailable { provider: String, message: String },
    #[error("provider {provider}: {source}")]
    InvalidRecord {
        provider: String,
        #[source]
        source: RecordError,
    },
}

impl ProviderError {
    pub fn provider(&self) -> &str {
        match self {
            ProviderError::Unavailable { provider, .. } => provider,
            ProviderError::InvalidRecord { provider, .. } => provider,
        }
    }
}

/// Source of trigger-token attention rows.
pub trait AttentionProvider: Send + Sync {
    fn id(&self) -> &str;

    fn trigger_attention(&self, prompt: &FilledPrompt) -> Result<AttentionRecord, ProviderError>;

    /// Whether `trigger_attention` may be called from several threads at once.
    /// Callers serialize access to providers that return `false`.
    fn is_concurrent(&self) -> bool {
        true
    }
}

impl<P: AttentionProvider + ?Sized> AttentionProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn trigger_attention(&self, prompt: &FilledPrompt) -> Result<AttentionRecord, ProviderError> {
        (**self).trigger_attention(prompt)
    }

    fn is_concurrent(&self) -> bool {
        (**self).is_concurrent()
    }
}
