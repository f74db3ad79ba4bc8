//! Attention provider backed by an HTTP service.
//!
//! The service receives `{"prompt": str, "context_char_span": [start, end]}`
//! and answers with an interchange record for exactly that prompt.

use std::time::Duration;

use ctxcomp::attention::{parse_attention_record, AttentionProvider, AttentionRecord, ProviderError, RecordError};
use ctxcomp::template::FilledPrompt;
use serde_json::json;

use crate::generate::{HttpClient, DEFAULT_TIMEOUT};

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    url: String,
    id: String,
    client: HttpClient,
    timeout: Duration,
}

impl RemoteProvider {
    pub fn new(url: impl Into<String>, client: HttpClient) -> Self {
        let url = url.into();
        Self {
            id: format!("remote:{url}"),
            url,
            client,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl AttentionProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn trigger_attention(&self, prompt: &FilledPrompt) -> Result<AttentionRecord, ProviderError> {
        let body = json!({
            "prompt": prompt.text,
            "context_char_span": [prompt.context_char_span.0, prompt.context_char_span.1],
        });
        let text = self
            .client
            .post_json(&self.url, &body, self.timeout)
            .map_err(|e| ProviderError::Unavailable {
                provider: self.id.clone(),
                message: e.to_string(),
            })?;
        parse_attention_record(&text, prompt).map_err(|source: RecordError| ProviderError::InvalidRecord {
            provider: self.id.clone(),
            source,
        })
    }
}
