use std::path::{Path, PathBuf};

use super::{load_attention_record, prompt_sha256, AttentionProvider, AttentionRecord, ProviderError, RecordError};
use crate::template::FilledPrompt;

/// Reads attention records written offline, one file per prompt, named
/// `<prompt_sha256>.json` inside a directory.
#[derive(Debug, Clone)]
pub struct RecordedProvider {
    dir: PathBuf,
    id: String,
}

impl RecordedProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        let id = format!("recorded:{}", dir.display());
        Self { dir, id }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, prompt: &FilledPrompt) -> PathBuf {
        self.dir.join(format!("{}.json", prompt_sha256(&prompt.text)))
    }
}

impl AttentionProvider for RecordedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn trigger_attention(&self, prompt: &FilledPrompt) -> Result<AttentionRecord, ProviderError> {
        let path = self.path_for(prompt);
        if !path.is_file() {
            return Err(ProviderError::Unavailable {
                provider: self.id.clone(),
                message: format!("no recorded attention file {}", path.display()),
            });
        }
        load_attention_record(&path, prompt).map_err(|source| match source {
            RecordError::Io { .. } => ProviderError::Unavailable {
                provider: self.id.clone(),
                message: source.to_string(),
            },
            source => ProviderError::InvalidRecord {
                provider: self.id.clone(),
                source,
            },
        })
    }
}
