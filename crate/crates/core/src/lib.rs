//! Query-guided context compression.
//!
//! A retrieved document is embedded in a conversational prompt together with
//! the query. The attention that the prompt's final (trigger) token pays to the
//! document tokens is renormalized over the document, lifted to words, smoothed
//! and used to keep a budgeted subset of words:
//!
//! * **phrase**: the top `tau * L` words by smoothed score;
//! * **sentence**: whole sentences by their best word while they fit;
//! * **dynamic**: sentences first, then single words up to the budget.
//!
//! ```
//! use ctxcomp::attention::{ReferenceModelConfig, ReferenceProvider};
//! use ctxcomp::pipeline::{compress_document, CompressionConfig};
//! use ctxcomp::text::Document;
//!
//! let provider = ReferenceProvider::new(ReferenceModelConfig::with_seed(7));
//! let doc = Document::new("d1", "Paris is the capital and largest city of France.");
//! let config = CompressionConfig::with_ratio(2.0);
//! let out = compress_document(&doc, "What is the capital of France?", "", &config, &provider).unwrap();
//! assert_eq!(out.compressed.kept_words(), 4);
//! ```

pub mod attention;
pub mod eval;
pub mod filtering;
pub mod pipeline;
pub mod scoring;
pub mod template;
pub mod text;

pub use attention::{AttentionProvider, AttentionRecord};
pub use filtering::{CompressedText, FilterMode};
pub use pipeline::{BudgetScope, CompressedDocument, CompressionConfig, Compressor, PipelineError};
pub use text::{Document, Token, Word};
