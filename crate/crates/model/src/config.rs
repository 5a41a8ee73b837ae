use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use hyspa_core::Traversal;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    Heads { d_model: usize, heads: usize },
    #[error("d_model must be even and positive, got {0}")]
    DModel(usize),
    #[error("max span length must be at least 1")]
    SpanLen,
    #[error("dropout {0} outside [0, 1)")]
    Dropout(String),
}

/// Network shape and decoding defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Maximum span length `m`.
    pub max_span_len: usize,
    pub dropout: f64,
    /// Longest accepted input, in tokens.
    pub max_tokens: usize,
    pub traversal: Traversal,
    /// After `[TYPE]` admit only node types; after a relation only spans.
    pub strict_typing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 8,
            max_span_len: 16,
            dropout: 0.1,
            max_tokens: 1024,
            traversal: Traversal::Bfs,
            strict_typing: false,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.d_model == 0 || self.d_model % 2 == 1 {
            return Err(ConfigError::DModel(self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(ConfigError::Heads { d_model: self.d_model, heads: self.heads });
        }
        if self.max_span_len == 0 {
            return Err(ConfigError::SpanLen);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout.to_string()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Closed word list for text tokens. Id 0 is the unknown token and id 1 the
/// `[CLS]` token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK: usize = 0;
pub const CLS: usize = 1;

impl TokenVocab {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self { words: vec!["[UNK]".into(), "[CLS]".into()], index: HashMap::new() };
        for w in words {
            let w = w.as_ref();
            if !v.words.iter().any(|x| x == w) {
                v.words.push(w.to_string());
            }
        }
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    /// Rebuild the lookup table after deserialization.
    pub fn restored(mut self) -> Self {
        self.reindex();
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }
}
