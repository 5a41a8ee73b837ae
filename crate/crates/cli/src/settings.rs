use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::Args;
use serde::{Deserialize, Serialize};

use hyspa_core::{Traversal, TypeVocab};
use hyspa_model::{DecodeConfig, MaskMode, ModelConfig, TrainConfig};

/// Tunables shared by every subcommand. Each one can come from a flag, the
/// JSON config file, or the built-in default, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Vocab config file; the built-in ACE-like vocabulary when absent.
    pub vocab: Option<PathBuf>,
    pub traversal: Traversal,
    pub max_span_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub beam: usize,
    pub length_penalty: f64,
    pub max_len: usize,
    pub mask_mode: MaskMode,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub strict_typing: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let mc = ModelConfig::default();
        let tc = TrainConfig::default();
        let dc = DecodeConfig::default();
        Self {
            vocab: None,
            traversal: mc.traversal,
            max_span_len: mc.max_span_len,
            d_model: mc.d_model,
            layers: mc.layers,
            heads: mc.heads,
            dropout: mc.dropout,
            beam: dc.beam,
            length_penalty: dc.length_penalty,
            max_len: dc.max_len,
            mask_mode: dc.mode,
            seed: tc.seed,
            steps: tc.steps,
            batch_size: tc.batch_size,
            lr: tc.lr,
            warmup: tc.warmup,
            label_smoothing: tc.label_smoothing,
            clip: tc.clip,
            weight_decay: tc.weight_decay,
            strict_typing: mc.strict_typing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraversalArg {
    Bfs,
    Dfs,
}

impl From<TraversalArg> for Traversal {
    fn from(t: TraversalArg) -> Self {
        match t {
            TraversalArg::Bfs => Traversal::Bfs,
            TraversalArg::Dfs => Traversal::Dfs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskModeArg {
    Grammar,
    Alternating,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with any of the settings below (snake_case keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Vocab config file with `edge_types` and `node_types` arrays.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub traversal: Option<TraversalArg>,
    /// Maximum span length m.
    #[arg(long, global = true)]
    pub max_span_len: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long, global = true)]
    pub length_penalty: Option<f64>,
    /// Longest decoded output, [EOS] included.
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mask_mode: Option<MaskModeArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Sentences per optimizer step.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub warmup: Option<u64>,
    #[arg(long, global = true)]
    pub label_smoothing: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long, global = true)]
    pub clip: Option<f64>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    /// After [TYPE] admit only node types; after a relation only spans.
    #[arg(long, global = true)]
    pub strict_typing: bool,
}

/// Raised for bad option values so `main` can exit with the usage code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl Settings {
    pub fn resolve(flags: &Flags) -> anyhow::Result<Self> {
        let mut s = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?
            }
            None => Settings::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = flags.$f.clone() { s.$f = v.into(); })* };
        }
        take!(max_span_len, d_model, layers, heads, dropout, beam, length_penalty, max_len, seed, steps, batch_size, lr, warmup, label_smoothing, clip, weight_decay);
        if let Some(v) = &flags.vocab {
            s.vocab = Some(v.clone());
        }
        if let Some(t) = flags.traversal {
            s.traversal = t.into();
        }
        if let Some(m) = flags.mask_mode {
            s.mask_mode = match m {
                MaskModeArg::Grammar => MaskMode::Grammar,
                MaskModeArg::Alternating => MaskMode::Alternating,
            };
        }
        if flags.strict_typing {
            s.strict_typing = true;
        }
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), UsageError> {
        let bad = |m: &str| Err(UsageError(m.to_string()));
        if self.beam == 0 {
            return bad("--beam must be at least 1");
        }
        if self.length_penalty <= 0.0 {
            return bad("--length-penalty must be positive");
        }
        if self.max_len < 3 {
            return bad("--max-len must be at least 3");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("--label-smoothing must lie in [0, 1)");
        }
        if self.clip <= 0.0 || self.lr <= 0.0 {
            return bad("--clip and --lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("--batch-size must be at least 1");
        }
        self.model_config().check().map_err(|e| UsageError(e.to_string()))
    }

    pub fn type_vocab(&self) -> anyhow::Result<TypeVocab> {
        match &self.vocab {
            Some(p) => TypeVocab::load(p).with_context(|| format!("loading vocab {}", p.display())),
            None => Ok(TypeVocab::ace_like()),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            max_span_len: self.max_span_len,
            dropout: self.dropout,
            traversal: self.traversal,
            strict_typing: self.strict_typing,
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup: self.warmup,
            label_smoothing: self.label_smoothing,
            clip: self.clip,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            length_penalty: self.length_penalty,
            max_len: self.max_len,
            mode: self.mask_mode,
            strict_typing: self.strict_typing,
        }
    }
}

pub fn require_file(p: &Path) -> Result<(), UsageError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{} does not exist", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"beam": 4, "lr": 0.01, "traversal": "dfs"}"#).unwrap();
        let flags = Flags { config: Some(path), beam: Some(2), ..Default::default() };
        let s = Settings::resolve(&flags).unwrap();
        assert_eq!(s.beam, 2);
        assert_eq!(s.lr, 0.01);
        assert_eq!(s.traversal, Traversal::Dfs);
        assert_eq!(s.clip, 0.25);
        assert_eq!(s.max_span_len, 16);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"beams": 4}"#).unwrap();
        let err = Settings::resolve(&Flags { config: Some(path), ..Default::default() }).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
