//! Corpora: JSONL ingestion, the synthetic extraction task, and F1 scoring.

mod jsonl;
mod metrics;
mod synth;

pub use jsonl::{load_jsonl, parse_record, save_jsonl, to_record, DataError, EntityRecord, Record, RelationRecord};
pub use metrics::{eval_f1, F1Report, Prf};
pub use synth::{synth_generate, SynthConfig, SynthError, Template};

use serde::Serialize;

use crate::graph::{EdgeFreq, InfoGraph};
use crate::vocab::TypeVocab;

/// A tokenized sentence with its gold graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub graph: InfoGraph,
}

/// Examples plus the relation-frequency table used for canonical ordering.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub edge_freq: EdgeFreq,
}

impl Dataset {
    /// Wrap a training split; `edge_freq` is tallied from these examples.
    pub fn from_examples(examples: Vec<Example>) -> Self {
        let edge_freq = EdgeFreq::tally(examples.iter().map(|e| &e.graph));
        Self { examples, edge_freq }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn manifest(&self, vocab: &TypeVocab) -> Manifest {
        Manifest {
            examples: self.examples.len(),
            tokens: self.examples.iter().map(|e| e.tokens.len()).sum(),
            mentions: self.examples.iter().map(|e| e.graph.mentions.len()).sum(),
            relations: self.examples.iter().map(|e| e.graph.relations.len()).sum(),
            empty_graphs: self.examples.iter().filter(|e| e.graph.is_empty()).count(),
            vocab_hash: vocab.hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub examples: usize,
    pub tokens: usize,
    pub mentions: usize,
    pub relations: usize,
    pub empty_graphs: usize,
    pub vocab_hash: String,
}
