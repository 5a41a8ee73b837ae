use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, Example};
use crate::graph::{validate_graph, GraphViolation, InfoGraph};
use crate::hybrid::TextSpan;
use crate::vocab::TypeVocab;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown type name {name:?}")]
    UnknownType { line: usize, name: String },
    #[error("line {line}: invalid graph: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { line: usize, violations: Vec<GraphViolation> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub head: usize,
    pub tail: usize,
    #[serde(rename = "type")]
    pub ty: String,
}

/// One JSONL line. `end` is exclusive; relation `head`/`tail` index `entities`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityRecord>,
    #[serde(default)]
    pub relations: Vec<RelationRecord>,
}

/// Convert a record into a validated example. `line` is only used in errors.
pub fn parse_record(rec: Record, vocab: &TypeVocab, m: usize, line: usize) -> Result<Example, DataError> {
    let mut g = InfoGraph::new(rec.tokens.len(), m);
    for e in &rec.entities {
        let ty = vocab
            .index_of(&e.ty)
            .filter(|&k| vocab.is_node_type(k))
            .ok_or_else(|| DataError::UnknownType { line, name: e.ty.clone() })?;
        g.add_mention(TextSpan::new(e.start, e.end), ty);
    }
    for r in &rec.relations {
        let ty = vocab
            .index_of(&r.ty)
            .filter(|&k| vocab.is_relation(k))
            .ok_or_else(|| DataError::UnknownType { line, name: r.ty.clone() })?;
        g.add_relation(r.head, r.tail, ty);
    }
    validate_graph(&g, vocab).map_err(|violations| DataError::Invalid { line, violations })?;
    Ok(Example { tokens: rec.tokens, graph: g })
}

pub fn to_record(ex: &Example, vocab: &TypeVocab) -> Record {
    let name = |k: usize| vocab.name(k).unwrap_or("?").to_string();
    Record {
        tokens: ex.tokens.clone(),
        entities: ex
            .graph
            .mentions
            .iter()
            .map(|mn| EntityRecord {
                start: mn.span.start,
                end: mn.span.end,
                ty: name(mn.node_type),
            })
            .collect(),
        relations: ex
            .graph
            .relations
            .iter()
            .map(|r| RelationRecord {
                head: r.head,
                tail: r.tail,
                ty: name(r.edge_type),
            })
            .collect(),
    }
}

/// Read a JSONL corpus; blank lines are skipped, line numbers are 1-based.
pub fn load_jsonl(path: impl AsRef<Path>, vocab: &TypeVocab, m: usize) -> Result<Dataset, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        examples.push(parse_record(rec, vocab, m, i + 1)?);
    }
    Ok(Dataset::from_examples(examples))
}

pub fn save_jsonl(path: impl AsRef<Path>, examples: &[Example], vocab: &TypeVocab) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        let line = serde_json::to_string(&to_record(ex, vocab)).expect("records always serialize");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
