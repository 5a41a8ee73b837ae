//! Text-to-graph extraction primitives.
//!
//! An information graph (typed text mentions plus typed relations between
//! them) is serialized into an *alternating sequence* of node and edge
//! elements. Every element is a single integer, a *hybrid span*, which
//! addresses either a type label or a span of the input text. This crate
//! holds everything that does not need a neural network:
//!
//! - [`vocab`]: the ordered type vocabulary and element classification,
//! - [`graph`]: the graph model and its canonical ordering,
//! - [`codec`]: BFS/DFS encoders and the exact inverse decoder,
//! - [`hybrid`]: the span ↔ index bijection,
//! - [`masks`]: attention masks and the output constraints used while decoding,
//! - [`data`]: JSONL corpora, the synthetic task generator and F1 scoring.

pub mod codec;
pub mod constraint;
pub mod data;
pub mod graph;
pub mod hybrid;
pub mod masks;
pub mod vocab;

pub use codec::{decode_sequence, encode, encode_bfs, encode_dfs, validate_sequence, AltSequence, CodecError, Traversal};
pub use graph::{canonicalize, graph_equal, validate_graph, EdgeFreq, InfoGraph, Mention, OrderedGraph, RelationEdge};
pub use hybrid::{HSpan, TextSpan};
pub use vocab::{ElementClass, TypeVocab, VirtualKind};
