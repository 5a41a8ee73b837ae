//! Ordered type vocabulary: edge types, then virtual edge types, then node types.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TYPE_EDGE: &str = "[TYPE]";
pub const NULL_NODE: &str = "[NULL]";
pub const SOS: &str = "[SOS]";
pub const EOS: &str = "[EOS]";
pub const SEP: &str = "[SEP]";

const VIRTUAL: [&str; 3] = [SOS, EOS, SEP];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("edge type list is empty")]
    NoEdgeTypes,
    #[error("node type list is empty")]
    NoNodeTypes,
    #[error("duplicate type name {0:?}")]
    Duplicate(String),
    #[error("edge types must include {TYPE_EDGE}")]
    MissingTypeEdge,
    #[error("node types must include {NULL_NODE}")]
    MissingNull,
    #[error("{0:?} is a reserved virtual edge type")]
    ReservedName(String),
    #[error("index {k} outside [0, {bound})")]
    OutOfRange { k: usize, bound: usize },
    #[error("input length must be at least 1")]
    EmptyInput,
    #[error("could not read vocabulary config: {0}")]
    Io(String),
}

/// Which control token a virtual edge element is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VirtualKind {
    Sos,
    Eos,
    Sep,
}

/// The four element classes of the hybrid-span output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementClass {
    RealEdge,
    VirtualEdge(VirtualKind),
    NodeType,
    TextSpan,
}

impl ElementClass {
    /// Node types and text spans occupy the even (node) slots.
    pub fn is_node(self) -> bool {
        matches!(self, ElementClass::NodeType | ElementClass::TextSpan)
    }

    pub fn is_edge(self) -> bool {
        !self.is_node()
    }
}

/// On-disk vocabulary config: the two user-supplied lists, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub edge_types: Vec<String>,
    pub node_types: Vec<String>,
}

/// Immutable type vocabulary laid out as edge types, virtual edge types, node types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeVocab {
    edge_types: Vec<String>,
    node_types: Vec<String>,
    type_edge: usize,
    null_node: usize,
}

impl TypeVocab {
    pub fn new<S: AsRef<str>>(edge_names: &[S], node_names: &[S]) -> Result<Self, VocabError> {
        if edge_names.is_empty() {
            return Err(VocabError::NoEdgeTypes);
        }
        if node_names.is_empty() {
            return Err(VocabError::NoNodeTypes);
        }
        let mut seen = HashSet::new();
        for name in edge_names.iter().chain(node_names).map(AsRef::as_ref) {
            if VIRTUAL.contains(&name) {
                return Err(VocabError::ReservedName(name.to_string()));
            }
            if !seen.insert(name) {
                return Err(VocabError::Duplicate(name.to_string()));
            }
        }
        let edge_types: Vec<String> = edge_names.iter().map(|s| s.as_ref().to_string()).collect();
        let node_types: Vec<String> = node_names.iter().map(|s| s.as_ref().to_string()).collect();
        let type_edge = edge_types
            .iter()
            .position(|s| s == TYPE_EDGE)
            .ok_or(VocabError::MissingTypeEdge)?;
        let null_pos = node_types
            .iter()
            .position(|s| s == NULL_NODE)
            .ok_or(VocabError::MissingNull)?;
        let null_node = edge_types.len() + VIRTUAL.len() + null_pos;
        Ok(Self {
            edge_types,
            node_types,
            type_edge,
            null_node,
        })
    }

    pub fn from_config(cfg: &VocabConfig) -> Result<Self, VocabError> {
        Self::new(&cfg.edge_types, &cfg.node_types)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io(e.to_string()))?;
        let cfg: VocabConfig = serde_json::from_str(&text).map_err(|e| VocabError::Io(e.to_string()))?;
        Self::from_config(&cfg)
    }

    pub fn config(&self) -> VocabConfig {
        VocabConfig {
            edge_types: self.edge_types.clone(),
            node_types: self.node_types.clone(),
        }
    }

    /// Number of real edge types, `[TYPE]` included.
    pub fn num_real_edges(&self) -> usize {
        self.edge_types.len()
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    /// `l_e`: real plus virtual edge types.
    pub fn l_e(&self) -> usize {
        self.edge_types.len() + VIRTUAL.len()
    }

    /// `l_p`: every type slot.
    pub fn l_p(&self) -> usize {
        self.l_e() + self.node_types.len()
    }

    pub fn type_edge(&self) -> usize {
        self.type_edge
    }

    pub fn null_node(&self) -> usize {
        self.null_node
    }

    pub fn sos(&self) -> usize {
        self.edge_types.len()
    }

    pub fn eos(&self) -> usize {
        self.edge_types.len() + 1
    }

    pub fn sep(&self) -> usize {
        self.edge_types.len() + 2
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.edge_types.iter().position(|s| s == name) {
            return Some(i);
        }
        if let Some(i) = VIRTUAL.iter().position(|s| *s == name) {
            return Some(self.edge_types.len() + i);
        }
        self.node_types.iter().position(|s| s == name).map(|i| self.l_e() + i)
    }

    /// Name of a type index (`k < l_p`).
    pub fn name(&self, k: usize) -> Option<&str> {
        let r = self.edge_types.len();
        if k < r {
            Some(&self.edge_types[k])
        } else if k < self.l_e() {
            Some(VIRTUAL[k - r])
        } else {
            self.node_types.get(k - self.l_e()).map(String::as_str)
        }
    }

    /// A relation edge: a real edge type other than `[TYPE]`.
    pub fn is_relation(&self, k: usize) -> bool {
        k < self.edge_types.len() && k != self.type_edge
    }

    pub fn is_node_type(&self, k: usize) -> bool {
        (self.l_e()..self.l_p()).contains(&k)
    }

    /// Ids of the relation edge types in vocabulary order.
    pub fn relation_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edge_types.len()).filter(move |&k| k != self.type_edge)
    }

    /// Ids of the node types other than `[NULL]`.
    pub fn entity_type_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (self.l_e()..self.l_p()).filter(move |&k| k != self.null_node)
    }

    /// Classification without a range check on the text side.
    pub fn class_of(&self, k: usize) -> ElementClass {
        let r = self.edge_types.len();
        if k < r {
            ElementClass::RealEdge
        } else if k < self.l_e() {
            ElementClass::VirtualEdge(match k - r {
                0 => VirtualKind::Sos,
                1 => VirtualKind::Eos,
                _ => VirtualKind::Sep,
            })
        } else if k < self.l_p() {
            ElementClass::NodeType
        } else {
            ElementClass::TextSpan
        }
    }

    /// Classify a hybrid-span index for input length `n` and max span length `m`.
    pub fn classify(&self, k: usize, n: usize, m: usize) -> Result<ElementClass, VocabError> {
        let bound = self.l_p() + n * m;
        if k >= bound {
            return Err(VocabError::OutOfRange { k, bound });
        }
        Ok(self.class_of(k))
    }

    /// Meta-type id per row of the hybrid representation: 0 edge, 1 virtual, 2 node type, 3 text.
    pub fn segment_ids(&self, n: usize) -> Result<Vec<u8>, VocabError> {
        if n == 0 {
            return Err(VocabError::EmptyInput);
        }
        let mut ids = Vec::with_capacity(self.l_p() + n);
        ids.extend(std::iter::repeat(0).take(self.edge_types.len()));
        ids.extend(std::iter::repeat(1).take(VIRTUAL.len()));
        ids.extend(std::iter::repeat(2).take(self.node_types.len()));
        ids.extend(std::iter::repeat(3).take(n));
        Ok(ids)
    }

    /// Short stable fingerprint of the layout, used in sequence dumps and checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for name in self.edge_types.iter().map(String::as_str).chain(VIRTUAL).chain(self.node_types.iter().map(String::as_str)) {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// ACE05-flavoured vocabulary with `l_p = 19` and `[SEP] = 10`.
    ///
    /// Six relation types plus `[TYPE]` give seven real edges; the eighth slot
    /// is a reserved edge type that never occurs in data, so that `l_p = 19`.
    pub fn ace_like() -> Self {
        Self::new(
            &[TYPE_EDGE, "ART", "GEN-AFF", "ORG-AFF", "PART-WHOLE", "PER-SOC", "PHYS", "[RESERVED]"],
            &[NULL_NODE, "PER", "ORG", "GPE", "LOC", "FAC", "VEH", "WEA"],
        )
        .expect("built-in vocabulary is valid")
    }
}

impl fmt::Display for TypeVocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TypeVocab(l_e={}, l_p={})", self.l_e(), self.l_p())
    }
}
