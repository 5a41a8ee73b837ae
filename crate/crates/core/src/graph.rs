//! Information graphs and their canonical traversal ordering.

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::hybrid::TextSpan;
use crate::vocab::TypeVocab;

/// A typed text mention. `node_type` is a node-type index in `[l_e, l_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub span: TextSpan,
    pub node_type: usize,
}

/// Directed relation between two mentions, referenced by position in
/// [`InfoGraph::mentions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationEdge {
    pub head: usize,
    pub tail: usize,
    pub edge_type: usize,
}

/// Mentions with node types plus a multiset of typed relations, over an
/// input of `n` tokens with maximum span length `m`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InfoGraph {
    pub mentions: Vec<Mention>,
    pub relations: Vec<RelationEdge>,
    pub n: usize,
    pub m: usize,
}

impl InfoGraph {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            mentions: Vec::new(),
            relations: Vec::new(),
            n,
            m,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty() && self.relations.is_empty()
    }

    /// Add a mention, returning its reference.
    pub fn add_mention(&mut self, span: TextSpan, node_type: usize) -> usize {
        self.mentions.push(Mention { span, node_type });
        self.mentions.len() - 1
    }

    pub fn add_relation(&mut self, head: usize, tail: usize, edge_type: usize) {
        self.relations.push(RelationEdge { head, tail, edge_type });
    }

    pub fn mention_at(&self, span: TextSpan) -> Option<usize> {
        self.mentions.iter().position(|mn| mn.span == span)
    }

    /// Sorted `(span, type)` pairs.
    pub fn mention_set(&self) -> Vec<(TextSpan, usize)> {
        let mut v: Vec<_> = self.mentions.iter().map(|mn| (mn.span, mn.node_type)).collect();
        v.sort();
        v
    }

    /// Sorted `(head span, tail span, type)` triples; dangling references are skipped.
    pub fn relation_set(&self) -> Vec<(TextSpan, TextSpan, usize)> {
        let mut v: Vec<_> = self
            .relations
            .iter()
            .filter_map(|r| {
                let h = self.mentions.get(r.head)?;
                let t = self.mentions.get(r.tail)?;
                Some((h.span, t.span, r.edge_type))
            })
            .collect();
        v.sort();
        v
    }
}

/// Equality up to mention order and relation multiset order.
pub fn graph_equal(a: &InfoGraph, b: &InfoGraph) -> bool {
    a.mention_set() == b.mention_set() && a.relation_set() == b.relation_set()
}

/// One defect found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    EmptySpan { mention: usize },
    SpanTooLong { mention: usize, len: usize, m: usize },
    SpanOutOfBounds { mention: usize, end: usize, n: usize },
    DuplicateMention { first: usize, second: usize },
    BadNodeType { mention: usize, node_type: usize },
    DanglingReference { relation: usize },
    BadEdgeType { relation: usize, edge_type: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySpan { mention } => write!(f, "mention {mention} has an empty span"),
            Self::SpanTooLong { mention, len, m } => write!(f, "mention {mention} spans {len} tokens (max {m})"),
            Self::SpanOutOfBounds { mention, end, n } => write!(f, "mention {mention} ends at {end} past input length {n}"),
            Self::DuplicateMention { first, second } => write!(f, "mentions {first} and {second} share a span"),
            Self::BadNodeType { mention, node_type } => write!(f, "mention {mention} has invalid node type {node_type}"),
            Self::DanglingReference { relation } => write!(f, "relation {relation} references a missing mention"),
            Self::BadEdgeType { relation, edge_type } => write!(f, "relation {relation} has invalid edge type {edge_type}"),
        }
    }
}

/// Report every structural defect of `g` against its own `n`, `m` and `vocab`.
pub fn validate_graph(g: &InfoGraph, vocab: &TypeVocab) -> Result<(), Vec<GraphViolation>> {
    let mut out = Vec::new();
    let mut seen: HashMap<TextSpan, usize> = HashMap::new();
    for (i, mn) in g.mentions.iter().enumerate() {
        let TextSpan { start, end } = mn.span;
        if end <= start {
            out.push(GraphViolation::EmptySpan { mention: i });
        } else {
            if end - start > g.m {
                out.push(GraphViolation::SpanTooLong { mention: i, len: end - start, m: g.m });
            }
            if end > g.n {
                out.push(GraphViolation::SpanOutOfBounds { mention: i, end, n: g.n });
            }
        }
        if !vocab.is_node_type(mn.node_type) || mn.node_type == vocab.null_node() {
            out.push(GraphViolation::BadNodeType { mention: i, node_type: mn.node_type });
        }
        if let Some(&first) = seen.get(&mn.span) {
            out.push(GraphViolation::DuplicateMention { first, second: i });
        } else {
            seen.insert(mn.span, i);
        }
    }
    for (i, r) in g.relations.iter().enumerate() {
        if r.head >= g.mentions.len() || r.tail >= g.mentions.len() {
            out.push(GraphViolation::DanglingReference { relation: i });
        }
        if !vocab.is_relation(r.edge_type) {
            out.push(GraphViolation::BadEdgeType { relation: i, edge_type: r.edge_type });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Training-set frequency of each relation type. Unknown types count as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeFreq(HashMap<usize, u64>);

impl EdgeFreq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tally<'a>(graphs: impl IntoIterator<Item = &'a InfoGraph>) -> Self {
        let mut f = Self::new();
        for g in graphs {
            for r in &g.relations {
                *f.0.entry(r.edge_type).or_default() += 1;
            }
        }
        f
    }

    pub fn get(&self, edge_type: usize) -> u64 {
        self.0.get(&edge_type).copied().unwrap_or(0)
    }

    pub fn set(&mut self, edge_type: usize, count: u64) {
        self.0.insert(edge_type, count);
    }

    /// `(edge_type, count)` pairs sorted by type.
    pub fn entries(&self) -> Vec<(usize, u64)> {
        let mut v: Vec<_> = self.0.iter().map(|(&k, &c)| (k, c)).collect();
        v.sort();
        v
    }
}

impl FromIterator<(usize, u64)> for EdgeFreq {
    fn from_iter<I: IntoIterator<Item = (usize, u64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// A vertex of the ordered graph: a text mention or a type label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Mention(TextSpan),
    Type(usize),
}

/// Ordered adjacency dictionary fed to the traversal encoders.
///
/// `adjacency` is kept in root order; every mention owns its outgoing
/// relations, listed after its `[TYPE]` edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedGraph {
    pub adjacency: Vec<(Node, Vec<(usize, Node)>)>,
    pub n: usize,
    pub m: usize,
}

impl OrderedGraph {
    pub fn roots(&self) -> impl Iterator<Item = Node> + '_ {
        self.adjacency.iter().map(|(node, _)| *node)
    }

    pub fn neighbors(&self, node: Node) -> Option<&[(usize, Node)]> {
        self.adjacency.iter().find(|(k, _)| *k == node).map(|(_, v)| v.as_slice())
    }

    /// Rebuild the unordered graph this ordering was derived from.
    pub fn to_graph(&self, vocab: &TypeVocab) -> InfoGraph {
        let mut g = InfoGraph::new(self.n, self.m);
        let mut index = HashMap::new();
        for (node, edges) in &self.adjacency {
            if let Node::Mention(span) = node {
                let ty = edges
                    .iter()
                    .find(|(e, _)| *e == vocab.type_edge())
                    .and_then(|(_, c)| match c {
                        Node::Type(t) => Some(*t),
                        Node::Mention(_) => None,
                    })
                    .unwrap_or(vocab.null_node());
                index.insert(*span, g.add_mention(*span, ty));
            }
        }
        for (node, edges) in &self.adjacency {
            let Node::Mention(span) = node else { continue };
            for (e, child) in edges {
                if let Node::Mention(tail) = child {
                    g.add_relation(index[span], index[tail], *e);
                }
            }
        }
        g
    }
}

/// Deterministic ordering: mentions by `(start, end)`; per mention its
/// `[TYPE]` edge first, then relations by descending frequency, ties by edge
/// type id, then by tail position. An empty graph becomes a lone `[NULL]` root.
pub fn canonicalize(g: &InfoGraph, vocab: &TypeVocab, freq: &EdgeFreq) -> OrderedGraph {
    if g.mentions.is_empty() {
        return OrderedGraph {
            adjacency: vec![(Node::Type(vocab.null_node()), Vec::new())],
            n: g.n,
            m: g.m,
        };
    }
    let mut order: Vec<usize> = (0..g.mentions.len()).collect();
    order.sort_by_key(|&i| g.mentions[i].span);
    let mut owned: Vec<Vec<(usize, TextSpan)>> = vec![Vec::new(); g.mentions.len()];
    for r in &g.relations {
        owned[r.head].push((r.edge_type, g.mentions[r.tail].span));
    }
    let adjacency = order
        .into_iter()
        .map(|i| {
            let mn = g.mentions[i];
            let mut rels = std::mem::take(&mut owned[i]);
            rels.sort_by_key(|&(e, tail)| (Reverse(freq.get(e)), e, tail));
            let mut edges = Vec::with_capacity(rels.len() + 1);
            edges.push((vocab.type_edge(), Node::Type(mn.node_type)));
            edges.extend(rels.into_iter().map(|(e, tail)| (e, Node::Mention(tail))));
            (Node::Mention(mn.span), edges)
        })
        .collect();
    OrderedGraph { adjacency, n: g.n, m: g.m }
}

/// Mentions referenced by relations but never declared; used by salvage code.
pub fn referenced_spans(g: &InfoGraph) -> HashSet<TextSpan> {
    g.relations
        .iter()
        .flat_map(|r| [r.head, r.tail])
        .filter_map(|i| g.mentions.get(i).map(|mn| mn.span))
        .collect()
}
