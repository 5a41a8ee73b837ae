//! Alternating-sequence codec: ordered graph ⇄ sequence of hybrid-span indices.
//!
//! Even offsets hold node elements (a text span or a node type), odd offsets
//! hold edge elements (a relation, `[TYPE]`, or `[SEP]`). `[SEP]` closes a
//! traversal level. `[SOS]`/`[EOS]` never appear in a stored sequence; they
//! exist only as decoder context and terminator.
//!
//! BFS levels have the shape `parent (edge child)* [SEP]` and every parent
//! owns exactly one level. DFS levels are root-to-leaf paths
//! `n0 e1 n1 ... ek nk [SEP]`; a parent is repeated once for each child that
//! starts a new path.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{InfoGraph, Node, OrderedGraph};
use crate::hybrid::{self, SpanError, TextSpan};
use crate::vocab::{ElementClass, TypeVocab, VirtualKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    #[default]
    Bfs,
    Dfs,
}

impl fmt::Display for Traversal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Traversal::Bfs => "bfs",
            Traversal::Dfs => "dfs",
        })
    }
}

impl FromStr for Traversal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bfs" => Ok(Traversal::Bfs),
            "dfs" => Ok(Traversal::Dfs),
            other => Err(format!("unknown traversal {other:?} (expected bfs or dfs)")),
        }
    }
}

/// A serialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AltSequence {
    pub items: Vec<usize>,
    pub traversal: Traversal,
    pub n: usize,
    pub m: usize,
}

impl AltSequence {
    pub fn new(items: Vec<usize>, traversal: Traversal, n: usize, m: usize) -> Self {
        Self { items, traversal, n, m }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Header line for the textual dump format.
    pub fn header(&self, vocab: &TypeVocab) -> String {
        format!("# n={} m={} traversal={} vocab={}", self.n, self.m, self.traversal, vocab.hash())
    }

    /// Two-line text form: header, then whitespace-separated indices.
    pub fn to_text(&self, vocab: &TypeVocab) -> String {
        let body: Vec<String> = self.items.iter().map(ToString::to_string).collect();
        format!("{}\n{}\n", self.header(vocab), body.join(" "))
    }

    /// Inverse of [`AltSequence::to_text`].
    pub fn from_text(text: &str, vocab: &TypeVocab) -> Result<Self, CodecError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CodecError::Format("missing header".into()))?;
        Self::parse_text(header, lines.next().unwrap_or(""), vocab)
    }

    /// Parse one header line plus one item line. The vocab hash must match.
    pub fn parse_text(header: &str, body: &str, vocab: &TypeVocab) -> Result<Self, CodecError> {
        let bad = |msg: String| CodecError::Format(msg);
        let mut n = None;
        let mut m = None;
        let mut traversal = None;
        let mut hash = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("bad header field {field:?}")))?;
            match key {
                "n" => n = Some(value.parse().map_err(|_| bad(format!("bad n {value:?}")))?),
                "m" => m = Some(value.parse().map_err(|_| bad(format!("bad m {value:?}")))?),
                "traversal" => traversal = Some(value.parse().map_err(bad)?),
                "vocab" => hash = Some(value.to_string()),
                _ => return Err(bad(format!("unknown header field {key:?}"))),
            }
        }
        let (Some(n), Some(m), Some(traversal)) = (n, m, traversal) else {
            return Err(bad("header must carry n, m and traversal".into()));
        };
        if let Some(h) = hash {
            if h != vocab.hash() {
                return Err(bad(format!("vocab hash {h} does not match {}", vocab.hash())));
            }
        }
        let items = body
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad(format!("bad item {t:?}"))))
            .collect::<Result<_, _>>()?;
        Ok(Self { items, traversal, n, m })
    }
}

/// Structural defect in a sequence, located by item offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqViolation {
    Empty,
    IndexOutOfRange { offset: usize, k: usize },
    IllegalSpan { offset: usize, k: usize },
    NodeExpected { offset: usize },
    EdgeExpected { offset: usize },
    ControlToken { offset: usize },
    UnclosedLevel { offset: usize },
}

impl SeqViolation {
    pub fn offset(&self) -> usize {
        match *self {
            SeqViolation::Empty => 0,
            SeqViolation::IndexOutOfRange { offset, .. }
            | SeqViolation::IllegalSpan { offset, .. }
            | SeqViolation::NodeExpected { offset }
            | SeqViolation::EdgeExpected { offset }
            | SeqViolation::ControlToken { offset }
            | SeqViolation::UnclosedLevel { offset } => offset,
        }
    }
}

impl fmt::Display for SeqViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "empty sequence"),
            Self::IndexOutOfRange { offset, k } => write!(f, "offset {offset}: index {k} out of range"),
            Self::IllegalSpan { offset, k } => write!(f, "offset {offset}: index {k} is a span past the input"),
            Self::NodeExpected { offset } => write!(f, "offset {offset}: node element expected"),
            Self::EdgeExpected { offset } => write!(f, "offset {offset}: edge element expected"),
            Self::ControlToken { offset } => write!(f, "offset {offset}: [SOS]/[EOS] inside a stored sequence"),
            Self::UnclosedLevel { offset } => write!(f, "offset {offset}: level not closed by [SEP]"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid span: {0}")]
    Span(#[from] SpanError),
    #[error("unknown type id {0}")]
    UnknownType(usize),
    #[error("unknown edge type id {0}")]
    UnknownEdge(usize),
    #[error("malformed sequence: {0}")]
    Malformed(SeqViolation),
    #[error("offset {offset}: [TYPE] child is not a node type")]
    TypeChildNotNodeType { offset: usize },
    #[error("offset {offset}: relation child is not a text span")]
    RelationChildNotSpan { offset: usize },
    #[error("offset {offset}: node type used as a parent")]
    NodeTypeParent { offset: usize },
    #[error("offset {offset}: span {span:?} opens a second BFS level")]
    DuplicateParent { offset: usize, span: TextSpan },
    #[error("offset {offset}: span {span:?} typed twice")]
    ConflictingType { offset: usize, span: TextSpan },
    #[error("mention {0:?} has no type assignment")]
    UntypedMention(TextSpan),
    #[error("[NULL] may only appear as the single level of an empty graph (offset {offset})")]
    MisplacedNull { offset: usize },
    #[error("bad sequence dump: {0}")]
    Format(String),
}

fn node_index(node: Node, vocab: &TypeVocab, n: usize, m: usize) -> Result<usize, CodecError> {
    match node {
        Node::Mention(span) => Ok(hybrid::span_to_index_checked(span, n, m, vocab.l_p())?),
        Node::Type(t) if vocab.is_node_type(t) => Ok(t),
        Node::Type(t) => Err(CodecError::UnknownType(t)),
    }
}

fn edge_index(e: usize, vocab: &TypeVocab) -> Result<usize, CodecError> {
    if e < vocab.num_real_edges() {
        Ok(e)
    } else {
        Err(CodecError::UnknownEdge(e))
    }
}

fn adjacency_map(og: &OrderedGraph) -> HashMap<Node, &[(usize, Node)]> {
    og.adjacency.iter().map(|(k, v)| (*k, v.as_slice())).collect()
}

/// Breadth-first serialization. Every neighbor is written out, including ones
/// already visited; only enqueueing is gated on the visited set. Dequeued
/// nodes without an adjacency entry (node types) emit nothing.
pub fn encode_bfs(og: &OrderedGraph, vocab: &TypeVocab) -> Result<AltSequence, CodecError> {
    let adj = adjacency_map(og);
    let mut items = Vec::new();
    let mut visited = HashSet::new();
    let mut queue = VecDeque::new();
    for root in og.roots() {
        if !visited.insert(root) {
            continue;
        }
        queue.push_back(root);
        while let Some(w) = queue.pop_front() {
            let Some(nbrs) = adj.get(&w) else { continue };
            items.push(node_index(w, vocab, og.n, og.m)?);
            for &(e, c) in nbrs.iter() {
                items.push(edge_index(e, vocab)?);
                items.push(node_index(c, vocab, og.n, og.m)?);
            }
            items.push(vocab.sep());
            for &(_, c) in nbrs.iter() {
                if visited.insert(c) {
                    queue.push_back(c);
                }
            }
        }
    }
    Ok(AltSequence::new(items, Traversal::Bfs, og.n, og.m))
}

/// Depth-first serialization into root-to-leaf paths, each closed by `[SEP]`.
/// A child that has not been visited yet and has children of its own extends
/// the current path; anything else ends it.
pub fn encode_dfs(og: &OrderedGraph, vocab: &TypeVocab) -> Result<AltSequence, CodecError> {
    struct Walk<'a> {
        adj: HashMap<Node, &'a [(usize, Node)]>,
        vocab: &'a TypeVocab,
        n: usize,
        m: usize,
        visited: HashSet<Node>,
        items: Vec<usize>,
    }

    impl Walk<'_> {
        fn expandable(&self, node: Node) -> bool {
            matches!(node, Node::Mention(_))
                && !self.visited.contains(&node)
                && self.adj.get(&node).is_some_and(|nb| !nb.is_empty())
        }

        fn visit(&mut self, u: Node, continuing: bool) -> Result<(), CodecError> {
            let nbrs = self.adj.get(&u).copied().unwrap_or(&[]);
            for (i, &(e, c)) in nbrs.iter().enumerate() {
                if i > 0 || !continuing {
                    self.items.push(node_index(u, self.vocab, self.n, self.m)?);
                }
                self.items.push(edge_index(e, self.vocab)?);
                self.items.push(node_index(c, self.vocab, self.n, self.m)?);
                if self.expandable(c) {
                    self.visited.insert(c);
                    self.visit(c, true)?;
                } else {
                    self.items.push(self.vocab.sep());
                }
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        adj: adjacency_map(og),
        vocab,
        n: og.n,
        m: og.m,
        visited: HashSet::new(),
        items: Vec::new(),
    };
    for root in og.roots() {
        if !walk.visited.insert(root) {
            continue;
        }
        if walk.adj.get(&root).is_some_and(|nb| nb.is_empty()) {
            walk.items.push(node_index(root, vocab, og.n, og.m)?);
            walk.items.push(vocab.sep());
        } else {
            walk.visit(root, false)?;
        }
    }
    Ok(AltSequence::new(walk.items, Traversal::Dfs, og.n, og.m))
}

pub fn encode(og: &OrderedGraph, vocab: &TypeVocab, traversal: Traversal) -> Result<AltSequence, CodecError> {
    match traversal {
        Traversal::Bfs => encode_bfs(og, vocab),
        Traversal::Dfs => encode_dfs(og, vocab),
    }
}

/// Structural check: index ranges, node/edge alternation, `[SEP]`-closed levels.
pub fn validate_sequence(s: &AltSequence, vocab: &TypeVocab) -> Result<(), SeqViolation> {
    validate_items(&s.items, vocab, s.n, s.m)
}

pub fn validate_items(items: &[usize], vocab: &TypeVocab, n: usize, m: usize) -> Result<(), SeqViolation> {
    if items.is_empty() {
        return Err(SeqViolation::Empty);
    }
    let bound = vocab.l_p() + n * m;
    for (offset, &k) in items.iter().enumerate() {
        if k >= bound {
            return Err(SeqViolation::IndexOutOfRange { offset, k });
        }
        let class = vocab.class_of(k);
        if class == ElementClass::TextSpan && !hybrid::is_legal_span_index(k, n, m, vocab.l_p()) {
            return Err(SeqViolation::IllegalSpan { offset, k });
        }
        if offset % 2 == 0 && !class.is_node() {
            return Err(SeqViolation::NodeExpected { offset });
        }
        if offset % 2 == 1 {
            match class {
                ElementClass::RealEdge | ElementClass::VirtualEdge(VirtualKind::Sep) => {}
                ElementClass::VirtualEdge(_) => return Err(SeqViolation::ControlToken { offset }),
                _ => return Err(SeqViolation::EdgeExpected { offset }),
            }
        }
    }
    if *items.last().expect("non-empty") != vocab.sep() {
        return Err(SeqViolation::UnclosedLevel { offset: items.len() });
    }
    Ok(())
}

/// Split a structurally valid sequence into levels (each without its `[SEP]`),
/// paired with the offset of the level's first item.
pub fn levels(items: &[usize], sep: usize) -> Vec<(usize, &[usize])> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, pair) in items.chunks(2).enumerate() {
        if pair.get(1) == Some(&sep) {
            out.push((start, &items[start..2 * i + 1]));
            start = 2 * i + 2;
        }
    }
    out
}

/// Incremental graph assembly shared by the BFS and DFS decoders.
struct Builder<'a> {
    vocab: &'a TypeVocab,
    g: InfoGraph,
    by_span: HashMap<TextSpan, usize>,
    typed: Vec<bool>,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a TypeVocab, n: usize, m: usize) -> Self {
        Self {
            vocab,
            g: InfoGraph::new(n, m),
            by_span: HashMap::new(),
            typed: Vec::new(),
        }
    }

    fn span(&self, k: usize) -> TextSpan {
        hybrid::index_to_text_span(k, self.g.m, self.vocab.l_p()).expect("validated text index")
    }

    fn mention(&mut self, span: TextSpan) -> usize {
        if let Some(&i) = self.by_span.get(&span) {
            return i;
        }
        let i = self.g.add_mention(span, self.vocab.null_node());
        self.typed.push(false);
        self.by_span.insert(span, i);
        i
    }

    /// Record the edge `parent -e-> child`, where `parent` is a text index.
    fn edge(&mut self, parent: usize, e: usize, child: usize, offset: usize) -> Result<(), CodecError> {
        let head = self.mention(self.span(parent));
        if e == self.vocab.type_edge() {
            if !self.vocab.is_node_type(child) || child == self.vocab.null_node() {
                return Err(CodecError::TypeChildNotNodeType { offset });
            }
            if self.typed[head] {
                return Err(CodecError::ConflictingType {
                    offset,
                    span: self.g.mentions[head].span,
                });
            }
            self.typed[head] = true;
            self.g.mentions[head].node_type = child;
        } else {
            if self.vocab.class_of(child) != ElementClass::TextSpan {
                return Err(CodecError::RelationChildNotSpan { offset });
            }
            let tail = self.mention(self.span(child));
            self.g.add_relation(head, tail, e);
        }
        Ok(())
    }

    fn finish(self) -> Result<InfoGraph, CodecError> {
        if let Some(i) = self.typed.iter().position(|t| !t) {
            return Err(CodecError::UntypedMention(self.g.mentions[i].span));
        }
        Ok(self.g)
    }
}

/// Exact inverse of the encoder matching `s.traversal`.
pub fn decode_sequence(s: &AltSequence, vocab: &TypeVocab) -> Result<InfoGraph, CodecError> {
    validate_sequence(s, vocab).map_err(CodecError::Malformed)?;
    let lv = levels(&s.items, vocab.sep());
    let null = vocab.null_node();

    if lv.iter().any(|(_, l)| l[0] == null) {
        if lv.len() == 1 && lv[0].1.len() == 1 {
            return Ok(InfoGraph::new(s.n, s.m));
        }
        let offset = lv.iter().find(|(_, l)| l[0] == null).map(|(o, _)| *o).unwrap_or(0);
        return Err(CodecError::MisplacedNull { offset });
    }

    let mut b = Builder::new(vocab, s.n, s.m);
    match s.traversal {
        Traversal::Bfs => {
            let mut parents = HashSet::new();
            for (start, level) in lv {
                let parent = level[0];
                if vocab.class_of(parent) != ElementClass::TextSpan {
                    return Err(CodecError::NodeTypeParent { offset: start });
                }
                let span = b.span(parent);
                if !parents.insert(span) {
                    return Err(CodecError::DuplicateParent { offset: start, span });
                }
                b.mention(span);
                for (j, pair) in level[1..].chunks(2).enumerate() {
                    b.edge(parent, pair[0], pair[1], start + 2 * j + 2)?;
                }
            }
        }
        Traversal::Dfs => {
            for (start, level) in lv {
                for j in (0..level.len() - 1).step_by(2) {
                    let parent = level[j];
                    if vocab.class_of(parent) != ElementClass::TextSpan {
                        return Err(CodecError::NodeTypeParent { offset: start + j });
                    }
                    b.edge(parent, level[j + 1], level[j + 2], start + j + 2)?;
                }
                if level.len() == 1 {
                    if vocab.class_of(level[0]) != ElementClass::TextSpan {
                        return Err(CodecError::NodeTypeParent { offset: start });
                    }
                    let span = b.span(level[0]);
                    b.mention(span);
                }
            }
        }
    }
    b.finish()
}
