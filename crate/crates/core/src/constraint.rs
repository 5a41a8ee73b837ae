//! Sequence-level output constraint used while decoding.
//!
//! The alternating masks only look at the previous element, which is not
//! enough to guarantee that a generated sequence decodes to a graph (a
//! relation could point at a node type, a mention could stay untyped, the
//! output could run out of length mid-level). [`DecodeConstraint`] tracks
//! the whole prefix and admits an element only if the result can still be
//! completed into a decodable sequence, `[EOS]` included, within `max_len`
//! emitted tokens.
//!
//! Completion costs are exact minima computed in closed form; the
//! `never_stuck` tests check them against random walks.

use std::collections::HashSet;

use thiserror::Error;

use crate::codec::{AltSequence, Traversal};
use crate::hybrid;
use crate::vocab::{ElementClass, TypeVocab};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("max_len {max_len} is shorter than the shortest complete output ({min})")]
    BudgetTooSmall { max_len: usize, min: usize },
    #[error("element {k} is not admissible at step {step}")]
    Inadmissible { k: usize, step: usize },
    #[error("sequence already finished")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    LevelStart,
    /// `[NULL]` opened the only level; `[SEP]` must follow.
    NullOpen,
    /// The empty-graph level is closed; only `[EOS]` remains.
    NullClosed,
    /// BFS parent emitted; its `[TYPE]` edge comes first.
    AfterParent,
    /// `[TYPE]` emitted for `node`; a node type must follow.
    AfterTypeEdge { node: usize },
    /// Edge slot after a text node (`first`: the node opened the level).
    EdgeSlot { node: usize, first: bool },
    /// Relation emitted; a text span must follow.
    AfterRelation,
    /// DFS path ended at a node type; `[SEP]` must follow.
    TypeLeaf,
    Finished,
}

/// Incremental grammar + length-budget check over hybrid-span indices.
#[derive(Debug, Clone)]
pub struct DecodeConstraint<'v> {
    vocab: &'v TypeVocab,
    n: usize,
    m: usize,
    traversal: Traversal,
    max_len: usize,
    items: Vec<usize>,
    phase: Phase,
    /// Text indices seen so far.
    seen: HashSet<usize>,
    /// BFS: spans that opened a level. DFS: spans that received a type.
    settled: HashSet<usize>,
    levels: usize,
}

impl<'v> DecodeConstraint<'v> {
    pub fn new(vocab: &'v TypeVocab, n: usize, m: usize, traversal: Traversal, max_len: usize) -> Result<Self, ConstraintError> {
        if max_len < 3 {
            return Err(ConstraintError::BudgetTooSmall { max_len, min: 3 });
        }
        Ok(Self {
            vocab,
            n,
            m,
            traversal,
            max_len,
            items: Vec::new(),
            phase: Phase::LevelStart,
            seen: HashSet::new(),
            settled: HashSet::new(),
            levels: 0,
        })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    /// The element most recently emitted, `[SOS]` before the first step.
    pub fn prev(&self) -> usize {
        match self.phase {
            Phase::Finished => self.vocab.eos(),
            _ => self.items.last().copied().unwrap_or(self.vocab.sos()),
        }
    }

    /// Output-space size `l_p + n·m`.
    pub fn width(&self) -> usize {
        self.vocab.l_p() + self.n * self.m
    }

    pub fn sequence(&self) -> AltSequence {
        AltSequence::new(self.items.clone(), self.traversal, self.n, self.m)
    }

    fn pending(&self) -> usize {
        self.seen.len() - self.settled.len()
    }

    fn is_pending(&self, k: usize) -> bool {
        self.seen.contains(&k) && !self.settled.contains(&k)
    }

    /// Tokens, `[EOS]` included, still needed from the current state at best.
    pub fn remaining_cost(&self) -> usize {
        let p = self.pending();
        match self.phase {
            Phase::Finished => 0,
            Phase::NullClosed => 1,
            Phase::NullOpen => 2,
            Phase::LevelStart if self.items.is_empty() => 3,
            Phase::LevelStart => 4 * p + 1,
            Phase::AfterParent => 3 + 4 * p + 1,
            Phase::AfterTypeEdge { .. } => match self.traversal {
                Traversal::Bfs => 2 + 4 * p + 1,
                // `p` still counts the node being typed.
                Traversal::Dfs => 2 + 4 * (p - 1) + 1,
            },
            Phase::TypeLeaf => 1 + 4 * p + 1,
            Phase::EdgeSlot { node, first } => self.edge_slot_cost(node, first, p),
            Phase::AfterRelation => 1 + self.best_child_cost(p),
        }
    }

    fn edge_slot_cost(&self, node: usize, first: bool, p: usize) -> usize {
        match self.traversal {
            Traversal::Bfs => 1 + 4 * p + 1,
            Traversal::Dfs => dfs_edge_slot(self.is_pending(node), first, p),
        }
    }

    /// Cost after choosing the cheapest child span for a relation.
    fn best_child_cost(&self, p: usize) -> usize {
        match self.traversal {
            Traversal::Bfs => 1 + 4 * p + 1,
            Traversal::Dfs => dfs_best_child(p),
        }
    }

    /// Remaining cost after emitting `k`, or `None` if the grammar forbids `k`.
    fn cost_after(&self, k: usize) -> Option<usize> {
        let v = self.vocab;
        let p = self.pending();
        let class = v.class_of(k);
        let is_span = class == ElementClass::TextSpan && hybrid::is_legal_span_index(k, self.n, self.m, v.l_p());
        let entity = v.is_node_type(k) && k != v.null_node();
        match (self.phase, self.traversal) {
            (Phase::Finished, _) => None,
            (Phase::NullClosed, _) => (k == v.eos()).then_some(0),
            (Phase::NullOpen, _) => (k == v.sep()).then_some(1),
            (Phase::LevelStart, tr) => {
                if k == v.eos() {
                    return (self.levels > 0 && p == 0).then_some(0);
                }
                if k == v.null_node() {
                    return self.items.is_empty().then_some(2);
                }
                if !is_span {
                    return None;
                }
                match tr {
                    Traversal::Bfs => {
                        if self.settled.contains(&k) {
                            return None;
                        }
                        let p_after = if self.is_pending(k) { p - 1 } else { p };
                        Some(3 + 4 * p_after + 1)
                    }
                    Traversal::Dfs => {
                        let new = !self.seen.contains(&k);
                        Some(dfs_edge_slot(new || self.is_pending(k), true, p + usize::from(new)))
                    }
                }
            }
            (Phase::AfterParent, _) => (k == v.type_edge()).then_some(2 + 4 * p + 1),
            (Phase::AfterTypeEdge { .. }, Traversal::Bfs) => entity.then_some(1 + 4 * p + 1),
            (Phase::AfterTypeEdge { .. }, Traversal::Dfs) => entity.then(|| 1 + 4 * (p - 1) + 1),
            (Phase::TypeLeaf, _) => (k == v.sep()).then_some(4 * p + 1),
            (Phase::EdgeSlot { node, first }, tr) => {
                if k == v.sep() {
                    return (!first || tr == Traversal::Bfs).then_some(4 * p + 1);
                }
                if v.is_relation(k) {
                    return Some(1 + self.best_child_cost(p));
                }
                if k == v.type_edge() && tr == Traversal::Dfs && self.is_pending(node) {
                    return Some(2 + 4 * (p - 1) + 1);
                }
                None
            }
            (Phase::AfterRelation, Traversal::Bfs) => {
                if !is_span {
                    return None;
                }
                let new = !self.seen.contains(&k);
                Some(1 + 4 * (p + usize::from(new)) + 1)
            }
            (Phase::AfterRelation, Traversal::Dfs) => {
                if !is_span {
                    return None;
                }
                let new = !self.seen.contains(&k);
                Some(dfs_edge_slot(new || self.is_pending(k), false, p + usize::from(new)))
            }
        }
    }

    pub fn is_admissible(&self, k: usize) -> bool {
        if k >= self.width() {
            return false;
        }
        match self.cost_after(k) {
            Some(cost) => self.items.len() + 1 + cost <= self.max_len,
            None => false,
        }
    }

    /// Admitted flags over the whole output space `[0, l_p + n·m)`.
    pub fn admissible(&self) -> Vec<bool> {
        (0..self.width()).map(|k| self.is_admissible(k)).collect()
    }

    /// Emit `k`. `[EOS]` finishes the sequence and is not stored.
    pub fn push(&mut self, k: usize) -> Result<(), ConstraintError> {
        if self.phase == Phase::Finished {
            return Err(ConstraintError::Finished);
        }
        if !self.is_admissible(k) {
            return Err(ConstraintError::Inadmissible { k, step: self.items.len() });
        }
        let v = self.vocab;
        if k == v.eos() {
            self.phase = Phase::Finished;
            return Ok(());
        }
        self.items.push(k);
        let class = v.class_of(k);
        if class == ElementClass::TextSpan {
            self.seen.insert(k);
        }
        self.phase = match (self.phase, self.traversal) {
            (Phase::LevelStart, _) if k == v.null_node() => Phase::NullOpen,
            (Phase::NullOpen, _) => {
                self.levels += 1;
                Phase::NullClosed
            }
            (Phase::LevelStart, Traversal::Bfs) => {
                self.settled.insert(k);
                Phase::AfterParent
            }
            (Phase::LevelStart, Traversal::Dfs) => Phase::EdgeSlot { node: k, first: true },
            (Phase::AfterParent, _) => {
                let node = self.items[self.items.len() - 2];
                Phase::AfterTypeEdge { node }
            }
            (Phase::AfterTypeEdge { node }, Traversal::Bfs) => Phase::EdgeSlot { node, first: false },
            (Phase::AfterTypeEdge { node }, Traversal::Dfs) => {
                self.settled.insert(node);
                Phase::TypeLeaf
            }
            (Phase::EdgeSlot { .. }, _) | (Phase::TypeLeaf, _) if k == v.sep() => {
                self.levels += 1;
                Phase::LevelStart
            }
            (Phase::EdgeSlot { node, .. }, _) if k == v.type_edge() => Phase::AfterTypeEdge { node },
            (Phase::EdgeSlot { .. }, _) => Phase::AfterRelation,
            (Phase::AfterRelation, Traversal::Bfs) => {
                let parent = self.current_bfs_parent();
                Phase::EdgeSlot { node: parent, first: false }
            }
            (Phase::AfterRelation, Traversal::Dfs) => Phase::EdgeSlot { node: k, first: false },
            (phase, _) => unreachable!("admissibility check let {k} through in {phase:?}"),
        };
        Ok(())
    }

    fn current_bfs_parent(&self) -> usize {
        let sep = self.vocab.sep();
        let start = self.items.iter().rposition(|&x| x == sep).map_or(0, |i| i + 1);
        self.items[start]
    }
}

/// DFS: cheapest completion from the edge slot after a text node.
fn dfs_edge_slot(node_pending: bool, first: bool, p: usize) -> usize {
    // A relation followed by the cheapest child is always available.
    let mut best = 2 + dfs_best_child(p);
    if !first {
        best = best.min(1 + 4 * p + 1);
    }
    if node_pending {
        // `[TYPE] type [SEP]` settles the node.
        best = best.min(3 + 4 * (p - 1) + 1);
    }
    best
}

/// DFS: cheapest completion right after a relation's child is emitted.
fn dfs_best_child(p: usize) -> usize {
    if p > 0 {
        // Point at a pending span and type it on this path.
        3 + 4 * (p - 1) + 1
    } else {
        1 + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_sequence, encode, validate_sequence};
    use crate::graph::{canonicalize, EdgeFreq, InfoGraph};
    use crate::hybrid::TextSpan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn walk<'v>(v: &'v TypeVocab, n: usize, m: usize, tr: Traversal, max_len: usize, rng: &mut ChaCha8Rng) -> DecodeConstraint<'v> {
        let mut c = DecodeConstraint::new(v, n, m, tr, max_len).unwrap();
        while !c.is_finished() {
            let adm: Vec<usize> = c.admissible().iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k).collect();
            assert!(!adm.is_empty(), "stuck after {:?}", c.items());
            // Bias toward edges and level closures so walks finish at all lengths.
            let k = if rng.gen_bool(0.3) && adm.contains(&v.eos()) {
                v.eos()
            } else if rng.gen_bool(0.3) && adm.contains(&v.sep()) {
                v.sep()
            } else {
                adm[rng.gen_range(0..adm.len())]
            };
            c.push(k).unwrap();
            assert!(c.items().len() < max_len);
        }
        c
    }

    #[test]
    fn never_stuck_and_always_decodable() {
        let v = TypeVocab::ace_like();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for tr in [Traversal::Bfs, Traversal::Dfs] {
            for trial in 0..400 {
                let n = 1 + trial % 6;
                let max_len = 3 + trial % 23;
                let c = walk(&v, n, 3, tr, max_len, &mut rng);
                let s = c.sequence();
                assert!(validate_sequence(&s, &v).is_ok(), "{:?}", s.items);
                assert!(decode_sequence(&s, &v).is_ok(), "{tr:?} {:?}: {:?}", s.items, decode_sequence(&s, &v));
                assert!(s.items.len() < max_len);
            }
        }
    }

    /// The closed-form cost equals the shortest completion found by search.
    #[test]
    fn cost_is_exact_minimum() {
        fn shortest(c: &DecodeConstraint<'_>, depth: usize) -> Option<usize> {
            if c.is_finished() {
                return Some(0);
            }
            if depth == 0 {
                return None;
            }
            let mut best: Option<usize> = None;
            for k in 0..c.width() {
                if c.cost_after(k).is_none() {
                    continue;
                }
                let mut next = c.clone();
                next.max_len = usize::MAX;
                next.push(k).unwrap();
                if let Some(d) = shortest(&next, depth - 1) {
                    best = Some(best.map_or(d + 1, |b: usize| b.min(d + 1)));
                }
            }
            best
        }
        let v = TypeVocab::new(&["[TYPE]", "R"], &["[NULL]", "A"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for tr in [Traversal::Bfs, Traversal::Dfs] {
            for _ in 0..40 {
                let mut c = DecodeConstraint::new(&v, 2, 2, tr, usize::MAX).unwrap();
                let steps = rng.gen_range(0..7);
                for _ in 0..steps {
                    if c.is_finished() {
                        break;
                    }
                    let adm: Vec<usize> = (0..c.width()).filter(|&k| c.cost_after(k).is_some() && k != v.eos()).collect();
                    if adm.is_empty() {
                        break;
                    }
                    c.push(adm[rng.gen_range(0..adm.len())]).unwrap();
                }
                let expected = c.remaining_cost();
                if expected <= 9 {
                    assert_eq!(shortest(&c, expected), Some(expected), "{tr:?} {:?}", c.items());
                }
            }
        }
    }

    #[test]
    fn encoder_outputs_are_admitted() {
        let v = TypeVocab::ace_like();
        let mut g = InfoGraph::new(9, 16);
        let he = g.add_mention(TextSpan::new(0, 1), 12);
        let bag = g.add_mention(TextSpan::new(4, 5), 14);
        let x = g.add_mention(TextSpan::new(6, 8), 13);
        g.add_relation(bag, he, 6);
        g.add_relation(he, x, 3);
        g.add_relation(x, x, 2);
        for tr in [Traversal::Bfs, Traversal::Dfs] {
            let s = encode(&canonicalize(&g, &v, &EdgeFreq::new()), &v, tr).unwrap();
            let mut c = DecodeConstraint::new(&v, 9, 16, tr, s.len() + 1).unwrap();
            for &k in &s.items {
                c.push(k).unwrap();
            }
            c.push(v.eos()).unwrap();
        }
    }

    #[test]
    fn budget_forces_closure() {
        let v = TypeVocab::ace_like();
        let mut c = DecodeConstraint::new(&v, 4, 2, Traversal::Bfs, 5).unwrap();
        c.push(19).unwrap();
        c.push(v.type_edge()).unwrap();
        c.push(12).unwrap();
        // Only [SEP] then [EOS] fit in the remaining two tokens.
        let adm: Vec<usize> = c.admissible().iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k).collect();
        assert_eq!(adm, vec![v.sep()]);
        c.push(v.sep()).unwrap();
        assert!(c.is_admissible(v.eos()));
        assert!(!c.is_admissible(20));
        assert!(DecodeConstraint::new(&v, 4, 2, Traversal::Bfs, 2).is_err());
    }

    #[test]
    fn empty_graph_path() {
        let v = TypeVocab::ace_like();
        let mut c = DecodeConstraint::new(&v, 4, 2, Traversal::Dfs, 10).unwrap();
        assert!(!c.is_admissible(v.eos()));
        c.push(v.null_node()).unwrap();
        assert_eq!(c.admissible().iter().filter(|&&a| a).count(), 1);
        c.push(v.sep()).unwrap();
        c.push(v.eos()).unwrap();
        assert!(c.is_finished());
        assert_eq!(c.push(v.eos()), Err(ConstraintError::Finished));
    }
}
