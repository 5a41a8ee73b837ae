//! Positional and structural embeddings for target sequences.

use thiserror::Error;

use hyspa_core::codec::validate_sequence;
use hyspa_core::{AltSequence, CodecError, Traversal, TypeVocab};
use hyspa_tensor::Tensor;

/// Branch slots per depth of the tree code.
pub const TREE_BRANCHES: usize = 32;
/// Width of the tree code: three one-hot blocks.
pub const TREE_WIDTH: usize = 3 * TREE_BRANCHES;
/// Rows of the learned DFS level table; deeper levels wrap around.
pub const DFS_LEVELS: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmbedError {
    #[error("sinusoidal width must be even, got {0}")]
    OddWidth(usize),
    #[error("expected a {expected} sequence")]
    Traversal { expected: Traversal },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Interleaved sin/cos encoding: `[sin(p·w_0), cos(p·w_0), sin(p·w_1), …]`
/// with `w_i = 10000^(−2i/d)`.
pub fn sinusoidal(pos: usize, d: usize) -> Result<Vec<f64>, EmbedError> {
    if d % 2 == 1 {
        return Err(EmbedError::OddWidth(d));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parent,
    Child,
    Edge,
    Separator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosInfo {
    pub level: usize,
    pub role: Role,
    /// Branch indices from the level root: parent `[0]`, edge `j` `[0, j]`,
    /// child under edge `j` `[0, j, 0]`. Empty for separators.
    pub path: Vec<usize>,
}

/// Per-position BFS annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversalStructure {
    pub positions: Vec<PosInfo>,
}

impl TraversalStructure {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Annotate a possibly unfinished BFS prefix. Position `i` depends only on
/// `items[..=i]`.
pub fn annotate_bfs_prefix(items: &[usize], sep: usize) -> TraversalStructure {
    let mut positions = Vec::with_capacity(items.len());
    let mut level = 0;
    let mut offset = 0;
    for &k in items {
        let info = if offset == 0 {
            PosInfo { level, role: Role::Parent, path: vec![0] }
        } else if k == sep {
            PosInfo { level, role: Role::Separator, path: Vec::new() }
        } else if offset % 2 == 1 {
            PosInfo { level, role: Role::Edge, path: vec![0, offset / 2] }
        } else {
            PosInfo { level, role: Role::Child, path: vec![0, offset / 2 - 1, 0] }
        };
        positions.push(info);
        if k == sep {
            level += 1;
            offset = 0;
        } else {
            offset += 1;
        }
    }
    TraversalStructure { positions }
}

/// Annotate a complete, valid BFS sequence.
pub fn annotate_bfs(s: &AltSequence, vocab: &TypeVocab) -> Result<TraversalStructure, EmbedError> {
    if s.traversal != Traversal::Bfs {
        return Err(EmbedError::Traversal { expected: Traversal::Bfs });
    }
    validate_sequence(s, vocab).map_err(CodecError::Malformed)?;
    Ok(annotate_bfs_prefix(&s.items, vocab.sep()))
}

/// Concatenated one-hot blocks for a tree path, overflow clamped to the last slot.
pub fn tree_code(path: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; TREE_WIDTH];
    for (depth, &b) in path.iter().enumerate().take(3) {
        out[depth * TREE_BRANCHES + b.min(TREE_BRANCHES - 1)] = 1.0;
    }
    out
}

/// DFS `(level, offset within level)` per position; position `i` depends
/// only on `items[..=i]`.
pub fn dfs_positions(items: &[usize], sep: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(items.len());
    let (mut level, mut offset) = (0, 0);
    for &k in items {
        out.push((level, offset));
        if k == sep {
            level += 1;
            offset = 0;
        } else {
            offset += 1;
        }
    }
    out
}

/// Constant inputs of the traversal embedding for a run of target rows.
/// Rows flagged `blank` (the start token) get no traversal component.
#[derive(Debug, Clone)]
pub enum TraversalInputs {
    Bfs {
        /// Sinusoidal level rows.
        level: Tensor,
        /// `rows × 2` selector of the parent/child vectors.
        parent_child: Tensor,
        /// `rows × TREE_WIDTH` tree codes.
        tree: Tensor,
    },
    Dfs {
        /// Rows of the learned level table.
        level_rows: Vec<usize>,
        /// 1 for live rows, 0 for blank rows, broadcast over `d`.
        keep: Tensor,
        /// Sinusoidal intra-level offsets.
        connection: Tensor,
    },
}

/// Build traversal inputs for decoder-input rows `rows` of `[SOS] + items`.
/// Row 0 is the start token.
pub fn traversal_inputs(
    traversal: Traversal,
    items: &[usize],
    sep: usize,
    d: usize,
    rows: std::ops::Range<usize>,
) -> Result<TraversalInputs, EmbedError> {
    let t = rows.len();
    match traversal {
        Traversal::Bfs => {
            let ann = annotate_bfs_prefix(items, sep);
            let mut level = Tensor::zeros(t, d);
            let mut pc = Tensor::zeros(t, 2);
            let mut tree = Tensor::zeros(t, TREE_WIDTH);
            for (r, row) in rows.enumerate() {
                if row == 0 {
                    continue;
                }
                let info = &ann.positions[row - 1];
                level.row_mut(r).copy_from_slice(&sinusoidal(info.level, d)?);
                match info.role {
                    Role::Parent => pc.set(r, 0, 1.0),
                    Role::Child => pc.set(r, 1, 1.0),
                    Role::Edge | Role::Separator => {}
                }
                tree.row_mut(r).copy_from_slice(&tree_code(&info.path));
            }
            Ok(TraversalInputs::Bfs { level, parent_child: pc, tree })
        }
        Traversal::Dfs => {
            let pos = dfs_positions(items, sep);
            let mut level_rows = Vec::with_capacity(t);
            let mut keep = Tensor::zeros(t, d);
            let mut connection = Tensor::zeros(t, d);
            for (r, row) in rows.enumerate() {
                if row == 0 {
                    level_rows.push(0);
                    continue;
                }
                let (lv, off) = pos[row - 1];
                level_rows.push(lv % DFS_LEVELS);
                keep.row_mut(r).fill(1.0);
                connection.row_mut(r).copy_from_slice(&sinusoidal(off, d)?);
            }
            Ok(TraversalInputs::Dfs { level_rows, keep, connection })
        }
    }
}
