//! Attention masks and output masks.
//!
//! Masks are boolean "admitted" tables; [`MaskMatrix::additive`] turns them
//! into `{0, MASKED}` score offsets where [`MASKED`] stands in for −∞.

use thiserror::Error;

use crate::hybrid::HSpan;
use crate::vocab::{ElementClass, TypeVocab, VirtualKind};

/// Finite stand-in for −∞ in score arithmetic. `exp` of it underflows to 0.
pub const MASKED: f64 = -1e30;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("hybrid span ({a}, {b}) outside [0, {rows})")]
pub struct MaskRangeError {
    pub a: usize,
    pub b: usize,
    pub rows: usize,
}

/// Dense `{0, −∞}` matrix stored as admitted flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    pub rows: usize,
    pub cols: usize,
    admitted: Vec<bool>,
}

impl MaskMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let admitted = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, admitted }
    }

    pub fn admits(&self, i: usize, j: usize) -> bool {
        self.admitted[i * self.cols + j]
    }

    /// Entry value: `0.0` or `-inf`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.admits(i, j) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.admitted[i * self.cols..(i + 1) * self.cols]
    }

    /// Row-major score offsets with −∞ realized as [`MASKED`].
    pub fn additive(&self) -> Vec<f64> {
        self.admitted.iter().map(|&a| if a { 0.0 } else { MASKED }).collect()
    }
}

/// Span-attention mask: row `i` admits exactly columns `a_i..=b_i`.
pub fn span_attention_mask(hspans: &[HSpan], l_h: usize) -> Result<MaskMatrix, MaskRangeError> {
    if let Some(h) = hspans.iter().find(|h| h.a > h.b || h.b >= l_h) {
        return Err(MaskRangeError { a: h.a, b: h.b, rows: l_h });
    }
    Ok(MaskMatrix::from_fn(hspans.len(), l_h, |i, j| hspans[i].a <= j && j <= hspans[i].b))
}

/// Mixed-attention mask over `n` source rows followed by `t` target rows:
/// column `j` is admitted for row `r` iff `j < n` or `j <= r`. Source rows
/// see only the source, target rows see the source and earlier targets.
pub fn mixed_attention_mask(n: usize, t: usize) -> MaskMatrix {
    let l = n + t;
    MaskMatrix::from_fn(l, l, |r, j| j < n || j <= r)
}

/// Output mask split like the score vector: one flag per type slot and one
/// per text position (shared by span starts and ends).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AltMasks {
    pub types: Vec<bool>,
    pub text: Vec<bool>,
}

impl AltMasks {
    pub fn admitted_types(&self) -> Vec<usize> {
        self.types.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k).collect()
    }

    /// Whether any text span is admitted.
    pub fn text_open(&self) -> bool {
        self.text.iter().any(|&a| a)
    }
}

/// Alternating output masks given the previously generated element `prev`
/// (`[SOS]` at the first step).
///
/// After a node element only edge slots `[0, l_e)` are open. After an edge
/// element node types and text spans are open; a `[SEP]` additionally opens
/// `[EOS]`, which is how a finished sequence terminates. With `strict`, a
/// `[TYPE]` edge admits only node types and a relation admits only spans.
pub fn alternating_masks(prev: usize, vocab: &TypeVocab, n: usize, strict: bool) -> AltMasks {
    let l_e = vocab.l_e();
    let l_p = vocab.l_p();
    let class = vocab.class_of(prev);
    if class.is_node() {
        return AltMasks {
            types: (0..l_p).map(|k| k < l_e).collect(),
            text: vec![false; n],
        };
    }
    let mut types: Vec<bool> = (0..l_p).map(|k| k >= l_e).collect();
    let mut text = vec![true; n];
    match class {
        ElementClass::VirtualEdge(VirtualKind::Sep) => types[vocab.eos()] = true,
        ElementClass::RealEdge if strict => {
            if prev == vocab.type_edge() {
                text.fill(false);
            } else {
                types.fill(false);
            }
        }
        _ => {}
    }
    AltMasks { types, text }
}
