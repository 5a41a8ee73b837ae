//! Bijection between text spans / type ids and hybrid-span indices.
//!
//! Two coordinate systems are in play:
//!
//! - [`TextSpan`] is end-exclusive in token coordinates: `(start, end)` with
//!   `start < end`.
//! - [`HSpan`] is end-inclusive in rows of the hybrid representation, where
//!   rows `[0, l_p)` are type rows and rows `[l_p, l_p + n)` are text tokens.
//!
//! A span of length `len` starting at token `s` gets index
//! `s * m + (len - 1) + l_p`; type ids `k < l_p` keep their value and map
//! to the single-row hybrid span `(k, k)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpanError {
    #[error("span ({start}, {end}) is empty or reversed")]
    Empty { start: usize, end: usize },
    #[error("span ({start}, {end}) is longer than the maximum span length {m}")]
    TooLong { start: usize, end: usize, m: usize },
    #[error("span ({start}, {end}) runs past the input length {n}")]
    OutOfBounds { start: usize, end: usize, n: usize },
    #[error("index {k} outside [0, {bound})")]
    IndexOutOfRange { k: usize, bound: usize },
    #[error("hybrid span ({a}, {b}) addresses type rows")]
    TypeRows { a: usize, b: usize },
}

/// End-exclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TextSpan {
    pub start: usize,
    pub end: usize,
}

impl TextSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Check `0 <= start < end <= n` and `end - start <= m`.
    pub fn check(&self, n: usize, m: usize) -> Result<(), SpanError> {
        let (start, end) = (self.start, self.end);
        if end <= start {
            return Err(SpanError::Empty { start, end });
        }
        if end - start > m {
            return Err(SpanError::TooLong { start, end, m });
        }
        if end > n {
            return Err(SpanError::OutOfBounds { start, end, n });
        }
        Ok(())
    }
}

/// End-inclusive row range into the hybrid representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HSpan {
    pub a: usize,
    pub b: usize,
}

/// Index of a text span. Only the length bound is checked here; the caller
/// decides whether `end <= n`.
pub fn span_to_index(span: TextSpan, m: usize, l_p: usize) -> Result<usize, SpanError> {
    let (start, end) = (span.start, span.end);
    if end <= start {
        return Err(SpanError::Empty { start, end });
    }
    if end - start > m {
        return Err(SpanError::TooLong { start, end, m });
    }
    Ok(start * m + (end - start - 1) + l_p)
}

/// Index of a text span that must also lie inside an input of length `n`.
pub fn span_to_index_checked(span: TextSpan, n: usize, m: usize, l_p: usize) -> Result<usize, SpanError> {
    span.check(n, m)?;
    span_to_index(span, m, l_p)
}

/// Inverse map onto hybrid-representation rows, written as the closed form
/// `a = -max(0, l_p - k) + floor(max(0, k - l_p) / m) + l_p`,
/// `b = a + (max(0, k - l_p) mod m)`.
pub fn index_to_hspan(k: usize, m: usize, l_p: usize) -> HSpan {
    let below = l_p.saturating_sub(k) as i64;
    let above = k.saturating_sub(l_p);
    let a = -below + (above / m) as i64 + l_p as i64;
    let a = a as usize;
    HSpan { a, b: a + above % m }
}

/// Range-checked [`index_to_hspan`] for an input of length `n`.
pub fn index_to_hspan_checked(k: usize, n: usize, m: usize, l_p: usize) -> Result<HSpan, SpanError> {
    let bound = l_p + n * m;
    if k >= bound {
        return Err(SpanError::IndexOutOfRange { k, bound });
    }
    Ok(index_to_hspan(k, m, l_p))
}

pub fn hspan_to_text_span(h: HSpan, l_p: usize) -> Result<TextSpan, SpanError> {
    if h.a < l_p {
        return Err(SpanError::TypeRows { a: h.a, b: h.b });
    }
    Ok(TextSpan::new(h.a - l_p, h.b - l_p + 1))
}

/// Text span addressed by index `k >= l_p` (it may run past the input).
pub fn index_to_text_span(k: usize, m: usize, l_p: usize) -> Result<TextSpan, SpanError> {
    hspan_to_text_span(index_to_hspan(k, m, l_p), l_p)
}

/// Whether text index `k` addresses a span that fits inside the input.
pub fn is_legal_span_index(k: usize, n: usize, m: usize, l_p: usize) -> bool {
    if k < l_p || k >= l_p + n * m {
        return false;
    }
    let off = k - l_p;
    off / m + off % m < n
}
