//! Dense row-major matrices and the kernels shared by the tape and by
//! untaped inference.
//!
//! Every kernel computes each output row from the matching input row(s)
//! alone, with a fixed summation order. A single row evaluated on its own is
//! therefore bitwise identical to the same row inside a larger batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("{op}: shapes {a:?} and {b:?} do not match")]
    Mismatch { op: &'static str, a: [usize; 2], b: [usize; 2] },
    #[error("value count {len} does not equal {rows}x{cols}")]
    Count { len: usize, rows: usize, cols: usize },
}

/// A `rows × cols` matrix of `f64`. Vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::Count { len: data.len(), rows, cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        Tensor {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let mut out = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Tensor { rows: self.rows, cols: len, data: out }
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
        let cols = parts.first().map_or(0, |t| t.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for p in parts {
            assert_eq!(p.cols, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&p.data);
        }
        Tensor { rows: data.len() / cols.max(1), cols, data }
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        let rows = parts.first().map_or(0, |t| t.rows);
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows, "concat_cols: row mismatch");
                data.extend_from_slice(p.row(r));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul: {:?} x {:?}", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub fn matmul_t(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_t: {:?} x {:?}ᵀ", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ar, b.row(j));
        }
    }
    out
}

/// `aᵀ · b`; only used in backward passes.
pub fn t_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "t_matmul: {:?}ᵀ x {:?}", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            for (o, &bkj) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br) {
                *o += aki * bkj;
            }
        }
    }
    out
}

pub fn add_row(a: &Tensor, row: &Tensor) -> Tensor {
    assert_eq!((row.rows, row.cols), (1, a.cols), "add_row shape");
    let mut out = a.clone();
    for r in 0..a.rows {
        for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
            *o += b;
        }
    }
    out
}

pub fn mul_row(a: &Tensor, row: &Tensor) -> Tensor {
    assert_eq!((row.rows, row.cols), (1, a.cols), "mul_row shape");
    let mut out = a.clone();
    for r in 0..a.rows {
        for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
            *o *= b;
        }
    }
    out
}

/// Row-wise softmax. Entries at the masking constant underflow to exactly 0.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..a.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Small enough that normalized rows have unit variance to 1e-10 whenever
/// the raw variance exceeds 1e-2.
pub const LN_EPS: f64 = 1e-12;

/// Row-wise normalization to zero mean and unit variance (no affine part).
/// Returns the output and the per-row inverse standard deviations.
pub fn layer_norm_rows(a: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = a.clone();
    let mut inv = Vec::with_capacity(a.rows);
    let c = a.cols as f64;
    for r in 0..a.rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let is = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv.push(is);
    }
    (out, inv)
}

/// Sliding windows of width `m` with stride 1; cells past the end hold `pad`.
pub fn unfold(v: &[f64], m: usize, pad: f64) -> Tensor {
    let n = v.len();
    Tensor::from_fn(n, m, |j, d| if j + d < n { v[j + d] } else { pad })
}

/// All span scores of a row pair: `out[j*m + d] = ts[j] + te[j + d]`,
/// or `pad` when `j + d >= n`.
pub fn span_scores_row(ts: &[f64], te: &[f64], m: usize, pad: f64, out: &mut [f64]) {
    let n = ts.len();
    for j in 0..n {
        for d in 0..m {
            out[j * m + d] = if j + d < n { ts[j] + te[j + d] } else { pad };
        }
    }
}
