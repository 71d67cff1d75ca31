//! Row-major dense `f64` matrices and the numeric primitives the rest of the
//! crate builds on.
//!
//! Summation orders are fixed (row-major, left to right) so every operation is
//! bit-deterministic for identical inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Errors surfaced by the numeric core.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreError {
    /// Operand shapes are incompatible.
    Shape(String),
    /// A scalar parameter is out of its documented range.
    Parameter(String),
    /// Input data violates a documented contract (labels, sizes, ...).
    Data(String),
    /// A run-level failure (e.g. GAN loss diverged to NaN).
    Diverged(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(msg) => write!(f, "shape error: {msg}"),
            CoreError::Parameter(msg) => write!(f, "parameter error: {msg}"),
            CoreError::Data(msg) => write!(f, "data error: {msg}"),
            CoreError::Diverged(msg) => write!(f, "diverged: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

/// Row-major dense matrix of `f64`. `data.len() == rows * cols` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::Shape(String::from("ragged row lengths")));
            }
            data.extend_from_slice(row);
        }
        DenseMatrix::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Single-row matrix view of a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        DenseMatrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Scalar stored as a 1x1 matrix.
    pub fn scalar(v: f64) -> Self {
        DenseMatrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn scalar_value(&self) -> Option<f64> {
        if self.rows == 1 && self.cols == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> DenseMatrix {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::Shape(format!(
                "axpy on {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v * v;
        }
        math::sqrt(acc)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0;
        for &v in &self.data {
            let a = math::abs(v);
            if a > m {
                m = a;
            }
        }
        m
    }

    /// Horizontal concatenation of equal-height blocks.
    pub fn concat_cols(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let rows = parts
            .first()
            .ok_or_else(|| CoreError::Shape(String::from("concat of zero blocks")))?
            .rows;
        let total: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = DenseMatrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            if p.rows != rows {
                return Err(CoreError::Shape(String::from(
                    "concat_cols blocks differ in row count",
                )));
            }
            for i in 0..rows {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
            }
            offset += p.cols;
        }
        Ok(out)
    }
}

/// Standard matrix product with a fixed summation order (row-major, left to
/// right over the inner dimension).
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(CoreError::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(m, p);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate().take(n) {
            let brow = b.row(k);
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(CoreError::Shape(format!(
            "matmul_tn {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, n, p) = (a.cols(), a.rows(), b.cols());
    let mut out = DenseMatrix::zeros(m, p);
    for k in 0..n {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate().take(m) {
            let orow = out.row_mut(i);
            for j in 0..p {
                orow[j] += aki * brow[j];
            }
        }
    }
    Ok(out)
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(CoreError::Shape(format!(
            "matmul_nt {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, n, p) = (a.rows(), a.cols(), b.rows());
    let mut out = DenseMatrix::zeros(m, p);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..p {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..n {
                acc += arow[k] * brow[k];
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction. Each output row sums to 1.
pub fn row_softmax(m: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let mut mx = f64::NEG_INFINITY;
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let orow = out.row_mut(i);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row.iter()) {
            let e = math::exp(v - mx);
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Pairwise cosine similarity between the rows of `h`.
///
/// Zero-norm rows are defined to have similarity 0 against every row
/// (including themselves); the diagonal is exactly 1 for nonzero rows.
/// Negative zeros are canonicalized to `0.0` so downstream tie-breaks see a
/// single zero value.
pub fn cosine_similarity_matrix(h: &DenseMatrix) -> DenseMatrix {
    let b = h.rows();
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let mut acc = 0.0;
        for &v in h.row(i) {
            acc += v * v;
        }
        norms.push(math::sqrt(acc));
    }
    let mut out = DenseMatrix::zeros(b, b);
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        out.set(i, i, 1.0);
        for j in (i + 1)..b {
            if norms[j] == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            let (ri, rj) = (h.row(i), h.row(j));
            for k in 0..h.cols() {
                dot += ri[k] * rj[k];
            }
            let mut s = dot / (norms[i] * norms[j]);
            if s == 0.0 {
                s = 0.0; // collapse -0.0
            }
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    out
}
