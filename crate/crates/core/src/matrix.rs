//! Dense row-major `f64` matrices, the (Q, K, V) input triple, and the YMAT
//! binary format.
//!
//! YMAT layout (little-endian): `b"YMAT"`, `u32` version = 1, `u32` rows,
//! `u32` cols, then `rows * cols` `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngState;

pub const YMAT_MAGIC: &[u8; 4] = b"YMAT";
pub const YMAT_VERSION: u32 = 1;
pub const YMAT_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix still has `rows` empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn neg(&self) -> Matrix {
        self.scaled(-1.0)
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, rhs: &Matrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// Largest absolute entry, 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Copy of the leading `rows x cols` block.
    pub fn top_left(&self, rows: usize, cols: usize) -> Matrix {
        let rows = rows.min(self.rows);
        let cols = cols.min(self.cols);
        Matrix::from_fn(rows, cols, |i, j| self.get(i, j))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.iter_rows() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_ymat_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(YMAT_HEADER_LEN + 8 * self.data.len());
        buf.extend_from_slice(YMAT_MAGIC);
        buf.extend_from_slice(&YMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_ymat_bytes(bytes: &[u8]) -> Result<Matrix> {
        if bytes.len() < YMAT_HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "{} bytes is shorter than the 16-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != YMAT_MAGIC {
            return Err(Error::MalformedHeader("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != YMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let rows = word(8) as usize;
        let cols = word(12) as usize;
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::MalformedHeader(format!("{rows}x{cols} overflows")))?;
        let payload = &bytes[YMAT_HEADER_LEN..];
        if Some(payload.len()) != expected.checked_mul(8) {
            return Err(Error::SizeMismatch {
                expected,
                found_bytes: payload.len(),
            });
        }
        let mut data = Vec::with_capacity(expected);
        for (index, chunk) in payload.chunks_exact(8).enumerate() {
            let x = f64::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::NonFinite { index });
            }
            data.push(x);
        }
        Ok(Matrix { rows, cols, data })
    }
}

/// Read a YMAT file.
pub fn mat_read(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Matrix::from_ymat_bytes(&bytes)
}

/// Write a YMAT file.
pub fn mat_write(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if m.rows > u32::MAX as usize || m.cols > u32::MAX as usize {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} does not fit the u32 header",
            m.rows, m.cols
        )));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&m.to_ymat_bytes())
        .map_err(|e| Error::io(path, e))
}

/// I.i.d. standard normal entries, row-major draw order.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &RngState) -> Matrix {
    let mut gen = rng.generator();
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut gen))
        .collect();
    Matrix { rows, cols, data }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One attention head's projected queries, keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnInput {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttnInput {
    /// Queries and keys must agree in shape; values must have one row per key.
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        if q.shape() != k.shape() {
            return Err(Error::DimensionMismatch(format!(
                "q is {}x{} but k is {}x{}",
                q.rows, q.cols, k.rows, k.cols
            )));
        }
        if v.rows != k.rows {
            return Err(Error::DimensionMismatch(format!(
                "v has {} rows but k has {}",
                v.rows, k.rows
            )));
        }
        Ok(Self { q, k, v })
    }

    pub fn n(&self) -> usize {
        self.q.rows
    }

    /// Dimension of queries and keys.
    pub fn d(&self) -> usize {
        self.q.cols
    }

    /// Width of the value rows.
    pub fn value_dim(&self) -> usize {
        self.v.cols
    }

    /// Errors unless every query and key row has unit norm within `tol`.
    pub fn check_unit_rows(&self, tol: f64) -> Result<()> {
        check_unit_rows(&self.q, "q", tol)?;
        check_unit_rows(&self.k, "k", tol)
    }
}

pub(crate) fn check_unit_rows(m: &Matrix, which: &'static str, tol: f64) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if !((n - 1.0).abs() <= tol) {
            return Err(Error::NotUnitNorm { which, row, norm: n });
        }
    }
    Ok(())
}
