//! Input conditioning for queries and keys.
//!
//! [`l2_rows`] is the practical path: rescale every row to unit length.
//! [`norm_bounded_lift`] maps arbitrary queries and keys onto the unit sphere
//! in `d + 2` dimensions while keeping every query-key dot product, up to the
//! known factor `1 / tau_bound`.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    L2Rows,
    NormBounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub max_row_norm_before: f64,
    pub mode: NormMode,
    /// Only meaningful for [`NormMode::NormBounded`].
    pub tau_bound: f64,
}

/// Queries and keys after the unit-length lift.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub q: Matrix,
    pub k: Matrix,
    pub report: NormReport,
}

/// Scale each nonzero row to unit norm; zero rows stay zero.
pub fn l2_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// [`l2_rows`] applied to queries and keys, with the pre-normalization report.
pub fn l2_rows_pair(q: &Matrix, k: &Matrix) -> (Matrix, Matrix, NormReport) {
    let report = NormReport {
        max_row_norm_before: max_row_norm(q).max(max_row_norm(k)),
        mode: NormMode::L2Rows,
        tau_bound: f64::NAN,
    };
    (l2_rows(q), l2_rows(k), report)
}

fn max_row_norm(x: &Matrix) -> f64 {
    x.iter_rows().map(norm).fold(0.0, f64::max)
}

/// Asymmetric lift onto the unit sphere:
///
/// ```text
/// q'_i = [Q_i / sqrt(t), sqrt(1 - |Q_i|^2 / t), 0]
/// k'_j = [K_j / sqrt(t), 0, sqrt(1 - |K_j|^2 / t)]
/// ```
///
/// so that `q'_i . k'_j = (Q_i . K_j) / t`. Requires `t >= |row|^2` for every row.
pub fn norm_bounded_lift(q: &Matrix, k: &Matrix, tau_bound: f64) -> Result<Lifted> {
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch(format!(
            "q has {} columns, k has {}",
            q.cols(),
            k.cols()
        )));
    }
    let max_norm = max_row_norm(q).max(max_row_norm(k));
    let max_sq_norm = q
        .iter_rows()
        .chain(k.iter_rows())
        .map(|r| dot(r, r))
        .fold(0.0, f64::max);
    if !(tau_bound > 0.0 && tau_bound >= max_sq_norm) {
        return Err(Error::TauBoundTooSmall {
            tau_bound,
            max_sq_norm,
        });
    }
    let lift = |x: &Matrix, slot: usize| {
        let d = x.cols();
        let root = tau_bound.sqrt();
        let mut out = Matrix::zeros(x.rows(), d + 2);
        for (i, row) in x.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            for (o, v) in dst.iter_mut().zip(row) {
                *o = v / root;
            }
            dst[d + slot] = (1.0 - dot(row, row) / tau_bound).max(0.0).sqrt();
        }
        out
    };
    Ok(Lifted {
        q: lift(q, 0),
        k: lift(k, 1),
        report: NormReport {
            max_row_norm_before: max_norm,
            mode: NormMode::NormBounded,
            tau_bound,
        },
    })
}
