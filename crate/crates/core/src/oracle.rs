//! Exact quadratic-cost attention: softmax, the expected Bernoulli attention
//! (YOSO-E), its normalized variants and its gradients.
//!
//! These are the references every sampled estimator is checked against.

use crate::config::{GradMode, OutputNorm};
use crate::error::{Error, Result};
use crate::lsh::{collision_derivative_unchecked, collision_prob, collision_prob_derivative_lb};
use crate::matrix::{check_unit_rows, dot, AttnInput, Matrix};
use crate::normalize::l2_rows;

/// Row-norm tolerance for inputs that must lie on the unit sphere.
pub const UNIT_TOL: f64 = 1e-6;
/// Exact gradients require `1 - |s| > SINGULARITY_GUARD` for every pair.
pub const SINGULARITY_GUARD: f64 = 1e-6;
/// Row sums below this produce a zero row under one-vector normalization.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Row-stochastic softmax weights `softmax(Q K^T * scale)`.
pub fn softmax_weights(q: &Matrix, k: &Matrix, scale: f64) -> Result<Matrix> {
    check_qk(q, k)?;
    let mut w = Matrix::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let qi = q.row(i);
        let row = w.row_mut(i);
        softmax_row(qi, k, scale, row);
    }
    Ok(w)
}

fn softmax_row(qi: &[f64], k: &Matrix, scale: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, kj) in out.iter_mut().zip(k.iter_rows()) {
        *o = dot(qi, kj) * scale;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Scaled dot-product attention `D^-1 exp(Q K^T * scale) V`, row-stable.
///
/// Works one query row at a time, so the only scratch is a length-`n` buffer.
pub fn softmax_attention(input: &AttnInput, scale: f64) -> Matrix {
    let n = input.n();
    let dv = input.value_dim();
    let mut out = Matrix::zeros(n, dv);
    let mut weights = vec![0.0; input.k.rows()];
    for i in 0..n {
        softmax_row(input.q.row(i), &input.k, scale, &mut weights);
        let yi = out.row_mut(i);
        for (w, vj) in weights.iter().zip(input.v.iter_rows()) {
            for (y, v) in yi.iter_mut().zip(vj) {
                *y += w * v;
            }
        }
    }
    out
}

/// Expected collision matrix `E[B]_{ij} = collision_prob(Q_i . K_j, tau)`.
pub fn yoso_e_weights(q: &Matrix, k: &Matrix, tau: u32) -> Result<Matrix> {
    check_qk(q, k)?;
    check_unit_rows(q, "q", UNIT_TOL)?;
    check_unit_rows(k, "k", UNIT_TOL)?;
    Ok(Matrix::from_fn(q.rows(), k.rows(), |i, j| {
        collision_prob(dot(q.row(i), k.row(j)), tau)
    }))
}

/// Expected YOSO attention `E[B] V`, without normalization.
pub fn yoso_e(input: &AttnInput, tau: u32) -> Result<Matrix> {
    input.check_unit_rows(UNIT_TOL)?;
    let (num, _) = expected_sums(input, tau, false);
    Ok(num)
}

/// [`yoso_e`] with each output row rescaled to unit length. All-zero rows stay zero.
pub fn n_yoso_e(input: &AttnInput, tau: u32) -> Result<Matrix> {
    Ok(l2_rows(&yoso_e(input, tau)?))
}

/// [`yoso_e`] followed by the requested output normalization.
pub fn yoso_e_normalized(input: &AttnInput, tau: u32, norm: OutputNorm) -> Result<Matrix> {
    match norm {
        OutputNorm::None => yoso_e(input, tau),
        OutputNorm::L2 => n_yoso_e(input, tau),
        OutputNorm::OneVector => {
            input.check_unit_rows(UNIT_TOL)?;
            let (mut num, den) = expected_sums(input, tau, true);
            for (i, &d) in den.iter().enumerate() {
                let row = num.row_mut(i);
                if d < DENOMINATOR_FLOOR {
                    row.fill(0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= d);
                }
            }
            Ok(num)
        }
    }
}

fn expected_sums(input: &AttnInput, tau: u32, with_row_sums: bool) -> (Matrix, Vec<f64>) {
    let n = input.n();
    let mut out = Matrix::zeros(n, input.value_dim());
    let mut sums = vec![0.0; if with_row_sums { n } else { 0 }];
    for i in 0..n {
        let qi = input.q.row(i);
        let yi = out.row_mut(i);
        let mut total = 0.0;
        for (kj, vj) in input.k.iter_rows().zip(input.v.iter_rows()) {
            let w = collision_prob(dot(qi, kj), tau);
            total += w;
            for (y, v) in yi.iter_mut().zip(vj) {
                *y += w * v;
            }
        }
        if with_row_sums {
            sums[i] = total;
        }
    }
    (out, sums)
}

/// Gradients of `L` through `Y = E[B] V` given `dL/dY`.
///
/// `grad_v = E[B]^T grad_y`. For queries and keys the pair weight is
/// `W_ij = (grad_y_i . V_j) * c(s_ij)` with `c` either the true derivative of
/// the collision probability ([`GradMode::ExactOracle`]) or the lower bound
/// `(tau / 2) * collision_prob` ([`GradMode::LowerBound`]); then
/// `grad_q_i = sum_j W_ij K_j` and `grad_k_j = sum_i W_ij Q_i`.
///
/// Rows are treated as free vectors: no unit-norm projection is applied.
pub fn yoso_e_grad(
    input: &AttnInput,
    grad_y: &Matrix,
    tau: u32,
    mode: GradMode,
) -> Result<Gradients> {
    let n = input.n();
    let d = input.d();
    let dv = input.value_dim();
    if grad_y.shape() != (n, dv) {
        return Err(Error::DimensionMismatch(format!(
            "grad_y is {}x{}, expected {n}x{dv}",
            grad_y.rows(),
            grad_y.cols()
        )));
    }
    let nk = input.k.rows();
    let mut gq = Matrix::zeros(n, d);
    let mut gk = Matrix::zeros(nk, d);
    let mut gv = Matrix::zeros(nk, dv);
    for i in 0..n {
        let qi = input.q.row(i);
        let gi = grad_y.row(i);
        for j in 0..nk {
            let kj = input.k.row(j);
            let s = dot(qi, kj);
            let factor = match mode {
                GradMode::ExactOracle => {
                    if !(1.0 - s.abs() > SINGULARITY_GUARD) {
                        return Err(Error::Singularity { i, j, s });
                    }
                    collision_derivative_unchecked(s, tau)
                }
                GradMode::LowerBound => collision_prob_derivative_lb(s, tau),
            };
            let p = collision_prob(s, tau);
            for (g, y) in gv.row_mut(j).iter_mut().zip(gi) {
                *g += p * y;
            }
            let w = dot(gi, input.v.row(j)) * factor;
            for (g, k) in gq.row_mut(i).iter_mut().zip(kj) {
                *g += w * k;
            }
            for (g, q) in gk.row_mut(j).iter_mut().zip(qi) {
                *g += w * q;
            }
        }
    }
    Ok(Gradients { q: gq, k: gk, v: gv })
}

fn check_qk(q: &Matrix, k: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch(format!(
            "q has {} columns, k has {}",
            q.cols(),
            k.cols()
        )));
    }
    Ok(())
}
