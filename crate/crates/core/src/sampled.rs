//! Linear-cost YOSO attention by LSH Bernoulli sampling.
//!
//! For one hash function `f`, `B_ij = 1[f(Q_i) = f(K_j)]` and
//! `Y_i = sum_j B_ij V_j`. Rather than storing keys per bucket, every key's
//! value row is added into a `2^tau x w` [`BucketTable`] at its code, and each
//! query reads back the bucket at its own code. The output averages `m`
//! independent hash functions.
//!
//! Accumulation order is fixed: keys in ascending index within a table, hash
//! functions in ascending index per output row. Given the same codes, every
//! routine here is bit-identical to the naive indicator double loop.

use crate::config::{AttnConfig, GradMode, OutputNorm};
use crate::error::{Error, Result};
use crate::lsh::{hash, HashCodes, HashFamily};
use crate::matrix::{AttnInput, Matrix};
use crate::normalize::l2_rows;
use crate::oracle::{yoso_e_grad, Gradients, DENOMINATOR_FLOOR, UNIT_TOL};
use crate::rng::RngState;

const FORWARD_TAG: u64 = 0x464f_5257;
const BACKWARD_TAG: u64 = 0x4241_434b;

/// Bucket-sum accumulator for a single hash function.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    tau: u32,
    width: usize,
    data: Vec<f64>,
}

impl BucketTable {
    pub fn new(tau: u32, width: usize) -> Self {
        Self {
            tau,
            width,
            data: vec![0.0; (1usize << tau) * width],
        }
    }

    pub fn buckets(&self) -> usize {
        1usize << self.tau
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of scalars held, always `2^tau * width`.
    pub fn scalars(&self) -> usize {
        self.data.len()
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    pub fn bucket(&self, code: u32) -> &[f64] {
        let at = code as usize * self.width;
        &self.data[at..at + self.width]
    }

    /// Scatter-add `payload` rows by `codes`, ascending row order.
    pub fn ingest(&mut self, codes: &[u32], payload: &Matrix) -> Result<()> {
        if payload.rows() != codes.len() || payload.cols() != self.width {
            return Err(Error::DimensionMismatch(format!(
                "payload {}x{} for {} codes into width {}",
                payload.rows(),
                payload.cols(),
                codes.len(),
                self.width
            )));
        }
        self.check_codes(codes)?;
        self.ingest_with(codes, |j, dst| {
            for (d, v) in dst.iter_mut().zip(payload.row(j)) {
                *d += v;
            }
        });
        Ok(())
    }

    /// Scatter-add where `add(j, bucket)` adds row `j`'s payload into its bucket.
    /// Codes must already be in range.
    fn ingest_with(&mut self, codes: &[u32], mut add: impl FnMut(usize, &mut [f64])) {
        let w = self.width;
        for (j, &c) in codes.iter().enumerate() {
            let at = c as usize * w;
            add(j, &mut self.data[at..at + w]);
        }
    }

    fn check_codes(&self, codes: &[u32]) -> Result<()> {
        let buckets = self.buckets();
        match codes.iter().find(|&&c| c as usize >= buckets) {
            Some(&code) => Err(Error::CodeOutOfRange { code, buckets }),
            None => Ok(()),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.buckets(), self.width, self.data.clone()).expect("table shape")
    }
}

/// Table for one hash function: bucket `c` holds the sum of payload rows whose code is `c`.
pub fn build_table(codes: &[u32], payload: &Matrix, tau: u32) -> Result<BucketTable> {
    crate::lsh::validate_tau(tau)?;
    let mut table = BucketTable::new(tau, payload.cols());
    table.ingest(codes, payload)?;
    Ok(table)
}

/// Bucket-table memory actually held by a sampled pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TableStats {
    /// Largest number of table scalars alive at once.
    pub peak_table_scalars: usize,
    pub tables_built: usize,
}

/// Analytic table footprint of the forward pass: `m * 2^tau * w`, or
/// `2^tau * w` when one table is reused, where `w` is the value width
/// (plus one column under one-vector normalization).
pub fn forward_table_scalars(cfg: &AttnConfig, value_width: usize) -> usize {
    let w = value_width + usize::from(cfg.norm == OutputNorm::OneVector);
    let live = if cfg.reuse_tables { 1 } else { cfg.m };
    live * (1usize << cfg.tau) * w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Forward,
    Backward,
}

/// The hash family a pass draws from. With `reuse_codes` the backward pass
/// shares the forward family, so both see identical codes.
pub fn pass_family(cfg: &AttnConfig, dim: usize, pass: Pass) -> Result<HashFamily> {
    let tag = match (pass, cfg.reuse_codes) {
        (Pass::Forward, _) | (Pass::Backward, true) => FORWARD_TAG,
        (Pass::Backward, false) => BACKWARD_TAG,
    };
    HashFamily::new(
        cfg.tau,
        cfg.m,
        dim,
        cfg.projection,
        RngState::new(cfg.seed).fork(tag),
    )
}

/// Hash codes of queries and keys for a pass.
pub fn pass_codes(input: &AttnInput, cfg: &AttnConfig, pass: Pass) -> Result<(HashCodes, HashCodes)> {
    let fam = pass_family(cfg, input.d(), pass)?;
    Ok((hash(&input.q, &fam)?, hash(&input.k, &fam)?))
}

/// Sampled attention output averaged over `cfg.m` hash functions, then normalized per `cfg.norm`.
pub fn yoso_sample_forward(input: &AttnInput, cfg: &AttnConfig) -> Result<Matrix> {
    yoso_sample_forward_with_stats(input, cfg).map(|(y, _)| y)
}

pub fn yoso_sample_forward_with_stats(
    input: &AttnInput,
    cfg: &AttnConfig,
) -> Result<(Matrix, TableStats)> {
    cfg.validate()?;
    input.check_unit_rows(UNIT_TOL)?;
    let (codes_q, codes_k) = pass_codes(input, cfg, Pass::Forward)?;
    forward_with_codes(&codes_q, &codes_k, &input.v, cfg.norm, cfg.reuse_tables)
}

/// Forward pass on precomputed codes.
pub fn forward_with_codes(
    codes_q: &HashCodes,
    codes_k: &HashCodes,
    v: &Matrix,
    norm: OutputNorm,
    reuse_tables: bool,
) -> Result<(Matrix, TableStats)> {
    check_codes_pair(codes_q, codes_k, v.rows())?;
    let d = v.cols();
    match norm {
        OutputNorm::None => bernoulli_product(codes_k, codes_q, d, reuse_tables, |j, dst| {
            add_row(dst, v.row(j))
        }),
        OutputNorm::L2 => {
            let (y, stats) = bernoulli_product(codes_k, codes_q, d, reuse_tables, |j, dst| {
                add_row(dst, v.row(j))
            })?;
            Ok((l2_rows(&y), stats))
        }
        OutputNorm::OneVector => {
            let (sums, stats) =
                bernoulli_product(codes_k, codes_q, d + 1, reuse_tables, |j, dst| {
                    add_row(&mut dst[..d], v.row(j));
                    dst[d] += 1.0;
                })?;
            let mut y = Matrix::zeros(codes_q.n(), d);
            for i in 0..y.rows() {
                let src = sums.row(i);
                let den = src[d];
                if den >= DENOMINATOR_FLOOR {
                    for (o, s) in y.row_mut(i).iter_mut().zip(&src[..d]) {
                        *o = s / den;
                    }
                }
            }
            Ok((y, stats))
        }
    }
}

#[inline]
fn add_row(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_codes_pair(codes_q: &HashCodes, codes_k: &HashCodes, key_rows: usize) -> Result<()> {
    if codes_q.m() != codes_k.m() || codes_q.tau() != codes_k.tau() {
        return Err(Error::DimensionMismatch(format!(
            "query codes (m={}, tau={}) and key codes (m={}, tau={}) differ",
            codes_q.m(),
            codes_q.tau(),
            codes_k.m(),
            codes_k.tau()
        )));
    }
    if codes_k.n() != key_rows {
        return Err(Error::DimensionMismatch(format!(
            "{} key codes for {key_rows} payload rows",
            codes_k.n()
        )));
    }
    Ok(())
}

/// `out_i = (1/m) sum_h sum_j 1[dst_h(i) = src_h(j)] payload_j`, where `add`
/// writes payload row `j` into a bucket of width `width`.
fn bernoulli_product(
    src: &HashCodes,
    dst: &HashCodes,
    width: usize,
    reuse_tables: bool,
    mut add: impl FnMut(usize, &mut [f64]),
) -> Result<(Matrix, TableStats)> {
    let tau = src.tau();
    let m = src.m();
    let mut out = Matrix::zeros(dst.n(), width);
    let mut stats = TableStats::default();
    if reuse_tables {
        let mut table = BucketTable::new(tau, width);
        stats.peak_table_scalars = table.scalars();
        for h in 0..m {
            if h > 0 {
                table.clear();
            }
            table.ingest_with(src.column(h), &mut add);
            stats.tables_built += 1;
            for (i, &c) in dst.column(h).iter().enumerate() {
                add_row(out.row_mut(i), table.bucket(c));
            }
        }
    } else {
        let mut tables = Vec::with_capacity(m);
        for h in 0..m {
            let mut table = BucketTable::new(tau, width);
            table.ingest_with(src.column(h), &mut add);
            tables.push(table);
        }
        stats.tables_built = m;
        stats.peak_table_scalars = tables.iter().map(BucketTable::scalars).sum();
        for i in 0..dst.n() {
            let row = out.row_mut(i);
            for (h, table) in tables.iter().enumerate() {
                add_row(row, table.bucket(dst.get(i, h)));
            }
        }
    }
    let inv = m as f64;
    out.as_mut_slice().iter_mut().for_each(|x| *x /= inv);
    Ok((out, stats))
}

/// Sampled `dL/dV = B^T grad_y`: scatter `grad_y` by query codes, gather by key codes.
pub fn yoso_sample_grad_v(
    codes_q: &HashCodes,
    codes_k: &HashCodes,
    grad_y: &Matrix,
    cfg: &AttnConfig,
) -> Result<Matrix> {
    check_codes_pair(codes_k, codes_q, grad_y.rows())?;
    let (g, _) = bernoulli_product(
        codes_q,
        codes_k,
        grad_y.cols(),
        cfg.reuse_tables,
        |i, dst| add_row(dst, grad_y.row(i)),
    )?;
    Ok(g)
}

/// Sampled lower-bound `dL/dQ`:
/// `(grad_q)_i = sum_l grad_y[i, l] sum_j B_ij (tau/2) V[j, l] K_j`,
/// one table pass per group of `cfg.grad_chunk` value columns.
pub fn yoso_sample_grad_q(input: &AttnInput, grad_y: &Matrix, cfg: &AttnConfig) -> Result<Matrix> {
    let (codes_q, codes_k) = backward_codes(input, grad_y, cfg)?;
    grad_q_with_codes(&codes_q, &codes_k, input, grad_y, cfg.grad_chunk)
}

/// Symmetric counterpart of [`yoso_sample_grad_q`]:
/// `(grad_k)_j = sum_l V[j, l] sum_i B_ij (tau/2) grad_y[i, l] Q_i`.
pub fn yoso_sample_grad_k(input: &AttnInput, grad_y: &Matrix, cfg: &AttnConfig) -> Result<Matrix> {
    let (codes_q, codes_k) = backward_codes(input, grad_y, cfg)?;
    grad_k_with_codes(&codes_q, &codes_k, input, grad_y, cfg.grad_chunk)
}

fn backward_codes(
    input: &AttnInput,
    grad_y: &Matrix,
    cfg: &AttnConfig,
) -> Result<(HashCodes, HashCodes)> {
    cfg.validate()?;
    if cfg.grad != GradMode::LowerBound {
        return Err(Error::InvalidConfig(
            "sampled query/key gradients only exist for the lower-bound mode".into(),
        ));
    }
    check_grad_shape(input, grad_y)?;
    input.check_unit_rows(UNIT_TOL)?;
    pass_codes(input, cfg, Pass::Backward)
}

fn check_grad_shape(input: &AttnInput, grad_y: &Matrix) -> Result<()> {
    if grad_y.shape() != (input.n(), input.value_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "grad_y is {}x{}, expected {}x{}",
            grad_y.rows(),
            grad_y.cols(),
            input.n(),
            input.value_dim()
        )));
    }
    Ok(())
}

pub fn grad_q_with_codes(
    codes_q: &HashCodes,
    codes_k: &HashCodes,
    input: &AttnInput,
    grad_y: &Matrix,
    chunk: usize,
) -> Result<Matrix> {
    check_codes_pair(codes_q, codes_k, input.k.rows())?;
    check_grad_shape(input, grad_y)?;
    Ok(lower_bound_pass(
        codes_k, codes_q, &input.v, &input.k, grad_y, chunk,
    ))
}

pub fn grad_k_with_codes(
    codes_q: &HashCodes,
    codes_k: &HashCodes,
    input: &AttnInput,
    grad_y: &Matrix,
    chunk: usize,
) -> Result<Matrix> {
    check_codes_pair(codes_q, codes_k, input.k.rows())?;
    check_grad_shape(input, grad_y)?;
    Ok(lower_bound_pass(
        codes_q, codes_k, grad_y, &input.q, &input.v, chunk,
    ))
}

/// `out_t = (1/m) sum_h sum_l dst_weight[t, l] * T_{h,l}[code_h(t)]` where
/// table `T_{h,l}` sums `(tau/2) * src_weight[s, l] * src_vec_s` over sources.
fn lower_bound_pass(
    src_codes: &HashCodes,
    dst_codes: &HashCodes,
    src_weight: &Matrix,
    src_vec: &Matrix,
    dst_weight: &Matrix,
    chunk: usize,
) -> Matrix {
    let tau = src_codes.tau();
    let half_tau = 0.5 * tau as f64;
    let d = src_vec.cols();
    let dv = src_weight.cols();
    let chunk = chunk.clamp(1, dv.max(1));
    let mut out = Matrix::zeros(dst_codes.n(), d);
    let mut table = BucketTable::new(tau, chunk * d);
    for h in 0..src_codes.m() {
        for l0 in (0..dv).step_by(chunk) {
            let cols = chunk.min(dv - l0);
            table.clear();
            table.ingest_with(src_codes.column(h), |s, bucket| {
                let vec = src_vec.row(s);
                for (l, slot) in (l0..l0 + cols).zip(bucket.chunks_exact_mut(d)) {
                    let coef = half_tau * src_weight.get(s, l);
                    for (b, x) in slot.iter_mut().zip(vec) {
                        *b += coef * x;
                    }
                }
            });
            for (t, &c) in dst_codes.column(h).iter().enumerate() {
                let bucket = table.bucket(c);
                let row = out.row_mut(t);
                for (l, slot) in (l0..l0 + cols).zip(bucket.chunks_exact(d)) {
                    let w = dst_weight.get(t, l);
                    for (o, b) in row.iter_mut().zip(slot) {
                        *o += w * b;
                    }
                }
            }
        }
    }
    let inv = src_codes.m() as f64;
    out.as_mut_slice().iter_mut().for_each(|x| *x /= inv);
    out
}

/// All three gradients through `Y = B V` (before output normalization).
///
/// `grad_v` is always sampled. Query and key gradients are sampled with the
/// lower bound, or taken from the exact quadratic oracle under
/// [`GradMode::ExactOracle`].
pub fn yoso_sample_backward(input: &AttnInput, grad_y: &Matrix, cfg: &AttnConfig) -> Result<Gradients> {
    cfg.validate()?;
    check_grad_shape(input, grad_y)?;
    input.check_unit_rows(UNIT_TOL)?;
    let (codes_q, codes_k) = pass_codes(input, cfg, Pass::Backward)?;
    let v = yoso_sample_grad_v(&codes_q, &codes_k, grad_y, cfg)?;
    match cfg.grad {
        GradMode::LowerBound => Ok(Gradients {
            q: grad_q_with_codes(&codes_q, &codes_k, input, grad_y, cfg.grad_chunk)?,
            k: grad_k_with_codes(&codes_q, &codes_k, input, grad_y, cfg.grad_chunk)?,
            v,
        }),
        GradMode::ExactOracle => {
            let exact = yoso_e_grad(input, grad_y, cfg.tau, GradMode::ExactOracle)?;
            Ok(Gradients {
                q: exact.q,
                k: exact.k,
                v,
            })
        }
    }
}
