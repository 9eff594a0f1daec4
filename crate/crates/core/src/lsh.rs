//! Hyperplane LSH for unit vectors.
//!
//! A hash function concatenates `tau` sign bits. In [`Projection::Dense`] mode
//! each bit is the sign of a projection onto an i.i.d. Gaussian hyperplane.
//! In [`Projection::Structured`] mode the rows are zero-padded to a power of
//! two `D` and rotated by three rounds of random sign flips followed by a
//! normalized Walsh-Hadamard transform; the leading coordinates supply the
//! bits. When `tau > D` further independent rotations are concatenated.
//!
//! Hash function `h` of a family draws all of its randomness from stream `h`
//! of the family's [`RngState`], so functions can be rebuilt individually.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

pub const MAX_TAU: u32 = 30;
pub const DEFAULT_TAU: u32 = 8;
const STRUCTURED_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    Dense,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamily {
    tau: u32,
    m: usize,
    dim: usize,
    projection: Projection,
    rng: RngState,
}

impl HashFamily {
    pub fn new(tau: u32, m: usize, dim: usize, projection: Projection, rng: RngState) -> Result<Self> {
        validate_tau(tau)?;
        if m == 0 {
            return Err(Error::InvalidConfig("need at least one hash function".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be positive".into()));
        }
        Ok(Self {
            tau,
            m,
            dim,
            projection,
            rng,
        })
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn buckets(&self) -> usize {
        1usize << self.tau
    }

    /// Transform length used by structured mode.
    pub fn padded_dim(&self) -> usize {
        self.dim.next_power_of_two()
    }

    /// Materialize hash function `h`.
    pub fn function(&self, h: usize) -> HashFunction {
        assert!(h < self.m, "hash index {h} out of range for m = {}", self.m);
        let mut gen = self.rng.with_stream(h as u64).generator();
        let tau = self.tau as usize;
        match self.projection {
            Projection::Dense => {
                let planes = (0..tau * self.dim)
                    .map(|_| StandardNormal.sample(&mut gen))
                    .collect();
                HashFunction::Dense {
                    dim: self.dim,
                    planes,
                }
            }
            Projection::Structured => {
                let padded = self.padded_dim();
                let blocks = tau.div_ceil(padded);
                let mut signs = Vec::with_capacity(blocks * STRUCTURED_ROUNDS * padded);
                for block in 0..blocks {
                    let bits = (tau - block * padded).min(padded);
                    // Small padded lengths can yield a bit whose effective
                    // hyperplane vanishes on the real coordinates; redraw those.
                    let block_signs = loop {
                        let draw: Vec<bool> = (0..STRUCTURED_ROUNDS * padded)
                            .map(|_| gen.random::<bool>())
                            .collect();
                        if !has_null_bit(&draw, padded, self.dim, bits) {
                            break draw;
                        }
                    };
                    signs.extend(block_signs);
                }
                HashFunction::Structured {
                    dim: self.dim,
                    padded,
                    tau,
                    signs,
                }
            }
        }
    }
}

pub(crate) fn validate_tau(tau: u32) -> Result<()> {
    if !(1..=MAX_TAU).contains(&tau) {
        return Err(Error::InvalidConfig(format!(
            "tau = {tau} outside 1..={MAX_TAU}"
        )));
    }
    Ok(())
}

/// One concrete hash function of a family.
#[derive(Debug, Clone)]
pub enum HashFunction {
    Dense {
        dim: usize,
        /// `tau` hyperplanes, row-major.
        planes: Vec<f64>,
    },
    Structured {
        dim: usize,
        padded: usize,
        tau: usize,
        /// `blocks * 3 * padded` sign flags, `true` meaning -1.
        signs: Vec<bool>,
    },
}

impl HashFunction {
    /// Hash one row. `scratch` is reused between calls in structured mode.
    pub fn code(&self, x: &[f64], scratch: &mut Vec<f64>) -> u32 {
        match self {
            HashFunction::Dense { dim, planes } => {
                debug_assert_eq!(x.len(), *dim);
                let mut code = 0u32;
                for (b, plane) in planes.chunks_exact(*dim).enumerate() {
                    let p: f64 = plane.iter().zip(x).map(|(a, b)| a * b).sum();
                    if p >= 0.0 {
                        code |= 1 << b;
                    }
                }
                code
            }
            HashFunction::Structured {
                dim,
                padded,
                tau,
                signs,
            } => {
                debug_assert_eq!(x.len(), *dim);
                let scale = 1.0 / (*padded as f64).sqrt();
                let mut code = 0u32;
                for (block, block_signs) in signs.chunks_exact(STRUCTURED_ROUNDS * padded).enumerate() {
                    scratch.clear();
                    scratch.extend_from_slice(x);
                    scratch.resize(*padded, 0.0);
                    for round in block_signs.chunks_exact(*padded) {
                        for (v, &flip) in scratch.iter_mut().zip(round) {
                            if flip {
                                *v = -*v;
                            }
                        }
                        fwht(scratch);
                        for v in scratch.iter_mut() {
                            *v *= scale;
                        }
                    }
                    let first_bit = block * padded;
                    let bits = (*tau - first_bit).min(*padded);
                    for (b, &v) in scratch[..bits].iter().enumerate() {
                        if v >= 0.0 {
                            code |= 1 << (first_bit + b);
                        }
                    }
                }
                code
            }
        }
    }
}

/// True if some output bit `b < bits` of the rotation has an all-zero
/// hyperplane on the first `dim` coordinates. Row `b` of `H D3 H D2 H D1` is
/// `D1 H D2 H D3 H e_b`, since `H` is symmetric.
fn has_null_bit(signs: &[bool], padded: usize, dim: usize, bits: usize) -> bool {
    let mut row = vec![0.0; padded];
    (0..bits).any(|b| {
        row.fill(0.0);
        row[b] = 1.0;
        for round in signs.chunks_exact(padded).rev() {
            fwht(&mut row);
            for (v, &flip) in row.iter_mut().zip(round) {
                if flip {
                    *v = -*v;
                }
            }
        }
        row[..dim].iter().all(|&v| v == 0.0)
    })
}

/// In-place unnormalized fast Walsh-Hadamard transform. Length must be a power of two.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two() || n == 0);
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// `n x m` hash codes, stored hash-major so each function's column is contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCodes {
    n: usize,
    m: usize,
    tau: u32,
    codes: Vec<u32>,
}

impl HashCodes {
    /// Build from per-hash columns (`columns[h][i]` is the code of row `i` under hash `h`).
    pub fn from_columns(tau: u32, columns: Vec<Vec<u32>>) -> Result<Self> {
        validate_tau(tau)?;
        let m = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let buckets = 1usize << tau;
        let mut codes = Vec::with_capacity(n * m);
        for col in columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch("ragged hash code columns".into()));
            }
            if let Some(&code) = col.iter().find(|&&c| c as usize >= buckets) {
                return Err(Error::CodeOutOfRange { code, buckets });
            }
            codes.extend(col);
        }
        Ok(Self { n, m, tau, codes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn get(&self, i: usize, h: usize) -> u32 {
        self.codes[h * self.n + i]
    }

    pub fn column(&self, h: usize) -> &[u32] {
        &self.codes[h * self.n..(h + 1) * self.n]
    }

    /// The codes of hash function `h` alone, as a one-function set.
    pub fn single(&self, h: usize) -> HashCodes {
        HashCodes {
            n: self.n,
            m: 1,
            tau: self.tau,
            codes: self.column(h).to_vec(),
        }
    }
}

/// Hash every row of `x` with every function of the family, dispatching on its mode.
pub fn hash(x: &Matrix, fam: &HashFamily) -> Result<HashCodes> {
    if x.cols() != fam.dim {
        return Err(Error::DimensionMismatch(format!(
            "rows have {} columns, hash family expects {}",
            x.cols(),
            fam.dim
        )));
    }
    let mut codes = Vec::with_capacity(x.rows() * fam.m);
    let mut scratch = Vec::with_capacity(fam.padded_dim());
    for h in 0..fam.m {
        let f = fam.function(h);
        codes.extend(x.iter_rows().map(|row| f.code(row, &mut scratch)));
    }
    Ok(HashCodes {
        n: x.rows(),
        m: fam.m,
        tau: fam.tau,
        codes,
    })
}

/// Sign-of-Gaussian-projection hashing; the family must be in dense mode.
pub fn hash_dense(x: &Matrix, fam: &HashFamily) -> Result<HashCodes> {
    if fam.projection != Projection::Dense {
        return Err(Error::InvalidConfig("hash_dense needs a dense family".into()));
    }
    hash(x, fam)
}

/// Fast structured-rotation hashing; the family must be in structured mode.
pub fn hash_structured(x: &Matrix, fam: &HashFamily) -> Result<HashCodes> {
    if fam.projection != Projection::Structured {
        return Err(Error::InvalidConfig(
            "hash_structured needs a structured family".into(),
        ));
    }
    hash(x, fam)
}

/// Probability that two unit vectors with cosine similarity `s` share a
/// `tau`-bit hyperplane code: `(1 - arccos(s) / pi)^tau`.
///
/// `s` is clamped to `[-1, 1]` first, since dot products of unit vectors can
/// overshoot by roundoff.
pub fn collision_prob(s: f64, tau: u32) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    (1.0 - s.acos() / PI).powi(tau as i32)
}

/// `d/ds collision_prob(s, tau)`; diverges at `|s| = 1`, which is rejected.
pub fn collision_prob_derivative(s: f64, tau: u32) -> Result<f64> {
    if !(s.abs() < 1.0) {
        return Err(Error::Singularity { i: 0, j: 0, s });
    }
    Ok(collision_derivative_unchecked(s, tau))
}

#[inline]
pub(crate) fn collision_derivative_unchecked(s: f64, tau: u32) -> f64 {
    let base = 1.0 - s.acos() / PI;
    tau as f64 * base.powi(tau as i32 - 1) / (PI * (1.0 - s * s).sqrt())
}

/// Finite surrogate for the derivative used by the lower-bound gradient:
/// `(tau / 2) * collision_prob(s, tau)`.
pub fn collision_prob_derivative_lb(s: f64, tau: u32) -> f64 {
    0.5 * tau as f64 * collision_prob(s, tau)
}
