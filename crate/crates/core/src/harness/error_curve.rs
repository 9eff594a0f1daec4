use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{AttnConfig, OutputNorm};
use crate::error::{Error, Result};
use crate::lsh::{Projection, DEFAULT_TAU};
use crate::matrix::{dot, norm, Matrix};
use crate::oracle::n_yoso_e;
use crate::rng::RngState;
use crate::sampled::yoso_sample_forward;

use super::{random_unit_input, DEFAULT_HEAD_DIM};

pub const DEFAULT_HASH_COUNTS: [usize; 5] = [8, 16, 32, 64, 128];
pub const DEFAULT_LENGTHS: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

const INPUT_TAG: u64 = 1;
const HASH_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurveParams {
    pub lengths: Vec<usize>,
    pub hash_counts: Vec<usize>,
    pub tau: u32,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    pub projection: Projection,
    pub norm: OutputNorm,
}

impl Default for ErrorCurveParams {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            hash_counts: DEFAULT_HASH_COUNTS.to_vec(),
            tau: DEFAULT_TAU,
            d: DEFAULT_HEAD_DIM,
            trials: 1,
            seed: 0,
            projection: Projection::Dense,
            norm: OutputNorm::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub n: usize,
    pub m: usize,
    /// Mean angle between expected and sampled output rows, over rows and trials.
    pub radians: f64,
    pub trials: usize,
    /// Rows where one of the two outputs was all zero (counted as pi/2).
    pub zero_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorCurve {
    pub records: Vec<ErrorRecord>,
}

impl ErrorCurve {
    pub fn radians(&self, n: usize, m: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.n == n && r.m == m)
            .map(|r| r.radians)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,radians,trials,zero_rows\n");
        for r in &self.records {
            writeln!(out, "{},{},{:?},{},{}", r.n, r.m, r.radians, r.trials, r.zero_rows).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean per-row angle between `a` and `b` and the number of rows where either
/// side is zero. A zero row carries no direction and counts as pi/2.
pub fn mean_row_angle(a: &Matrix, b: &Matrix) -> (f64, usize) {
    debug_assert_eq!(a.shape(), b.shape());
    let mut total = 0.0;
    let mut zero = 0;
    for (x, y) in a.iter_rows().zip(b.iter_rows()) {
        let (nx, ny) = (norm(x), norm(y));
        if nx == 0.0 || ny == 0.0 {
            zero += 1;
            total += FRAC_PI_2;
        } else {
            total += (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0).acos();
        }
    }
    (total / a.rows().max(1) as f64, zero)
}

/// Averaged radian discrepancy between expected attention and its `m`-hash
/// estimate, for every `(n, m)` in the grid.
///
/// Inputs depend only on `(seed, n, trial)`, so every `m` at a given length
/// is measured on the same data.
pub fn error_curve(params: &ErrorCurveParams) -> Result<ErrorCurve> {
    if params.trials == 0 || params.lengths.is_empty() || params.hash_counts.is_empty() {
        return Err(Error::InvalidConfig(
            "error curve needs at least one length, hash count and trial".into(),
        ));
    }
    let base = RngState::new(params.seed);
    let mut sums = vec![(0.0, 0usize); params.lengths.len() * params.hash_counts.len()];
    for (ni, &n) in params.lengths.iter().enumerate() {
        for trial in 0..params.trials {
            let input = random_unit_input(
                n,
                params.d,
                &base.fork(INPUT_TAG).fork(n as u64).fork(trial as u64),
            );
            let expected = n_yoso_e(&input, params.tau)?;
            for (mi, &m) in params.hash_counts.iter().enumerate() {
                let cfg = AttnConfig {
                    tau: params.tau,
                    m,
                    norm: params.norm,
                    projection: params.projection,
                    seed: base
                        .fork(HASH_TAG)
                        .fork(n as u64)
                        .fork(m as u64)
                        .fork(trial as u64)
                        .seed,
                    reuse_tables: true,
                    ..AttnConfig::default()
                };
                let sampled = yoso_sample_forward(&input, &cfg)?;
                let (angle, zero) = mean_row_angle(&expected, &sampled);
                let slot = &mut sums[ni * params.hash_counts.len() + mi];
                slot.0 += angle;
                slot.1 += zero;
            }
        }
    }
    let mut records = Vec::with_capacity(sums.len());
    for (ni, &n) in params.lengths.iter().enumerate() {
        for (mi, &m) in params.hash_counts.iter().enumerate() {
            let (total, zero_rows) = sums[ni * params.hash_counts.len() + mi];
            records.push(ErrorRecord {
                n,
                m,
                radians: total / params.trials as f64,
                trials: params.trials,
                zero_rows,
            });
        }
    }
    Ok(ErrorCurve { records })
}
