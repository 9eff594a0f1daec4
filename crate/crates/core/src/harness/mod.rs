//! Desk-scale experiment drivers. Each one is a pure function of its
//! parameters and seed; the CLI only parses flags and writes the results.

mod attn_maps;
mod bench;
mod error_curve;
mod grad_check;
mod multi_head;

pub use attn_maps::{attn_maps, AttnMaps, AttnMapsParams, MAP_BLOCK};
pub use bench::{bench, loglog_slope, BenchParams, BenchRecord, BenchReport, Method};
pub use error_curve::{
    error_curve, mean_row_angle, ErrorCurve, ErrorCurveParams, ErrorRecord, DEFAULT_HASH_COUNTS,
    DEFAULT_LENGTHS,
};
pub use grad_check::{grad_check, GradCheckParams, GradCheckReport};
pub use multi_head::{multi_head, HeadKind};

use crate::matrix::{gaussian_matrix, AttnInput};
use crate::normalize::l2_rows;
use crate::rng::RngState;

/// Default head width (BERT-base).
pub const DEFAULT_HEAD_DIM: usize = 64;

/// Gaussian queries, keys and values, every row scaled to unit length.
pub fn random_unit_input(n: usize, d: usize, rng: &RngState) -> AttnInput {
    AttnInput::new(
        l2_rows(&gaussian_matrix(n, d, &rng.fork(1))),
        l2_rows(&gaussian_matrix(n, d, &rng.fork(2))),
        l2_rows(&gaussian_matrix(n, d, &rng.fork(3))),
    )
    .expect("generated shapes agree")
}
