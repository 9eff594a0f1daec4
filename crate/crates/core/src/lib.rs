//! YOSO attention: self-attention estimated by LSH Bernoulli sampling in
//! linear time, alongside exact quadratic references and the experiment
//! drivers used to check one against the other.
//!
//! Module map:
//! - [`matrix`], [`rng`]: dense matrices, YMAT files, seeded random streams.
//! - [`lsh`]: hyperplane hashing and collision-probability math.
//! - [`normalize`]: unit-length conditioning of queries and keys.
//! - [`oracle`]: softmax, expected YOSO attention and exact gradients.
//! - [`sampled`]: bucket-table forward pass and sampled backward estimators.
//! - [`harness`]: error curves, attention maps, gradient checks, benchmarks.

pub mod config;
pub mod error;
pub mod harness;
pub mod lsh;
pub mod matrix;
pub mod normalize;
pub mod oracle;
pub mod rng;
pub mod sampled;

pub use config::{AttnConfig, GradMode, OutputNorm};
pub use error::{Error, Result};
pub use lsh::{
    collision_prob, collision_prob_derivative, collision_prob_derivative_lb, hash, hash_dense,
    hash_structured, HashCodes, HashFamily, Projection,
};
pub use matrix::{gaussian_matrix, mat_read, mat_write, AttnInput, Matrix};
pub use normalize::{l2_rows, norm_bounded_lift};
pub use oracle::{n_yoso_e, softmax_attention, yoso_e, yoso_e_grad, Gradients};
pub use rng::RngState;
pub use sampled::{
    build_table, yoso_sample_backward, yoso_sample_forward, yoso_sample_grad_k,
    yoso_sample_grad_q, yoso_sample_grad_v, BucketTable,
};
