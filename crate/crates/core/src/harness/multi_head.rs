use crate::config::{AttnConfig, OutputNorm};
use crate::error::{Error, Result};
use crate::matrix::{AttnInput, Matrix};
use crate::oracle::{softmax_attention, yoso_e_normalized};
use crate::rng::RngState;
use crate::sampled::yoso_sample_forward;

/// Attention used inside each head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadKind {
    Softmax { scale: f64 },
    Expected { tau: u32, norm: OutputNorm },
    /// Head `a` samples with seed `fork(a)` of `cfg.seed`.
    Sampled(AttnConfig),
}

/// `sum_a head_a(inputs[a]) * weights[a]`.
pub fn multi_head(inputs: &[AttnInput], weights: &[Matrix], head: &HeadKind) -> Result<Matrix> {
    if inputs.is_empty() || inputs.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} heads but {} output projections",
            inputs.len(),
            weights.len()
        )));
    }
    let n = inputs[0].n();
    let out_dim = weights[0].cols();
    let mut out = Matrix::zeros(n, out_dim);
    for (a, (input, w)) in inputs.iter().zip(weights).enumerate() {
        if input.n() != n || w.cols() != out_dim {
            return Err(Error::DimensionMismatch(format!(
                "head {a}: {} tokens and {} output columns, expected {n} and {out_dim}",
                input.n(),
                w.cols()
            )));
        }
        let y = match head {
            HeadKind::Softmax { scale } => softmax_attention(input, *scale),
            HeadKind::Expected { tau, norm } => yoso_e_normalized(input, *tau, *norm)?,
            HeadKind::Sampled(cfg) => {
                let cfg = AttnConfig {
                    seed: RngState::new(cfg.seed).fork(a as u64).seed,
                    ..*cfg
                };
                yoso_sample_forward(input, &cfg)?
            }
        };
        out.add_assign(&y.matmul(w)?)?;
    }
    Ok(out)
}
