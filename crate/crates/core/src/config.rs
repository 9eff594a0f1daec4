use crate::error::{Error, Result};
use crate::lsh::{validate_tau, Projection, DEFAULT_TAU};

/// How attention outputs are normalized after the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputNorm {
    /// Rescale each output row to unit length (zero rows stay zero).
    #[default]
    L2,
    /// Divide by the estimated row sum of the attention weights.
    OneVector,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    /// `(tau / 2) * collision_prob` in place of the true derivative.
    #[default]
    LowerBound,
    /// The true collision-probability derivative, computed at quadratic cost.
    ExactOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnConfig {
    pub tau: u32,
    pub m: usize,
    pub norm: OutputNorm,
    pub grad: GradMode,
    pub projection: Projection,
    pub seed: u64,
    /// Backward passes reuse the forward hash codes instead of drawing fresh ones.
    pub reuse_codes: bool,
    /// One bucket table shared by all `m` hash functions instead of `m` live tables.
    pub reuse_tables: bool,
    /// Value columns handled per table pass in the lower-bound gradient.
    pub grad_chunk: usize,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            m: 32,
            norm: OutputNorm::default(),
            grad: GradMode::default(),
            projection: Projection::default(),
            seed: 0,
            reuse_codes: false,
            reuse_tables: false,
            grad_chunk: 1,
        }
    }
}

impl AttnConfig {
    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if self.grad_chunk == 0 {
            return Err(Error::InvalidConfig("grad_chunk must be at least 1".into()));
        }
        Ok(())
    }
}
