use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::AttnConfig;
use crate::error::{Error, Result};
use crate::lsh::{hash, HashFamily, Projection};
use crate::matrix::{mat_write, Matrix};
use crate::oracle::{softmax_weights, yoso_e_weights};
use crate::rng::RngState;
use crate::sampled::{pass_family, Pass};

use super::random_unit_input;

/// Side of the leading block written out.
pub const MAP_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AttnMapsParams {
    pub n: usize,
    pub d: usize,
    pub tau: u32,
    pub m: usize,
    pub seed: u64,
    pub projection: Projection,
    /// Use the queries as keys, so every token collides with itself.
    pub shared_qk: bool,
}

/// Leading-block attention maps of one random input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMaps {
    pub q: Matrix,
    pub k: Matrix,
    /// `softmax(Q K^T * tau)`, matching the exponential `exp(tau (s - 1))` up to row scaling.
    pub softmax: Matrix,
    pub expected: Matrix,
    /// Fraction of the `m` hash functions under which query `i` and key `j` collide.
    pub empirical: Matrix,
    /// Pearson correlation of `expected` and `empirical` entries.
    pub correlation: f64,
    pub params: AttnMapsParams,
}

pub fn attn_maps(params: &AttnMapsParams) -> Result<AttnMaps> {
    if params.n == 0 {
        return Err(Error::InvalidConfig("attention maps need n >= 1".into()));
    }
    let input = random_unit_input(params.n, params.d, &RngState::new(params.seed));
    let q = input.q;
    let k = if params.shared_qk { q.clone() } else { input.k };
    let block = params.n.min(MAP_BLOCK);
    let qb = q.top_left(block, params.d);
    let kb = k.top_left(block, params.d);

    let softmax = softmax_weights(&qb, &k, params.tau as f64)?.top_left(block, block);
    let expected = yoso_e_weights(&qb, &kb, params.tau)?;

    let cfg = AttnConfig {
        tau: params.tau,
        m: params.m,
        projection: params.projection,
        seed: params.seed,
        ..AttnConfig::default()
    };
    cfg.validate()?;
    let fam: HashFamily = pass_family(&cfg, params.d, Pass::Forward)?;
    let cq = hash(&qb, &fam)?;
    let ck = hash(&kb, &fam)?;
    let mut hits = Matrix::zeros(block, block);
    for h in 0..params.m {
        let (colq, colk) = (cq.column(h), ck.column(h));
        for (i, &a) in colq.iter().enumerate() {
            let row = hits.row_mut(i);
            for (cell, &b) in row.iter_mut().zip(colk) {
                if a == b {
                    *cell += 1.0;
                }
            }
        }
    }
    let empirical = hits.scaled(1.0 / params.m as f64);
    let correlation = pearson(expected.as_slice(), empirical.as_slice());

    Ok(AttnMaps {
        q,
        k,
        softmax,
        expected,
        empirical,
        correlation,
        params: params.clone(),
    })
}

impl AttnMaps {
    /// Writes `q.ymat`, `k.ymat`, `softmax.ymat`, `yoso_e.ymat`,
    /// `empirical.ymat` and `summary.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mat_write(&self.q, dir.join("q.ymat"))?;
        mat_write(&self.k, dir.join("k.ymat"))?;
        mat_write(&self.softmax, dir.join("softmax.ymat"))?;
        mat_write(&self.expected, dir.join("yoso_e.ymat"))?;
        mat_write(&self.empirical, dir.join("empirical.ymat"))?;
        let p = &self.params;
        let mut summary = String::from("n,d,tau,m,block,correlation\n");
        writeln!(
            summary,
            "{},{},{},{},{},{:?}",
            p.n,
            p.d,
            p.tau,
            p.m,
            self.expected.rows(),
            self.correlation
        )
        .unwrap();
        let path = dir.join("summary.csv");
        fs::write(&path, summary).map_err(|e| Error::io(&path, e))
    }
}

/// Pearson correlation; 0 when either side has no variance.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
