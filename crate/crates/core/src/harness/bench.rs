use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use crate::config::AttnConfig;
use crate::error::{Error, Result};
use crate::oracle::softmax_attention;
use crate::rng::RngState;
use crate::sampled::{forward_table_scalars, yoso_sample_forward_with_stats};

use super::random_unit_input;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Softmax,
    Yoso,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Softmax => "softmax",
            Method::Yoso => "yoso",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub lengths: Vec<usize>,
    pub d: usize,
    pub reps: usize,
    /// Sampling settings for the YOSO side; `seed` also drives the inputs.
    pub cfg: AttnConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: Method,
    pub n: usize,
    /// Median seconds per instance over the timed repetitions.
    pub wall_time: f64,
    /// Auxiliary scalars: `n^2` for softmax, bucket-table scalars for YOSO.
    pub aux_memory: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub softmax_slope: f64,
    pub yoso_slope: f64,
    pub params: BenchParams,
}

impl BenchReport {
    pub fn slope(&self, method: Method) -> f64 {
        match method {
            Method::Softmax => self.softmax_slope,
            Method::Yoso => self.yoso_slope,
        }
    }

    /// One row per (method, n); `slope` repeats the method's fitted exponent.
    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut out = String::from("method,n,d,tau,m,wall_time_s,aux_memory,slope\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{:e},{},{:?}",
                r.method.name(),
                r.n,
                p.d,
                p.cfg.tau,
                p.cfg.m,
                r.wall_time,
                r.aux_memory,
                self.slope(r.method)
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Time softmax attention and the sampled forward pass across `lengths`
/// on a single thread, and fit runtime exponents on a log-log scale.
pub fn bench(params: &BenchParams) -> Result<BenchReport> {
    params.cfg.validate()?;
    if params.reps == 0 || params.lengths.len() < 2 {
        return Err(Error::InvalidConfig(
            "bench needs reps >= 1 and at least two lengths".into(),
        ));
    }
    if params.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("bench lengths must be ascending".into()));
    }
    let base = RngState::new(params.cfg.seed);
    let scale = 1.0 / (params.d as f64).sqrt();
    let mut records = Vec::new();
    for &n in &params.lengths {
        let input = random_unit_input(n, params.d, &base.fork(n as u64));

        let softmax_time = median_time(params.reps, || {
            black_box(softmax_attention(black_box(&input), scale));
            Ok(())
        })?;
        records.push(BenchRecord {
            method: Method::Softmax,
            n,
            wall_time: softmax_time,
            aux_memory: n * n,
        });

        let mut held = 0;
        let yoso_time = median_time(params.reps, || {
            let (y, stats) = yoso_sample_forward_with_stats(black_box(&input), &params.cfg)?;
            black_box(y);
            held = stats.peak_table_scalars;
            Ok(())
        })?;
        let analytic = forward_table_scalars(&params.cfg, params.d);
        debug_assert_eq!(held, analytic);
        records.push(BenchRecord {
            method: Method::Yoso,
            n,
            wall_time: yoso_time,
            aux_memory: analytic,
        });
    }
    let fit = |method: Method| {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.n as f64, r.wall_time))
            .collect();
        loglog_slope(&pts)
    };
    Ok(BenchReport {
        softmax_slope: fit(Method::Softmax),
        yoso_slope: fit(Method::Yoso),
        records,
        params: params.clone(),
    })
}

/// One warm-up call, then the median of `reps` timed calls, in seconds.
fn median_time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64().max(1e-9));
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
