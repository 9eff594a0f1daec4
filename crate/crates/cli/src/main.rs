//! `yoso` experiment driver.
//!
//! Every subcommand writes its artifacts under `--out` and prints a short
//! summary. Exit status is 0 when the run succeeds and all checks pass, 1 when
//! a check fails, and a per-error code otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use yoso_core::config::{AttnConfig, GradMode, OutputNorm};
use yoso_core::harness::{
    attn_maps, bench, error_curve, grad_check, AttnMapsParams, BenchParams, ErrorCurveParams,
    GradCheckParams, DEFAULT_HASH_COUNTS, DEFAULT_HEAD_DIM, DEFAULT_LENGTHS,
};
use yoso_core::lsh::{Projection, DEFAULT_TAU};
use yoso_core::rng::RngState;
use yoso_core::{Error, Result};

#[derive(Parser)]
#[command(name = "yoso", version, about = "LSH Bernoulli-sampling attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean radian error of sampled attention against its expectation over an (n, m) grid.
    ErrorCurve(Common),
    /// Softmax, expected and empirical collision maps for one random input.
    AttnMaps {
        #[command(flatten)]
        common: Common,
        /// Use the queries as keys.
        #[arg(long)]
        shared_qk: bool,
    },
    /// Analytic gradients against central finite differences.
    GradCheck(Common),
    /// Runtime and table memory of softmax against sampled attention.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Keep a single bucket table alive instead of one per hash.
        #[arg(long)]
        reuse_tables: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Sequence lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Hash counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: u32,
    /// Head dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Independent trials (timed repetitions for `bench`).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    #[arg(long, value_enum, default_value_t = ProjectionArg::Dense)]
    projection: ProjectionArg,
    #[arg(long, value_enum)]
    grad: Option<GradArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    OneVector,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectionArg {
    Dense,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradArg {
    LowerBound,
    ExactOracle,
}

impl From<NormArg> for OutputNorm {
    fn from(v: NormArg) -> Self {
        match v {
            NormArg::L2 => OutputNorm::L2,
            NormArg::OneVector => OutputNorm::OneVector,
            NormArg::None => OutputNorm::None,
        }
    }
}

impl From<ProjectionArg> for Projection {
    fn from(v: ProjectionArg) -> Self {
        match v {
            ProjectionArg::Dense => Projection::Dense,
            ProjectionArg::Structured => Projection::Structured,
        }
    }
}

impl From<GradArg> for GradMode {
    fn from(v: GradArg) -> Self {
        match v {
            GradArg::LowerBound => GradMode::LowerBound,
            GradArg::ExactOracle => GradMode::ExactOracle,
        }
    }
}

impl Common {
    fn lengths(&self, default: &[usize]) -> Vec<usize> {
        if self.n.is_empty() {
            default.to_vec()
        } else {
            self.n.clone()
        }
    }

    fn hash_counts(&self, default: &[usize]) -> Vec<usize> {
        if self.m.is_empty() {
            default.to_vec()
        } else {
            self.m.clone()
        }
    }

    fn single(values: Vec<usize>, flag: &str) -> Result<usize> {
        match values[..] {
            [one] => Ok(one),
            _ => Err(Error::InvalidConfig(format!("--{flag} takes a single value here"))),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Returns whether every check of the command passed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::ErrorCurve(c) => {
            let curve = error_curve(&ErrorCurveParams {
                lengths: c.lengths(&DEFAULT_LENGTHS),
                hash_counts: c.hash_counts(&DEFAULT_HASH_COUNTS),
                tau: c.tau,
                d: c.d.unwrap_or(DEFAULT_HEAD_DIM),
                trials: c.trials.unwrap_or(1),
                seed: c.seed,
                projection: c.projection.into(),
                norm: c.norm.into(),
            })?;
            let path = create_out(&c.out)?.join("error_curve.csv");
            curve.write_csv(&path)?;
            print!("{}", curve.to_csv());
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::AttnMaps { common: c, shared_qk } => {
            let maps = attn_maps(&AttnMapsParams {
                n: Common::single(c.lengths(&[256]), "n")?,
                d: c.d.unwrap_or(DEFAULT_HEAD_DIM),
                tau: c.tau,
                m: Common::single(c.hash_counts(&[32]), "m")?,
                seed: c.seed,
                projection: c.projection.into(),
                shared_qk,
            })?;
            maps.write(create_out(&c.out)?)?;
            println!("correlation(expected, empirical) = {:.6}", maps.correlation);
            println!("wrote {}", c.out.display());
            Ok(true)
        }
        Command::GradCheck(c) => {
            let out = create_out(&c.out)?;
            let n = Common::single(c.lengths(&[6]), "n")?;
            let trials = c.trials.unwrap_or(1);
            let base = RngState::new(c.seed);
            let mut text = String::new();
            let mut passed = true;
            for t in 0..trials {
                let report = grad_check(&GradCheckParams {
                    n,
                    d: c.d.unwrap_or(4),
                    tau: c.tau,
                    seed: if trials == 1 { c.seed } else { base.fork(t as u64).seed },
                    mode: c.grad.map_or(GradMode::ExactOracle, Into::into),
                    ..GradCheckParams::default()
                })?;
                if trials > 1 {
                    text.push_str(&format!("trial: {t}\n"));
                }
                text.push_str(&report.to_text());
                passed &= report.passed;
            }
            let path = out.join("grad_check.txt");
            fs::write(&path, &text).map_err(|e| io_error(&path, e))?;
            print!("{text}");
            Ok(passed)
        }
        Command::Bench { common: c, reuse_tables } => {
            let cfg = AttnConfig {
                tau: c.tau,
                m: Common::single(c.hash_counts(&[32]), "m")?,
                norm: c.norm.into(),
                grad: c.grad.map_or(GradMode::LowerBound, Into::into),
                projection: c.projection.into(),
                seed: c.seed,
                reuse_tables,
                ..AttnConfig::default()
            };
            let report = bench(&BenchParams {
                lengths: c.lengths(&[512, 1024, 2048, 4096, 8192]),
                d: c.d.unwrap_or(DEFAULT_HEAD_DIM),
                reps: c.trials.unwrap_or(3),
                cfg,
            })?;
            let path = create_out(&c.out)?.join("bench.csv");
            report.write_csv(&path)?;
            print!("{}", report.to_csv());
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn create_out(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(dir)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
