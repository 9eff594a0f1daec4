use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::config::GradMode;
use crate::error::{Error, Result};
use crate::lsh::{collision_prob_derivative, collision_prob_derivative_lb, DEFAULT_TAU};
use crate::matrix::{dot, gaussian_matrix, AttnInput, Matrix};
use crate::oracle::{yoso_e_grad, SINGULARITY_GUARD};
use crate::rng::RngState;

use super::random_unit_input;

pub const QK_TOLERANCE: f64 = 1e-4;
pub const V_TOLERANCE: f64 = 1e-6;
const MAX_ATTEMPTS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckParams {
    pub n: usize,
    pub d: usize,
    pub tau: u32,
    pub seed: u64,
    pub mode: GradMode,
    /// Upstream gradient of zero instead of a Gaussian draw.
    pub zero_upstream: bool,
    pub step: f64,
    /// Inputs are redrawn until every pairwise |Q_i . K_j| is below this.
    pub similarity_bound: f64,
}

impl Default for GradCheckParams {
    fn default() -> Self {
        Self {
            n: 6,
            d: 4,
            tau: DEFAULT_TAU,
            seed: 0,
            mode: GradMode::ExactOracle,
            zero_upstream: false,
            step: 1e-5,
            similarity_bound: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub mode: GradMode,
    pub rel_err_q: f64,
    pub rel_err_k: f64,
    pub rel_err_v: f64,
    /// Pairs (input pairs plus the similarity grid) where the lower-bound
    /// factor exceeded the true derivative. Only checked in lower-bound mode.
    pub lb_violations: usize,
    pub lb_checked: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            GradMode::ExactOracle => "exact-oracle",
            GradMode::LowerBound => "lower-bound",
        };
        writeln!(out, "mode: {mode}").unwrap();
        writeln!(out, "max_rel_err_grad_q: {:e} (limit {QK_TOLERANCE:e})", self.rel_err_q).unwrap();
        writeln!(out, "max_rel_err_grad_k: {:e} (limit {QK_TOLERANCE:e})", self.rel_err_k).unwrap();
        writeln!(out, "max_rel_err_grad_v: {:e} (limit {V_TOLERANCE:e})", self.rel_err_v).unwrap();
        if self.mode == GradMode::LowerBound {
            writeln!(
                out,
                "lower_bound_factor_violations: {} of {}",
                self.lb_violations, self.lb_checked
            )
            .unwrap();
        }
        writeln!(out, "result: {}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        out
    }
}

/// Compare exact analytic gradients of `L = <G, E[B] V>` against central
/// finite differences. Rows are perturbed as free vectors.
pub fn grad_check(params: &GradCheckParams) -> Result<GradCheckReport> {
    if params.n == 0 || params.d == 0 || !(params.step > 0.0) {
        return Err(Error::InvalidConfig("grad check needs n, d >= 1 and step > 0".into()));
    }
    let bound = params.similarity_bound.min(1.0 - SINGULARITY_GUARD);
    let base = RngState::new(params.seed);
    let input = (0..MAX_ATTEMPTS)
        .map(|a| random_unit_input(params.n, params.d, &base.fork(a)))
        .find(|inp| max_abs_similarity(inp) < bound)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "no input with pairwise |s| < {bound} after {MAX_ATTEMPTS} draws"
            ))
        })?;
    let upstream = if params.zero_upstream {
        Matrix::zeros(params.n, params.d)
    } else {
        gaussian_matrix(params.n, params.d, &base.fork(u64::MAX))
    };

    let analytic = yoso_e_grad(&input, &upstream, params.tau, GradMode::ExactOracle)?;
    let tau = params.tau;
    let h = params.step;
    let fq = central_difference(&input.q, h, |q| loss(q, &input.k, &input.v, &upstream, tau));
    let fk = central_difference(&input.k, h, |k| loss(&input.q, k, &input.v, &upstream, tau));
    let fv = central_difference(&input.v, h, |v| loss(&input.q, &input.k, v, &upstream, tau));

    let rel_err_q = relative_error(&analytic.q, &fq);
    let rel_err_k = relative_error(&analytic.k, &fk);
    let rel_err_v = relative_error(&analytic.v, &fv);

    let (lb_violations, lb_checked) = match params.mode {
        GradMode::ExactOracle => (0, 0),
        GradMode::LowerBound => lower_bound_violations(&input, tau),
    };
    let passed = rel_err_q < QK_TOLERANCE
        && rel_err_k < QK_TOLERANCE
        && rel_err_v < V_TOLERANCE
        && lb_violations == 0;
    Ok(GradCheckReport {
        mode: params.mode,
        rel_err_q,
        rel_err_k,
        rel_err_v,
        lb_violations,
        lb_checked,
        passed,
    })
}

fn max_abs_similarity(inp: &AttnInput) -> f64 {
    inp.q
        .iter_rows()
        .flat_map(|q| inp.k.iter_rows().map(move |k| dot(q, k).abs()))
        .fold(0.0, f64::max)
}

/// Scalar loss `sum_ij p(Q_i . K_j) (G_i . V_j)`, with the collision
/// probability written out directly and no unit-norm check.
fn loss(q: &Matrix, k: &Matrix, v: &Matrix, g: &Matrix, tau: u32) -> f64 {
    let mut total = 0.0;
    for (qi, gi) in q.iter_rows().zip(g.iter_rows()) {
        for (kj, vj) in k.iter_rows().zip(v.iter_rows()) {
            let s = dot(qi, kj);
            total += (1.0 - s.acos() / PI).powi(tau as i32) * dot(gi, vj);
        }
    }
    total
}

fn central_difference(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = x.get(i, c);
            probe.set(i, c, orig + h);
            let plus = f(&probe);
            probe.set(i, c, orig - h);
            let minus = f(&probe);
            probe.set(i, c, orig);
            out.set(i, c, (plus - minus) / (2.0 * h));
        }
    }
    out
}

/// `max |a - b| / max |b|`; exactly 0 when both sides vanish.
pub(crate) fn relative_error(analytic: &Matrix, reference: &Matrix) -> f64 {
    let diff = analytic.max_abs_diff(reference);
    if diff == 0.0 {
        return 0.0;
    }
    diff / reference.max_abs().max(f64::MIN_POSITIVE)
}

/// Checks `(tau/2) p(s) <= p'(s)` on every input pair and on a 1999-point
/// grid over [-0.999, 0.999].
fn lower_bound_violations(input: &AttnInput, tau: u32) -> (usize, usize) {
    let pair_sims = input
        .q
        .iter_rows()
        .flat_map(|q| input.k.iter_rows().map(move |k| dot(q, k)));
    let grid = (0..1999).map(|g| -0.999 + 0.001 * g as f64);
    let mut checked = 0;
    let mut violations = 0;
    for s in pair_sims.chain(grid) {
        checked += 1;
        match collision_prob_derivative(s, tau) {
            Ok(exact) if collision_prob_derivative_lb(s, tau) <= exact => {}
            _ => violations += 1,
        }
    }
    (violations, checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_mode_passes() {
        let report = grad_check(&GradCheckParams::default()).unwrap();
        assert!(report.passed, "{}", report.to_text());
    }

    #[test]
    fn lower_bound_mode_checks_factor() {
        let report = grad_check(&GradCheckParams {
            mode: GradMode::LowerBound,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed, "{}", report.to_text());
        assert_eq!(report.lb_violations, 0);
        assert_eq!(report.lb_checked, 36 + 1999);
    }

    #[test]
    fn zero_upstream_reports_exact_zero() {
        let report = grad_check(&GradCheckParams {
            zero_upstream: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(report.rel_err_q, 0.0);
        assert_eq!(report.rel_err_k, 0.0);
        assert_eq!(report.rel_err_v, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn impossible_guard_is_config_error() {
        let err = grad_check(&GradCheckParams {
            n: 40,
            d: 2,
            similarity_bound: 0.01,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
