//! Convex quadratic programs in the form
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  lower ≤ A x ≤ upper
//! ```
//!
//! solved by an operator-splitting (ADMM) iteration over a factored
//! quasi-definite KKT system, with an active-set polishing step.

mod admm;
pub mod ldl;
pub mod sparse;

pub use admm::solve_warm;
pub use sparse::CscMatrix;

use crate::error::{Error, Result};
use ldl::LdlFactor;
use sparse::inf_norm;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD cost matrix, both triangles stored.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn new(p: CscMatrix, q: Vec<f64>, a: CscMatrix, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { p, q, a, lower, upper }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate test.
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty for inequality rows. Equality rows use
    /// `1e3 * rho`.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Also try polishing before ADMM reaches the tolerances, once the
    /// residuals are within this factor of them. 0 disables early attempts.
    pub early_polish_factor: f64,
    pub polish_delta: f64,
    pub polish_refine_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-5,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            check_interval: 5,
            scaling_iters: 10,
            polish: true,
            early_polish_factor: 1e3,
            polish_delta: 1e-7,
            polish_refine_iter: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    DimensionMismatch(String),
    AsymmetricCost { max_difference: f64 },
    BoundInversion { row: usize },
    NanBound { row: usize },
    NonFiniteCost { index: usize },
    NonFiniteConstraint { row: usize, col: usize },
    NotPositiveSemidefinite,
}

/// Structural and numerical checks on a problem. An empty report means the
/// problem is well formed.
pub fn validate(problem: &QpProblem) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let (n, m) = (problem.n(), problem.m());
    let dims = [
        (problem.p.nrows == n && problem.p.ncols == n, format!("P is {}x{}, expected {n}x{n}", problem.p.nrows, problem.p.ncols)),
        (problem.a.ncols == n, format!("A has {} columns, expected {n}", problem.a.ncols)),
        (problem.a.nrows == m, format!("A has {} rows, bounds have {m}", problem.a.nrows)),
        (problem.upper.len() == m, format!("upper has {} rows, lower has {m}", problem.upper.len())),
    ];
    for (ok, msg) in dims {
        if !ok {
            issues.push(ValidationIssue::DimensionMismatch(msg));
        }
    }
    if !issues.is_empty() {
        return issues;
    }

    let asym = problem.p.asymmetry();
    if asym > 1e-9 {
        issues.push(ValidationIssue::AsymmetricCost { max_difference: asym });
    }
    for (i, (&l, &u)) in problem.lower.iter().zip(&problem.upper).enumerate() {
        if l.is_nan() || u.is_nan() {
            issues.push(ValidationIssue::NanBound { row: i });
        } else if l > u {
            issues.push(ValidationIssue::BoundInversion { row: i });
        }
    }
    for (i, v) in problem.q.iter().enumerate() {
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFiniteCost { index: i });
        }
    }
    for (r, c, v) in problem.p.triplets() {
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFiniteCost { index: r * n + c });
        }
    }
    for (r, c, v) in problem.a.triplets() {
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFiniteConstraint { row: r, col: c });
        }
    }
    if issues.is_empty() && !is_positive_semidefinite(&problem.p) {
        issues.push(ValidationIssue::NotPositiveSemidefinite);
    }
    issues
}

/// PSD test by attempted LDLᵀ factorization of `P + 1e-10 I`.
fn is_positive_semidefinite(p: &CscMatrix) -> bool {
    let n = p.ncols;
    let mut t: Vec<_> = p.triplets().filter(|&(r, c, _)| r <= c).collect();
    t.extend((0..n).map(|i| (i, i, 1e-10)));
    let shifted = CscMatrix::from_triplets(n, n, &t);
    match LdlFactor::new(&shifted) {
        Ok(f) => f.positive_pivots() == n,
        Err(_) => false,
    }
}

/// `(primal, dual)` where primal is the largest violation of
/// `lower ≤ Ax ≤ upper` and dual is `‖Px + q + Aᵀy‖∞`.
pub fn kkt_residuals(problem: &QpProblem, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != problem.n() || y.len() != problem.m() || problem.a.nrows != problem.m() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, y has {}, problem is {}x{}",
            x.len(),
            y.len(),
            problem.m(),
            problem.n()
        )));
    }
    let ax = problem.a.mul_vec(x);
    let primal = ax
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
        .fold(0.0, f64::max);
    let mut g = problem.p.mul_vec(x);
    let aty = problem.a.tmul_vec(y);
    for i in 0..g.len() {
        g[i] += problem.q[i] + aty[i];
    }
    Ok((primal, inf_norm(&g)))
}

/// Tolerances `(primal, dual)` that the residuals of a Solved point satisfy:
/// `eps_abs + eps_rel * scale`, with the primal scale `‖Ax‖∞` and the dual
/// scale `max(‖Px‖∞, ‖Aᵀy‖∞, ‖q‖∞)`.
pub fn kkt_tolerances(problem: &QpProblem, x: &[f64], y: &[f64], eps_abs: f64, eps_rel: f64) -> (f64, f64) {
    let ax = inf_norm(&problem.a.mul_vec(x));
    let px = inf_norm(&problem.p.mul_vec(x));
    let aty = inf_norm(&problem.a.tmul_vec(y));
    let q = inf_norm(&problem.q);
    (eps_abs + eps_rel * ax, eps_abs + eps_rel * px.max(aty).max(q))
}

thread_local! {
    static SOLVES: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of solves started on the calling thread. Lets callers assert that
/// a code path never reaches the optimizer.
pub fn solves_on_this_thread() -> usize {
    SOLVES.with(|c| c.get())
}

pub(crate) fn count_solve() {
    SOLVES.with(|c| c.set(c.get() + 1));
}

/// Solves from a cold start.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_warm(problem, settings, None)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> CscMatrix {
        CscMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn two_var() -> QpProblem {
        QpProblem::new(
            dense(&[&[1.0, 0.0], &[0.0, 1.0]]),
            vec![-1.0, -1.0],
            dense(&[&[1.0, 1.0]]),
            vec![f64::NEG_INFINITY],
            vec![10.0],
        )
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert!(validate(&two_var()).is_empty());
    }

    #[test]
    fn validate_reports_bound_inversion() {
        let mut p = two_var();
        p.lower[0] = 11.0;
        assert_eq!(validate(&p), vec![ValidationIssue::BoundInversion { row: 0 }]);
    }

    #[test]
    fn validate_reports_indefinite_cost() {
        let p = QpProblem::new(dense(&[&[-1.0]]), vec![0.0], CscMatrix::zeros(0, 1), vec![], vec![]);
        assert_eq!(validate(&p), vec![ValidationIssue::NotPositiveSemidefinite]);
    }

    #[test]
    fn validate_reports_asymmetry_and_dims() {
        let mut p = two_var();
        p.p = dense(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(validate(&p)[0], ValidationIssue::AsymmetricCost { .. }));
        let mut p = two_var();
        p.q.push(0.0);
        assert!(matches!(validate(&p)[0], ValidationIssue::DimensionMismatch(_)));
        let mut p = two_var();
        p.q[1] = f64::NAN;
        assert_eq!(validate(&p), vec![ValidationIssue::NonFiniteCost { index: 1 }]);
    }

    #[test]
    fn residual_examples() {
        // x violates the upper bound by 0.5
        let p = QpProblem::new(dense(&[&[0.0]]), vec![0.0], dense(&[&[1.0]]), vec![0.0], vec![1.0]);
        let (pr, _) = kkt_residuals(&p, &[1.5], &[0.0]).unwrap();
        assert_eq!(pr, 0.5);
        let p = QpProblem::new(dense(&[&[2.0]]), vec![-2.0], CscMatrix::zeros(0, 1), vec![], vec![]);
        let (pr, du) = kkt_residuals(&p, &[1.0], &[]).unwrap();
        assert_eq!((pr, du), (0.0, 0.0));
        assert!(kkt_residuals(&p, &[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn pinned_variable() {
        // (x - 1)^2 = x^2 - 2x + 1, i.e. P = [2], q = [-2]
        let p = QpProblem::new(dense(&[&[2.0]]), vec![-2.0], dense(&[&[1.0]]), vec![0.0], vec![0.0]);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!(s.x[0].abs() < 1e-8);
        // objective + constant reproduces (0 - 1)^2
        assert!((s.objective + 1.0 - 1.0).abs() < 1e-8);
        assert!((s.y[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::new(dense(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![-1.0, -1.0], CscMatrix::zeros(0, 2), vec![], vec![]);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_inequality() {
        // min ½(x² + y²) - x - y  s.t. x + y <= 1  ->  (0.5, 0.5)
        let mut p = two_var();
        p.upper[0] = 1.0;
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 0.5).abs() < 1e-8 && (s.x[1] - 0.5).abs() < 1e-8);
        assert!((s.y[0] - 0.5).abs() < 1e-6);
        let (pr, du) = kkt_residuals(&p, &s.x, &s.y).unwrap();
        assert_eq!((pr, du), (s.primal_residual, s.dual_residual));
    }

    #[test]
    fn linear_program_with_box() {
        // min -x - 2y  s.t. 0 <= x, y <= 1, x + y <= 1.5
        let p = QpProblem::new(
            CscMatrix::zeros(2, 2),
            vec![-1.0, -2.0],
            dense(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]),
            vec![0.0, 0.0, f64::NEG_INFINITY],
            vec![1.0, 1.0, 1.5],
        );
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 0.5).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
        assert!((s.objective + 2.5).abs() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= 0
        let p = QpProblem::new(
            dense(&[&[1.0]]),
            vec![0.0],
            dense(&[&[1.0], &[1.0]]),
            vec![1.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, 0.0],
        );
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn max_iterations_reports_best_iterate() {
        let mut p = two_var();
        p.upper[0] = 1.0;
        let settings = QpSettings { max_iter: 1, polish: false, ..QpSettings::default() };
        let s = solve(&p, &settings).unwrap();
        assert_eq!(s.status, QpStatus::MaxIterations);
        assert_eq!(s.iterations, 1);
        assert_eq!(s.x.len(), 2);
    }

    #[test]
    fn free_rows_and_equalities() {
        // min ½‖x‖²  s.t. x0 + x1 = 2, -inf <= x0 - x1 <= inf
        let p = QpProblem::new(
            CscMatrix::identity(2),
            vec![0.0, 0.0],
            dense(&[&[1.0, 1.0], &[1.0, -1.0]]),
            vec![2.0, f64::NEG_INFINITY],
            vec![2.0, f64::INFINITY],
        );
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
    }
}
