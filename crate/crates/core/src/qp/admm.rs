use super::ldl::LdlFactor;
use super::sparse::{inf_norm, CscMatrix};
use super::{dot, kkt_residuals, kkt_tolerances, validate, QpProblem, QpSettings, QpSolution, QpStatus, ValidationIssue};
use crate::error::{Error, Result};

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Free,
    Inequality,
    Equality,
}

/// Problem data after Ruiz equilibration:
/// `P̄ = c D P D`, `q̄ = c D q`, `Ā = E A D`, `l̄ = E l`, `ū = E u`.
struct Scaled {
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

fn equilibrate(problem: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (problem.n(), problem.m());
    let mut p = problem.p.clone();
    let mut q = problem.q.clone();
    let mut a = problem.a.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let ones_n = vec![1.0; n];
    for _ in 0..iters {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        let dt: Vec<f64> = (0..n).map(|j| 1.0 / clamp_norm(pn[j].max(an[j])).sqrt()).collect();
        let et: Vec<f64> = a.row_inf_norms().into_iter().map(|v| 1.0 / clamp_norm(v).sqrt()).collect();
        p.scale(&dt, &dt);
        a.scale(&et, &dt);
        for j in 0..n {
            q[j] *= dt[j];
            d[j] *= dt[j];
        }
        for i in 0..m {
            e[i] *= et[i];
        }
        let mean_p = if n > 0 { p.col_inf_norms().iter().sum::<f64>() / n as f64 } else { 0.0 };
        let ct = 1.0 / clamp_norm(mean_p.max(inf_norm(&q)));
        p.scale(&ones_n, &vec![ct; n]);
        q.iter_mut().for_each(|v| *v *= ct);
        c *= ct;
    }
    let l = problem.lower.iter().zip(&e).map(|(v, s)| v * s).collect();
    let u = problem.upper.iter().zip(&e).map(|(v, s)| v * s).collect();
    Scaled { p, q, a, l, u, d, e, c }
}

struct Admm<'a> {
    problem: &'a QpProblem,
    settings: &'a QpSettings,
    s: Scaled,
    kinds: Vec<RowKind>,
    rho: f64,
    rho_vec: Vec<f64>,
    kkt: CscMatrix,
    // storage positions of the -1/rho diagonal in `kkt.values`
    rho_diag: Vec<usize>,
    ldl: LdlFactor,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

/// Unscaled iterate and the quantities the termination test needs.
struct Residuals {
    x: Vec<f64>,
    y: Vec<f64>,
    prim: f64,
    dual: f64,
    tol_prim: f64,
    tol_dual: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.prim <= self.tol_prim && self.dual <= self.tol_dual
    }

    fn within(&self, factor: f64) -> bool {
        self.prim <= factor * self.tol_prim && self.dual <= factor * self.tol_dual
    }
}

impl<'a> Admm<'a> {
    fn new(problem: &'a QpProblem, settings: &'a QpSettings) -> Result<Self> {
        let (n, m) = (problem.n(), problem.m());
        let s = equilibrate(problem, settings.scaling_iters);
        let kinds: Vec<RowKind> = s
            .l
            .iter()
            .zip(&s.u)
            .map(|(&l, &u)| {
                if l == f64::NEG_INFINITY && u == f64::INFINITY {
                    RowKind::Free
                } else if l == u {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();
        let rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho_vec = rho_vector(&kinds, rho);

        let mut t: Vec<(usize, usize, f64)> = s.p.triplets().filter(|&(r, c, _)| r <= c).collect();
        t.extend((0..n).map(|j| (j, j, settings.sigma)));
        t.extend(s.a.triplets().map(|(r, c, v)| (c, n + r, v)));
        t.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho_vec[i])));
        let kkt = CscMatrix::from_triplets(n + m, n + m, &t);
        // the constraint diagonal is the last entry of its column
        let rho_diag: Vec<usize> = (0..m).map(|i| kkt.colptr[n + i + 1] - 1).collect();
        let ldl = LdlFactor::new(&kkt).map_err(|e| Error::InvalidQp(format!("KKT factorization failed: {e:?}")))?;

        Ok(Self { problem, settings, s, kinds, rho, rho_vec, kkt, rho_diag, ldl, x: vec![0.0; n], z: vec![0.0; m], y: vec![0.0; m] })
    }

    fn warm_start(&mut self, x0: &[f64], y0: &[f64]) {
        for j in 0..self.x.len() {
            self.x[j] = x0[j] / self.s.d[j];
        }
        for i in 0..self.y.len() {
            self.y[i] = y0[i] * self.s.c / self.s.e[i];
        }
        let ax = self.s.a.mul_vec(&self.x);
        for i in 0..self.z.len() {
            self.z[i] = ax[i].clamp(self.s.l[i], self.s.u[i]);
        }
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.rho = rho.clamp(RHO_MIN, RHO_MAX);
        self.rho_vec = rho_vector(&self.kinds, self.rho);
        for (i, &pos) in self.rho_diag.iter().enumerate() {
            self.kkt.values[pos] = -1.0 / self.rho_vec[i];
        }
        self.ldl
            .refactor(&self.kkt.values)
            .map_err(|e| Error::InvalidQp(format!("KKT refactorization failed: {e:?}")))
    }

    fn iterate(&mut self, rhs: &mut [f64]) {
        let (n, m) = (self.x.len(), self.z.len());
        let sigma = self.settings.sigma;
        let alpha = self.settings.alpha;
        for j in 0..n {
            rhs[j] = sigma * self.x[j] - self.s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = self.z[i] - self.y[i] / self.rho_vec[i];
        }
        self.ldl.solve_in_place(rhs);
        for j in 0..n {
            self.x[j] = alpha * rhs[j] + (1.0 - alpha) * self.x[j];
        }
        for i in 0..m {
            let rho = self.rho_vec[i];
            let z_tilde = self.z[i] + (rhs[n + i] - self.y[i]) / rho;
            let z_relax = alpha * z_tilde + (1.0 - alpha) * self.z[i];
            let z_new = (z_relax + self.y[i] / rho).clamp(self.s.l[i], self.s.u[i]);
            self.y[i] += rho * (z_relax - z_new);
            self.z[i] = z_new;
        }
    }

    fn residuals(&self) -> Residuals {
        let (n, m) = (self.x.len(), self.z.len());
        let s = &self.s;
        let x: Vec<f64> = (0..n).map(|j| s.d[j] * self.x[j]).collect();
        let y: Vec<f64> = (0..m).map(|i| s.e[i] * self.y[i] / s.c).collect();
        let ax = self.problem.a.mul_vec(&x);
        let prim = (0..m).map(|i| (ax[i] - self.z[i] / s.e[i]).abs()).fold(0.0, f64::max);
        let px = self.problem.p.mul_vec(&x);
        let aty = self.problem.a.tmul_vec(&y);
        let dual = (0..n).map(|j| (px[j] + self.problem.q[j] + aty[j]).abs()).fold(0.0, f64::max);
        let tol_prim = self.settings.eps_abs + self.settings.eps_rel * inf_norm(&ax);
        let tol_dual = self.settings.eps_abs
            + self.settings.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.problem.q));
        Residuals { x, y, prim, dual, tol_prim, tol_dual }
    }

    /// Primal infeasibility certificate test on a dual iterate difference.
    fn is_primal_infeasible(&self, dy: &[f64]) -> bool {
        let s = &self.s;
        let norm = dy.iter().zip(&s.e).fold(0.0f64, |acc, (v, e)| acc.max((v * e).abs()));
        if norm < 1e-12 {
            return false;
        }
        let tol = self.settings.eps_prim_inf * norm;
        let aty = s.a.tmul_vec(dy);
        let aty_norm = aty.iter().zip(&s.d).fold(0.0f64, |acc, (v, d)| acc.max((v / d).abs()));
        if aty_norm > tol {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let v = dy[i] * s.e[i];
            if v > tol {
                if s.u[i] == f64::INFINITY {
                    return false;
                }
                support += s.u[i] * dy[i];
            } else if v < -tol {
                if s.l[i] == f64::NEG_INFINITY {
                    return false;
                }
                support += s.l[i] * dy[i];
            }
        }
        support < -tol
    }

    /// Adaptive penalty update from the scaled residual balance.
    fn rho_estimate(&self) -> f64 {
        let s = &self.s;
        let ax = s.a.mul_vec(&self.x);
        let px = s.p.mul_vec(&self.x);
        let aty = s.a.tmul_vec(&self.y);
        let prim = ax.iter().zip(&self.z).fold(0.0f64, |acc, (a, z)| acc.max((a - z).abs()));
        let dual = (0..px.len()).fold(0.0f64, |acc, j| acc.max((px[j] + s.q[j] + aty[j]).abs()));
        let prim_scale = inf_norm(&ax).max(inf_norm(&self.z)).max(1e-10);
        let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-10);
        let ratio = (prim / prim_scale) / (dual / dual_scale + 1e-10);
        self.rho * ratio.sqrt()
    }

    /// Guesses the active set from the scaled iterate and solves the
    /// equality-constrained problem on it. Returns `(x, y)` when the result
    /// satisfies all KKT conditions, dual signs included.
    fn polish(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let problem = self.problem;
        let (n, m) = (problem.n(), problem.m());
        let s = &self.s;
        let mut active: Vec<(usize, f64)> = Vec::new();
        let mut side = vec![0i8; m];
        for i in 0..m {
            match self.kinds[i] {
                RowKind::Equality => {
                    active.push((i, problem.lower[i]));
                    side[i] = 2;
                }
                RowKind::Free => {}
                RowKind::Inequality => {
                    if self.z[i] - s.l[i] < -self.y[i] {
                        active.push((i, problem.lower[i]));
                        side[i] = -1;
                    } else if s.u[i] - self.z[i] < self.y[i] {
                        active.push((i, problem.upper[i]));
                        side[i] = 1;
                    }
                }
            }
        }
        let rows: Vec<usize> = active.iter().map(|&(i, _)| i).collect();
        let a_act = problem.a.select_rows(&rows);
        let na = rows.len();
        let delta = self.settings.polish_delta;

        let mut t: Vec<(usize, usize, f64)> = problem.p.triplets().filter(|&(r, c, _)| r <= c).collect();
        t.extend((0..n).map(|j| (j, j, delta)));
        t.extend(a_act.triplets().map(|(r, c, v)| (c, n + r, v)));
        t.extend((0..na).map(|i| (n + i, n + i, -delta)));
        let kkt = CscMatrix::from_triplets(n + na, n + na, &t);
        let ldl = LdlFactor::new(&kkt).ok()?;

        let mut rhs: Vec<f64> = problem.q.iter().map(|v| -v).collect();
        rhs.extend(active.iter().map(|&(_, b)| b));
        let mut sol = rhs.clone();
        ldl.solve_in_place(&mut sol);
        // iterative refinement against the unregularized system
        for _ in 0..self.settings.polish_refine_iter {
            let (xs, ys) = sol.split_at(n);
            let px = problem.p.mul_vec(xs);
            let aty = a_act.tmul_vec(ys);
            let ax = a_act.mul_vec(xs);
            let mut r: Vec<f64> = (0..n).map(|j| rhs[j] - px[j] - aty[j]).collect();
            r.extend((0..na).map(|i| rhs[n + i] - ax[i]));
            if inf_norm(&r) < 1e-14 {
                break;
            }
            ldl.solve_in_place(&mut r);
            for (v, dv) in sol.iter_mut().zip(&r) {
                *v += dv;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol[..n].to_vec();
        let mut y = vec![0.0; m];
        for (k, &i) in rows.iter().enumerate() {
            y[i] = sol[n + k];
        }

        let (prim, dual) = kkt_residuals(problem, &x, &y).ok()?;
        let (tol_prim, tol_dual) = kkt_tolerances(problem, &x, &y, self.settings.eps_abs, self.settings.eps_rel);
        if prim > tol_prim || dual > tol_dual {
            return None;
        }
        // lower-active rows need y <= 0, upper-active rows y >= 0
        let sign_ok = (0..m).all(|i| match side[i] {
            -1 => y[i] <= tol_dual,
            1 => y[i] >= -tol_dual,
            _ => true,
        });
        sign_ok.then_some((x, y))
    }
}

fn rho_vector(kinds: &[RowKind], rho: f64) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Free => RHO_MIN,
            RowKind::Inequality => rho,
            RowKind::Equality => (RHO_EQ_FACTOR * rho).min(RHO_MAX),
        })
        .collect()
}

fn finish(problem: &QpProblem, x: Vec<f64>, y: Vec<f64>, status: QpStatus, iterations: usize, polished: bool) -> Result<QpSolution> {
    let (primal_residual, dual_residual) = kkt_residuals(problem, &x, &y)?;
    let objective = 0.5 * dot(&x, &problem.p.mul_vec(&x)) + dot(&problem.q, &x);
    Ok(QpSolution { x, y, status, primal_residual, dual_residual, iterations, objective, polished })
}

/// Solves with an optional initial iterate `(x0, y0)`.
pub fn solve_warm(problem: &QpProblem, settings: &QpSettings, warm: Option<(&[f64], &[f64])>) -> Result<QpSolution> {
    let structural: Vec<_> = validate_dims(problem);
    if !structural.is_empty() {
        return Err(Error::InvalidQp(format!("{structural:?}")));
    }
    super::count_solve();
    let (n, m) = (problem.n(), problem.m());
    let mut admm = Admm::new(problem, settings)?;
    if let Some((x0, y0)) = warm {
        if x0.len() != n || y0.len() != m {
            return Err(Error::DimensionMismatch("warm start does not match problem size".into()));
        }
        admm.warm_start(x0, y0);
    }

    let mut rhs = vec![0.0; n + m];
    let mut y_prev = admm.y.clone();
    let mut last_polish_try = 0usize;
    let check = settings.check_interval.max(1);
    for k in 1..=settings.max_iter.max(1) {
        admm.iterate(&mut rhs);
        if k % check != 0 && k != settings.max_iter {
            continue;
        }
        let r = admm.residuals();
        if r.converged() {
            if settings.polish {
                if let Some((x, y)) = admm.polish() {
                    return finish(problem, x, y, QpStatus::Solved, k, true);
                }
            }
            return finish(problem, r.x, r.y, QpStatus::Solved, k, false);
        }
        if settings.polish
            && settings.early_polish_factor > 0.0
            && r.within(settings.early_polish_factor)
            && k >= last_polish_try + 4 * check
        {
            last_polish_try = k;
            if let Some((x, y)) = admm.polish() {
                return finish(problem, x, y, QpStatus::Solved, k, true);
            }
        }
        let dy: Vec<f64> = admm.y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
        if admm.is_primal_infeasible(&dy) {
            return finish(problem, r.x, r.y, QpStatus::PrimalInfeasible, k, false);
        }
        y_prev.copy_from_slice(&admm.y);
        if settings.adaptive_rho && k % settings.adaptive_rho_interval.max(1) == 0 {
            let new_rho = admm.rho_estimate().clamp(RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * admm.rho || new_rho < 0.2 * admm.rho {
                admm.set_rho(new_rho)?;
            }
        }
    }
    let r = admm.residuals();
    finish(problem, r.x, r.y, QpStatus::MaxIterations, settings.max_iter.max(1), false)
}

fn validate_dims(problem: &QpProblem) -> Vec<ValidationIssue> {
    let n = problem.n();
    let m = problem.m();
    if problem.p.nrows != n || problem.p.ncols != n || problem.a.ncols != n || problem.a.nrows != m || problem.upper.len() != m {
        return validate(problem);
    }
    Vec::new()
}
