#![allow(dead_code)]

use deconflict::qp::{CscMatrix, QpProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small convex QP with a box and one linear constraint `a·x <= b`, kept in
/// dense form for the brute-force oracle.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl BoxQp {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4usize);
        // P = MᵀM with M of random rank, so some problems are only PSD
        let rank = rng.random_range(1..=n);
        let m: Vec<Vec<f64>> = (0..rank).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                p[i][j] = (0..rank).map(|k| m[k][i] * m[k][j]).sum();
            }
        }
        let q = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lo = (0..n).map(|_| rng.random_range(-2.0..-0.5)).collect();
        let hi = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let a = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(0.05..1.0);
        Self { p, q, lo, hi, a, b }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut f = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.p[i][j] * x[j];
            }
            f += 0.5 * x[i] * row + self.q[i] * x[i];
        }
        f
    }

    pub fn to_problem(&self) -> QpProblem {
        let n = self.n();
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect();
        rows.push(self.a.clone());
        let mut lower = self.lo.clone();
        lower.push(f64::NEG_INFINITY);
        let mut upper = self.hi.clone();
        upper.push(self.b);
        QpProblem::new(CscMatrix::from_dense(&self.p), self.q.clone(), CscMatrix::from_dense(&rows), lower, upper)
    }
}

/// Brute-force minimum: a dense grid over the box followed by three
/// refinement rounds, each a grid over one cell around the incumbent.
/// Each grid point is also projected along the dominant coordinate of `a`
/// onto the plane `a·x = b`, so optima on that face are sampled directly.
pub fn grid_refinement_minimum(qp: &BoxQp) -> (f64, Vec<f64>) {
    let n = qp.n();
    let per_dim = match n {
        1 => 2001,
        2 => 201,
        3 => 61,
        _ => 31,
    };
    let pivot = (0..n).max_by(|&i, &j| qp.a[i].abs().total_cmp(&qp.a[j].abs())).unwrap();
    let mut lo = qp.lo.clone();
    let mut hi = qp.hi.clone();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let feasible = |x: &[f64]| {
        let s: f64 = qp.a.iter().zip(x).map(|(a, v)| a * v).sum();
        s <= qp.b + 1e-12
    };
    for _round in 0..4 {
        let steps: Vec<f64> = (0..n).map(|j| (hi[j] - lo[j]) / (per_dim - 1) as f64).collect();
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            for j in 0..n {
                x[j] = if idx[j] == per_dim - 1 { hi[j] } else { lo[j] + steps[j] * idx[j] as f64 };
            }
            if feasible(&x) {
                let f = qp.objective(&x);
                if f < best.0 {
                    best = (f, x.clone());
                }
            }
            if qp.a[pivot] != 0.0 {
                let rest: f64 = (0..n).filter(|&j| j != pivot).map(|j| qp.a[j] * x[j]).sum();
                let v = (qp.b - rest) / qp.a[pivot];
                if v >= qp.lo[pivot] && v <= qp.hi[pivot] {
                    let mut xp = x.clone();
                    xp[pivot] = v;
                    let f = qp.objective(&xp);
                    if f < best.0 {
                        best = (f, xp);
                    }
                }
            }
            // odometer increment
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < per_dim {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        for j in 0..n {
            lo[j] = (best.1[j] - steps[j]).max(qp.lo[j]);
            hi[j] = (best.1[j] + steps[j]).min(qp.hi[j]);
        }
    }
    best
}
