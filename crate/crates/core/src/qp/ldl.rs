//! Sparse LDLᵀ factorization for symmetric quasi-definite matrices.
//!
//! The factorization is a left-looking elimination-tree LDLᵀ without
//! pivoting, preceded by a minimum-degree fill-reducing ordering. Any
//! symmetric permutation of a quasi-definite matrix is strongly
//! factorizable, so no numerical pivoting is needed for the solver's KKT
//! systems.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LdlError {
    /// Zero pivot at (permuted) column.
    ZeroPivot(usize),
    NotSquare,
}

const NONE: usize = usize::MAX;

/// Greedy minimum-degree ordering on the graph of a symmetric pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn minimum_degree_order(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &a in &nbrs {
            // adj[a] <- (adj[a] ∪ nbrs) \ {a, v}
            merged.clear();
            let (mut i, mut j) = (0, 0);
            let cur = &adj[a];
            while i < cur.len() || j < nbrs.len() {
                let next = match (cur.get(i), nbrs.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != a && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[a], &mut merged);
            heap.push(Reverse((adj[a].len(), a)));
        }
    }
    order
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    // permuted upper-triangular pattern of the input
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    // input storage index -> permuted storage index
    map: Vec<usize>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactor {
    /// Orders, analyses and factors the symmetric matrix whose upper
    /// triangle (including the diagonal) is `upper`.
    pub fn new(upper: &CscMatrix) -> Result<Self, LdlError> {
        if upper.nrows != upper.ncols {
            return Err(LdlError::NotSquare);
        }
        let n = upper.ncols;
        let perm = minimum_degree_order(n, upper.triplets().map(|(r, c, _)| (r, c)));
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // (col, row, source index) in the permuted upper triangle
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(upper.nnz());
        let mut src = 0;
        for c in 0..n {
            for p in upper.colptr[c]..upper.colptr[c + 1] {
                let r = upper.rowind[p];
                debug_assert!(r <= c, "input must be upper triangular");
                let (i, j) = (iperm[r], iperm[c]);
                entries.push((i.max(j), i.min(j), src));
                src += 1;
            }
        }
        entries.sort_unstable();
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(entries.len());
        let mut map = vec![0usize; entries.len()];
        for (pos, &(col, row, s)) in entries.iter().enumerate() {
            ap[col + 1] += 1;
            ai.push(row);
            map[s] = pos;
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }

        // elimination tree and column counts of L
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut f = Self {
            n,
            perm,
            ap,
            ai,
            ax: vec![0.0; entries.len()],
            map,
            etree,
            lnz,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        };
        f.refactor(&upper.values)?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric refactorization for new values on the same pattern, given
    /// in the storage order of the `upper` matrix passed to [`LdlFactor::new`].
    pub fn refactor(&mut self, upper_values: &[f64]) -> Result<(), LdlError> {
        assert_eq!(upper_values.len(), self.map.len());
        for (s, &v) in upper_values.iter().enumerate() {
            self.ax[self.map[s]] = v;
        }
        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut n_elim = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        debug_assert!((0..n).all(|c| next_space[c] == self.lp[c] + self.lnz[c]));
        Ok(())
    }

    /// Number of positive entries of D (inertia of the matrix).
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_mul(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn random_quasi_definite(n1: usize, n2: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n1 + n2;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n1 {
            m[i][i] = 1.0 + rng.random::<f64>();
            for j in 0..i {
                if rng.random::<f64>() < 0.3 {
                    let v = rng.random_range(-0.3..0.3);
                    m[i][j] = v;
                    m[j][i] = v;
                }
            }
        }
        for i in n1..n {
            m[i][i] = -(0.1 + rng.random::<f64>());
            for j in 0..n1 {
                if rng.random::<f64>() < 0.4 {
                    let v = rng.random_range(-2.0..2.0);
                    m[i][j] = v;
                    m[j][i] = v;
                }
            }
        }
        m
    }

    #[test]
    fn solves_quasi_definite_systems() {
        for seed in 0..20 {
            let m = random_quasi_definite(7, 5, seed);
            let upper = CscMatrix::from_dense(&m).upper_triangle();
            let f = LdlFactor::new(&upper).unwrap();
            assert_eq!(f.positive_pivots(), 7);
            let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let r = dense_mul(&m, &x);
            for (ri, bi) in r.iter().zip(&b) {
                assert!((ri - bi).abs() < 1e-10, "seed {seed}: {ri} vs {bi}");
            }
        }
    }

    #[test]
    fn refactor_matches_fresh_factorization() {
        let m = random_quasi_definite(5, 4, 3);
        let upper = CscMatrix::from_dense(&m).upper_triangle();
        let mut f = LdlFactor::new(&upper).unwrap();
        let mut scaled = upper.clone();
        scaled.values.iter_mut().for_each(|v| *v *= 2.0);
        f.refactor(&scaled.values).unwrap();
        let mut x = vec![1.0; 9];
        f.solve_in_place(&mut x);
        let r = dense_mul(&m, &x);
        for ri in r {
            assert!((ri - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_zero_pivot() {
        let upper = CscMatrix::from_dense(&[vec![0.0, 0.0], vec![0.0, 1.0]]).upper_triangle();
        assert!(matches!(LdlFactor::new(&upper), Err(LdlError::ZeroPivot(_))));
    }

    #[test]
    fn ordering_is_a_permutation() {
        // arrow matrix: a dense node must be ordered last
        let n = 10;
        let edges = (1..n).map(|i| (0, i));
        let p = minimum_degree_order(n, edges);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        assert!(p[..n - 2].iter().all(|&v| v != 0));
    }
}
