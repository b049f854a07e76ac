//! Damped symmetric solves (H + λI) Δx = −g on block-sparse systems.
//!
//! The lower triangle of `H` lives on a fixed [`SparsityPattern`] derived from
//! the residual blocks' column supports. Systems of dimension below
//! [`DENSE_THRESHOLD`] are factored densely; larger ones go through a sparse
//! Cholesky with a minimum-degree ordering whose symbolic analysis is cached
//! by [`DampedSolver`] across iterations.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DENSE_THRESHOLD: usize = 500;

const REFINEMENT_STEPS: usize = 3;

/// Lower-triangular CSC structure, diagonal always present and first in each column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern in which every pair of indices within one clique is coupled.
    pub fn from_cliques<'a, I>(dim: usize, cliques: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut cols: Vec<BTreeSet<usize>> = (0..dim).map(|j| BTreeSet::from([j])).collect();
        for clique in cliques {
            for &a in clique {
                for &b in clique {
                    if a >= b {
                        cols[b].insert(a);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in cols {
            row_idx.extend(c);
            col_ptr.push(row_idx.len());
        }
        Self { dim, col_ptr, row_idx }
    }

    pub fn dense(dim: usize) -> Self {
        let all: Vec<usize> = (0..dim).collect();
        Self::from_cliques(dim, [all.as_slice()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn column(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Storage index of entry (i, j), i ≥ j.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let col = self.column(j);
        col.binary_search(&i).ok().map(|k| self.col_ptr[j] + k)
    }
}

/// Symmetric matrix on a sparsity pattern plus a right-hand side (gradient).
#[derive(Debug, Clone)]
pub struct BlockSystem<T> {
    pattern: Arc<SparsityPattern>,
    values: Vec<T>,
    pub rhs: Vec<T>,
}

impl<T: Real> BlockSystem<T> {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let n = pattern.nnz();
        let m = pattern.dim();
        Self { pattern, values: vec![T::zero(); n], rhs: vec![T::zero(); m] }
    }

    pub fn from_dense(matrix: &[Vec<T>], rhs: Vec<T>) -> Self {
        let m = rhs.len();
        let pattern = Arc::new(SparsityPattern::dense(m));
        let mut s = Self::zeros(pattern);
        for j in 0..m {
            for i in j..m {
                s.add(i, j, matrix[i][j]);
            }
        }
        s.rhs = rhs;
        s
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Adds `v` to entry (i, j) (and symmetrically (j, i)). Panics if the entry
    /// is outside the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern.position(i, j).map_or(T::zero(), |k| self.values[k])
    }

    pub fn add_diagonal(&mut self, j: usize, v: T) {
        let k = self.pattern.col_ptr[j];
        self.values[k] += v;
    }

    /// self ← c · self.
    pub fn scale(&mut self, c: T) {
        self.values.iter_mut().for_each(|v| *v *= c);
        self.rhs.iter_mut().for_each(|v| *v *= c);
    }

    /// H·x.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let p = &self.pattern;
        let mut y = vec![T::zero(); p.dim];
        for j in 0..p.dim {
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                let i = p.row_idx[k];
                let v = self.values[k];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let m = self.dim();
        let mut d = vec![vec![T::zero(); m]; m];
        let p = &self.pattern;
        for j in 0..m {
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                let i = p.row_idx[k];
                d[i][j] = self.values[k];
                d[j][i] = self.values[k];
            }
        }
        d
    }

    fn is_finite(&self) -> bool {
        self.values.iter().chain(self.rhs.iter()).all(|v| v.is_finite())
    }
}

/// Dense lower Cholesky factor of a row-major matrix, in place.
fn dense_cholesky<T: Real>(a: &mut [Vec<T>]) -> Result<()> {
    let m = a.len();
    for j in 0..m {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { column: j, pivot: d.to_f64_lossy() });
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..m {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    Ok(())
}

fn dense_solve_factored<T: Real>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let m = l.len();
    let mut y = b.to_vec();
    for i in 0..m {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s -= l[k][i] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Ordering and fill pattern of a sparse Cholesky factor.
#[derive(Debug, Clone)]
struct SymbolicCholesky {
    /// new index -> original index
    perm: Vec<usize>,
    /// L in CSC over permuted indices, diagonal first.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// For each row j: (column k < j, storage index of L[j, k]).
    row_entries: Vec<Vec<(usize, usize)>>,
    /// Storage index in L for each entry of the source pattern.
    source_map: Vec<usize>,
}

impl SymbolicCholesky {
    fn analyze(pattern: &SparsityPattern) -> Self {
        let m = pattern.dim;
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
        for j in 0..m {
            for &i in pattern.column(j) {
                if i != j {
                    adj[i].insert(j);
                    adj[j].insert(i);
                }
            }
        }
        // minimum degree with explicit fill, ties broken by lowest index
        let mut eliminated = vec![false; m];
        let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..m).map(|v| Reverse((adj[v].len(), v))).collect();
        let mut perm = Vec::with_capacity(m);
        let mut fill_cols: Vec<Vec<usize>> = Vec::with_capacity(m);
        while let Some(Reverse((deg, v))) = heap.pop() {
            if eliminated[v] || deg != adj[v].len() {
                continue;
            }
            eliminated[v] = true;
            perm.push(v);
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &u in &nbrs {
                adj[u].remove(&v);
                for &w in &nbrs {
                    if w != u {
                        adj[u].insert(w);
                    }
                }
                heap.push(Reverse((adj[u].len(), u)));
            }
            adj[v].clear();
            fill_cols.push(nbrs);
        }
        let mut iperm = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut col_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (k, nbrs) in fill_cols.iter().enumerate() {
            let mut rows: Vec<usize> = nbrs.iter().map(|&o| iperm[o]).collect();
            rows.sort_unstable();
            debug_assert!(rows.iter().all(|&r| r > k));
            row_idx.push(k);
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        let mut row_entries = vec![Vec::new(); m];
        for k in 0..m {
            for pos in col_ptr[k] + 1..col_ptr[k + 1] {
                row_entries[row_idx[pos]].push((k, pos));
            }
        }
        let find = |i: usize, j: usize| -> usize {
            let col = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            col_ptr[j] + col.binary_search(&i).expect("source entry inside fill pattern")
        };
        let mut source_map = Vec::with_capacity(pattern.nnz());
        for j in 0..m {
            for &i in pattern.column(j) {
                let (a, b) = (iperm[i], iperm[j]);
                let (r, c) = if a >= b { (a, b) } else { (b, a) };
                source_map.push(find(r, c));
            }
        }
        Self { perm, col_ptr, row_idx, row_entries, source_map }
    }

    fn factor<T: Real>(&self, system: &BlockSystem<T>, lambda: T) -> Result<Vec<T>> {
        let m = self.perm.len();
        let mut l = vec![T::zero(); self.row_idx.len()];
        for (k, &dst) in self.source_map.iter().enumerate() {
            l[dst] += system.values[k];
        }
        for j in 0..m {
            l[self.col_ptr[j]] += lambda;
        }
        // left-looking: column j gets updates from every k with L[j, k] != 0
        let mut work = vec![T::zero(); m];
        for j in 0..m {
            let (start, end) = (self.col_ptr[j], self.col_ptr[j + 1]);
            for pos in start..end {
                work[self.row_idx[pos]] = l[pos];
            }
            for &(k, pos_jk) in &self.row_entries[j] {
                let ljk = l[pos_jk];
                for pos in pos_jk..self.col_ptr[k + 1] {
                    work[self.row_idx[pos]] -= l[pos] * ljk;
                }
            }
            let d = work[j];
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { column: self.perm[j], pivot: d.to_f64_lossy() });
            }
            let d = d.sqrt();
            l[start] = d;
            work[j] = T::zero();
            for pos in start + 1..end {
                let i = self.row_idx[pos];
                l[pos] = work[i] / d;
                work[i] = T::zero();
            }
        }
        Ok(l)
    }

    fn solve<T: Real>(&self, l: &[T], b: &[T]) -> Vec<T> {
        let m = self.perm.len();
        let mut y: Vec<T> = self.perm.iter().map(|&o| b[o]).collect();
        for j in 0..m {
            y[j] /= l[self.col_ptr[j]];
            let yj = y[j];
            for pos in self.col_ptr[j] + 1..self.col_ptr[j + 1] {
                y[self.row_idx[pos]] -= l[pos] * yj;
            }
        }
        for j in (0..m).rev() {
            let mut s = y[j];
            for pos in self.col_ptr[j] + 1..self.col_ptr[j + 1] {
                s -= l[pos] * y[self.row_idx[pos]];
            }
            y[j] = s / l[self.col_ptr[j]];
        }
        let mut x = vec![T::zero(); m];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Which factorization path a [`DampedSolver`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Factorization {
    /// Dense below [`DENSE_THRESHOLD`], sparse otherwise.
    #[default]
    Auto,
    Dense,
    Sparse,
}

enum Factor<T> {
    Dense(Vec<Vec<T>>),
    Sparse(Vec<T>),
}

/// Reusable solver; caches the symbolic analysis for one sparsity pattern.
#[derive(Debug, Default)]
pub struct DampedSolver {
    mode: Factorization,
    symbolic: Option<(Arc<SparsityPattern>, SymbolicCholesky)>,
}

impl DampedSolver {
    pub fn new(mode: Factorization) -> Self {
        Self { mode, symbolic: None }
    }

    fn use_dense(&self, m: usize) -> bool {
        match self.mode {
            Factorization::Auto => m < DENSE_THRESHOLD,
            Factorization::Dense => true,
            Factorization::Sparse => false,
        }
    }

    fn symbolic_for(&mut self, pattern: &Arc<SparsityPattern>) -> &SymbolicCholesky {
        let stale = match &self.symbolic {
            Some((p, _)) => !(Arc::ptr_eq(p, pattern) || **p == **pattern),
            None => true,
        };
        if stale {
            self.symbolic = Some((pattern.clone(), SymbolicCholesky::analyze(pattern)));
        }
        &self.symbolic.as_ref().expect("symbolic analysis").1
    }

    fn factor<T: Real>(&mut self, system: &BlockSystem<T>, lambda: T) -> Result<Factor<T>> {
        if self.use_dense(system.dim()) {
            let mut a = system.to_dense();
            for (j, row) in a.iter_mut().enumerate() {
                row[j] += lambda;
            }
            dense_cholesky(&mut a)?;
            Ok(Factor::Dense(a))
        } else {
            let sym = self.symbolic_for(system.pattern());
            Ok(Factor::Sparse(sym.factor(system, lambda)?))
        }
    }

    fn apply<T: Real>(&self, factor: &Factor<T>, b: &[T]) -> Vec<T> {
        match factor {
            Factor::Dense(l) => dense_solve_factored(l, b),
            Factor::Sparse(l) => self.symbolic.as_ref().expect("symbolic analysis").1.solve(l, b),
        }
    }

    /// True iff H + λI factors with all pivots positive.
    pub fn spd_check<T: Real>(&mut self, system: &BlockSystem<T>, lambda: T) -> bool {
        system.is_finite() && self.factor(system, lambda).is_ok()
    }

    /// Solves (H + λI) Δx = −g. If the factorization fails the damping is
    /// raised once by a small relative amount before giving up.
    pub fn solve_damped<T: Real>(&mut self, system: &BlockSystem<T>, lambda: T) -> Result<Vec<T>> {
        if !system.is_finite() || !lambda.is_finite() {
            return Err(Error::NonFiniteSystem);
        }
        let lambda = lambda.max(T::lit(1e-12));
        let m = system.dim();
        if system.rhs.iter().all(|v| v.is_zero()) {
            return Ok(vec![T::zero(); m]);
        }
        let (factor, lambda) = match self.factor(system, lambda) {
            Ok(f) => (f, lambda),
            Err(_) => {
                let diag_max = (0..m).map(|j| system.get(j, j).abs()).fold(T::zero(), T::max);
                let bumped = lambda + T::lit(1e-8) * (T::one() + diag_max);
                (self.factor(system, bumped)?, bumped)
            }
        };
        let neg_g: Vec<T> = system.rhs.iter().map(|&v| -v).collect();
        let mut x = self.apply(&factor, &neg_g);
        let g_norm = neg_g.iter().map(|&v| v * v).sum::<T>().sqrt();
        for _ in 0..REFINEMENT_STEPS {
            let r = residual(system, lambda, &x, &neg_g);
            let r_norm = r.iter().map(|&v| v * v).sum::<T>().sqrt();
            if r_norm <= T::lit(1e-12) * g_norm || !r_norm.is_finite() {
                break;
            }
            let dx = self.apply(&factor, &r);
            x.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSystem);
        }
        Ok(x)
    }
}

/// b − (H + λI)x.
fn residual<T: Real>(system: &BlockSystem<T>, lambda: T, x: &[T], b: &[T]) -> Vec<T> {
    let hx = system.mul_vec(x);
    b.iter().zip(hx).zip(x).map(|((&bi, hi), &xi)| bi - hi - lambda * xi).collect()
}

/// One-shot damped solve; see [`DampedSolver::solve_damped`].
pub fn solve_damped<T: Real>(system: &BlockSystem<T>, lambda: T) -> Result<Vec<T>> {
    DampedSolver::default().solve_damped(system, lambda)
}

pub fn spd_check<T: Real>(system: &BlockSystem<T>, lambda: T) -> bool {
    DampedSolver::default().spd_check(system, lambda)
}

/// ‖(H + λI)Δx + g‖ / (‖g‖ + ε).
pub fn relative_residual<T: Real>(system: &BlockSystem<T>, lambda: T, dx: &[T]) -> T {
    let neg_g: Vec<T> = system.rhs.iter().map(|&v| -v).collect();
    let r = residual(system, lambda, dx, &neg_g);
    let rn = r.iter().map(|&v| v * v).sum::<T>().sqrt();
    let gn = neg_g.iter().map(|&v| v * v).sum::<T>().sqrt();
    rn / (gn + T::min_positive_value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let s = BlockSystem::from_dense(&[vec![2.0f64]], vec![1.0]);
        let x = solve_damped(&s, 0.0).unwrap();
        assert!((x[0] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_rhs_gives_zero_step() {
        let s = BlockSystem::from_dense(&[vec![2.0, 0.0], vec![0.0, 3.0]], vec![0.0, 0.0]);
        assert_eq!(solve_damped(&s, 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_plus_damping() {
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let s = BlockSystem::from_dense(&eye, vec![1.0, 1.0, 1.0]);
        for mode in [Factorization::Dense, Factorization::Sparse] {
            let x = DampedSolver::new(mode).solve_damped(&s, 1.0).unwrap();
            for v in x {
                assert!((v + 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn spd_examples() {
        let z = BlockSystem::from_dense(&[vec![0.0]], vec![0.0]);
        assert!(spd_check(&z, 1.0));
        let neg = BlockSystem::from_dense(&[vec![-5.0]], vec![0.0]);
        assert!(!spd_check(&neg, 1.0));
        let mut sparse = DampedSolver::new(Factorization::Sparse);
        assert!(!sparse.spd_check(&neg, 1.0));
        // JᵀJ for a rank-1 J is PSD, adding λI makes it PD
        let j = [1.0, 2.0, -1.0];
        let jtj: Vec<Vec<f64>> = j.iter().map(|a| j.iter().map(|b| a * b).collect()).collect();
        assert!(spd_check(&BlockSystem::from_dense(&jtj, vec![0.0; 3]), 1e-6));
    }

    #[test]
    fn pattern_positions() {
        let p = SparsityPattern::from_cliques(4, [[0usize, 2].as_slice(), [1, 3].as_slice()]);
        assert_eq!(p.column(0), &[0, 2]);
        assert_eq!(p.column(1), &[1, 3]);
        assert_eq!(p.column(2), &[2]);
        assert!(p.position(2, 0).is_some());
        assert!(p.position(0, 2).is_some());
        assert!(p.position(1, 0).is_none());
    }

    #[test]
    fn sparse_matches_dense_on_arrow() {
        // arrow: a dense 2x2 head coupled to a diagonal tail
        let m = 7;
        let mut cliques: Vec<Vec<usize>> = vec![vec![0, 1]];
        for k in 2..m {
            cliques.push(vec![0, 1, k]);
        }
        let pat = Arc::new(SparsityPattern::from_cliques(m, cliques.iter().map(|c| c.as_slice())));
        let mut s = BlockSystem::zeros(pat);
        for k in 0..m {
            s.add(k, k, 2.0 + k as f64);
            s.rhs[k] = (k as f64 - 3.0) * 0.7;
        }
        for k in 2..m {
            s.add(k, 0, 0.3);
            s.add(k, 1, -0.2);
        }
        s.add(1, 0, 0.5);
        let a = DampedSolver::new(Factorization::Dense).solve_damped(&s, 0.1).unwrap();
        let b = DampedSolver::new(Factorization::Sparse).solve_damped(&s, 0.1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(relative_residual(&s, 0.1, &b) < 1e-12);
    }
}
