//! Gauged solution of the pure-Neumann mixed-dimensional system and the
//! conservation check.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::coupling::{Assembly, LinearSystem};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// Replace the first equation by `phi_0 = 0`, then shift to zero weighted mean.
    Pin,
    /// Border the system with the weighted-mean constraint.
    #[default]
    NullAverage,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Direct up to `direct_limit` unknowns; above, iterative with a direct
    /// fallback when it stalls.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: Method,
    pub direct_limit: usize,
    /// Largest system solved directly when the iterative solver stalls.
    pub fallback_limit: usize,
    /// Relative residual target of the iterative solver.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Auto,
            direct_limit: 20_000,
            fallback_limit: 60_000,
            tolerance: 1e-12,
            restart: 200,
            max_iterations: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// `||M x - b||_2 / ||b||_2` of the original (ungauged) system.
    pub relative_residual: f64,
    pub iterations: usize,
    pub method: Method,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fails unless the right-hand side sums to zero within `1e-12 ||b||_1`.
pub fn check_compatible(rhs: &[f64]) -> Result<()> {
    let sum: f64 = rhs.iter().sum();
    let tolerance = 1e-12 * rhs.iter().map(|x| x.abs()).sum::<f64>();
    if sum.abs() > tolerance {
        return Err(Error::IncompatibleSource { sum, tolerance });
    }
    Ok(())
}

/// The system matrix as used for residuals and Krylov products. Without
/// explicit mortar unknowns every row sums to zero, and rows are evaluated on
/// potential differences: roundoff in the assembled diagonals times a large
/// common potential would otherwise show up as spurious cell imbalance.
#[derive(Clone, Copy)]
struct Operator<'a> {
    m: &'a CsrMatrix,
    zero_sum: bool,
}

impl<'a> Operator<'a> {
    fn new(system: &'a LinearSystem) -> Self {
        Operator { m: &system.matrix, zero_sum: system.layout.mortars.is_empty() }
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        if self.zero_sum {
            self.m.residual_zero_sum(x, b)
        } else {
            self.m.residual_accurate(x, b)
        }
    }

    fn apply_split(&self, hi: &[f64], lo: &[f64]) -> Vec<f64> {
        if self.zero_sum {
            self.m.mul_vec_zero_sum(hi, lo)
        } else {
            self.m.mul_vec_split(hi, lo)
        }
    }
}

fn residual(op: Operator, x: &[f64], b: &[f64]) -> f64 {
    let r = op.residual(x, b);
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// Shifts the potentials so that their weighted mean is zero.
fn shift_to_null_average(system: &LinearSystem, x: &mut [f64]) {
    let n = system.layout.potentials();
    let wsum: f64 = system.weights[..n].iter().sum();
    let mean = dot(&system.weights[..n], &x[..n]) / wsum;
    for v in &mut x[..n] {
        *v -= mean;
    }
}

/// A solution is accepted when its relative residual is at most `1e-8`, or
/// when the residual is within `1e3` roundoffs of `|M| |x|`: potential jumps
/// of 1e5 V across an intact liner put the floating-point floor of
/// `||M x - b|| / ||b||` itself near 1e-8.
fn acceptable(op: Operator, x: &[f64], b: &[f64]) -> bool {
    let m = op.m;
    let nb = norm(b);
    let nr = norm(&op.residual(x, b));
    if !nr.is_finite() {
        return false;
    }
    let abs: Vec<f64> = (0..m.rows)
        .map(|i| {
            let (cols, vals) = m.row(i);
            cols.iter().zip(vals).map(|(&j, v)| (v * x[j]).abs()).sum()
        })
        .collect();
    nr <= 1e-8 * nb || nr <= 1e3 * f64::EPSILON * norm(&abs)
}

pub fn solve_gauged(system: &LinearSystem, gauge: Gauge, options: &SolverOptions) -> Result<SolveReport> {
    check_compatible(&system.rhs)?;
    let n = system.matrix.rows;
    if system.rhs.iter().all(|&v| v == 0.0) {
        return Ok(SolveReport { x: vec![0.0; n], relative_residual: 0.0, iterations: 0, method: Method::Direct });
    }
    let method = match options.method {
        Method::Auto if n <= options.direct_limit => Method::Direct,
        Method::Auto => Method::Iterative,
        m => m,
    };
    let (mut x, iterations) = match (method, gauge) {
        (Method::Direct, Gauge::NullAverage) => (solve_bordered(system)?, 1),
        (Method::Direct, Gauge::Pin) => {
            let (m, b) = pinned(system);
            (direct_solve(&m, &b)?, 1)
        }
        // GMRES runs on the singular but consistent system, preconditioned
        // with the pinned matrix; the gauge is applied afterwards for both modes.
        (_, _) => {
            let (m, b) = pinned(system);
            let coarse = coarse_space(&m);
            let recentre = |x: &mut [f64]| shift_to_null_average(system, x);
            let (x, iterations, rel) = gmres(Operator::new(system), &system.rhs, &m, coarse, recentre, options);
            if rel <= options.tolerance || acceptable(Operator::new(system), &x, &system.rhs) {
                if rel > options.tolerance {
                    log::debug!("GMRES stalled at relative residual {rel:.2e}");
                }
                (x, iterations)
            } else if options.method == Method::Auto && n <= options.fallback_limit {
                log::info!(
                    "GMRES stopped at relative residual {rel:.2e} after {iterations} iterations, solving directly"
                );
                match gauge {
                    Gauge::NullAverage => (solve_bordered(system)?, iterations + 1),
                    Gauge::Pin => (direct_solve(&m, &b)?, iterations + 1),
                }
            } else {
                return Err(Error::SolveFailure {
                    reason: format!("GMRES stopped after {iterations} iterations"),
                    residual: rel,
                });
            }
        }
    };
    shift_to_null_average(system, &mut x);
    let relative_residual = residual(Operator::new(system), &x, &system.rhs);
    if !acceptable(Operator::new(system), &x, &system.rhs) {
        return Err(Error::SolveFailure { reason: "residual above tolerance".into(), residual: relative_residual });
    }
    Ok(SolveReport { x, relative_residual, iterations, method })
}

fn pinned(system: &LinearSystem) -> (CsrMatrix, Vec<f64>) {
    let scale = system.matrix.get(0, 0).abs();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut triplets: Vec<(usize, usize, f64)> = system.matrix.triplets().filter(|t| t.0 != 0).collect();
    triplets.push((0, 0, scale));
    let mut b = system.rhs.clone();
    b[0] = 0.0;
    (CsrMatrix::from_triplets(system.matrix.rows, system.matrix.cols, &triplets), b)
}

/// Solves the bordered system `[[M, v], [w^T, 0]] [x; λ] = [b; 0]`, with `v`
/// the indicator of the potential unknowns (the left null vector of `M`) and
/// `w` the gauge weights, by block elimination. A dense border row ruins the
/// fill of a sparse LU, so `P = M + δ e_0 e_0^T` is factored instead; the
/// bordered matrix with `P` in the corner is inverted through its Schur
/// complement and the rank-one difference by Sherman-Morrison.
fn solve_bordered(system: &LinearSystem) -> Result<Vec<f64>> {
    let m = &system.matrix;
    let n = m.rows;
    let np = system.layout.potentials();
    let delta = m.get(0, 0).abs().max(f64::MIN_POSITIVE);
    let mut triplets: Vec<(usize, usize, f64)> = m.triplets().collect();
    triplets.push((0, 0, delta));
    let p = DirectFactor::new(&CsrMatrix::from_triplets(n, n, &triplets))?;
    let v: Vec<f64> = (0..n).map(|i| if i < np { 1.0 } else { 0.0 }).collect();
    let w = &system.weights;
    let p_v = p.solve(&v);
    let wp_v = dot(w, &p_v);
    if !(wp_v.abs() > 0.0) {
        return Err(Error::SolveFailure { reason: "singular bordered system".into(), residual: f64::NAN });
    }
    // K = [[P, v], [w^T, 0]]; returns the x part of K^{-1} [r; r_last] and λ.
    let k_solve = |r: &[f64], r_last: f64| -> (Vec<f64>, f64) {
        let z = p.solve(r);
        let lambda = (dot(w, &z) - r_last) / wp_v;
        (z.iter().zip(&p_v).map(|(z, pv)| z - lambda * pv).collect(), lambda)
    };
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    let (k_e0, _) = k_solve(&e0, 0.0);
    let denom = 1.0 - delta * k_e0[0];
    // B = K - δ e_0 e_0^T
    let b_solve = |r: &[f64], r_last: f64| -> (Vec<f64>, f64) {
        let (x, lambda) = k_solve(r, r_last);
        let c = delta * x[0] / denom;
        (x.iter().zip(&k_e0).map(|(x, k)| x + c * k).collect(), lambda)
    };
    let (mut x, mut lambda) = b_solve(&system.rhs, 0.0);
    for _ in 0..2 {
        let mx = m.mul_vec(&x);
        let r: Vec<f64> = (0..n).map(|i| system.rhs[i] - mx[i] - lambda * v[i]).collect();
        let r_last = -dot(w, &x);
        let (dx, dl) = b_solve(&r, r_last);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        lambda += dl;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailure { reason: "singular factorization".into(), residual: f64::NAN });
    }
    Ok(x)
}

/// Sparse LU factorization (faer).
struct DirectFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl DirectFactor {
    fn new(m: &CsrMatrix) -> Result<Self> {
        let n = m.rows;
        let triplets: Vec<Triplet<usize, usize, f64>> = m.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SolveFailure { reason: format!("matrix construction: {e:?}"), residual: f64::NAN })?;
        let lu =
            a.sp_lu().map_err(|e| Error::SolveFailure { reason: format!("sparse LU: {e:?}"), residual: f64::NAN })?;
        Ok(DirectFactor { lu, n })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let col = Col::<f64>::from_fn(self.n, |i| rhs[i]);
        let x = self.lu.solve(&col);
        (0..self.n).map(|i| x[i]).collect()
    }
}

/// Sparse LU with two steps of iterative refinement.
pub fn direct_solve(m: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = DirectFactor::new(m)?;
    let mut x = lu.solve(b);
    for _ in 0..2 {
        let r: Vec<f64> = b.iter().zip(m.mul_vec(&x)).map(|(b, mx)| b - mx).collect();
        for (xi, d) in x.iter_mut().zip(lu.solve(&r)) {
            *xi += d;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailure { reason: "singular factorization".into(), residual: f64::NAN });
    }
    Ok(x)
}

/// Incomplete LU with the sparsity pattern of the matrix. Falls back to the
/// diagonal when a pivot vanishes.
struct Preconditioner {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
    jacobi: bool,
}

impl Preconditioner {
    fn new(m: &CsrMatrix) -> Self {
        let n = m.rows;
        let mut lu = m.clone();
        let mut diag_pos = vec![usize::MAX; n];
        for r in 0..n {
            let (cols, _) = m.row(r);
            if let Ok(p) = cols.binary_search(&r) {
                diag_pos[r] = m.row_ptr[r] + p;
            }
        }
        let jacobi = |lu: CsrMatrix, diag_pos: Vec<usize>| {
            log::debug!("ILU(0) broke down, using the diagonal");
            Preconditioner { lu, diag_pos, jacobi: true }
        };
        if diag_pos.contains(&usize::MAX) {
            return jacobi(m.clone(), diag_pos);
        }
        let mut where_: Vec<usize> = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                where_[lu.col_idx[p]] = p;
            }
            for p in start..end {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let pivot = lu.values[diag_pos[k]];
                if pivot.abs() < 1e-300 {
                    return jacobi(m.clone(), diag_pos);
                }
                let factor = lu.values[p] / pivot;
                lu.values[p] = factor;
                for q in diag_pos[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.col_idx[q];
                    let w = where_[j];
                    if w != usize::MAX {
                        lu.values[w] -= factor * lu.values[q];
                    }
                }
            }
            for p in start..end {
                where_[lu.col_idx[p]] = usize::MAX;
            }
            let d = lu.values[diag_pos[i]];
            if !(d.abs() > 1e-14 * m.row(i).1.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                return jacobi(m.clone(), diag_pos);
            }
        }
        Preconditioner { lu, diag_pos, jacobi: false }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        if self.jacobi {
            for i in 0..n {
                z[i] = r[i] / self.lu.values[self.diag_pos[i]];
            }
            return;
        }
        for i in 0..n {
            let mut s = r[i];
            for p in self.lu.row_ptr[i]..self.diag_pos[i] {
                s -= self.lu.values[p] * z[self.lu.col_idx[p]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in self.diag_pos[i] + 1..self.lu.row_ptr[i + 1] {
                s -= self.lu.values[p] * z[self.lu.col_idx[p]];
            }
            z[i] = s / self.lu.values[self.diag_pos[i]];
        }
    }
}

/// Groups of unknowns that are only weakly coupled to each other, for
/// instance the water on the two sides of a resistive liner. Two unknowns are
/// strongly coupled when `|a_ij| >= 1e-4 max(|a_ii|, |a_jj|)`; groups are the
/// components of the strong graph, and an unknown without strong neighbors
/// (a liner cell) joins the group of its largest neighbor without linking
/// that group to any other.
struct CoarseSpace {
    group: Vec<usize>,
    groups: usize,
    /// `(Z^T M Z)^{-1}`
    inverse: Option<nalgebra::DMatrix<f64>>,
}

fn coarse_space(m: &CsrMatrix) -> CoarseSpace {
    let n = m.rows;
    let diag: Vec<f64> = m.diagonal().iter().map(|d| d.abs()).collect();
    let strong = |i: usize, j: usize, v: f64| i != j && v.abs() >= 1e-4 * diag[i].max(diag[j]);
    let mut group = vec![usize::MAX; n];
    let mut groups = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        let (cols, vals) = m.row(seed);
        if group[seed] != usize::MAX || !cols.iter().zip(vals).any(|(&j, &v)| strong(seed, j, v)) {
            continue;
        }
        group[seed] = groups;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if group[j] == usize::MAX && strong(i, j, v) {
                    group[j] = groups;
                    stack.push(j);
                }
            }
        }
        groups += 1;
    }
    let mut loose = Vec::new();
    for i in 0..n {
        if group[i] != usize::MAX {
            continue;
        }
        let (cols, vals) = m.row(i);
        let best = cols
            .iter()
            .zip(vals)
            .filter(|&(&j, _)| j != i && group[j] != usize::MAX)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(&j, _)| group[j]);
        loose.push((i, best));
    }
    for (i, g) in loose {
        group[i] = g.unwrap_or_else(|| {
            groups += 1;
            groups - 1
        });
    }
    // Row sums of M vanish, so the diagonal blocks of Z^T M Z follow from the
    // cross-group entries without summing a whole group; row 0 is pinned.
    let inverse = if (2..=2000).contains(&groups) {
        let mut e = nalgebra::DMatrix::<f64>::zeros(groups, groups);
        for (r, c, v) in m.triplets() {
            if r == 0 {
                e[(group[0], group[c])] += v;
            } else if group[r] != group[c] {
                e[(group[r], group[c])] += v;
                e[(group[r], group[r])] -= v;
            }
        }
        e.try_inverse()
    } else {
        None
    };
    log::debug!("coarse space with {groups} groups");
    CoarseSpace { group, groups, inverse }
}

impl CoarseSpace {
    /// `(Z^T M Z)^{-1} Z^T r`, one coefficient per group.
    fn coefficients(&self, r: &[f64]) -> Option<Vec<f64>> {
        let inv = self.inverse.as_ref()?;
        let mut restricted = nalgebra::DVector::<f64>::zeros(self.groups);
        for (i, &g) in self.group.iter().enumerate() {
            restricted[g] += r[i];
        }
        Some((inv * restricted).iter().copied().collect())
    }

    fn expand(&self, c: &[f64]) -> Vec<f64> {
        if c.is_empty() {
            return vec![0.0; self.group.len()];
        }
        self.group.iter().map(|&g| c[g]).collect()
    }

    /// `m` with one more diagonal pin in every group that does not hold
    /// unknown 0, so that incomplete factors stay bounded on groups that
    /// are nearly floating. The coarse correction supplies their constants.
    fn pinned_groups(&self, m: &CsrMatrix) -> CsrMatrix {
        let mut out = m.clone();
        if self.inverse.is_none() {
            return out;
        }
        let mut seen = vec![false; self.groups];
        seen[self.group[0]] = true;
        for (i, &g) in self.group.iter().enumerate() {
            if !seen[g] {
                seen[g] = true;
                let p = m.row_ptr[i] + m.row(i).0.binary_search(&i).expect("diagonal entry");
                out.values[p] *= 2.0;
            }
        }
        out
    }
}

/// A preconditioned direction: a local part and one constant per group.
/// Group constants can exceed the local part by many orders of magnitude,
/// so the two are never added into one vector.
struct Direction {
    local: Vec<f64>,
    coarse: Vec<f64>,
}

/// Restarted GMRES on `m x = b`, right-preconditioned by ILU(0) of `p`
/// combined with a coarse correction over weakly coupled groups of `p`.
/// Returns the best iterate, the iteration count and its relative residual.
/// Stops at the tolerance, at the iteration limit, or when a whole restart
/// cycle fails to halve the residual.
fn gmres(
    m: Operator,
    b: &[f64],
    p: &CsrMatrix,
    coarse: CoarseSpace,
    recentre: impl Fn(&mut [f64]),
    options: &SolverOptions,
) -> (Vec<f64>, usize, f64) {
    let n = m.m.rows;
    let ilu = Preconditioner::new(&coarse.pinned_groups(p));
    // Two-level multiplicative: coarse, then ILU, then coarse on what remains.
    let precondition = |r: &[f64]| -> Direction {
        let mut local = vec![0.0; n];
        match coarse.coefficients(r) {
            Some(q) => {
                let pq = p.mul_vec_accurate(&coarse.expand(&q));
                let rr: Vec<f64> = r.iter().zip(&pq).map(|(a, b)| a - b).collect();
                ilu.apply(&rr, &mut local);
                let qz = coarse.coefficients(&p.mul_vec_accurate(&local)).unwrap();
                Direction { local, coarse: q.iter().zip(&qz).map(|(a, b)| a - b).collect() }
            }
            None => {
                ilu.apply(r, &mut local);
                Direction { local, coarse: Vec::new() }
            }
        }
    };
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, 0, 0.0);
    }
    let restart = options.restart.max(1);
    let mut total = 0;
    let mut previous = f64::INFINITY;
    let mut best = (x.clone(), f64::INFINITY);
    loop {
        // Potential jumps across a liner make the terms of M x much larger
        // than their sum, and a large additive constant in x costs digits;
        // restarts work on the gauged iterate with a compensated residual.
        recentre(&mut x);
        let r = m.residual(&x, b);
        let beta = norm(&r);
        let rel = beta / bnorm;
        log::trace!("gmres: {total} iterations, relative residual {rel:.3e}");
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= options.tolerance || total >= options.max_iterations || rel > 0.5 * previous {
            return (best.0, total, best.1);
        }
        previous = rel;
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut z: Vec<Direction> = Vec::with_capacity(restart);
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < options.max_iterations {
            let zk = precondition(&v[k]);
            let mut w = m.apply_split(&coarse.expand(&zk.coarse), &zk.local);
            z.push(zk);
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= h[i][k] * vj;
                }
            }
            h[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let hk1 = norm(&w);
            v.push(if hk1 > 0.0 { w.iter().map(|x| x / hk1).collect() } else { w });
            k += 1;
            total += 1;
            if g[k].abs() / bnorm <= 0.1 * options.tolerance {
                break;
            }
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut shift = vec![0.0; z.first().map_or(0, |d| d.coarse.len())];
        for (yi, zi) in y.iter().zip(&z) {
            for (s, c) in shift.iter_mut().zip(&zi.coarse) {
                *s += yi * c;
            }
        }
        let shift = coarse.expand(&shift);
        for (j, xj) in x.iter_mut().enumerate() {
            let (mut s, mut c) = (*xj, 0.0);
            let mut add = |p: f64, ep: f64| {
                let t = s + p;
                let d = t - s;
                c += (s - (t - d)) + (p - d) + ep;
                s = t;
            };
            add(shift[j], 0.0);
            for (yi, zi) in y.iter().zip(&z) {
                let p = yi * zi.local[j];
                add(p, yi.mul_add(zi.local[j], -p));
            }
            *xj = s + c;
        }
        if k == 0 {
            previous = 0.0;
        }
    }
}

/// Potentials and currents of every subdomain after a solve.
#[derive(Clone, Debug)]
pub struct Solution {
    pub bulk: Vec<f64>,
    pub liner: Vec<f64>,
    pub electrodes: Vec<Vec<f64>>,
    /// Bulk-to-liner exchange current per liner link (side 0 links, then side 1).
    pub liner_exchange: Vec<f64>,
    /// Bulk-to-electrode exchange current per segment-map entry.
    pub electrode_exchange: Vec<Vec<f64>>,
    /// Flux of every bulk face out of its first cell; split faces carry the liner exchange.
    pub bulk_face_fluxes: Vec<f64>,
    pub liner_face_fluxes: Vec<f64>,
    pub electrode_face_fluxes: Vec<Vec<f64>>,
    pub relative_residual: f64,
}

pub fn solve(assembly: &Assembly, gauge: Gauge, options: &SolverOptions) -> Result<Solution> {
    let report = solve_gauged(&assembly.system, gauge, options)?;
    Ok(unpack(assembly, &report))
}

pub fn unpack(assembly: &Assembly, report: &SolveReport) -> Solution {
    let layout = &assembly.system.layout;
    let x = &report.x;
    let bulk = x[layout.bulk.clone()].to_vec();
    let liner = x[layout.liner.clone()].to_vec();
    let electrodes: Vec<Vec<f64>> = layout.electrodes.iter().map(|r| x[r.clone()].to_vec()).collect();
    let liner_exchange = assembly.liner_block.as_ref().map_or(Vec::new(), |b| b.currents(&bulk, &liner));
    let electrode_exchange: Vec<Vec<f64>> =
        assembly.electrode_blocks.iter().zip(&electrodes).map(|(b, phi)| b.currents(&bulk, phi)).collect();
    let mut bulk_face_fluxes = assembly.bulk_op.face_fluxes(&bulk);
    if let Some(block) = &assembly.liner_block {
        for (&f, &j) in block.faces.iter().zip(&liner_exchange) {
            bulk_face_fluxes[f] = j;
        }
    }
    let liner_face_fluxes = assembly.liner_op.as_ref().map_or(Vec::new(), |op| op.face_fluxes(&liner));
    let electrode_face_fluxes =
        assembly.electrode_ops.iter().zip(&electrodes).map(|(op, phi)| op.face_fluxes(phi)).collect();
    Solution {
        bulk,
        liner,
        electrodes,
        liner_exchange,
        electrode_exchange,
        bulk_face_fluxes,
        liner_face_fluxes,
        electrode_face_fluxes,
        relative_residual: report.relative_residual,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReport {
    /// Outflow minus source for every cell, bulk then liner then electrodes.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub injected: f64,
    pub extracted: f64,
    /// Sum of all residuals; zero when exchange terms cancel pairwise.
    pub net: f64,
}

/// Recomputes every cell balance from the face fluxes and exchange currents.
pub fn check_balance(assembly: &Assembly, solution: &Solution) -> BalanceReport {
    let mut bulk = assembly.bulk_op.apply(&solution.bulk);
    let mut liner = assembly.liner_op.as_ref().map_or(Vec::new(), |op| op.apply(&solution.liner));
    let mut electrodes: Vec<Vec<f64>> =
        assembly.electrode_ops.iter().zip(&solution.electrodes).map(|(op, phi)| op.apply(phi)).collect();
    if let Some(block) = &assembly.liner_block {
        for (link, &j) in block.links.iter().zip(&solution.liner_exchange) {
            bulk[link.bulk_cell] += j;
            liner[link.low_cell] -= j;
        }
    }
    for (e, (block, currents)) in assembly.electrode_blocks.iter().zip(&solution.electrode_exchange).enumerate() {
        for (link, &j) in block.links.iter().zip(currents) {
            bulk[link.bulk_cell] += j;
            electrodes[e][link.low_cell] -= j;
        }
        for (r, s) in electrodes[e].iter_mut().zip(&assembly.injections[e]) {
            *r -= s;
        }
    }
    let residuals: Vec<f64> = bulk.into_iter().chain(liner).chain(electrodes.into_iter().flatten()).collect();
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let injected = assembly.injections.iter().flatten().filter(|&&s| s > 0.0).sum();
    let extracted = -assembly.injections.iter().flatten().filter(|&&s| s < 0.0).sum::<f64>();
    let net = residuals.iter().sum();
    BalanceReport { residuals, max_residual, injected, extracted, net }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{assemble_problem, attach_electrodes, ElectrodeSpec, MortarForm};
    use crate::fv::{MaterialField, Scheme};
    use crate::mesh::{build_box_mesh, embed_liner, LinerSpec, MixedDimGrid, Panel, Vec3};

    fn dipole(liner: bool, scheme: Scheme, form: MortarForm) -> (MixedDimGrid, Assembly) {
        let mesh = build_box_mesh([0.4, 0.4, 0.2], 0.04, &[]).unwrap();
        let mut grid = if liner {
            let spec = LinerSpec::new(vec![Panel::horizontal(0.12, [0.0, 0.4], [0.0, 0.4])], 1e-3, 1e-5);
            embed_liner(mesh, &spec).unwrap()
        } else {
            MixedDimGrid::bulk_only(mesh)
        };
        let mut a = ElectrodeSpec::vertical(Vec3::new(0.13, 0.21, 0.2), 0.1, 1e-3, 1.45e6);
        let mut b = ElectrodeSpec::vertical(Vec3::new(0.27, 0.21, 0.2), 0.1, 1e-3, 1.45e6);
        a.current = 0.01;
        b.current = -0.01;
        attach_electrodes(&mut grid, &[a.clone(), b.clone()], 1).unwrap();
        let mat = MaterialField::uniform(grid.bulk.num_cells(), 1.0 / 29.0).unwrap();
        let asm = assemble_problem(&grid, &mat, &[a, b], scheme, form).unwrap();
        (grid, asm)
    }

    #[test]
    fn incompatible_source_is_rejected() {
        let (_, mut asm) = dipole(false, Scheme::Tpfa, MortarForm::Eliminated);
        let n = asm.system.rhs.len();
        asm.system.rhs[n - 1] = 0.0;
        assert!(matches!(
            solve_gauged(&asm.system, Gauge::Pin, &SolverOptions::default()),
            Err(Error::IncompatibleSource { .. })
        ));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (_, mut asm) = dipole(false, Scheme::Tpfa, MortarForm::Eliminated);
        asm.system.rhs.iter_mut().for_each(|v| *v = 0.0);
        let r = solve_gauged(&asm.system, Gauge::NullAverage, &SolverOptions::default()).unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gauges_and_methods_agree() {
        for liner in [false, true] {
            let (_, asm) = dipole(liner, Scheme::Mpfa, MortarForm::Eliminated);
            let direct = SolverOptions { method: Method::Direct, ..Default::default() };
            let iterative = SolverOptions { method: Method::Iterative, ..Default::default() };
            let a = solve_gauged(&asm.system, Gauge::Pin, &direct).unwrap();
            let b = solve_gauged(&asm.system, Gauge::NullAverage, &direct).unwrap();
            let c = solve_gauged(&asm.system, Gauge::NullAverage, &iterative).unwrap();
            let range = a.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - a.x.iter().cloned().fold(f64::INFINITY, f64::min);
            for i in 0..a.x.len() {
                assert!((a.x[i] - b.x[i]).abs() <= 1e-10 * range);
                assert!((a.x[i] - c.x[i]).abs() <= 1e-9 * range, "{} vs {}", a.x[i], c.x[i]);
            }
            assert!(a.relative_residual <= 1e-10 && b.relative_residual <= 1e-10 && c.relative_residual <= 1e-10);
        }
    }

    #[test]
    fn balance_and_exchange_totals() {
        let (_, asm) = dipole(true, Scheme::Mpfa, MortarForm::Eliminated);
        let sol = solve(&asm, Gauge::NullAverage, &SolverOptions::default()).unwrap();
        let report = check_balance(&asm, &sol);
        assert!(report.net.abs() <= 1e-12);
        assert!(report.max_residual <= 1e-10 * 0.01, "{}", report.max_residual);
        assert_eq!(report.injected, 0.01);
        assert_eq!(report.extracted, 0.01);
        let total: [f64; 2] = [sol.electrode_exchange[0].iter().sum(), sol.electrode_exchange[1].iter().sum()];
        assert!((total[0] + 0.01).abs() <= 1e-10 * 0.01 * 1e2);
        assert!((total[1] - 0.01).abs() <= 1e-10 * 0.01 * 1e2);
    }

    #[test]
    fn explicit_mortars_match_elimination() {
        let (_, a) = dipole(true, Scheme::Tpfa, MortarForm::Eliminated);
        let (_, b) = dipole(true, Scheme::Tpfa, MortarForm::Explicit);
        let opts = SolverOptions { method: Method::Direct, ..Default::default() };
        let xa = solve_gauged(&a.system, Gauge::NullAverage, &opts).unwrap().x;
        let xb = solve_gauged(&b.system, Gauge::NullAverage, &opts).unwrap().x;
        let scale = xa.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..xa.len() {
            assert!((xa[i] - xb[i]).abs() <= 1e-12 * scale);
        }
    }
}
