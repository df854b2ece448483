//! Sparse matrices, tridiagonal time matrices and the direct/iterative
//! solvers used by every other module.
//!
//! Space matrices are stored in CSR form. Time matrices on a uniform P1 grid
//! are always tridiagonal and get their own compact type.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed;
    /// columns within a row end up sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates over the stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(k) => self.data[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.data[k] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `Σ_k w_k A_k` for matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (nrows, ncols) = terms
            .first()
            .map(|(_, m)| (m.nrows, m.ncols))
            .unwrap_or((0, 0));
        let mut trip = Vec::new();
        for &(w, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch");
            if w != 0.0 {
                trip.extend(m.triplets().into_iter().map(|(i, j, v)| (i, j, w * v)));
            }
        }
        CsrMatrix::from_triplets(nrows, ncols, &trip)
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "inner dimensions differ");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        let mut trip = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                trip.push((i, j, acc[j]));
            }
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, &trip)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// `max |a_ij - a_ji|`
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - t.get(i, j)).abs())
            .chain(
                (0..t.nrows)
                    .flat_map(|i| t.row(i).map(move |(j, v)| (i, j, v)))
                    .map(|(i, j, v)| (v - self.get(i, j)).abs()),
            )
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Row-major dense copy. Intended for small test instances only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows * self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[i * self.ncols + j] = v;
            }
        }
        out
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }
}

/// Square tridiagonal matrix: `lower[i] = a_{i+1,i}`, `upper[i] = a_{i,i+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        let off = n.saturating_sub(1);
        Tridiagonal {
            lower: vec![0.0; off],
            diag: vec![0.0; n],
            upper: vec![0.0; off],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tridiagonal::zeros(n);
        t.diag.iter_mut().for_each(|d| *d = 1.0);
        t
    }

    pub fn from_dense(n: usize, a: &[f64]) -> Self {
        let mut t = Tridiagonal::zeros(n);
        for i in 0..n {
            t.diag[i] = a[i * n + i];
            if i + 1 < n {
                t.upper[i] = a[i * n + i + 1];
                t.lower[i] = a[(i + 1) * n + i];
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.upper[i]
        } else if i == j + 1 {
            self.lower[j]
        } else {
            0.0
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// `xᵀ T y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = self.diag[i] * y[i];
            if i > 0 {
                row += self.lower[i - 1] * y[i - 1];
            }
            if i + 1 < n {
                row += self.upper[i] * y[i + 1];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        Tridiagonal {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    pub fn scaled(&self, w: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| w * x).collect();
        Tridiagonal {
            lower: s(&self.lower),
            diag: s(&self.diag),
            upper: s(&self.upper),
        }
    }

    /// `self += w · other`
    pub fn add_scaled(&mut self, w: f64, other: &Tridiagonal) {
        assert_eq!(self.dim(), other.dim());
        let axpy = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        axpy(&mut self.lower, &other.lower);
        axpy(&mut self.diag, &other.diag);
        axpy(&mut self.upper, &other.upper);
    }

    /// Symmetric part `(T + Tᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        let avg: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Tridiagonal {
            lower: avg.clone(),
            diag: self.diag.clone(),
            upper: avg,
        }
    }

    pub fn asymmetry(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.lower
            .iter()
            .chain(&self.diag)
            .chain(&self.upper)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = self.diag[i];
            if i + 1 < n {
                out[i * n + i + 1] = self.upper[i];
                out[(i + 1) * n + i] = self.lower[i];
            }
        }
        out
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let n = self.dim();
        let mut trip = Vec::with_capacity(3 * n);
        for i in 0..n {
            trip.push((i, i, self.diag[i]));
            if i + 1 < n {
                trip.push((i, i + 1, self.upper[i]));
                trip.push((i + 1, i, self.lower[i]));
            }
        }
        CsrMatrix::from_triplets(n, n, &trip)
    }
}

/// Solves `T x = b` for symmetric tridiagonal `T` by `LDLᵀ` elimination.
/// Only `diag` and `lower` are read.
pub fn solve_sym_tridiagonal(t: &Tridiagonal, b: &[f64]) -> Result<Vec<f64>> {
    let n = t.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "tridiagonal of size {n} with rhs of length {}",
            b.len()
        )));
    }
    let scale = t.max_abs().max(f64::MIN_POSITIVE);
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n.saturating_sub(1)];
    let mut y = b.to_vec();
    for i in 0..n {
        let mut di = t.diag[i];
        if i > 0 {
            di -= l[i - 1] * l[i - 1] * d[i - 1];
            y[i] -= l[i - 1] * y[i - 1];
        }
        if di.abs() <= 1e-300 || di.abs() <= f64::EPSILON * 1e-3 * scale {
            return Err(Error::SingularTridiagonal(i));
        }
        d[i] = di;
        if i + 1 < n {
            l[i] = t.lower[i] / di;
        }
    }
    for i in 0..n {
        y[i] /= d[i];
    }
    for i in (0..n.saturating_sub(1)).rev() {
        y[i] -= l[i] * y[i + 1];
    }
    Ok(y)
}

/// Banded Cholesky factorization `K = L Lᵀ` of a sparse SPD matrix.
///
/// Rows are stored as dense band segments `L[i, i-bw..=i]`, which is exact
/// fill-in for the lexicographically numbered grids used here.
#[derive(Clone, Debug)]
pub struct SpdFactorization {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // j in [i - bw, i]
        i * (self.bw + 1) + (j + self.bw - i)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        assert_eq!(x.len(), n);
        // L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let base = self.idx(i, j0);
            let row = &self.band[base..base + (i - j0)];
            let dot: f64 = row.iter().zip(&x[j0..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - dot) / self.band[self.idx(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            x[i] /= self.band[self.idx(i, i)];
            let xi = x[i];
            let j0 = i.saturating_sub(bw);
            let base = self.idx(i, j0);
            for (k, xj) in x[j0..i].iter_mut().enumerate() {
                *xj -= self.band[base + k] * xi;
            }
        }
    }
}

/// Factors a symmetric positive definite sparse matrix.
pub fn spd_factorize(k: &CsrMatrix) -> Result<SpdFactorization> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cannot factor a {}x{} matrix",
            n,
            k.ncols()
        )));
    }
    let bw = k.bandwidth();
    let mut f = SpdFactorization {
        n,
        bw,
        band: vec![0.0; n * (bw + 1)],
    };
    for i in 0..n {
        for (j, v) in k.row(i) {
            if j <= i {
                let id = f.idx(i, j);
                f.band[id] = v;
            }
        }
    }
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for j in j0..=i {
            let k0 = j0.max(j.saturating_sub(bw));
            let mut s = f.band[f.idx(i, j)];
            let bi = f.idx(i, k0);
            let bj = f.idx(j, k0);
            for t in 0..(j - k0) {
                s -= f.band[bi + t] * f.band[bj + t];
            }
            if j == i {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotSpd { row: i, pivot: s });
                }
                let id = f.idx(i, i);
                f.band[id] = s.sqrt();
            } else {
                let id = f.idx(i, j);
                f.band[id] = s / f.band[f.idx(j, j)];
            }
        }
    }
    Ok(f)
}

/// Outcome of a preconditioned conjugate gradient solve.
#[derive(Clone, Debug)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for an SPD map.
///
/// `apply(x, y)` writes `A x` into `y`; `precond(r, z)` writes `P⁻¹ r` into
/// `z`. `x0` is an optional initial guess.
pub fn pcg_solve<A, P>(
    mut apply: A,
    b: &[f64],
    mut precond: P,
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome>
where
    A: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(PcgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::DimensionMismatch("pcg initial guess".into()));
            }
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok(PcgOutcome {
            x,
            iterations: 0,
            relative_residual: rel,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::PcgNotConverged {
                iterations: it,
                residual: rel,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok(PcgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::PcgNotConverged {
        iterations: max_iter,
        residual: rel,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += w x`
pub fn axpy(w: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += w * xi);
}
