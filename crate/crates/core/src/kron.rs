//! Kronecker-sum operators acting on separated (low-rank) space-time vectors.
//!
//! Coefficient vectors are indexed space-major: entry `(i, l)` of a space-time
//! vector lives at `i * n_time + l`, so `(S ⊗ T)_{(i,l),(j,m)} = S_ij T_lm`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm, spd_factorize, CsrMatrix, SpdFactorization, Tridiagonal};

/// An SPD matrix together with its Cholesky factorization.
#[derive(Debug)]
pub struct FactoredSpd {
    pub matrix: Arc<CsrMatrix>,
    pub factor: SpdFactorization,
}

impl FactoredSpd {
    pub fn new(matrix: Arc<CsrMatrix>) -> Result<Arc<Self>> {
        let factor = spd_factorize(&matrix)?;
        Ok(Arc::new(FactoredSpd { matrix, factor }))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.factor.solve(b)
    }
}

/// Middle factor of a composite space factor.
#[derive(Clone, Debug)]
pub enum Middle {
    Identity,
    Solve(Arc<FactoredSpd>),
}

impl Middle {
    fn apply_in_place(&self, x: &mut [f64]) {
        if let Middle::Solve(k) = self {
            k.factor.solve_in_place(x);
        }
    }

    fn key(&self) -> usize {
        match self {
            Middle::Identity => 0,
            Middle::Solve(k) => Arc::as_ptr(k) as usize,
        }
    }
}

/// Space factor of a Kronecker term, applied to `v` as `leftᵀ · middle(right · v)`.
#[derive(Clone, Debug)]
pub enum SpaceFactor {
    /// A plain sparse matrix, optionally applied transposed.
    Sparse {
        matrix: Arc<CsrMatrix>,
        transposed: bool,
    },
    Composite {
        left: Arc<CsrMatrix>,
        middle: Middle,
        right: Arc<CsrMatrix>,
    },
}

impl SpaceFactor {
    pub fn sparse(matrix: Arc<CsrMatrix>) -> Self {
        SpaceFactor::Sparse {
            matrix,
            transposed: false,
        }
    }

    /// Builds `leftᵀ · middle · right`, cancelling `Kᵀ K⁻¹` or `K⁻¹ K` when the
    /// outer factor is the very matrix that was factored.
    pub fn composite(left: Arc<CsrMatrix>, middle: Middle, right: Arc<CsrMatrix>) -> Self {
        if let Middle::Solve(k) = &middle {
            if Arc::ptr_eq(&left, &k.matrix) {
                return SpaceFactor::Sparse {
                    matrix: right,
                    transposed: false,
                };
            }
            if Arc::ptr_eq(&right, &k.matrix) {
                return SpaceFactor::Sparse {
                    matrix: left,
                    transposed: true,
                };
            }
        }
        SpaceFactor::Composite {
            left,
            middle,
            right,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpaceFactor::Sparse { matrix, .. } => matrix.nrows(),
            SpaceFactor::Composite { left, .. } => left.ncols(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            SpaceFactor::Sparse {
                matrix,
                transposed: false,
            } => matrix.mul_vec(v),
            SpaceFactor::Sparse {
                matrix,
                transposed: true,
            } => matrix.mul_vec_transpose(v),
            SpaceFactor::Composite {
                left,
                middle,
                right,
            } => {
                let mut w = right.mul_vec(v);
                middle.apply_in_place(&mut w);
                left.mul_vec_transpose(&w)
            }
        }
    }

    /// `xᵀ S y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            SpaceFactor::Sparse {
                matrix,
                transposed: false,
            } => matrix.bilinear(x, y),
            SpaceFactor::Sparse {
                matrix,
                transposed: true,
            } => matrix.bilinear(y, x),
            SpaceFactor::Composite {
                left,
                middle,
                right,
            } => {
                let mut w = right.mul_vec(y);
                middle.apply_in_place(&mut w);
                dot(&left.mul_vec(x), &w)
            }
        }
    }

    /// Explicit sparse form, available when no inverse is involved.
    pub fn to_sparse(&self) -> Option<CsrMatrix> {
        match self {
            SpaceFactor::Sparse {
                matrix,
                transposed: false,
            } => Some((**matrix).clone()),
            SpaceFactor::Sparse {
                matrix,
                transposed: true,
            } => Some(matrix.transpose()),
            SpaceFactor::Composite {
                left,
                middle: Middle::Identity,
                right,
            } => Some(left.transpose().matmul(right)),
            SpaceFactor::Composite { .. } => None,
        }
    }

    /// Row-major dense matrix, obtained column by column. Small instances only.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        out
    }
}

/// Applies `Σ_r c_r S_r` to `v`, sharing one middle solve per distinct
/// `(left, middle)` pair.
pub fn apply_space_combination(terms: &[(f64, &SpaceFactor)], v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut groups: Vec<(usize, usize, &Arc<CsrMatrix>, &Middle, Vec<f64>)> = Vec::new();
    for &(c, f) in terms {
        if c == 0.0 {
            continue;
        }
        match f {
            SpaceFactor::Sparse {
                matrix,
                transposed: false,
            } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += c * matrix.row(i).map(|(j, a)| a * v[j]).sum::<f64>();
                }
            }
            SpaceFactor::Sparse {
                matrix,
                transposed: true,
            } => {
                for i in 0..matrix.nrows() {
                    let vi = c * v[i];
                    if vi != 0.0 {
                        for (j, a) in matrix.row(i) {
                            out[j] += a * vi;
                        }
                    }
                }
            }
            SpaceFactor::Composite {
                left,
                middle,
                right,
            } => {
                let key = (Arc::as_ptr(left) as usize, middle.key());
                let rv = right.mul_vec(v);
                match groups.iter_mut().find(|g| (g.0, g.1) == key) {
                    Some(g) => axpy(c, &rv, &mut g.4),
                    None => {
                        let mut acc = vec![0.0; rv.len()];
                        axpy(c, &rv, &mut acc);
                        groups.push((key.0, key.1, left, middle, acc));
                    }
                }
            }
        }
    }
    for (_, _, left, middle, mut acc) in groups {
        middle.apply_in_place(&mut acc);
        for i in 0..left.nrows() {
            let ai = acc[i];
            if ai != 0.0 {
                for (j, a) in left.row(i) {
                    out[j] += a * ai;
                }
            }
        }
    }
}

/// Whether a term belongs to the differential-operator part of the residual
/// or to the initial-condition part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Pde,
    InitialCondition,
}

#[derive(Clone, Debug)]
pub struct KronTerm {
    pub space: SpaceFactor,
    pub time: Tridiagonal,
    pub weight: f64,
    pub kind: TermKind,
}

/// `B = Σ_r w_r (S_r ⊗ T_r)`.
#[derive(Clone, Debug)]
pub struct KroneckerSumOperator {
    pub n_space: usize,
    pub n_time: usize,
    pub terms: Vec<KronTerm>,
}

impl KroneckerSumOperator {
    pub fn new(n_space: usize, n_time: usize) -> Self {
        KroneckerSumOperator {
            n_space,
            n_time,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, space: SpaceFactor, time: Tridiagonal, weight: f64, kind: TermKind) {
        assert_eq!(space.dim(), self.n_space, "space factor dimension");
        assert_eq!(time.dim(), self.n_time, "time matrix dimension");
        self.terms.push(KronTerm {
            space,
            time,
            weight,
            kind,
        });
    }

    /// Output column `(r, j)` is `w_r S_r a_j ⊗ T_r b_j`.
    pub fn apply(&self, x: &SeparatedVector) -> Result<SeparatedVector> {
        self.apply_filtered(x, |_| true)
    }

    pub fn apply_filtered(
        &self,
        x: &SeparatedVector,
        keep: impl Fn(&KronTerm) -> bool,
    ) -> Result<SeparatedVector> {
        if x.n_space() != self.n_space || x.n_time() != self.n_time {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} applied to vector {}x{}",
                self.n_space,
                self.n_time,
                x.n_space(),
                x.n_time()
            )));
        }
        let mut out = SeparatedVector::zeros(self.n_space, self.n_time);
        for term in self.terms.iter().filter(|t| keep(t)) {
            for (a, b) in x.columns() {
                let mut sa = term.space.apply(a);
                sa.iter_mut().for_each(|v| *v *= term.weight);
                out.push(sa, term.time.mul_vec(b));
            }
        }
        Ok(out)
    }

    /// Row-major dense `n_space·n_time` square matrix. Small instances only.
    pub fn to_dense(&self) -> Vec<f64> {
        let (ns, nt) = (self.n_space, self.n_time);
        let n = ns * nt;
        let mut out = vec![0.0; n * n];
        for term in &self.terms {
            let s = term.space.to_dense();
            let t = term.time.to_dense();
            for i in 0..ns {
                for j in 0..ns {
                    let sij = term.weight * s[i * ns + j];
                    if sij == 0.0 {
                        continue;
                    }
                    for l in 0..nt {
                        for m in 0..nt {
                            out[(i * nt + l) * n + j * nt + m] += sij * t[l * nt + m];
                        }
                    }
                }
            }
        }
        out
    }
}

/// `Σ_j a_j ⊗ b_j` stored as paired factor columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedVector {
    n_space: usize,
    n_time: usize,
    space: Vec<Vec<f64>>,
    time: Vec<Vec<f64>>,
}

impl SeparatedVector {
    pub fn zeros(n_space: usize, n_time: usize) -> Self {
        SeparatedVector {
            n_space,
            n_time,
            space: Vec::new(),
            time: Vec::new(),
        }
    }

    pub fn rank_one(a: Vec<f64>, b: Vec<f64>) -> Self {
        let mut x = SeparatedVector::zeros(a.len(), b.len());
        x.push(a, b);
        x
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn rank(&self) -> usize {
        self.space.len()
    }

    pub fn push(&mut self, a: Vec<f64>, b: Vec<f64>) {
        assert_eq!(a.len(), self.n_space, "space factor length");
        assert_eq!(b.len(), self.n_time, "time factor length");
        self.space.push(a);
        self.time.push(b);
    }

    pub fn space_factor(&self, j: usize) -> &[f64] {
        &self.space[j]
    }

    pub fn time_factor(&self, j: usize) -> &[f64] {
        &self.time[j]
    }

    pub fn columns(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.space
            .iter()
            .zip(&self.time)
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// Appends the columns of `other` scaled by `w` (scaling the space side).
    pub fn extend_scaled(&mut self, w: f64, other: &SeparatedVector) {
        assert_eq!(
            (self.n_space, self.n_time),
            (other.n_space, other.n_time),
            "dimension mismatch"
        );
        for (a, b) in other.columns() {
            self.push(a.iter().map(|v| w * v).collect(), b.to_vec());
        }
    }

    /// `self - other` as a concatenation with negated space factors.
    pub fn difference(&self, other: &SeparatedVector) -> SeparatedVector {
        let mut out = self.clone();
        out.extend_scaled(-1.0, other);
        out
    }

    pub fn scaled(&self, w: f64) -> SeparatedVector {
        let mut out = SeparatedVector::zeros(self.n_space, self.n_time);
        out.extend_scaled(w, self);
        out
    }

    /// Maps every space factor through `fs` and every time factor through `ft`.
    pub fn map_factors(
        &self,
        n_space: usize,
        n_time: usize,
        fs: impl Fn(&[f64]) -> Vec<f64>,
        ft: impl Fn(&[f64]) -> Vec<f64>,
    ) -> SeparatedVector {
        let mut out = SeparatedVector::zeros(n_space, n_time);
        for (a, b) in self.columns() {
            out.push(fs(a), ft(b));
        }
        out
    }

    /// Full coefficient array, index `i * n_time + l`. Small instances only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_space * self.n_time];
        for (a, b) in self.columns() {
            for (i, ai) in a.iter().enumerate() {
                for (l, bl) in b.iter().enumerate() {
                    out[i * self.n_time + l] += ai * bl;
                }
            }
        }
        out
    }

    /// Euclidean inner product, evaluated factor-wise.
    pub fn dot(&self, other: &SeparatedVector) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.columns() {
            for (c, d) in other.columns() {
                acc += dot(a, c) * dot(b, d);
            }
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.space.iter().chain(&self.time).flatten().all(|v| v.is_finite())
    }
}

/// Space weight of a Gram evaluation.
#[derive(Clone, Copy)]
pub enum SpaceWeight<'a> {
    Identity,
    Matrix(&'a CsrMatrix),
    Factor(&'a SpaceFactor),
}

impl SpaceWeight<'_> {
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        match self {
            SpaceWeight::Identity => a.to_vec(),
            SpaceWeight::Matrix(m) => m.mul_vec(a),
            SpaceWeight::Factor(f) => f.apply(a),
        }
    }
}

/// Time weight of a Gram evaluation.
#[derive(Clone, Copy)]
pub enum TimeWeight<'a> {
    Identity,
    Matrix(&'a Tridiagonal),
}

impl TimeWeight<'_> {
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        match self {
            TimeWeight::Identity => b.to_vec(),
            TimeWeight::Matrix(t) => t.mul_vec(b),
        }
    }
}

/// `Σ_{i,j} (a_iᵀ Ws a_j)(b_iᵀ Wt b_j)` without forming the full tensor.
pub fn gram_norm_sq(x: &SeparatedVector, ws: SpaceWeight<'_>, wt: TimeWeight<'_>) -> f64 {
    let wa: Vec<Vec<f64>> = x.space.iter().map(|a| ws.apply(a)).collect();
    let wb: Vec<Vec<f64>> = x.time.iter().map(|b| wt.apply(b)).collect();
    let r = x.rank();
    let mut acc = 0.0;
    for i in 0..r {
        acc += dot(&x.space[i], &wa[i]) * dot(&x.time[i], &wb[i]);
        for j in 0..i {
            let sij = 0.5 * (dot(&x.space[i], &wa[j]) + dot(&x.space[j], &wa[i]));
            let tij = 0.5 * (dot(&x.time[i], &wb[j]) + dot(&x.time[j], &wb[i]));
            acc += 2.0 * sij * tij;
        }
    }
    acc
}

/// Columns of the triangular factor `R` in `[x_1 … x_k] = Q R`, by Gram–Schmidt
/// with one reorthogonalization pass. Numerically dependent columns add no row.
fn triangular_factor(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r = vec![vec![0.0; k]; k];
    for (j, x) in cols.iter().enumerate() {
        let mut w = x.clone();
        let norm0 = norm(&w);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &w);
                r[j][i] += c;
                axpy(-c, qi, &mut w);
            }
        }
        let nw = norm(&w);
        if nw > 0.0 && nw > 1e-14 * norm0 {
            r[j][q.len()] = nw;
            w.iter_mut().for_each(|v| *v /= nw);
            q.push(w);
        }
    }
    r
}

/// Euclidean norm of the full tensor, computed from thin QR factors of both
/// factor matrices. Unlike [`gram_norm_sq`] it stays accurate when the terms
/// nearly cancel.
pub fn frobenius_norm(x: &SeparatedVector) -> f64 {
    let k = x.rank();
    let ra = triangular_factor(&x.space);
    let rb = triangular_factor(&x.time);
    let mut core = vec![0.0; k * k];
    for j in 0..k {
        for (a, &va) in ra[j].iter().enumerate() {
            if va != 0.0 {
                axpy(va, &rb[j], &mut core[a * k..(a + 1) * k]);
            }
        }
    }
    norm(&core)
}

/// Square root of a Gram value, clamping round-off negatives to zero.
pub fn clamped_sqrt(v: f64) -> f64 {
    if v < 0.0 {
        debug_assert!(v > -1e-10, "Gram value {v} is far from PSD");
        0.0
    } else {
        v.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> Arc<CsrMatrix> {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Arc::new(CsrMatrix::from_triplets(d.len(), d.len(), &t))
    }

    #[test]
    fn identity_operator_is_identity() {
        let mut b = KroneckerSumOperator::new(2, 3);
        b.push(
            SpaceFactor::sparse(Arc::new(CsrMatrix::identity(2))),
            Tridiagonal::identity(3),
            1.0,
            TermKind::Pde,
        );
        let x = SeparatedVector::rank_one(vec![1.0, -2.0], vec![0.5, 0.0, 3.0]);
        assert_eq!(b.apply(&x).unwrap(), x);
    }

    #[test]
    fn mixed_product_rule() {
        let s = Arc::new(CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0)]));
        let t = Tridiagonal {
            lower: vec![0.0],
            diag: vec![1.0, 1.0],
            upper: vec![1.0],
        };
        let mut b = KroneckerSumOperator::new(2, 2);
        b.push(SpaceFactor::sparse(s), t, 1.0, TermKind::Pde);
        let y = b
            .apply(&SeparatedVector::rank_one(vec![1.0, 1.0], vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(y.space_factor(0), &[2.0, 1.0]);
        assert_eq!(y.time_factor(0), &[1.0, 0.0]);
    }

    #[test]
    fn apply_rejects_bad_dimensions() {
        let b = KroneckerSumOperator::new(2, 3);
        let x = SeparatedVector::rank_one(vec![1.0; 3], vec![1.0; 3]);
        assert!(matches!(b.apply(&x), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn gram_examples() {
        let zero = SeparatedVector::zeros(2, 2);
        assert_eq!(gram_norm_sq(&zero, SpaceWeight::Identity, TimeWeight::Identity), 0.0);
        let x = SeparatedVector::rank_one(vec![3.0, 4.0], vec![1.0, 0.0]);
        assert_eq!(gram_norm_sq(&x, SpaceWeight::Identity, TimeWeight::Identity), 25.0);
        let mut y = SeparatedVector::zeros(2, 2);
        y.push(vec![1.0, 0.0], vec![1.0, 0.0]);
        y.push(vec![0.0, 1.0], vec![1.0, 0.0]);
        assert_eq!(gram_norm_sq(&y, SpaceWeight::Identity, TimeWeight::Identity), 2.0);
    }

    #[test]
    fn composite_cancels_factored_matrix() {
        let k = diag(&[2.0, 4.0]);
        let m = diag(&[1.0, 3.0]);
        let fk = FactoredSpd::new(k.clone()).unwrap();
        let f = SpaceFactor::composite(k.clone(), Middle::Solve(fk.clone()), m.clone());
        assert!(matches!(f, SpaceFactor::Sparse { transposed: false, .. }));
        let g = SpaceFactor::composite(m.clone(), Middle::Solve(fk.clone()), k);
        assert!(matches!(g, SpaceFactor::Sparse { transposed: true, .. }));
        let h = SpaceFactor::composite(m.clone(), Middle::Solve(fk), m);
        let y = h.apply(&[1.0, 1.0]);
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn combination_matches_individual_application() {
        let k = Arc::new(CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        ));
        let a = Arc::new(CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 2, 0.5), (1, 1, 3.0), (2, 0, -1.0), (2, 2, 1.0)],
        ));
        let fk = FactoredSpd::new(k).unwrap();
        let f1 = SpaceFactor::composite(a.clone(), Middle::Solve(fk.clone()), a.clone());
        let f2 = SpaceFactor::composite(a.clone(), Middle::Solve(fk), diag(&[1.0, 2.0, 3.0]));
        let f3 = SpaceFactor::Sparse {
            matrix: a.clone(),
            transposed: true,
        };
        let v = [0.3, -1.2, 2.0];
        let terms = [(1.5, &f1), (-0.7, &f2), (2.0, &f3)];
        let mut out = vec![0.0; 3];
        apply_space_combination(&terms, &v, &mut out);
        let mut expect = vec![0.0; 3];
        for (c, f) in terms {
            axpy(c, &f.apply(&v), &mut expect);
        }
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!((f1.bilinear(&v, &v) - dot(&v, &f1.apply(&v))).abs() < 1e-13);
    }

    #[test]
    fn frobenius_norm_resolves_cancellation() {
        let mut x = SeparatedVector::zeros(4, 3);
        x.push(vec![1.0, 2.0, -1.0, 0.5], vec![1.0, 0.0, 2.0]);
        x.push(vec![0.0, 1.0, 1.0, 1.0], vec![-1.0, 3.0, 0.5]);
        let dense: f64 = x.to_dense().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((frobenius_norm(&x) - dense).abs() < 1e-14 * dense);

        let mut y = x.clone();
        y.push(vec![1e-9, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
        y.extend_scaled(-1.0, &x);
        // Round-off is relative to the size of the cancelling terms, not their square.
        assert!((frobenius_norm(&y) - 1e-9).abs() < 1e-14);
        assert_eq!(frobenius_norm(&SeparatedVector::zeros(4, 3)), 0.0);
    }
}
