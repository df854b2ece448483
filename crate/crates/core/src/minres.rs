//! Assembly of the minimal-residual space-time systems and their reduction to
//! the space and time subproblems of alternating minimization.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::{
    apply_space_combination, frobenius_norm, KroneckerSumOperator, Middle, SeparatedVector, SpaceFactor, TermKind,
};
use crate::problem::SeparatedParabolicProblem;
use crate::space::SpaceDiscretization;
use crate::sparse::{dot, CsrMatrix, Tridiagonal};
use crate::time::TimeDiscretization;

/// Which residual is minimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Method {
    /// Dual norm of the residual through the inverse stiffness matrix.
    Preconditioned,
    /// Fully discrete Petrov–Galerkin residual with a piecewise-constant test space.
    PetrovGalerkin,
    /// Plain L² residual, no stiffness inverse.
    Unpreconditioned,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Preconditioned,
        Method::PetrovGalerkin,
        Method::Unpreconditioned,
    ];

    pub fn number(self) -> u8 {
        match self {
            Method::Preconditioned => 1,
            Method::PetrovGalerkin => 2,
            Method::Unpreconditioned => 3,
        }
    }
}

impl From<Method> for u8 {
    fn from(m: Method) -> u8 {
        m.number()
    }
}

impl TryFrom<u8> for Method {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Method::Preconditioned),
            2 => Ok(Method::PetrovGalerkin),
            3 => Ok(Method::Unpreconditioned),
            _ => Err(Error::InvalidConfig(format!("unknown method {v}"))),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<u8>()
            .map_err(|_| Error::InvalidConfig(format!("unknown method '{s}'")))
            .and_then(Method::try_from)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Symmetric positive-definite system `B u = g` in Kronecker-sum form.
#[derive(Clone, Debug)]
pub struct MinResSystem {
    pub method: Method,
    pub operator: KroneckerSumOperator,
    pub rhs: SeparatedVector,
    pub rhs_kinds: Vec<TermKind>,
    pub space: Arc<SpaceDiscretization>,
    pub time: Arc<TimeDiscretization>,
    pub alpha: f64,
    pub bound_m: f64,
    /// Space weight of the time-derivative part of the trial norm:
    /// `M_h D_h⁻¹ M_h`, or `M_h M_h` when the method avoids the stiffness inverse.
    pub dual_weight: SpaceFactor,
}

struct TimeBlocks {
    derivative: Tridiagonal,
    cross: Vec<Tridiagonal>,
    mass: Vec<Vec<Tridiagonal>>,
    /// `[q]`
    e: Vec<Vec<f64>>,
    /// `[p][q]`
    d: Vec<Vec<Vec<f64>>>,
}

fn check_dims(
    problem: &SeparatedParabolicProblem,
    space: &SpaceDiscretization,
    time: &TimeDiscretization,
) -> Result<()> {
    let p = problem.operators.len();
    let q = problem.sources.len();
    if space.operators.len() != p || time.weighted_derivative.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "problem has {p} operator terms, discretizations have {} and {}",
            space.operators.len(),
            time.weighted_derivative.len()
        )));
    }
    if space.loads.len() != q || time.vectors.e.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "problem has {q} source terms, discretizations have {} and {}",
            space.loads.len(),
            time.vectors.e.len()
        )));
    }
    Ok(())
}

fn build(
    method: Method,
    problem: &SeparatedParabolicProblem,
    space: Arc<SpaceDiscretization>,
    time: Arc<TimeDiscretization>,
    blocks: TimeBlocks,
) -> Result<MinResSystem> {
    problem.validate()?;
    check_dims(problem, &space, &time)?;
    let middle = match method {
        Method::Unpreconditioned => Middle::Identity,
        _ => Middle::Solve(space.stiffness.clone()),
    };
    let (ns, nt) = (space.n_dofs(), time.n_dofs());
    let mass = space.mass.clone();
    let alpha = problem.alpha;
    let mut op = KroneckerSumOperator::new(ns, nt);

    let dual_weight = SpaceFactor::composite(mass.clone(), middle.clone(), mass.clone());
    op.push(dual_weight.clone(), blocks.derivative, 1.0, TermKind::Pde);
    for (a, cross) in space.operators.iter().zip(&blocks.cross) {
        op.push(
            SpaceFactor::composite(a.clone(), middle.clone(), mass.clone()),
            cross.clone(),
            1.0,
            TermKind::Pde,
        );
        op.push(
            SpaceFactor::composite(mass.clone(), middle.clone(), a.clone()),
            cross.transpose(),
            1.0,
            TermKind::Pde,
        );
    }
    for (a, row) in space.operators.iter().zip(&blocks.mass) {
        for (b, t) in space.operators.iter().zip(row) {
            op.push(
                SpaceFactor::composite(a.clone(), middle.clone(), b.clone()),
                t.clone(),
                1.0,
                TermKind::Pde,
            );
        }
    }
    op.push(
        SpaceFactor::sparse(mass.clone()),
        time.initial_trace.clone(),
        alpha,
        TermKind::InitialCondition,
    );

    let apply_middle = |x: &[f64]| -> Vec<f64> {
        match &middle {
            Middle::Identity => x.to_vec(),
            Middle::Solve(k) => k.solve(x),
        }
    };
    let mut rhs = SeparatedVector::zeros(ns, nt);
    let mut rhs_kinds = Vec::new();
    for (f, e) in space.loads.iter().zip(&blocks.e) {
        rhs.push(mass.mul_vec(&apply_middle(f)), e.clone());
        rhs_kinds.push(TermKind::Pde);
    }
    for (a, dp) in space.operators.iter().zip(&blocks.d) {
        for (f, d) in space.loads.iter().zip(dp) {
            rhs.push(a.mul_vec_transpose(&apply_middle(f)), d.clone());
            rhs_kinds.push(TermKind::Pde);
        }
    }
    rhs.push(
        space.initial.iter().map(|v| alpha * v).collect(),
        time.vectors.initial.clone(),
    );
    rhs_kinds.push(TermKind::InitialCondition);

    Ok(MinResSystem {
        method,
        operator: op,
        rhs,
        rhs_kinds,
        space,
        time,
        alpha,
        bound_m: problem.bound_m,
        dual_weight,
    })
}

fn galerkin_blocks(time: &TimeDiscretization) -> TimeBlocks {
    TimeBlocks {
        derivative: time.stiffness.clone(),
        cross: time.weighted_derivative.clone(),
        mass: time.weighted_mass.clone(),
        e: time.vectors.e.clone(),
        d: time.vectors.d.clone(),
    }
}

/// Method 1: residual measured in `L²(I; H⁻¹)` through `D_h⁻¹`.
pub fn assemble_method1(
    problem: &SeparatedParabolicProblem,
    space: Arc<SpaceDiscretization>,
    time: Arc<TimeDiscretization>,
) -> Result<MinResSystem> {
    let blocks = galerkin_blocks(&time);
    build(Method::Preconditioned, problem, space, time, blocks)
}

/// Method 2: fully discrete Petrov–Galerkin residual with P0 test functions.
pub fn assemble_method2(
    problem: &SeparatedParabolicProblem,
    space: Arc<SpaceDiscretization>,
    time: Arc<TimeDiscretization>,
) -> Result<MinResSystem> {
    let pg = &time.pg;
    let p = pg.mass_pg.len();
    let dp = &time.vectors.d_p;
    let blocks = TimeBlocks {
        derivative: pg.derivative_block(),
        cross: (0..p).map(|i| pg.cross_block(i)).collect(),
        mass: (0..p)
            .map(|i| (0..p).map(|j| pg.mass_block(i, j)).collect())
            .collect(),
        e: dp
            .iter()
            .map(|d| pg.deriv_pg.transpose_scaled_apply(&pg.mass_p, d))
            .collect(),
        d: pg
            .mass_pg
            .iter()
            .map(|m| dp.iter().map(|d| m.transpose_scaled_apply(&pg.mass_p, d)).collect())
            .collect(),
    };
    build(Method::PetrovGalerkin, problem, space, time, blocks)
}

/// Method 3: residual measured in `L²(I; L²)`-like Euclidean weighting, with the
/// identity in place of `D_h⁻¹`.
pub fn assemble_method3(
    problem: &SeparatedParabolicProblem,
    space: Arc<SpaceDiscretization>,
    time: Arc<TimeDiscretization>,
) -> Result<MinResSystem> {
    let blocks = galerkin_blocks(&time);
    build(Method::Unpreconditioned, problem, space, time, blocks)
}

pub fn assemble(
    method: Method,
    problem: &SeparatedParabolicProblem,
    space: Arc<SpaceDiscretization>,
    time: Arc<TimeDiscretization>,
) -> Result<MinResSystem> {
    match method {
        Method::Preconditioned => assemble_method1(problem, space, time),
        Method::PetrovGalerkin => assemble_method2(problem, space, time),
        Method::Unpreconditioned => assemble_method3(problem, space, time),
    }
}

/// Space problem `(Σ_r c_r S_r) v = rhs` for a fixed time factor.
#[derive(Clone, Debug)]
pub struct SpaceSubproblem {
    /// `c_r = w_r sᵀ T_r s`, one per operator term.
    pub coefficients: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Time problem `matrix · s = rhs` for a fixed space factor.
#[derive(Clone, Debug)]
pub struct TimeSubproblem {
    /// `a_r = w_r vᵀ S_r v`, one per operator term.
    pub coefficients: Vec<f64>,
    pub matrix: Tridiagonal,
    pub rhs: Vec<f64>,
}

impl MinResSystem {
    pub fn n_space(&self) -> usize {
        self.operator.n_space
    }

    pub fn n_time(&self) -> usize {
        self.operator.n_time
    }

    pub fn n_terms(&self) -> usize {
        self.operator.terms.len()
    }

    /// Applies `Σ_r c_r S_r` to `v`.
    pub fn apply_space(&self, coefficients: &[f64], v: &[f64], out: &mut [f64]) {
        let terms: Vec<(f64, &SpaceFactor)> = coefficients
            .iter()
            .zip(&self.operator.terms)
            .map(|(&c, t)| (c, &t.space))
            .collect();
        apply_space_combination(&terms, v, out);
    }

    /// `Σ_r c_r S_r` as an explicit sparse matrix, when no inverse is involved.
    pub fn space_matrix(&self, coefficients: &[f64]) -> Option<CsrMatrix> {
        let explicit: Option<Vec<CsrMatrix>> =
            self.operator.terms.iter().map(|t| t.space.to_sparse()).collect();
        let explicit = explicit?;
        let terms: Vec<(f64, &CsrMatrix)> = coefficients.iter().copied().zip(&explicit).collect();
        Some(CsrMatrix::linear_combination(&terms))
    }

    /// `w_r vᵀ S_r v` for every term, sharing inverse applications.
    pub fn space_quadratic_forms(&self, v: &[f64]) -> Vec<f64> {
        let mut left_cache: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut solved_cache: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        self.operator
            .terms
            .iter()
            .map(|t| {
                let val = match &t.space {
                    SpaceFactor::Sparse { matrix, .. } => matrix.bilinear(v, v),
                    SpaceFactor::Composite {
                        left,
                        middle,
                        right,
                    } => {
                        let lkey = Arc::as_ptr(left) as usize;
                        let lv = left_cache
                            .entry(lkey)
                            .or_insert_with(|| left.mul_vec(v));
                        let mkey = match middle {
                            Middle::Identity => 0,
                            Middle::Solve(k) => Arc::as_ptr(k) as usize,
                        };
                        let rkey = Arc::as_ptr(right) as usize;
                        let solved = solved_cache.entry((rkey, mkey)).or_insert_with(|| {
                            let rv = right.mul_vec(v);
                            match middle {
                                Middle::Identity => rv,
                                Middle::Solve(k) => k.solve(&rv),
                            }
                        });
                        dot(lv, solved)
                    }
                };
                t.weight * val
            })
            .collect()
    }

    /// `w_r sᵀ T_r s` for every term.
    pub fn time_quadratic_forms(&self, s: &[f64]) -> Vec<f64> {
        self.operator
            .terms
            .iter()
            .map(|t| t.weight * t.time.bilinear(s, s))
            .collect()
    }

    /// `Σ_r a_r T_r`, symmetrized.
    pub fn time_matrix(&self, coefficients: &[f64]) -> Tridiagonal {
        let mut m = Tridiagonal::zeros(self.n_time());
        for (&a, t) in coefficients.iter().zip(&self.operator.terms) {
            m.add_scaled(a, &t.time);
        }
        m.symmetrized()
    }
}

/// The image `B u` of a low-rank iterate, kept column by column together with
/// `g`, so that subproblem right-hand sides and residual norms can be formed
/// without touching the full space-time array.
///
/// The residual `B u - g` is represented by the columns `-g_j` followed by one
/// block `(w_r S_r v_n, T_r s_n)` per term `r` and accepted factor pair `n`.
#[derive(Clone, Debug)]
pub struct OperatorImage<'a> {
    sys: &'a MinResSystem,
    space: Vec<Vec<f64>>,
    time: Vec<Vec<f64>>,
    kinds: Vec<TermKind>,
    /// Lower-triangular Gram matrices of the columns.
    gram_space: Vec<Vec<f64>>,
    gram_time: Vec<Vec<f64>>,
    n_rhs: usize,
    g_norm_sq: f64,
}

/// Relative Euclidean residual `‖B u - g‖ / ‖g‖` and its split into the
/// differential-operator part and the initial-condition part (both relative
/// to `‖g‖`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub total: f64,
    pub pde: f64,
    pub ic: f64,
}

impl<'a> OperatorImage<'a> {
    pub fn new(sys: &'a MinResSystem) -> Self {
        let mut img = OperatorImage {
            sys,
            space: Vec::new(),
            time: Vec::new(),
            kinds: Vec::new(),
            gram_space: Vec::new(),
            gram_time: Vec::new(),
            n_rhs: 0,
            g_norm_sq: 0.0,
        };
        for ((a, b), &k) in sys.rhs.columns().zip(&sys.rhs_kinds) {
            img.push_column(a.iter().map(|v| -v).collect(), b.to_vec(), k);
        }
        img.n_rhs = sys.rhs.rank();
        img.g_norm_sq = img.subset_norm_sq(|_| true);
        img
    }

    /// Image of a whole separated vector.
    pub fn of(sys: &'a MinResSystem, u: &SeparatedVector) -> Self {
        let mut img = OperatorImage::new(sys);
        for (v, s) in u.columns() {
            img.push(v, s);
        }
        img
    }

    pub fn system(&self) -> &MinResSystem {
        self.sys
    }

    pub fn rhs_norm(&self) -> f64 {
        self.g_norm_sq.max(0.0).sqrt()
    }

    /// Number of accepted factor pairs.
    pub fn rank(&self) -> usize {
        (self.space.len() - self.n_rhs) / self.sys.n_terms().max(1)
    }

    fn push_column(&mut self, a: Vec<f64>, b: Vec<f64>, kind: TermKind) {
        let gs: Vec<f64> = self.space.iter().map(|x| dot(x, &a)).chain([dot(&a, &a)]).collect();
        let gt: Vec<f64> = self.time.iter().map(|x| dot(x, &b)).chain([dot(&b, &b)]).collect();
        self.gram_space.push(gs);
        self.gram_time.push(gt);
        self.space.push(a);
        self.time.push(b);
        self.kinds.push(kind);
    }

    /// Adds `B (v ⊗ s)`.
    pub fn push(&mut self, v: &[f64], s: &[f64]) {
        let sys = self.sys;
        for term in &sys.operator.terms {
            let mut sv = term.space.apply(v);
            sv.iter_mut().for_each(|x| *x *= term.weight);
            self.push_column(sv, term.time.mul_vec(s), term.kind);
        }
    }

    fn subset_norm_sq(&self, keep: impl Fn(TermKind) -> bool) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.space.len() {
            if !keep(self.kinds[i]) {
                continue;
            }
            for j in 0..=i {
                if !keep(self.kinds[j]) {
                    continue;
                }
                let v = self.gram_space[i][j] * self.gram_time[i][j];
                acc += if i == j { v } else { 2.0 * v };
            }
        }
        acc
    }

    pub fn residual(&self) -> Result<ResidualNorms> {
        if !(self.g_norm_sq > 0.0) {
            return Err(Error::Degenerate("right-hand side is zero".into()));
        }
        let g = self.g_norm_sq.sqrt();
        let rel = |v: f64| v.max(0.0).sqrt() / g;
        Ok(ResidualNorms {
            total: rel(self.subset_norm_sq(|_| true)),
            pde: rel(self.subset_norm_sq(|k| k == TermKind::Pde)),
            ic: rel(self.subset_norm_sq(|k| k == TermKind::InitialCondition)),
        })
    }

    /// `(I ⊗ s)ᵀ (g - B u)` is the right-hand side of the space problem.
    pub fn space_subproblem(&self, s: &[f64]) -> SpaceSubproblem {
        let mut rhs = vec![0.0; self.sys.n_space()];
        for (a, b) in self.space.iter().zip(&self.time) {
            let c = dot(b, s);
            if c != 0.0 {
                rhs.iter_mut().zip(a).for_each(|(r, x)| *r -= c * x);
            }
        }
        SpaceSubproblem {
            coefficients: self.sys.time_quadratic_forms(s),
            rhs,
        }
    }

    /// `(v ⊗ I)ᵀ (g - B u)` is the right-hand side of the time problem.
    pub fn time_subproblem(&self, v: &[f64]) -> TimeSubproblem {
        let coefficients = self.sys.space_quadratic_forms(v);
        let matrix = self.sys.time_matrix(&coefficients);
        TimeSubproblem {
            coefficients,
            matrix,
            rhs: self.time_rhs(v),
        }
    }

    pub fn time_rhs(&self, v: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.sys.n_time()];
        for (a, b) in self.space.iter().zip(&self.time) {
            let c = dot(a, v);
            if c != 0.0 {
                rhs.iter_mut().zip(b).for_each(|(r, x)| *r -= c * x);
            }
        }
        rhs
    }
}

/// Space subproblem for a fixed `s` against the iterate `u_prev`.
pub fn reduce_to_space(sys: &MinResSystem, u_prev: &SeparatedVector, s: &[f64]) -> Result<SpaceSubproblem> {
    if s.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroFactor("time factor"));
    }
    Ok(OperatorImage::of(sys, u_prev).space_subproblem(s))
}

/// Time subproblem for a fixed `v` against the iterate `u_prev`.
pub fn reduce_to_time(sys: &MinResSystem, u_prev: &SeparatedVector, v: &[f64]) -> Result<TimeSubproblem> {
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroFactor("space factor"));
    }
    Ok(OperatorImage::of(sys, u_prev).time_subproblem(v))
}

/// Relative Euclidean residual of `u` in `sys`, evaluated through QR-compressed
/// factors so that it resolves residuals down to round-off.
pub fn residual_l2(sys: &MinResSystem, u: &SeparatedVector) -> Result<ResidualNorms> {
    let g = frobenius_norm(&sys.rhs);
    if !(g > 0.0) {
        return Err(Error::Degenerate("right-hand side is zero".into()));
    }
    let part = |keep: &dyn Fn(TermKind) -> bool| -> Result<f64> {
        let mut r = sys.operator.apply_filtered(u, |t| keep(t.kind))?;
        for (col, kind) in sys.rhs.columns().zip(&sys.rhs_kinds) {
            if keep(*kind) {
                r.push(col.0.iter().map(|x| -x).collect(), col.1.to_vec());
            }
        }
        Ok(frobenius_norm(&r) / g)
    };
    Ok(ResidualNorms {
        total: part(&|_| true)?,
        pde: part(&|k| k == TermKind::Pde)?,
        ic: part(&|k| k == TermKind::InitialCondition)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::CaseName;
    use crate::space::QuadMesh;
    use crate::time::{assemble_p1_matrices, TimeGrid};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(case: CaseName, method: Method, level: u32, time_level: u32) -> MinResSystem {
        let problem = case.problem();
        let space = Arc::new(SpaceDiscretization::assemble(&problem, QuadMesh::new(level).unwrap()).unwrap());
        let grid = TimeGrid::dyadic(time_level, problem.horizon).unwrap();
        let time = Arc::new(TimeDiscretization::assemble(&problem, grid, false));
        assemble(method, &problem, space, time).unwrap()
    }

    fn dense_b(sys: &MinResSystem) -> DMatrix<f64> {
        let n = sys.n_space() * sys.n_time();
        DMatrix::from_row_slice(n, n, &sys.operator.to_dense())
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_separated(rng: &mut ChaCha8Rng, ns: usize, nt: usize, rank: usize) -> SeparatedVector {
        let mut u = SeparatedVector::zeros(ns, nt);
        for _ in 0..rank {
            u.push(random_vec(rng, ns), random_vec(rng, nt));
        }
        u
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn all_systems(level: u32, time_level: u32) -> Vec<MinResSystem> {
        let mut out = Vec::new();
        for case in CaseName::ALL {
            for method in Method::ALL {
                out.push(system(case, method, level, time_level));
            }
        }
        out
    }

    #[test]
    fn heat_method1_on_one_node_matches_hand_assembly() {
        let sys = system(CaseName::HeatManufactured, Method::Preconditioned, 1, 1);
        assert_eq!(sys.operator.terms.len(), 5);
        let (dk, mk, ok, ek) = assemble_p1_matrices(&TimeGrid::new(2, 1.0).unwrap());
        let (dk, mk, ok, ek) = (dk.to_dense(), mk.to_dense(), ok.to_dense(), ek.to_dense());
        let b = sys.operator.to_dense();
        for l in 0..3 {
            for m in 0..3 {
                let sym_e = ek[l * 3 + m] + ek[m * 3 + l];
                let want = (1.0 / 9.0) * (3.0 / 8.0) * (1.0 / 9.0) * dk[l * 3 + m]
                    + (1.0 / 9.0) * sym_e
                    + (8.0 / 3.0) * mk[l * 3 + m]
                    + (1.0 / 9.0) * ok[l * 3 + m];
                assert!((b[l * 3 + m] - want).abs() < 1e-14, "({l},{m})");
            }
        }
        let bd = dense_b(&sys);
        assert!((&bd - bd.transpose()).amax() < 1e-15);
        assert!(bd.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn heat_method3_on_one_node_matches_hand_assembly() {
        let sys = system(CaseName::HeatManufactured, Method::Unpreconditioned, 1, 1);
        let (dk, mk, ok, ek) = assemble_p1_matrices(&TimeGrid::new(2, 1.0).unwrap());
        let (dk, mk, ok, ek) = (dk.to_dense(), mk.to_dense(), ok.to_dense(), ek.to_dense());
        let b = sys.operator.to_dense();
        for l in 0..3 {
            for m in 0..3 {
                let sym_e = ek[l * 3 + m] + ek[m * 3 + l];
                let want = (1.0 / 81.0) * dk[l * 3 + m]
                    + (8.0 / 27.0) * sym_e
                    + (64.0 / 9.0) * mk[l * 3 + m]
                    + (1.0 / 9.0) * ok[l * 3 + m];
                assert!((b[l * 3 + m] - want).abs() < 1e-13, "({l},{m})");
            }
        }
        assert!(dense_b(&sys).symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn case2_rhs_on_one_node_matches_formula() {
        for method in [Method::Preconditioned, Method::Unpreconditioned] {
            let sys = system(CaseName::TimeDiffusion, method, 1, 1);
            let tv = &sys.time.vectors;
            let f = sys.space.loads[0][0];
            assert!((f - 0.25).abs() < 1e-14);
            let (m, d) = (1.0 / 9.0, 8.0 / 3.0);
            let (first, second) = match method {
                Method::Unpreconditioned => (m * f, d * f),
                _ => (m / d * f, f),
            };
            let want: Vec<f64> = (0..3)
                .map(|l| first * tv.e[0][l] + second * tv.d[0][0][l])
                .collect();
            assert!(max_diff(&sys.rhs.to_dense(), &want) < 1e-15);
            assert_eq!(sys.rhs.rank(), 1 + 1 + 1);
        }
    }

    #[test]
    fn rhs_rank_counts_every_source_pairing() {
        for case in CaseName::ALL {
            let p = case.problem();
            let sys = system(case, Method::Preconditioned, 2, 2);
            let (pp, q) = (p.operators.len(), p.sources.len());
            assert_eq!(sys.rhs.rank(), q + pp * q + 1);
            assert_eq!(sys.rhs_kinds.len(), sys.rhs.rank());
            assert!(sys.operator.terms.len() <= 2 + 2 * pp + pp * pp);
        }
    }

    #[test]
    fn every_operator_is_symmetric_positive_definite() {
        for sys in all_systems(2, 2) {
            let b = dense_b(&sys);
            let scale = b.amax();
            assert!((&b - b.transpose()).amax() <= 1e-12 * scale, "method {}", sys.method);
            let eig = b.symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0, "method {}: smallest eigenvalue {}", sys.method, eig.min());
        }
    }

    #[test]
    fn crank_nicolson_energy_is_below_galerkin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in CaseName::ALL {
            for (l, k) in [(1, 1), (2, 3)] {
                let b1 = dense_b(&system(case, Method::Preconditioned, l, k));
                let b2 = dense_b(&system(case, Method::PetrovGalerkin, l, k));
                let gap = &b1 - &b2;
                let n = b1.nrows();
                for _ in 0..100 {
                    let x = DVector::from_vec(random_vec(&mut rng, n));
                    let q = x.dot(&(&gap * &x));
                    assert!(q >= -1e-12 * x.norm_squared() * b1.amax(), "{case}: {q}");
                }
            }
        }
    }

    #[test]
    fn petrov_galerkin_differs_only_in_mass_blocks() {
        for case in CaseName::ALL {
            let s1 = system(case, Method::Preconditioned, 2, 3);
            let s2 = system(case, Method::PetrovGalerkin, 2, 3);
            let pp = case.problem().operators.len();
            assert_eq!(s1.operator.terms.len(), s2.operator.terms.len());
            let differing = s1
                .operator
                .terms
                .iter()
                .zip(&s2.operator.terms)
                .filter(|(a, b)| max_diff(&a.time.to_dense(), &b.time.to_dense()) > 1e-12)
                .count();
            let heat_cancelled = 2 + 2 * pp + pp * pp - s1.operator.terms.len();
            assert_eq!(differing + heat_cancelled.min(pp * pp), pp * pp, "{case}");
        }
    }

    #[test]
    fn space_reduction_matches_dense_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sys in all_systems(2, 2) {
            let (ns, nt) = (sys.n_space(), sys.n_time());
            let b = dense_b(&sys);
            let g = DVector::from_vec(sys.rhs.to_dense());
            let u = random_separated(&mut rng, ns, nt, 2);
            let s = random_vec(&mut rng, nt);
            let mut p = DMatrix::zeros(ns * nt, ns);
            for i in 0..ns {
                for l in 0..nt {
                    p[(i * nt + l, i)] = s[l];
                }
            }
            let want_k = p.transpose() * &b * &p;
            let want_rhs = p.transpose() * (&g - &b * DVector::from_vec(u.to_dense()));
            let sp = reduce_to_space(&sys, &u, &s).unwrap();
            let scale = want_k.amax();
            for j in 0..ns {
                let mut e = vec![0.0; ns];
                e[j] = 1.0;
                let mut col = vec![0.0; ns];
                sys.apply_space(&sp.coefficients, &e, &mut col);
                for i in 0..ns {
                    assert!((col[i] - want_k[(i, j)]).abs() <= 1e-12 * scale, "method {}", sys.method);
                }
            }
            assert!(max_diff(&sp.rhs, want_rhs.as_slice()) <= 1e-12 * want_rhs.amax().max(1.0));
            if let Some(k) = sys.space_matrix(&sp.coefficients) {
                assert!(max_diff(&k.to_dense(), DMatrix::from(want_k.transpose()).as_slice()) <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn time_reduction_matches_dense_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for sys in all_systems(2, 2) {
            let (ns, nt) = (sys.n_space(), sys.n_time());
            let b = dense_b(&sys);
            let g = DVector::from_vec(sys.rhs.to_dense());
            let u = random_separated(&mut rng, ns, nt, 2);
            let v = random_vec(&mut rng, ns);
            let mut p = DMatrix::zeros(ns * nt, nt);
            for i in 0..ns {
                for l in 0..nt {
                    p[(i * nt + l, l)] = v[i];
                }
            }
            let want_t = p.transpose() * &b * &p;
            let want_rhs = p.transpose() * (&g - &b * DVector::from_vec(u.to_dense()));
            let tp = reduce_to_time(&sys, &u, &v).unwrap();
            let t = tp.matrix.to_dense();
            let scale = want_t.amax();
            for l in 0..nt {
                for m in 0..nt {
                    assert!((t[l * nt + m] - want_t[(l, m)]).abs() <= 1e-12 * scale, "method {}", sys.method);
                }
            }
            assert!(max_diff(&tp.rhs, want_rhs.as_slice()) <= 1e-12 * want_rhs.amax().max(1.0));
        }
    }

    #[test]
    fn time_coefficient_of_dual_term_on_one_node() {
        let sys = system(CaseName::HeatManufactured, Method::Preconditioned, 1, 1);
        let v = [3.0];
        let c = sys.space_quadratic_forms(&v);
        let want = (1.0 / 9.0) * (3.0 / 8.0) * (1.0 / 9.0) * 9.0;
        assert!((c[0] - want).abs() < 1e-15);
    }

    #[test]
    fn rank_one_reduction_of_a_single_term() {
        let sys = system(CaseName::HeatManufactured, Method::Preconditioned, 2, 2);
        let zero = SeparatedVector::zeros(sys.n_space(), sys.n_time());
        assert!(reduce_to_space(&sys, &zero, &vec![0.0; sys.n_time()]).is_err());
        assert!(reduce_to_time(&sys, &zero, &vec![0.0; sys.n_space()]).is_err());
    }

    #[test]
    fn residuals_against_dense_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for sys in all_systems(2, 2) {
            let (ns, nt) = (sys.n_space(), sys.n_time());
            let b = dense_b(&sys);
            let g = DVector::from_vec(sys.rhs.to_dense());
            let zero = SeparatedVector::zeros(ns, nt);
            assert!((residual_l2(&sys, &zero).unwrap().total - 1.0).abs() < 1e-14);

            let u = random_separated(&mut rng, ns, nt, 1);
            let r = residual_l2(&sys, &u).unwrap();
            let ud = DVector::from_vec(u.to_dense());
            let want = (&b * &ud - &g).norm() / g.norm();
            assert!((r.total - want).abs() <= 1e-12 * want);

            let part = |kind: TermKind| {
                let bu = sys.operator.apply_filtered(&u, |t| t.kind == kind).unwrap().to_dense();
                let mut gk = SeparatedVector::zeros(ns, nt);
                for ((a, c), k) in sys.rhs.columns().zip(&sys.rhs_kinds) {
                    if *k == kind {
                        gk.push(a.to_vec(), c.to_vec());
                    }
                }
                DVector::from_vec(bu) - DVector::from_vec(gk.to_dense())
            };
            let (pde, ic) = (part(TermKind::Pde), part(TermKind::InitialCondition));
            assert!(((&pde + &ic) - (&b * &ud - &g)).amax() <= 1e-12 * g.amax().max(b.amax()));
            assert!((r.pde - pde.norm() / g.norm()).abs() <= 1e-12 * r.pde.max(1e-300));
            assert!((r.ic - ic.norm() / g.norm()).abs() <= 1e-12 * r.ic.max(1e-300));

            let exact = b.clone().cholesky().unwrap().solve(&g);
            let mut dense_u = SeparatedVector::zeros(ns, nt);
            for i in 0..ns {
                let mut e = vec![0.0; ns];
                e[i] = 1.0;
                dense_u.push(e, (0..nt).map(|l| exact[i * nt + l]).collect());
            }
            assert!(residual_l2(&sys, &dense_u).unwrap().total <= 1e-10);
        }
    }

    #[test]
    fn zero_data_has_no_residual_norm() {
        let problem = CaseName::HeatManufactured.problem().homogeneous();
        let space = Arc::new(SpaceDiscretization::assemble(&problem, QuadMesh::new(2).unwrap()).unwrap());
        let time = Arc::new(TimeDiscretization::assemble(&problem, TimeGrid::new(4, 1.0).unwrap(), false));
        let sys = assemble_method1(&problem, space, time).unwrap();
        let u = SeparatedVector::zeros(sys.n_space(), sys.n_time());
        assert!(matches!(residual_l2(&sys, &u), Err(Error::Degenerate(_))));
    }
}
