//! P1 trial space and P0 Petrov–Galerkin test space on a uniform grid of
//! `I = (0, T)`.
//!
//! Nodal basis functions are ordered chronologically, so `φ_1` is the hat at
//! `t = 0` and `O_k = e_1 e_1ᵀ`.

use crate::error::{Error, Result};
use crate::problem::{SeparatedParabolicProblem, TimeFunction};
use crate::quadrature::gauss5;
use crate::sparse::Tridiagonal;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    n_elements: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n_elements: usize, horizon: f64) -> Result<Self> {
        if n_elements == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "time grid with {n_elements} elements on (0, {horizon})"
            )));
        }
        Ok(TimeGrid {
            n_elements,
            horizon,
        })
    }

    /// Grid with `2^level` elements.
    pub fn dyadic(level: u32, horizon: f64) -> Result<Self> {
        if level > 24 {
            return Err(Error::InvalidConfig(format!("time level {level} too large")));
        }
        TimeGrid::new(1 << level, horizon)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_elements as f64
    }

    /// `N_k = N + 1`.
    pub fn n_dofs(&self) -> usize {
        self.n_elements + 1
    }

    pub fn node(&self, l: usize) -> f64 {
        l as f64 * self.step()
    }

    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            n_elements: 2 * self.n_elements,
            horizon: self.horizon,
        }
    }
}

/// `(D_k, M_k, O_k, E_k)` in closed form.
pub fn assemble_p1_matrices(grid: &TimeGrid) -> (Tridiagonal, Tridiagonal, Tridiagonal, Tridiagonal) {
    let n = grid.n_dofs();
    let tau = grid.step();
    let mut d = Tridiagonal::zeros(n);
    let mut m = Tridiagonal::zeros(n);
    let mut e = Tridiagonal::zeros(n);
    for el in 0..grid.n_elements() {
        let (a, b) = (el, el + 1);
        d.diag[a] += 1.0 / tau;
        d.diag[b] += 1.0 / tau;
        d.upper[a] -= 1.0 / tau;
        d.lower[a] -= 1.0 / tau;
        m.diag[a] += tau / 3.0;
        m.diag[b] += tau / 3.0;
        m.upper[a] += tau / 6.0;
        m.lower[a] += tau / 6.0;
        // (E)_{lm} = ∫ φ_m' φ_l; both local hats integrate to τ/2.
        e.diag[a] -= 0.5;
        e.diag[b] += 0.5;
        e.upper[a] += 0.5;
        e.lower[a] -= 0.5;
    }
    let mut o = Tridiagonal::zeros(n);
    o.diag[0] = 1.0;
    (d, m, o, e)
}

/// Element-wise Gauss assembly of `∫ w φ_m φ_l` (mass type) and
/// `∫ w φ_m' φ_l` (derivative type).
fn weighted_pair(grid: &TimeGrid, w: impl Fn(f64) -> f64) -> (Tridiagonal, Tridiagonal) {
    let n = grid.n_dofs();
    let tau = grid.step();
    let mut m = Tridiagonal::zeros(n);
    let mut e = Tridiagonal::zeros(n);
    for el in 0..grid.n_elements() {
        let t0 = grid.node(el);
        let (mut maa, mut mab, mut mbb) = (0.0, 0.0, 0.0);
        let (mut ia, mut ib) = (0.0, 0.0);
        for (t, wq) in gauss5(t0, t0 + tau) {
            let s = (t - t0) / tau;
            let (pa, pb) = (1.0 - s, s);
            let wv = w(t) * wq;
            maa += wv * pa * pa;
            mab += wv * pa * pb;
            mbb += wv * pb * pb;
            ia += wv * pa;
            ib += wv * pb;
        }
        m.diag[el] += maa;
        m.diag[el + 1] += mbb;
        m.upper[el] += mab;
        m.lower[el] += mab;
        // φ_a' = -1/τ, φ_b' = 1/τ
        e.diag[el] -= ia / tau;
        e.upper[el] += ia / tau;
        e.lower[el] -= ib / tau;
        e.diag[el + 1] += ib / tau;
    }
    (m, e)
}

/// `M_k^{(p,p')}` (all pairs, row-major in `p`) and `E_k^{(p)}`.
pub fn assemble_weighted_matrices(
    grid: &TimeGrid,
    mu: &[TimeFunction],
) -> (Vec<Vec<Tridiagonal>>, Vec<Tridiagonal>) {
    let p = mu.len();
    let mut mass = vec![Vec::with_capacity(p); p];
    let mut deriv = Vec::with_capacity(p);
    for (i, mi) in mu.iter().enumerate() {
        deriv.push(weighted_pair(grid, |t| mi.eval(t)).1);
        for mj in mu {
            mass[i].push(weighted_pair(grid, |t| mi.eval(t) * mj.eval(t)).0);
        }
    }
    (mass, deriv)
}

/// Rectangular `N_P × N_k` matrix whose row `l` is supported on the two nodes
/// of the trial element containing test element `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementRows {
    pub n_cols: usize,
    /// Left node (trial element index) of each row.
    pub first_col: Vec<usize>,
    pub values: Vec<[f64; 2]>,
}

impl ElementRows {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows() * self.n_cols];
        for (l, (&c, v)) in self.first_col.iter().zip(&self.values).enumerate() {
            out[l * self.n_cols + c] = v[0];
            out[l * self.n_cols + c + 1] = v[1];
        }
        out
    }

    /// `Xᵀ diag(w)⁻¹ Y`, tridiagonal because rows of `X` and `Y` share support.
    pub fn gram_with(&self, inv_weights: &[f64], other: &ElementRows) -> Tridiagonal {
        assert_eq!(self.first_col, other.first_col, "row supports differ");
        let mut t = Tridiagonal::zeros(self.n_cols);
        for l in 0..self.n_rows() {
            let c = self.first_col[l];
            let (x, y, w) = (self.values[l], other.values[l], inv_weights[l]);
            t.diag[c] += x[0] * y[0] / w;
            t.upper[c] += x[0] * y[1] / w;
            t.lower[c] += x[1] * y[0] / w;
            t.diag[c + 1] += x[1] * y[1] / w;
        }
        t
    }

    /// `Xᵀ diag(w)⁻¹ d`
    pub fn transpose_scaled_apply(&self, inv_weights: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for l in 0..self.n_rows() {
            let c = self.first_col[l];
            let s = d[l] / inv_weights[l];
            out[c] += self.values[l][0] * s;
            out[c + 1] += self.values[l][1] * s;
        }
        out
    }
}

/// Petrov–Galerkin blocks for a P0 test space on the trial grid (Crank–Nicolson)
/// or on its uniform refinement.
#[derive(Clone, Debug)]
pub struct PgBlocks {
    pub refined: bool,
    /// Diagonal of `M_k^P`.
    pub mass_p: Vec<f64>,
    pub deriv_pg: ElementRows,
    /// `M_k^{PG,(p)}`.
    pub mass_pg: Vec<ElementRows>,
}

pub fn assemble_pg_blocks(grid: &TimeGrid, mu: &[TimeFunction], refined: bool) -> PgBlocks {
    let test = if refined { grid.refined() } else { *grid };
    let per = if refined { 2 } else { 1 };
    let tau = grid.step();
    let len = test.step();
    let n_rows = test.n_elements();
    let first_col: Vec<usize> = (0..n_rows).map(|l| l / per).collect();
    let mass_p = vec![len; n_rows];
    let deriv_pg = ElementRows {
        n_cols: grid.n_dofs(),
        first_col: first_col.clone(),
        values: vec![[-len / tau, len / tau]; n_rows],
    };
    let mass_pg = mu
        .iter()
        .map(|m| ElementRows {
            n_cols: grid.n_dofs(),
            first_col: first_col.clone(),
            values: (0..n_rows)
                .map(|l| {
                    let t_trial = grid.node(first_col[l]);
                    let t0 = test.node(l);
                    gauss5(t0, t0 + len).iter().fold([0.0, 0.0], |acc, &(t, w)| {
                        let s = (t - t_trial) / tau;
                        let mv = m.eval(t) * w;
                        [acc[0] + mv * (1.0 - s), acc[1] + mv * s]
                    })
                })
                .collect(),
        })
        .collect();
    PgBlocks {
        refined,
        mass_p,
        deriv_pg,
        mass_pg,
    }
}

impl PgBlocks {
    /// `(E^PG)ᵀ (M^P)⁻¹ E^PG`
    pub fn derivative_block(&self) -> Tridiagonal {
        self.deriv_pg.gram_with(&self.mass_p, &self.deriv_pg)
    }

    /// `(M^{PG,(p)})ᵀ (M^P)⁻¹ E^PG`
    pub fn cross_block(&self, p: usize) -> Tridiagonal {
        self.mass_pg[p].gram_with(&self.mass_p, &self.deriv_pg)
    }

    /// `(M^{PG,(p)})ᵀ (M^P)⁻¹ M^{PG,(p')}`
    pub fn mass_block(&self, p: usize, q: usize) -> Tridiagonal {
        self.mass_pg[p].gram_with(&self.mass_p, &self.mass_pg[q])
    }

    /// `d_l^P = ∫ λ φ_l^P`
    pub fn load_moments(&self, grid: &TimeGrid, lambda: &TimeFunction) -> Vec<f64> {
        let test = if self.refined { grid.refined() } else { *grid };
        (0..test.n_elements())
            .map(|l| {
                let t0 = test.node(l);
                gauss5(t0, t0 + test.step())
                    .iter()
                    .map(|&(t, w)| w * lambda.eval(t))
                    .sum()
            })
            .collect()
    }
}

/// Time vectors of one problem on one grid.
#[derive(Clone, Debug)]
pub struct TimeVectors {
    /// `e_k^{(q)} = ∫ λ_q φ_l'`
    pub e: Vec<Vec<f64>>,
    /// `d_k^{(p,q)} = ∫ μ_p λ_q φ_l`, indexed `[p][q]`.
    pub d: Vec<Vec<Vec<f64>>>,
    /// `i_k = (φ_l(0))_l`
    pub initial: Vec<f64>,
    /// `e_k^{P,(q)}`: derivatives of P0 test functions vanish inside elements,
    /// so these are identically zero.
    pub e_p: Vec<Vec<f64>>,
    /// `d_k^{P,(q)} = ∫ λ_q φ_l^P`
    pub d_p: Vec<Vec<f64>>,
}

pub fn assemble_time_vectors(
    grid: &TimeGrid,
    lambda: &[TimeFunction],
    mu: &[TimeFunction],
    pg: &PgBlocks,
) -> TimeVectors {
    let n = grid.n_dofs();
    let tau = grid.step();
    let integrate = |w: &dyn Fn(f64) -> f64| -> (Vec<f64>, Vec<f64>) {
        // Returns (∫ w φ_l', ∫ w φ_l).
        let mut de = vec![0.0; n];
        let mut dm = vec![0.0; n];
        for el in 0..grid.n_elements() {
            let t0 = grid.node(el);
            for (t, wq) in gauss5(t0, t0 + tau) {
                let s = (t - t0) / tau;
                let v = w(t) * wq;
                de[el] -= v / tau;
                de[el + 1] += v / tau;
                dm[el] += v * (1.0 - s);
                dm[el + 1] += v * s;
            }
        }
        (de, dm)
    };
    let e = lambda.iter().map(|l| integrate(&|t| l.eval(t)).0).collect();
    let d = mu
        .iter()
        .map(|m| {
            lambda
                .iter()
                .map(|l| integrate(&|t| m.eval(t) * l.eval(t)).1)
                .collect()
        })
        .collect();
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let n_p = pg.mass_p.len();
    TimeVectors {
        e,
        d,
        initial,
        e_p: vec![vec![0.0; n_p]; lambda.len()],
        d_p: lambda.iter().map(|l| pg.load_moments(grid, l)).collect(),
    }
}

/// P1 interpolation onto the grid with twice as many elements.
pub fn prolong_time(s: &[f64], coarse: &TimeGrid, fine: &TimeGrid) -> Result<Vec<f64>> {
    if fine.n_elements() != 2 * coarse.n_elements() || fine.horizon() != coarse.horizon() {
        return Err(Error::NotNested(format!(
            "time grids with {} -> {} elements",
            coarse.n_elements(),
            fine.n_elements()
        )));
    }
    if s.len() != coarse.n_dofs() {
        return Err(Error::DimensionMismatch("coarse time vector".into()));
    }
    let mut out = vec![0.0; fine.n_dofs()];
    for (l, o) in out.iter_mut().enumerate() {
        *o = if l % 2 == 0 {
            s[l / 2]
        } else {
            0.5 * (s[l / 2] + s[l / 2 + 1])
        };
    }
    Ok(out)
}

/// Repeated [`prolong_time`] up to `fine`.
pub fn prolong_time_to(s: &[f64], coarse: &TimeGrid, fine: &TimeGrid) -> Result<Vec<f64>> {
    let mut cur = s.to_vec();
    let mut grid = *coarse;
    while grid.n_elements() < fine.n_elements() {
        let next = grid.refined();
        cur = prolong_time(&cur, &grid, &next)?;
        grid = next;
    }
    if grid != *fine {
        return Err(Error::NotNested(format!(
            "time grids with {} -> {} elements",
            coarse.n_elements(),
            fine.n_elements()
        )));
    }
    Ok(cur)
}

/// Every time matrix and vector of one problem on one grid.
#[derive(Clone, Debug)]
pub struct TimeDiscretization {
    pub grid: TimeGrid,
    pub stiffness: Tridiagonal,
    pub mass: Tridiagonal,
    pub initial_trace: Tridiagonal,
    pub derivative: Tridiagonal,
    pub weighted_mass: Vec<Vec<Tridiagonal>>,
    pub weighted_derivative: Vec<Tridiagonal>,
    pub pg: PgBlocks,
    pub vectors: TimeVectors,
}

impl TimeDiscretization {
    pub fn assemble(problem: &SeparatedParabolicProblem, grid: TimeGrid, pg_refined: bool) -> Self {
        let mu: Vec<TimeFunction> = problem.operators.iter().map(|op| op.mu.clone()).collect();
        let lambda: Vec<TimeFunction> = problem.sources.iter().map(|s| s.time.clone()).collect();
        let (stiffness, mass, initial_trace, derivative) = assemble_p1_matrices(&grid);
        let (weighted_mass, weighted_derivative) = assemble_weighted_matrices(&grid, &mu);
        let pg = assemble_pg_blocks(&grid, &mu, pg_refined);
        let vectors = assemble_time_vectors(&grid, &lambda, &mu, &pg);
        TimeDiscretization {
            grid,
            stiffness,
            mass,
            initial_trace,
            derivative,
            weighted_mass,
            weighted_derivative,
            pg,
            vectors,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.n_dofs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_tri(t: &Tridiagonal, dense: &[f64], tol: f64) {
        let d = t.to_dense();
        for (a, b) in d.iter().zip(dense) {
            assert!((a - b).abs() <= tol, "{d:?} vs {dense:?}");
        }
    }

    #[test]
    fn p1_matrices_two_elements() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let (d, m, o, e) = assemble_p1_matrices(&grid);
        assert_tri(&d, &[2.0, -2.0, 0.0, -2.0, 4.0, -2.0, 0.0, -2.0, 2.0], 1e-15);
        let (a, b, c) = (1.0 / 6.0, 1.0 / 12.0, 1.0 / 3.0);
        assert_tri(&m, &[a, b, 0.0, b, c, b, 0.0, b, a], 1e-15);
        assert_tri(&e, &[-0.5, 0.5, 0.0, -0.5, 0.0, 0.5, 0.0, -0.5, 0.5], 1e-15);
        assert_tri(&o, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn integration_by_parts_identity_is_exact() {
        let grid = TimeGrid::new(7, 1.3).unwrap();
        let (_, _, o, e) = assemble_p1_matrices(&grid);
        let mut s = e.clone();
        s.add_scaled(1.0, &e.transpose());
        s.add_scaled(1.0, &o);
        let n = grid.n_dofs();
        let mut terminal = Tridiagonal::zeros(n);
        terminal.diag[n - 1] = 1.0;
        assert_eq!(s, terminal);
    }

    #[test]
    fn weighted_matrices_reduce_and_scale() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let (_, m, _, e) = assemble_p1_matrices(&grid);
        let (wm, we) = assemble_weighted_matrices(&grid, &[TimeFunction::constant(1.0)]);
        assert!(wm[0][0].to_dense().iter().zip(m.to_dense()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(we[0].to_dense().iter().zip(e.to_dense()).all(|(a, b)| (a - b).abs() < 1e-15));
        let (wm, we) = assemble_weighted_matrices(&grid, &[TimeFunction::constant(2.0)]);
        assert!(wm[0][0].to_dense().iter().zip(m.to_dense()).all(|(a, b)| (a - 4.0 * b).abs() < 1e-15));
        assert!(we[0].to_dense().iter().zip(e.to_dense()).all(|(a, b)| (a - 2.0 * b).abs() < 1e-15));
    }

    #[test]
    fn pg_blocks_same_mesh() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let pg = assemble_pg_blocks(&grid, &[TimeFunction::constant(1.0)], false);
        assert_eq!(pg.mass_p, vec![0.5, 0.5]);
        assert_eq!(pg.deriv_pg.to_dense(), vec![-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        let (d, _, _, e) = assemble_p1_matrices(&grid);
        assert_tri(&pg.derivative_block(), &d.to_dense(), 1e-14);
        assert_tri(&pg.cross_block(0), &e.to_dense(), 1e-14);
        let mb = pg.mass_block(0, 0);
        let expect: Vec<f64> = [1.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 1.0]
            .iter()
            .map(|v| v / 8.0)
            .collect();
        assert_tri(&mb, &expect, 1e-15);
    }

    #[test]
    fn time_vectors_two_elements() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let one = TimeFunction::constant(1.0);
        let pg = assemble_pg_blocks(&grid, &[one.clone()], false);
        let v = assemble_time_vectors(&grid, &[one.clone()], &[one], &pg);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&v.e[0], &[-1.0, 0.0, 1.0]));
        assert!(close(&v.d[0][0], &[0.25, 0.5, 0.25]));
        assert_eq!(v.initial, vec![1.0, 0.0, 0.0]);
        assert_eq!(v.e_p[0], vec![0.0, 0.0]);
        assert!(close(&v.d_p[0], &[0.5, 0.5]));
    }

    #[test]
    fn time_prolongation() {
        let c = TimeGrid::new(2, 1.0).unwrap();
        let f = TimeGrid::new(4, 1.0).unwrap();
        assert_eq!(prolong_time(&[0.0; 3], &c, &f).unwrap(), vec![0.0; 5]);
        assert_eq!(
            prolong_time(&[0.0, 1.0, 0.0], &c, &f).unwrap(),
            vec![0.0, 0.5, 1.0, 0.5, 0.0]
        );
        assert!(prolong_time(&[0.0; 3], &c, &TimeGrid::new(8, 1.0).unwrap()).is_err());
        let s = [0.3, -1.0, 2.0];
        let p = prolong_time(&s, &c, &f).unwrap();
        let (_, mc, _, _) = assemble_p1_matrices(&c);
        let (_, mf, _, _) = assemble_p1_matrices(&f);
        assert!((mc.bilinear(&s, &s) - mf.bilinear(&p, &p)).abs() < 1e-12);
    }
}
