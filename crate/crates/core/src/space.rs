//! Q1 finite elements on uniform square meshes of the unit square with
//! homogeneous Dirichlet conditions.
//!
//! Only interior lattice points carry unknowns. Point `(i, j)`, `1 <= i, j <= n-1`,
//! sits at `(i h, j h)` and has index `(j - 1)(n - 1) + (i - 1)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kron::FactoredSpd;
use crate::problem::SeparatedParabolicProblem;
use crate::quadrature::gauss5;
use crate::sparse::CsrMatrix;

/// Uniform mesh with `n = 2^level` cells per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadMesh {
    level: u32,
}

impl QuadMesh {
    pub fn new(level: u32) -> Result<Self> {
        if level == 0 || level > 12 {
            return Err(Error::InvalidConfig(format!(
                "space level {level} outside 1..=12"
            )));
        }
        Ok(QuadMesh { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn cells_per_side(&self) -> usize {
        1 << self.level
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells_per_side() as f64
    }

    pub fn n_dofs(&self) -> usize {
        let m = self.cells_per_side() - 1;
        m * m
    }

    /// Index of interior lattice point `(i, j)`, or `None` on the boundary.
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.cells_per_side();
        if i == 0 || j == 0 || i >= n || j >= n {
            None
        } else {
            Some((j - 1) * (n - 1) + (i - 1))
        }
    }

    pub fn node_coords(&self, dof: usize) -> (f64, f64) {
        let m = self.cells_per_side() - 1;
        let (i, j) = (dof % m + 1, dof / m + 1);
        (i as f64 * self.h(), j as f64 * self.h())
    }

    /// Global dofs of cell `(ci, cj)` in local order
    /// `(0,0), (1,0), (1,1), (0,1)`.
    fn cell_dofs(&self, ci: usize, cj: usize) -> [Option<usize>; 4] {
        [
            self.dof(ci, cj),
            self.dof(ci + 1, cj),
            self.dof(ci + 1, cj + 1),
            self.dof(ci, cj + 1),
        ]
    }

    fn assemble_cells(&self, element: impl Fn(usize, usize) -> [[f64; 4]; 4]) -> CsrMatrix {
        let n = self.cells_per_side();
        let mut trip = Vec::with_capacity(16 * n * n);
        for cj in 0..n {
            for ci in 0..n {
                let dofs = self.cell_dofs(ci, cj);
                let ke = element(ci, cj);
                for (a, da) in dofs.iter().enumerate() {
                    let Some(ra) = da else { continue };
                    for (b, db) in dofs.iter().enumerate() {
                        let Some(rb) = db else { continue };
                        if ke[a][b] != 0.0 {
                            trip.push((*ra, *rb, ke[a][b]));
                        }
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs(), self.n_dofs(), &trip)
    }
}

const LOCAL: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

/// Bilinear shape function `a` and its reference gradient at `(s, t) ∈ [0,1]²`.
fn shape(a: usize, s: f64, t: f64) -> (f64, f64, f64) {
    let (sa, ta) = LOCAL[a];
    let fs = if sa == 0.0 { 1.0 - s } else { s };
    let ft = if ta == 0.0 { 1.0 - t } else { t };
    let ds = if sa == 0.0 { -1.0 } else { 1.0 };
    let dt = if ta == 0.0 { -1.0 } else { 1.0 };
    (fs * ft, ds * ft, fs * dt)
}

/// Q1 element mass matrix on a square of side `h`.
pub fn element_mass(h: f64) -> [[f64; 4]; 4] {
    let base = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    base.map(|row| row.map(|v| v * h * h / 36.0))
}

/// Q1 element stiffness matrix on a square; independent of the side length.
pub fn element_stiffness() -> [[f64; 4]; 4] {
    let base = [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ];
    base.map(|row| row.map(|v| v / 6.0))
}

pub fn assemble_mass(mesh: &QuadMesh) -> CsrMatrix {
    let me = element_mass(mesh.h());
    mesh.assemble_cells(|_, _| me)
}

pub fn assemble_stiffness(mesh: &QuadMesh) -> CsrMatrix {
    let ke = element_stiffness();
    mesh.assemble_cells(|_, _| ke)
}

/// `C_ij = ∫ (c · ∇ψ_j) ψ_i` with 5×5 Gauss quadrature per cell.
pub fn assemble_advection(mesh: &QuadMesh, velocity: impl Fn(f64, f64) -> (f64, f64)) -> CsrMatrix {
    let h = mesh.h();
    let rule = gauss5(0.0, 1.0);
    mesh.assemble_cells(|ci, cj| {
        let mut ke = [[0.0; 4]; 4];
        for &(s, ws) in &rule {
            for &(t, wt) in &rule {
                let (x, y) = ((ci as f64 + s) * h, (cj as f64 + t) * h);
                let (cx, cy) = velocity(x, y);
                // dx = h ds: gradients scale by 1/h, area by h².
                let w = ws * wt * h;
                for (a, row) in ke.iter_mut().enumerate() {
                    let (pa, _, _) = shape(a, s, t);
                    for (b, entry) in row.iter_mut().enumerate() {
                        let (_, gs, gt) = shape(b, s, t);
                        *entry += w * (cx * gs + cy * gt) * pa;
                    }
                }
            }
        }
        ke
    })
}

/// `b_i = ∫ f ψ_i` with 5×5 Gauss quadrature per cell.
pub fn assemble_load(mesh: &QuadMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = mesh.cells_per_side();
    let h = mesh.h();
    let rule = gauss5(0.0, 1.0);
    let mut out = vec![0.0; mesh.n_dofs()];
    for cj in 0..n {
        for ci in 0..n {
            let dofs = mesh.cell_dofs(ci, cj);
            if dofs.iter().all(Option::is_none) {
                continue;
            }
            let mut local = [0.0; 4];
            for &(s, ws) in &rule {
                for &(t, wt) in &rule {
                    let fv = f((ci as f64 + s) * h, (cj as f64 + t) * h) * ws * wt * h * h;
                    for (a, l) in local.iter_mut().enumerate() {
                        *l += fv * shape(a, s, t).0;
                    }
                }
            }
            for (a, d) in dofs.iter().enumerate() {
                if let Some(d) = d {
                    out[*d] += local[a];
                }
            }
        }
    }
    out
}

/// Moment vector `b_i = ∫ u0 ψ_i` entering the right-hand side.
pub fn project_initial(mesh: &QuadMesh, u0: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assemble_load(mesh, u0)
}

/// Nodal interpolant at interior lattice points.
pub fn interpolate(mesh: &QuadMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..mesh.n_dofs())
        .map(|d| {
            let (x, y) = mesh.node_coords(d);
            f(x, y)
        })
        .collect()
}

/// Bilinear interpolation of a coarse nodal vector onto the mesh with twice
/// the resolution.
pub fn prolong_space(v: &[f64], coarse: &QuadMesh, fine: &QuadMesh) -> Result<Vec<f64>> {
    if fine.level() != coarse.level() + 1 {
        return Err(Error::NotNested(format!(
            "space levels {} -> {}",
            coarse.level(),
            fine.level()
        )));
    }
    if v.len() != coarse.n_dofs() {
        return Err(Error::DimensionMismatch("coarse space vector".into()));
    }
    let value = |i: usize, j: usize| coarse.dof(i, j).map_or(0.0, |d| v[d]);
    let m = fine.cells_per_side() - 1;
    let mut out = vec![0.0; fine.n_dofs()];
    for jf in 1..=m {
        for i_f in 1..=m {
            let (i0, i1) = (i_f / 2, i_f.div_ceil(2));
            let (j0, j1) = (jf / 2, jf.div_ceil(2));
            out[(jf - 1) * m + (i_f - 1)] =
                0.25 * (value(i0, j0) + value(i1, j0) + value(i0, j1) + value(i1, j1));
        }
    }
    Ok(out)
}

/// Repeated [`prolong_space`] from `coarse` up to `fine`.
pub fn prolong_space_to(v: &[f64], coarse: &QuadMesh, fine: &QuadMesh) -> Result<Vec<f64>> {
    if fine.level() < coarse.level() {
        return Err(Error::NotNested(format!(
            "space levels {} -> {}",
            coarse.level(),
            fine.level()
        )));
    }
    let mut cur = v.to_vec();
    for l in coarse.level()..fine.level() {
        cur = prolong_space(&cur, &QuadMesh::new(l)?, &QuadMesh::new(l + 1)?)?;
    }
    Ok(cur)
}

/// All space matrices and vectors of a problem on one mesh.
#[derive(Debug)]
pub struct SpaceDiscretization {
    pub mesh: QuadMesh,
    pub mass: Arc<CsrMatrix>,
    pub stiffness: Arc<FactoredSpd>,
    /// `A_h^{(p)}`; a pure unit-diffusion operator shares the stiffness matrix.
    pub operators: Vec<Arc<CsrMatrix>>,
    pub loads: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl SpaceDiscretization {
    pub fn assemble(problem: &SeparatedParabolicProblem, mesh: QuadMesh) -> Result<Self> {
        let mass = Arc::new(assemble_mass(&mesh));
        let stiffness_matrix = Arc::new(assemble_stiffness(&mesh));
        let stiffness = FactoredSpd::new(stiffness_matrix.clone())
            .map_err(|e| e.context("factoring the stiffness matrix"))?;
        let operators = problem
            .operators
            .iter()
            .map(|op| op.space.assemble(&mesh, &stiffness_matrix))
            .collect();
        let loads = problem
            .sources
            .iter()
            .map(|src| assemble_load(&mesh, |x, y| src.space.eval(x, y)))
            .collect();
        let initial = project_initial(&mesh, |x, y| problem.initial.eval(x, y));
        Ok(SpaceDiscretization {
            mesh,
            mass,
            stiffness,
            operators,
            loads,
            initial,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn stiffness_matrix(&self) -> &Arc<CsrMatrix> {
        &self.stiffness.matrix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_interior_node() {
        let mesh = QuadMesh::new(1).unwrap();
        assert_eq!(mesh.n_dofs(), 1);
        assert!((assemble_mass(&mesh).get(0, 0) - 1.0 / 9.0).abs() < 1e-15);
        assert!((assemble_stiffness(&mesh).get(0, 0) - 8.0 / 3.0).abs() < 1e-15);
        let load = assemble_load(&mesh, |_, _| 1.0);
        assert!((load[0] - 0.25).abs() < 1e-15);
        assert_eq!(project_initial(&mesh, |_, _| 0.0), vec![0.0]);
        assert!((project_initial(&mesh, |_, _| 1.0)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stiffness_stencil_and_factor_solve() {
        let mesh = QuadMesh::new(3).unwrap();
        let d = assemble_stiffness(&mesh);
        let c = mesh.dof(4, 4).unwrap();
        assert!((d.get(c, c) - 8.0 / 3.0).abs() < 1e-14);
        for (i, j) in [(3, 4), (5, 4), (4, 3), (4, 5), (3, 3), (5, 5), (3, 5), (5, 3)] {
            assert!((d.get(c, mesh.dof(i, j).unwrap()) + 1.0 / 3.0).abs() < 1e-14);
        }
        assert_eq!(d.asymmetry(), 0.0);
        let f = crate::sparse::spd_factorize(&assemble_stiffness(&QuadMesh::new(1).unwrap())).unwrap();
        assert!((f.solve(&[1.0])[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn mass_row_sum_interior() {
        let mesh = QuadMesh::new(3).unwrap();
        let m = assemble_mass(&mesh);
        let c = mesh.dof(3, 5).unwrap();
        let sum: f64 = m.row(c).map(|(_, v)| v).sum();
        assert!((sum - mesh.h() * mesh.h()).abs() < 1e-15);
        assert!(m.triplets().iter().all(|&(_, _, v)| v >= 0.0));
    }

    #[test]
    fn stiffness_annihilates_linear_functions_inside() {
        let mesh = QuadMesh::new(3).unwrap();
        let d = assemble_stiffness(&mesh);
        let v = interpolate(&mesh, |x, y| 2.0 * x - 0.5 * y + 1.0);
        let dv = d.mul_vec(&v);
        for i in 2..7 {
            for j in 2..7 {
                assert!(dv[mesh.dof(i, j).unwrap()].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn advection_zero_and_constant() {
        let mesh = QuadMesh::new(1).unwrap();
        assert_eq!(assemble_advection(&mesh, |_, _| (0.0, 0.0)).max_abs(), 0.0);
        assert!(assemble_advection(&mesh, |_, _| (1.0, 0.0)).max_abs() < 1e-15);
    }

    #[test]
    fn rotating_advection_is_skew() {
        let mesh = QuadMesh::new(2).unwrap();
        let c = assemble_advection(&mesh, |x, y| (2.0 * PI * (0.5 - y), 2.0 * PI * (x - 0.5)));
        let s = CsrMatrix::linear_combination(&[(1.0, &c), (1.0, &c.transpose())]);
        assert!(s.max_abs() <= 1e-13, "{}", s.max_abs());
        assert!(c.max_abs() > 1e-3);
    }

    #[test]
    fn load_of_sine_mode() {
        let mesh = QuadMesh::new(1).unwrap();
        let b = assemble_load(&mesh, |x, y| (PI * x).sin() * (PI * y).sin());
        // 4 ∫_0^{1/2}∫_0^{1/2} (2x)(2y) sin(πx) sin(πy) = 4 (2/π²)², up to
        // the error of one 5-point rule per half interval
        let exact = 4.0 * (2.0 / (PI * PI)).powi(2);
        assert!((b[0] - exact).abs() < 1e-9, "{} vs {exact}", b[0]);
        assert!((b[0] - 0.164).abs() < 1e-3);
    }

    #[test]
    fn gaussian_moments_sum_to_integral() {
        let mesh = QuadMesh::new(5).unwrap();
        let w = 0.07f64;
        let b = project_initial(&mesh, |x, y| {
            (-((x - 2.0 / 3.0).powi(2) + (y - 0.5).powi(2)) / (w * w)).exp()
        });
        let total: f64 = b.iter().sum();
        assert!((total - PI * w * w).abs() < 1e-6, "{total}");
    }

    #[test]
    fn prolongation_weights() {
        let coarse = QuadMesh::new(1).unwrap();
        let fine = QuadMesh::new(2).unwrap();
        assert_eq!(prolong_space(&[0.0], &coarse, &fine).unwrap(), vec![0.0; 9]);
        let p = prolong_space(&[1.0], &coarse, &fine).unwrap();
        assert_eq!(p[fine.dof(2, 2).unwrap()], 1.0);
        assert_eq!(p[fine.dof(1, 2).unwrap()], 0.5);
        assert_eq!(p[fine.dof(2, 3).unwrap()], 0.5);
        assert_eq!(p[fine.dof(1, 1).unwrap()], 0.25);
        assert_eq!(p[fine.dof(3, 3).unwrap()], 0.25);
        assert!(prolong_space(&[1.0], &coarse, &QuadMesh::new(3).unwrap()).is_err());
    }

    #[test]
    fn prolongation_preserves_gram_norms() {
        let coarse = QuadMesh::new(3).unwrap();
        let fine = QuadMesh::new(4).unwrap();
        let v = interpolate(&coarse, |x, y| (x * y * (1.0 - x) * (1.0 - y)).sqrt() + x * x);
        let p = prolong_space(&v, &coarse, &fine).unwrap();
        for (mc, mf) in [
            (assemble_stiffness(&coarse), assemble_stiffness(&fine)),
            (assemble_mass(&coarse), assemble_mass(&fine)),
        ] {
            let a = mc.bilinear(&v, &v);
            let b = mf.bilinear(&p, &p);
            assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
        }
    }
}
