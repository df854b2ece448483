//! Error norms in `L²(I; H¹₀)` and `H¹(I; H⁻¹)` evaluated on a reference
//! space-time grid, and least-squares convergence slopes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kron::{
    clamped_sqrt, gram_norm_sq, FactoredSpd, Middle, SeparatedVector, SpaceFactor, SpaceWeight,
    TimeWeight,
};
use crate::problem::ManufacturedSolution;
use crate::space::{assemble_mass, assemble_stiffness, interpolate, prolong_space_to, QuadMesh};
use crate::sparse::{CsrMatrix, Tridiagonal};
use crate::time::{assemble_p1_matrices, prolong_time_to, TimeGrid};

/// Reference grid with its Gram matrices and a reference solution.
#[derive(Debug)]
pub struct ReferenceFrame {
    pub mesh: QuadMesh,
    pub grid: TimeGrid,
    mass: Arc<CsrMatrix>,
    stiffness: Arc<FactoredSpd>,
    dual: SpaceFactor,
    time_mass: Tridiagonal,
    time_stiffness: Tridiagonal,
    pub reference: SeparatedVector,
    reference_l2h1: f64,
    reference_h1hm1: f64,
}

impl ReferenceFrame {
    pub fn new(mesh: QuadMesh, grid: TimeGrid, reference: SeparatedVector) -> Result<Self> {
        if reference.n_space() != mesh.n_dofs() || reference.n_time() != grid.n_dofs() {
            return Err(Error::DimensionMismatch("reference solution does not live on the reference grid".into()));
        }
        let mass = Arc::new(assemble_mass(&mesh));
        let stiffness = FactoredSpd::new(Arc::new(assemble_stiffness(&mesh)))?;
        let dual = SpaceFactor::composite(mass.clone(), Middle::Solve(stiffness.clone()), mass.clone());
        let (time_stiffness, time_mass, _, _) = assemble_p1_matrices(&grid);
        let mut frame = ReferenceFrame {
            mesh,
            grid,
            mass,
            stiffness,
            dual,
            time_mass,
            time_stiffness,
            reference,
            reference_l2h1: 0.0,
            reference_h1hm1: 0.0,
        };
        frame.reference_l2h1 = frame.l2h1_norm(&frame.reference);
        frame.reference_h1hm1 = frame.h1hm1_norm(&frame.reference);
        Ok(frame)
    }

    /// Frame whose reference is the nodal interpolant of a separated exact solution.
    pub fn from_exact(exact: &ManufacturedSolution, mesh: QuadMesh, grid: TimeGrid) -> Result<Self> {
        let mut r = SeparatedVector::zeros(mesh.n_dofs(), grid.n_dofs());
        for (w, sigma) in &exact.terms {
            r.push(
                interpolate(&mesh, |x, y| w.eval(x, y)),
                (0..grid.n_dofs()).map(|l| sigma.eval(grid.node(l))).collect(),
            );
        }
        ReferenceFrame::new(mesh, grid, r)
    }

    /// Interpolates `u` from `(mesh, grid)` onto the reference grid.
    pub fn prolong(&self, u: &SeparatedVector, mesh: &QuadMesh, grid: &TimeGrid) -> Result<SeparatedVector> {
        if u.n_space() != mesh.n_dofs() || u.n_time() != grid.n_dofs() {
            return Err(Error::DimensionMismatch("vector does not live on the given grid".into()));
        }
        let mut out = SeparatedVector::zeros(self.mesh.n_dofs(), self.grid.n_dofs());
        for (v, s) in u.columns() {
            out.push(
                prolong_space_to(v, mesh, &self.mesh)?,
                prolong_time_to(s, grid, &self.grid)?,
            );
        }
        Ok(out)
    }

    /// `‖x‖_{L²(I; H¹₀)}` with `x` on the reference grid.
    pub fn l2h1_norm(&self, x: &SeparatedVector) -> f64 {
        clamped_sqrt(gram_norm_sq(
            x,
            SpaceWeight::Matrix(&self.stiffness.matrix),
            TimeWeight::Matrix(&self.time_mass),
        ))
    }

    /// `‖∂_t x‖_{L²(I; H⁻¹)}` with the discrete dual norm `M D⁻¹ M`.
    pub fn h1hm1_norm(&self, x: &SeparatedVector) -> f64 {
        clamped_sqrt(gram_norm_sq(
            x,
            SpaceWeight::Factor(&self.dual),
            TimeWeight::Matrix(&self.time_stiffness),
        ))
    }

    pub fn space_mass(&self) -> &CsrMatrix {
        &self.mass
    }

    fn difference(&self, u: &SeparatedVector, mesh: &QuadMesh, grid: &TimeGrid) -> Result<SeparatedVector> {
        Ok(self.prolong(u, mesh, grid)?.difference(&self.reference))
    }

    /// Relative `L²(I; H¹₀)` error of `u` living on `(mesh, grid)`.
    pub fn error_l2h1(&self, u: &SeparatedVector, mesh: &QuadMesh, grid: &TimeGrid) -> Result<f64> {
        if self.reference_l2h1 == 0.0 {
            return Err(Error::Degenerate("reference solution has zero norm".into()));
        }
        Ok(self.l2h1_norm(&self.difference(u, mesh, grid)?) / self.reference_l2h1)
    }

    /// Relative `H¹(I; H⁻¹)` error of `u` living on `(mesh, grid)`.
    pub fn error_h1hm1(&self, u: &SeparatedVector, mesh: &QuadMesh, grid: &TimeGrid) -> Result<f64> {
        if self.reference_h1hm1 == 0.0 {
            return Err(Error::Degenerate("reference solution has zero norm".into()));
        }
        Ok(self.h1hm1_norm(&self.difference(u, mesh, grid)?) / self.reference_h1hm1)
    }
}

/// Least-squares slope of `log(error)` against `log(parameter)`.
pub fn fit_convergence_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 points to fit a slope, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|&(p, e)| !(p > 0.0) || !(e > 0.0)) {
        return Err(Error::Degenerate("parameters and errors must be positive".into()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) {
        return Err(Error::Degenerate("all mesh parameters coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_case1;

    #[test]
    fn slopes_of_exact_power_laws() {
        let sq: Vec<(f64, f64)> = [0.5, 0.25, 0.125, 0.0625].iter().map(|&p| (p, 3.0 * p * p)).collect();
        assert!((fit_convergence_slope(&sq).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<(f64, f64)> = [0.1, 0.01, 0.001].iter().map(|&p| (p, 7.0 * p)).collect();
        assert!((fit_convergence_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!(fit_convergence_slope(&sq[..2]).is_err());
        assert!(fit_convergence_slope(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0)]).is_err());
    }

    #[test]
    fn reference_against_itself_and_zero() {
        let (_, exact) = make_case1();
        let mesh = QuadMesh::new(3).unwrap();
        let grid = TimeGrid::dyadic(5, 1.0).unwrap();
        let frame = ReferenceFrame::from_exact(&exact, mesh, grid).unwrap();
        let r = frame.reference.clone();
        assert!(frame.error_l2h1(&r, &mesh, &grid).unwrap() < 1e-7);
        assert!(frame.error_h1hm1(&r, &mesh, &grid).unwrap() < 1e-7);
        let zero = SeparatedVector::zeros(mesh.n_dofs(), grid.n_dofs());
        assert!((frame.error_l2h1(&zero, &mesh, &grid).unwrap() - 1.0).abs() < 1e-14);
        assert!((frame.error_h1hm1(&zero, &mesh, &grid).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coarse_vector_is_prolonged() {
        let (_, exact) = make_case1();
        let fine_mesh = QuadMesh::new(3).unwrap();
        let fine_grid = TimeGrid::dyadic(4, 1.0).unwrap();
        let frame = ReferenceFrame::from_exact(&exact, fine_mesh, fine_grid).unwrap();
        let mesh = QuadMesh::new(2).unwrap();
        let grid = TimeGrid::dyadic(2, 1.0).unwrap();
        let u = SeparatedVector::rank_one(vec![1.0; mesh.n_dofs()], vec![0.5; grid.n_dofs()]);
        let p = frame.prolong(&u, &mesh, &grid).unwrap();
        assert_eq!((p.n_space(), p.n_time()), (fine_mesh.n_dofs(), fine_grid.n_dofs()));
        assert!(frame.error_l2h1(&u, &mesh, &grid).unwrap() > 0.0);
        assert!(frame.prolong(&u, &fine_mesh, &grid).is_err());
    }
}
