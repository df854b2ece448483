//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use st_minres::minres::assemble;
use st_minres::{CaseName, Method, MinResSystem, QuadMesh, SeparatedVector, SpaceDiscretization, TimeDiscretization, TimeGrid};

pub fn system(case: CaseName, method: Method, nh_exp: u32, nk_exp: u32) -> MinResSystem {
    let problem = case.problem();
    let mesh = QuadMesh::new(nh_exp).expect("valid space level");
    let space = Arc::new(SpaceDiscretization::assemble(&problem, mesh).expect("space assembly"));
    let grid = TimeGrid::dyadic(nk_exp, problem.horizon).expect("valid time level");
    let time = Arc::new(TimeDiscretization::assemble(&problem, grid, false));
    assemble(method, &problem, space, time).expect("system assembly")
}

/// Deterministic rank-`rank` iterate with smooth, non-trivial factors.
pub fn iterate(sys: &MinResSystem, rank: usize) -> SeparatedVector {
    let (ns, nt) = (sys.n_space(), sys.n_time());
    let mut x = SeparatedVector::zeros(ns, nt);
    for j in 0..rank {
        let f = (j + 1) as f64;
        x.push(
            (0..ns).map(|i| (f * i as f64 * 0.37).sin()).collect(),
            (0..nt).map(|l| (f * l as f64 * 0.11).cos()).collect(),
        );
    }
    x
}
