//! Greedy rank-one construction of the low-rank solution, each rank-one
//! correction computed by alternating minimization over its space and time
//! factors.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::{clamped_sqrt, SeparatedVector};
use crate::minres::{Method, MinResSystem, OperatorImage, ResidualNorms, SpaceSubproblem};
use crate::sparse::{dot, pcg_solve, solve_sym_tridiagonal, spd_factorize, CsrMatrix};

/// How the space subproblems are solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceSolver {
    /// Conjugate gradients preconditioned by `γ D_h`, `γ = Σ_p sᵀ M_k^{(p,p)} s`.
    StiffnessPcg,
    /// Conjugate gradients with the diagonal of the assembled space matrix.
    JacobiPcg,
    /// Banded Cholesky of the assembled space matrix.
    Direct,
}

impl SpaceSolver {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Unpreconditioned => SpaceSolver::Direct,
            _ => SpaceSolver::StiffnessPcg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps_greedy: f64,
    pub eps_alt: f64,
    pub max_rank: usize,
    pub max_alt_sweeps: usize,
    pub seed: u64,
    pub cg_tol: f64,
    /// Defaults to `2 N_h` when absent.
    pub cg_max_iter: Option<usize>,
    /// Defaults to [`SpaceSolver::default_for`] the method when absent.
    pub space_solver: Option<SpaceSolver>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_greedy: 1e-5,
            eps_alt: 5e-2,
            max_rank: 200,
            max_alt_sweeps: 50,
            seed: 0,
            cg_tol: 1e-10,
            cg_max_iter: None,
            space_solver: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_greedy > 0.0 && self.eps_greedy < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_greedy must lie in (0, 1), got {}",
                self.eps_greedy
            )));
        }
        if !(self.eps_alt > 0.0 && self.eps_alt < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_alt must lie in (0, 1), got {}",
                self.eps_alt
            )));
        }
        if self.max_alt_sweeps == 0 {
            return Err(Error::InvalidConfig("max_alt_sweeps must be positive".into()));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("cg_tol must be positive, got {}", self.cg_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxRank,
    Stagnated,
}

/// Diagnostics of one greedy iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub residual: ResidualNorms,
    pub sweeps: usize,
    /// The sweep cap was reached before the stagnation test passed.
    pub sweep_cap_hit: bool,
    /// `½ uᵀ B u - gᵀ u` after this iteration.
    pub objective: f64,
    pub increment_xnorm: f64,
    pub solution_xnorm: f64,
    pub cumulative_sweeps: usize,
    pub cumulative_space_solves: usize,
    pub pcg_iterations: usize,
    /// Largest increase of the objective between consecutive alternating
    /// half-steps, relative to the objective of the updated iterate
    /// (non-positive up to solver tolerance).
    pub als_max_increase: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rows: Vec<IterationRow>,
    pub status: Status,
    pub space_solves: usize,
    pub wall_time_s: f64,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn cumulative_sweeps(&self) -> usize {
        self.rows.last().map_or(0, |r| r.cumulative_sweeps)
    }

    pub fn final_residual(&self) -> Option<ResidualNorms> {
        self.rows.last().map(|r| r.residual)
    }
}

/// `u^m = Σ_n v^n ⊗ s^n`
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankSolution {
    pub factors: SeparatedVector,
}

impl LowRankSolution {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }
}

/// Incremental Gram bookkeeping of the trial norm
/// `‖x‖²_X = (D_h ⊗ M_k) + M⁻² (W ⊗ D_k) + α⁻¹ (M_h ⊗ e_N e_Nᵀ)`,
/// where `W` is the system's dual weight.
struct XNormTracker<'a> {
    sys: &'a MinResSystem,
    /// Per column: `(D v, W v, M v)` and `(M_k s, D_k s, s_N)`.
    space: Vec<[Vec<f64>; 3]>,
    time: Vec<(Vec<f64>, Vec<f64>, f64)>,
    vs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Lower-triangular pairwise values of the three parts.
    gram: Vec<Vec<f64>>,
}

struct XImages {
    space: [Vec<f64>; 3],
    time: (Vec<f64>, Vec<f64>, f64),
}

impl<'a> XNormTracker<'a> {
    fn new(sys: &'a MinResSystem) -> Self {
        XNormTracker {
            sys,
            space: Vec::new(),
            time: Vec::new(),
            vs: Vec::new(),
            gram: Vec::new(),
        }
    }

    fn images(&self, v: &[f64], s: &[f64]) -> XImages {
        let sp = &self.sys.space;
        let t = &self.sys.time;
        XImages {
            space: [
                sp.stiffness_matrix().mul_vec(v),
                self.sys.dual_weight.apply(v),
                sp.mass.mul_vec(v),
            ],
            time: (t.mass.mul_vec(s), t.stiffness.mul_vec(s), s[s.len() - 1]),
        }
    }

    fn pair(&self, a: &XImages, v: &[f64], s: &[f64]) -> f64 {
        let m2 = self.sys.bound_m.powi(-2);
        dot(&a.space[0], v) * dot(&a.time.0, s)
            + m2 * dot(&a.space[1], v) * dot(&a.time.1, s)
            + dot(&a.space[2], v) * a.time.2 * s[s.len() - 1] / self.sys.alpha
    }

    fn push(&mut self, v: &[f64], s: &[f64]) {
        let img = self.images(v, s);
        let mut row: Vec<f64> = self
            .vs
            .iter()
            .map(|(vj, sj)| self.pair(&img, vj, sj))
            .collect();
        row.push(self.pair(&img, v, s));
        self.gram.push(row);
        self.space.push(img.space);
        self.time.push(img.time);
        self.vs.push((v.to_vec(), s.to_vec()));
    }

    fn column_norm(&self, j: usize) -> f64 {
        clamped_sqrt(self.gram[j][j])
    }

    fn total_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.gram.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                acc += if i == j { g } else { 2.0 * g };
            }
        }
        acc
    }
}

/// Discrete trial norm squared of a separated vector.
pub fn xnorm_sq(sys: &MinResSystem, u: &SeparatedVector) -> f64 {
    let mut t = XNormTracker::new(sys);
    for (v, s) in u.columns() {
        t.push(v, s);
    }
    t.total_norm_sq()
}

/// Result of one alternating minimization.
#[derive(Clone, Debug)]
pub struct AlsOutcome {
    pub v: Vec<f64>,
    pub s: Vec<f64>,
    pub sweeps: usize,
    pub sweep_cap_hit: bool,
    /// `½ (v⊗s)ᵀ B (v⊗s) - (v⊗s)ᵀ (g - B u_prev)` at the returned pair.
    pub objective: f64,
    pub max_increase: f64,
    pub pcg_iterations: usize,
    /// The rank-one correction vanished.
    pub zero: bool,
}

/// Space-side data reused across sweeps.
struct SpaceSolverState {
    kind: SpaceSolver,
    explicit: Option<Vec<CsrMatrix>>,
}

impl SpaceSolverState {
    fn new(sys: &MinResSystem, kind: SpaceSolver) -> Result<Self> {
        let explicit = match kind {
            SpaceSolver::StiffnessPcg => None,
            SpaceSolver::JacobiPcg | SpaceSolver::Direct => {
                let mats: Option<Vec<CsrMatrix>> =
                    sys.operator.terms.iter().map(|t| t.space.to_sparse()).collect();
                Some(mats.ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "{kind:?} needs explicit space matrices, unavailable for method {}",
                        sys.method
                    ))
                })?)
            }
        };
        Ok(SpaceSolverState { kind, explicit })
    }

    fn assembled(&self, coefficients: &[f64]) -> CsrMatrix {
        let mats = self.explicit.as_ref().expect("explicit space matrices");
        let terms: Vec<(f64, &CsrMatrix)> = coefficients.iter().copied().zip(mats).collect();
        CsrMatrix::linear_combination(&terms)
    }

    /// Returns the solution and the number of CG iterations.
    fn solve(
        &self,
        sys: &MinResSystem,
        sp: &SpaceSubproblem,
        s: &[f64],
        guess: Option<&[f64]>,
        cfg: &SolverConfig,
    ) -> Result<(Vec<f64>, usize)> {
        let n = sys.n_space();
        let max_iter = cfg.cg_max_iter.unwrap_or(2 * n).max(1);
        match self.kind {
            SpaceSolver::Direct => {
                let k = self.assembled(&sp.coefficients);
                let f = spd_factorize(&k).map_err(|e| e.context("space subproblem"))?;
                Ok((f.solve(&sp.rhs), 0))
            }
            SpaceSolver::JacobiPcg => {
                let k = self.assembled(&sp.coefficients);
                let diag = k.diagonal();
                let out = pcg_solve(
                    |x, y| k.mul_vec_into(x, y),
                    &sp.rhs,
                    |r, z| {
                        for i in 0..r.len() {
                            z[i] = r[i] / diag[i];
                        }
                    },
                    guess,
                    cfg.cg_tol,
                    max_iter,
                )
                .map_err(|e| e.context("space subproblem"))?;
                Ok((out.x, out.iterations))
            }
            SpaceSolver::StiffnessPcg => {
                let gamma: f64 = (0..sys.time.weighted_mass.len())
                    .map(|p| sys.time.weighted_mass[p][p].bilinear(s, s))
                    .sum();
                if !(gamma > 0.0) {
                    return Err(Error::Degenerate("preconditioner scale is not positive".into()));
                }
                let stiff = &sys.space.stiffness;
                let out = pcg_solve(
                    |x, y| sys.apply_space(&sp.coefficients, x, y),
                    &sp.rhs,
                    |r, z| {
                        z.copy_from_slice(r);
                        stiff.factor.solve_in_place(z);
                        z.iter_mut().for_each(|v| *v /= gamma);
                    },
                    guess,
                    cfg.cg_tol,
                    max_iter,
                )
                .map_err(|e| e.context("space subproblem"))?;
                Ok((out.x, out.iterations))
            }
        }
    }
}

fn random_time_factor(sys: &MinResSystem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s: Vec<f64> = (0..sys.n_time()).map(|_| rng.gen::<f64>()).collect();
    let norm = sys.time.mass.bilinear(&s, &s).sqrt();
    s.iter_mut().for_each(|x| *x /= norm);
    s
}

fn rank_one_objective(tp_matrix_form: f64, rhs_dot: f64) -> f64 {
    0.5 * tp_matrix_form - rhs_dot
}

fn als_with_image(
    sys: &MinResSystem,
    image: &OperatorImage<'_>,
    cfg: &SolverConfig,
    solver: &SpaceSolverState,
    rng: &mut ChaCha8Rng,
    base_objective: f64,
) -> Result<AlsOutcome> {
    let xn = XNormTracker::new(sys);
    let mut s = random_time_factor(sys, rng);
    let mut v: Vec<f64> = Vec::new();
    let mut prev: Option<(XImages, Vec<f64>, Vec<f64>)> = None;
    let mut objectives: Vec<f64> = Vec::new();
    let mut pcg_iterations = 0;
    let mut last_objective;
    let zero = |sweeps| AlsOutcome {
        v: vec![0.0; sys.n_space()],
        s: vec![0.0; sys.n_time()],
        sweeps,
        sweep_cap_hit: false,
        objective: 0.0,
        max_increase: 0.0,
        pcg_iterations: 0,
        zero: true,
    };
    for sweep in 1..=cfg.max_alt_sweeps {
        let sp = image.space_subproblem(&s);
        let guess = if v.is_empty() { None } else { Some(v.as_slice()) };
        let (v_new, its) = solver
            .solve(sys, &sp, &s, guess, cfg)
            .map_err(|e| e.context(format!("alternating sweep {sweep}")))?;
        pcg_iterations += its;
        if v_new.iter().all(|&x| x == 0.0) {
            return Ok(zero(sweep));
        }
        v = v_new;
        let tp = image.time_subproblem(&v);
        objectives.push(rank_one_objective(tp.matrix.bilinear(&s, &s), dot(&tp.rhs, &s)));
        let s_new = solve_sym_tridiagonal(&tp.matrix, &tp.rhs)
            .map_err(|e| e.context(format!("time subproblem, sweep {sweep}")))?;
        let scale = sys.time.mass.bilinear(&s_new, &s_new).sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            return Ok(zero(sweep));
        }
        last_objective = rank_one_objective(tp.matrix.bilinear(&s_new, &s_new), dot(&tp.rhs, &s_new));
        objectives.push(last_objective);
        s = s_new.iter().map(|x| x / scale).collect();
        v.iter_mut().for_each(|x| *x *= scale);

        let img = xn.images(&v, &s);
        let own = xn.pair(&img, &v, &s);
        let stagnated = match &prev {
            None => false,
            Some((pimg, pv, ps)) => {
                let cross = xn.pair(&img, pv, ps);
                let other = xn.pair(pimg, pv, ps);
                let diff = clamped_sqrt(own - 2.0 * cross + other);
                let denom = clamped_sqrt(own);
                denom > 0.0 && diff / denom < cfg.eps_alt
            }
        };
        if stagnated || sweep == cfg.max_alt_sweeps {
            let max_increase = objectives
                .windows(2)
                .map(|w| (w[1] - w[0]) / (base_objective + w[1]).abs().max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max);
            return Ok(AlsOutcome {
                v,
                s,
                sweeps: sweep,
                sweep_cap_hit: !stagnated,
                objective: last_objective,
                max_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
                pcg_iterations,
                zero: false,
            });
        }
        prev = Some((img, v.clone(), s.clone()));
    }
    unreachable!("sweep loop returns on its last iteration")
}

fn rng_for(cfg: &SolverConfig, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);
    rng
}

/// One rank-one correction of `u_prev` by alternating minimization, with the
/// random start of greedy iteration `iteration`.
pub fn als_rank_one(
    sys: &MinResSystem,
    u_prev: &SeparatedVector,
    cfg: &SolverConfig,
    iteration: usize,
) -> Result<AlsOutcome> {
    cfg.validate()?;
    let solver = SpaceSolverState::new(sys, cfg.space_solver.unwrap_or(SpaceSolver::default_for(sys.method)))?;
    let image = OperatorImage::of(sys, u_prev);
    let base = 0.5 * sys.operator.apply(u_prev)?.dot(u_prev) - sys.rhs.dot(u_prev);
    als_with_image(sys, &image, cfg, &solver, &mut rng_for(cfg, iteration), base)
}

/// Greedy rank-one algorithm for `B u = g`.
pub fn greedy_solve(sys: &MinResSystem, cfg: &SolverConfig) -> Result<(LowRankSolution, Diagnostics)> {
    greedy_solve_with(sys, cfg, |_, _| {})
}

/// [`greedy_solve`] with a callback invoked after every accepted iteration.
pub fn greedy_solve_with(
    sys: &MinResSystem,
    cfg: &SolverConfig,
    mut on_iteration: impl FnMut(&IterationRow, &SeparatedVector),
) -> Result<(LowRankSolution, Diagnostics)> {
    cfg.validate()?;
    let start = Instant::now();
    let solver = SpaceSolverState::new(sys, cfg.space_solver.unwrap_or(SpaceSolver::default_for(sys.method)))?;
    let mut image = OperatorImage::new(sys);
    let mut xn = XNormTracker::new(sys);
    let mut u = SeparatedVector::zeros(sys.n_space(), sys.n_time());
    let mut rows = Vec::new();
    let mut objective = 0.0;
    let mut sweeps_total = 0;
    let mut status = Status::MaxRank;
    if image.rhs_norm() == 0.0 {
        status = Status::Converged;
    }
    for m in 1..=cfg.max_rank {
        if status == Status::Converged {
            break;
        }
        let als = als_with_image(sys, &image, cfg, &solver, &mut rng_for(cfg, m), objective)
            .map_err(|e| e.context(format!("greedy iteration {m}")))?;
        sweeps_total += als.sweeps;
        if als.zero {
            status = Status::Stagnated;
            break;
        }
        objective += als.objective;
        image.push(&als.v, &als.s);
        xn.push(&als.v, &als.s);
        u.push(als.v, als.s);
        let increment = xn.column_norm(m - 1);
        let total = clamped_sqrt(xn.total_norm_sq());
        let ratio = if total < 1e-300 { 1.0 } else { increment / total };
        let row = IterationRow {
            iteration: m,
            residual: image.residual()?,
            sweeps: als.sweeps,
            sweep_cap_hit: als.sweep_cap_hit,
            objective,
            increment_xnorm: increment,
            solution_xnorm: total,
            cumulative_sweeps: sweeps_total,
            cumulative_space_solves: sweeps_total,
            pcg_iterations: als.pcg_iterations,
            als_max_increase: als.max_increase,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_iteration(&row, &u);
        rows.push(row);
        if ratio < cfg.eps_greedy {
            status = Status::Converged;
        }
    }
    Ok((
        LowRankSolution { factors: u },
        Diagnostics {
            rows,
            status,
            space_solves: sweeps_total,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}
