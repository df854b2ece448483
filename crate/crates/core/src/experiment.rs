//! Experiment drivers: single solves, method comparisons, convergence sweeps
//! and timing tables, with JSON-lines and CSV output.

use std::io::{self, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::{greedy_solve_with, IterationRow, LowRankSolution, SolverConfig, Status};
use crate::kron::SeparatedVector;
use crate::minres::{self, Method, MinResSystem, OperatorImage};
use crate::norms::{fit_convergence_slope, ReferenceFrame};
use crate::problem::{CaseName, ManufacturedSolution, SeparatedParabolicProblem};
use crate::space::{QuadMesh, SpaceDiscretization};
use crate::time::{TimeDiscretization, TimeGrid};

pub const SCHEMA_VERSION: u32 = 1;
pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Space level and time level used for the headline runs of each built-in case.
pub fn full_scale_levels(case: CaseName) -> (u32, u32) {
    match case {
        CaseName::HeatManufactured | CaseName::TimeDiffusion => (6, 13),
        CaseName::AdvectionDiffusion => (5, 10),
    }
}

/// A problem together with its exact solution when one is known.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub problem: SeparatedParabolicProblem,
    pub exact: Option<ManufacturedSolution>,
}

impl ProblemSpec {
    pub fn case(case: CaseName) -> Self {
        ProblemSpec {
            problem: case.problem(),
            exact: case.exact_solution(),
        }
    }

    pub fn custom(problem: SeparatedParabolicProblem) -> Self {
        ProblemSpec { problem, exact: None }
    }

    pub fn name(&self) -> &str {
        &self.problem.name
    }
}

/// Space and time discretizations shared by every method.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub nh_exp: u32,
    pub nk_exp: u32,
    pub space: Arc<SpaceDiscretization>,
    pub time: Arc<TimeDiscretization>,
}

impl Discretization {
    pub fn new(problem: &SeparatedParabolicProblem, nh_exp: u32, nk_exp: u32, pg_refined: bool) -> Result<Self> {
        problem.validate()?;
        let mesh = QuadMesh::new(nh_exp)?;
        let grid = TimeGrid::dyadic(nk_exp, problem.horizon)?;
        Ok(Discretization {
            nh_exp,
            nk_exp,
            space: Arc::new(SpaceDiscretization::assemble(problem, mesh)?),
            time: Arc::new(TimeDiscretization::assemble(problem, grid, pg_refined)),
        })
    }

    pub fn mesh(&self) -> &QuadMesh {
        &self.space.mesh
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.time.grid
    }

    pub fn system(&self, method: Method, problem: &SeparatedParabolicProblem) -> Result<MinResSystem> {
        minres::assemble(method, problem, self.space.clone(), self.time.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l2h1: f64,
    pub h1hm1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub problem: String,
    pub method: Method,
    pub nh_exp: u32,
    pub nk_exp: u32,
    pub n_h: usize,
    pub n_k: usize,
    pub pg_refined: bool,
    pub config: SolverConfig,
    pub status: Status,
    pub rank: usize,
    pub rows: Vec<IterationRow>,
    /// Relative errors against the exact solution interpolated on the run's own grid.
    pub final_errors: Option<ErrorNorms>,
    pub space_solves: usize,
    pub assembly_time_s: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub software_version: String,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub record: RunRecord,
    pub solution: LowRankSolution,
}

#[derive(Clone, Debug)]
pub struct SolveSpec {
    pub method: Method,
    pub nh_exp: u32,
    pub nk_exp: u32,
    pub pg_refined: bool,
    pub config: SolverConfig,
}

/// Assembles, solves and, when an exact solution is known, measures the error.
pub fn run_solve(spec: &ProblemSpec, run: &SolveSpec) -> Result<SolveOutput> {
    run_solve_with(spec, run, |_| {})
}

/// [`run_solve`] with a callback invoked after every greedy iteration.
pub fn run_solve_with(
    spec: &ProblemSpec,
    run: &SolveSpec,
    mut on_iteration: impl FnMut(&IterationRow),
) -> Result<SolveOutput> {
    run.config.validate()?;
    let start = Instant::now();
    let disc = Discretization::new(&spec.problem, run.nh_exp, run.nk_exp, run.pg_refined)?;
    let sys = disc.system(run.method, &spec.problem)?;
    let assembly_time_s = start.elapsed().as_secs_f64();
    let (solution, diag) = greedy_solve_with(&sys, &run.config, |row, _| on_iteration(row))?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let final_errors = match &spec.exact {
        Some(exact) => {
            let frame = ReferenceFrame::from_exact(exact, *disc.mesh(), *disc.grid())?;
            let u = &solution.factors;
            Some(ErrorNorms {
                l2h1: frame.error_l2h1(u, disc.mesh(), disc.grid())?,
                h1hm1: frame.error_h1hm1(u, disc.mesh(), disc.grid())?,
            })
        }
        None => None,
    };
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        problem: spec.name().to_string(),
        method: run.method,
        nh_exp: run.nh_exp,
        nk_exp: run.nk_exp,
        n_h: sys.n_space(),
        n_k: sys.n_time(),
        pg_refined: run.pg_refined,
        config: run.config.clone(),
        status: diag.status,
        rank: solution.factors.rank(),
        rows: diag.rows,
        final_errors,
        space_solves: diag.space_solves,
        assembly_time_s,
        wall_time_s,
        seed: run.config.seed,
        software_version: SOFTWARE_VERSION.to_string(),
    };
    Ok(SolveOutput { record, solution })
}

/// Residual history of one method measured in the Method 1 system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    pub status: Status,
    /// `‖B₁ u^m - g₁‖ / ‖g₁‖` for the method's iterates `u^m`.
    pub residuals: Vec<f64>,
    /// The method's residual in its own system.
    pub own_residuals: Vec<f64>,
    pub cumulative_sweeps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub schema_version: u32,
    pub problem: String,
    pub nh_exp: u32,
    pub nk_exp: u32,
    pub pg_refined: bool,
    pub config: SolverConfig,
    pub curves: Vec<MethodCurve>,
    /// Iterations `m` at which the Method 1 curve lies above another method's.
    pub ordering_violations: Vec<usize>,
    pub software_version: String,
}

impl ComparisonRecord {
    pub fn curve(&self, method: Method) -> Option<&MethodCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    /// Fraction of compared iterations without an ordering violation.
    pub fn ordering_fraction(&self) -> f64 {
        let n = self.compared_iterations();
        if n == 0 {
            return 1.0;
        }
        1.0 - self.ordering_violations.len() as f64 / n as f64
    }

    fn compared_iterations(&self) -> usize {
        self.curves.iter().map(|c| c.residuals.len()).max().unwrap_or(0)
    }
}

/// Value of a residual curve at iteration `m` (1-based), frozen after the last iterate.
fn curve_at(curve: &[f64], m: usize) -> Option<f64> {
    curve.get(m - 1).or(curve.last()).copied()
}

fn ordering_violations(curves: &[MethodCurve]) -> Vec<usize> {
    let Some(first) = curves.iter().find(|c| c.method == Method::Preconditioned) else {
        return Vec::new();
    };
    let n = curves.iter().map(|c| c.residuals.len()).max().unwrap_or(0);
    (1..=n)
        .filter(|&m| {
            let Some(r1) = curve_at(&first.residuals, m) else {
                return false;
            };
            curves
                .iter()
                .filter(|c| c.method != Method::Preconditioned)
                .filter_map(|c| curve_at(&c.residuals, m))
                .any(|r| r1 > r)
        })
        .collect()
}

/// Runs each method on one shared discretization and measures every iterate
/// in the Method 1 system.
pub fn run_compare(
    spec: &ProblemSpec,
    methods: &[Method],
    nh_exp: u32,
    nk_exp: u32,
    pg_refined: bool,
    config: &SolverConfig,
) -> Result<ComparisonRecord> {
    run_compare_with(spec, methods, nh_exp, nk_exp, pg_refined, config, |_, _, _| {})
}

/// [`run_compare`] with a callback receiving every method's iteration rows and iterates.
pub fn run_compare_with(
    spec: &ProblemSpec,
    methods: &[Method],
    nh_exp: u32,
    nk_exp: u32,
    pg_refined: bool,
    config: &SolverConfig,
    mut on_iteration: impl FnMut(Method, &IterationRow, &SeparatedVector),
) -> Result<ComparisonRecord> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no method to compare".into()));
    }
    let disc = Discretization::new(&spec.problem, nh_exp, nk_exp, pg_refined)?;
    let reference = disc.system(Method::Preconditioned, &spec.problem)?;
    let mut curves = Vec::new();
    for &method in methods {
        let sys = disc.system(method, &spec.problem)?;
        let mut image = OperatorImage::new(&reference);
        let mut residuals = Vec::new();
        let mut own_residuals = Vec::new();
        let mut cumulative_sweeps = Vec::new();
        let mut failure = None;
        let (_, diag) = greedy_solve_with(&sys, config, |row, u| {
            let (v, s) = u.columns().last().expect("iterate has at least one term");
            image.push(v, s);
            match image.residual() {
                Ok(r) => residuals.push(r.total),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
            own_residuals.push(row.residual.total);
            cumulative_sweeps.push(row.cumulative_sweeps);
            on_iteration(method, row, u);
        })
        .map_err(|e| e.context(format!("method {method}")))?;
        if let Some(e) = failure {
            return Err(e.context(format!("method {method}")));
        }
        curves.push(MethodCurve {
            method,
            status: diag.status,
            residuals,
            own_residuals,
            cumulative_sweeps,
        });
    }
    Ok(ComparisonRecord {
        schema_version: SCHEMA_VERSION,
        problem: spec.name().to_string(),
        nh_exp,
        nk_exp,
        pg_refined,
        config: config.clone(),
        ordering_violations: ordering_violations(&curves),
        curves,
        software_version: SOFTWARE_VERSION.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Space,
    Time,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(SweepAxis::Space),
            "time" => Ok(SweepAxis::Time),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Nodal interpolant of the exact solution.
    ExactInterpolant,
    /// Solution computed by the same method on the reference grid.
    FinestComputed,
}

#[derive(Clone, Debug)]
pub struct ConvergenceSpec {
    pub axis: SweepAxis,
    pub levels: Vec<u32>,
    /// Level of the axis that is held fixed.
    pub fixed_exp: u32,
    /// Level of the swept axis on the reference grid.
    pub reference_exp: u32,
    pub methods: Vec<Method>,
    pub pg_refined: bool,
    pub config: SolverConfig,
}

impl ConvergenceSpec {
    fn grid_levels(&self, level: u32) -> (u32, u32) {
        match self.axis {
            SweepAxis::Space => (level, self.fixed_exp),
            SweepAxis::Time => (self.fixed_exp, level),
        }
    }

    fn validate(&self, kind: ReferenceKind) -> Result<()> {
        self.config.validate()?;
        let mut distinct = self.levels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::Degenerate(format!(
                "a convergence sweep needs at least 3 distinct levels, got {}",
                distinct.len()
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no method to sweep".into()));
        }
        let top = *distinct.last().unwrap();
        let too_fine = match kind {
            ReferenceKind::ExactInterpolant => top > self.reference_exp,
            ReferenceKind::FinestComputed => top >= self.reference_exp,
        };
        if too_fine {
            return Err(Error::NotNested(format!(
                "sweep level {top} is not coarser than reference level {}",
                self.reference_exp
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub method: Method,
    pub level: u32,
    /// Mesh size `2^-level` in space or time step `T 2^-level`.
    pub parameter: f64,
    pub l2h1: f64,
    pub h1hm1: f64,
    pub iterations: usize,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSlopes {
    pub method: Method,
    pub l2h1: f64,
    pub h1hm1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub schema_version: u32,
    pub problem: String,
    pub axis: SweepAxis,
    pub fixed_exp: u32,
    pub reference_nh_exp: u32,
    pub reference_nk_exp: u32,
    pub reference: ReferenceKind,
    pub config: SolverConfig,
    pub points: Vec<ConvergencePoint>,
    pub slopes: Vec<MethodSlopes>,
    pub software_version: String,
}

/// Solves on each level of a sweep, measures both relative errors against a
/// reference and fits convergence slopes.
pub fn run_convergence(spec: &ProblemSpec, sweep: &ConvergenceSpec) -> Result<ConvergenceRecord> {
    let kind = if spec.exact.is_some() {
        ReferenceKind::ExactInterpolant
    } else {
        ReferenceKind::FinestComputed
    };
    sweep.validate(kind)?;
    let problem = &spec.problem;
    let (ref_nh, ref_nk) = sweep.grid_levels(sweep.reference_exp);
    let ref_mesh = QuadMesh::new(ref_nh)?;
    let ref_grid = TimeGrid::dyadic(ref_nk, problem.horizon)?;
    let exact_frame = match &spec.exact {
        Some(exact) => Some(ReferenceFrame::from_exact(exact, ref_mesh, ref_grid)?),
        None => None,
    };
    let mut points = Vec::new();
    let mut slopes = Vec::new();
    for &method in &sweep.methods {
        let computed_frame;
        let frame = match &exact_frame {
            Some(f) => f,
            None => {
                let disc = Discretization::new(problem, ref_nh, ref_nk, sweep.pg_refined)?;
                let sys = disc.system(method, problem)?;
                let (u, _) = greedy_solve_with(&sys, &sweep.config, |_, _| {})
                    .map_err(|e| e.context(format!("reference solve, method {method}")))?;
                computed_frame = ReferenceFrame::new(ref_mesh, ref_grid, u.factors)?;
                &computed_frame
            }
        };
        let mut l2h1 = Vec::new();
        let mut h1hm1 = Vec::new();
        for &level in &sweep.levels {
            let (nh, nk) = sweep.grid_levels(level);
            let disc = Discretization::new(problem, nh, nk, sweep.pg_refined)?;
            let sys = disc.system(method, problem)?;
            let (u, diag) = greedy_solve_with(&sys, &sweep.config, |_, _| {})
                .map_err(|e| e.context(format!("method {method}, level {level}")))?;
            let parameter = match sweep.axis {
                SweepAxis::Space => disc.mesh().h(),
                SweepAxis::Time => disc.grid().step(),
            };
            let point = ConvergencePoint {
                method,
                level,
                parameter,
                l2h1: frame.error_l2h1(&u.factors, disc.mesh(), disc.grid())?,
                h1hm1: frame.error_h1hm1(&u.factors, disc.mesh(), disc.grid())?,
                iterations: diag.iterations(),
                status: diag.status,
            };
            l2h1.push((parameter, point.l2h1));
            h1hm1.push((parameter, point.h1hm1));
            points.push(point);
        }
        slopes.push(MethodSlopes {
            method,
            l2h1: fit_convergence_slope(&l2h1)?,
            h1hm1: fit_convergence_slope(&h1hm1)?,
        });
    }
    Ok(ConvergenceRecord {
        schema_version: SCHEMA_VERSION,
        problem: spec.name().to_string(),
        axis: sweep.axis,
        fixed_exp: sweep.fixed_exp,
        reference_nh_exp: ref_nh,
        reference_nk_exp: ref_nk,
        reference: kind,
        config: sweep.config.clone(),
        points,
        slopes,
        software_version: SOFTWARE_VERSION.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuRow {
    pub problem: String,
    pub method: Method,
    pub nh_exp: u32,
    pub nk_exp: u32,
    /// Assembly plus solve time of every repetition, in seconds.
    pub times_s: Vec<f64>,
    pub median_s: f64,
    /// Median time divided by the Method 1 median of the same problem.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuTable {
    pub schema_version: u32,
    pub repetitions: usize,
    pub base_seed: u64,
    pub rows: Vec<CpuRow>,
    pub software_version: String,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median wall time over `repetitions` random initializations (seeds
/// `base_seed, base_seed + 1, ...`) for every problem and method.
pub fn run_cputable(
    problems: &[(ProblemSpec, u32, u32)],
    methods: &[Method],
    repetitions: usize,
    config: &SolverConfig,
) -> Result<CpuTable> {
    config.validate()?;
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be positive".into()));
    }
    let mut rows = Vec::new();
    for (spec, nh_exp, nk_exp) in problems {
        let first = rows.len();
        for &method in methods {
            let mut times_s = Vec::with_capacity(repetitions);
            for rep in 0..repetitions {
                let run = SolveSpec {
                    method,
                    nh_exp: *nh_exp,
                    nk_exp: *nk_exp,
                    pg_refined: false,
                    config: SolverConfig {
                        seed: config.seed.wrapping_add(rep as u64),
                        ..config.clone()
                    },
                };
                let start = Instant::now();
                let disc = Discretization::new(&spec.problem, *nh_exp, *nk_exp, false)?;
                let sys = disc.system(method, &spec.problem)?;
                greedy_solve_with(&sys, &run.config, |_, _| {})?;
                times_s.push(start.elapsed().as_secs_f64());
            }
            rows.push(CpuRow {
                problem: spec.name().to_string(),
                method,
                nh_exp: *nh_exp,
                nk_exp: *nk_exp,
                median_s: median(&times_s).expect("at least one repetition"),
                times_s,
                ratio: None,
            });
        }
        let base = rows[first..]
            .iter()
            .find(|r| r.method == Method::Preconditioned)
            .map(|r| r.median_s);
        if let Some(base) = base {
            for r in &mut rows[first..] {
                r.ratio = Some(r.median_s / base);
            }
        }
    }
    Ok(CpuTable {
        schema_version: SCHEMA_VERSION,
        repetitions,
        base_seed: config.seed,
        rows,
        software_version: SOFTWARE_VERSION.to_string(),
    })
}

/// JSON formatter writing every float with 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct SignificantDigits;

impl serde_json::ser::Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as a single JSON line with 17 significant digits.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SignificantDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum OutLine<'a> {
    Iteration(&'a IterationRow),
    Summary(&'a RunRecord),
}

#[derive(Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum InLine {
    Iteration(#[allow(dead_code)] serde::de::IgnoredAny),
    Summary(RunRecord),
}

/// One line per iteration followed by the summary record.
pub fn run_record_json_lines(record: &RunRecord) -> Result<String> {
    let mut out = String::new();
    for row in &record.rows {
        out.push_str(&to_json_line(&OutLine::Iteration(row))?);
        out.push('\n');
    }
    out.push_str(&to_json_line(&OutLine::Summary(record))?);
    out.push('\n');
    Ok(out)
}

/// Reads the summary record back from [`run_record_json_lines`] output.
pub fn parse_run_record(text: &str) -> Result<RunRecord> {
    let mut summary = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let InLine::Summary(r) = serde_json::from_str(line)? {
            summary = Some(r);
        }
    }
    summary.ok_or_else(|| Error::InvalidConfig("no summary record found".into()))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::Other, e))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run_record_csv(record: &RunRecord) -> Result<String> {
    csv_text(
        &[
            "iteration",
            "residual",
            "residual_pde",
            "residual_ic",
            "sweeps",
            "sweep_cap_hit",
            "objective",
            "increment_xnorm",
            "solution_xnorm",
            "cumulative_sweeps",
            "cumulative_space_solves",
            "pcg_iterations",
            "als_max_increase",
            "wall_time_s",
        ],
        record.rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                num(r.residual.total),
                num(r.residual.pde),
                num(r.residual.ic),
                r.sweeps.to_string(),
                r.sweep_cap_hit.to_string(),
                num(r.objective),
                num(r.increment_xnorm),
                num(r.solution_xnorm),
                r.cumulative_sweeps.to_string(),
                r.cumulative_space_solves.to_string(),
                r.pcg_iterations.to_string(),
                num(r.als_max_increase),
                num(r.wall_time_s),
            ]
        }),
    )
}

pub fn comparison_csv(record: &ComparisonRecord) -> Result<String> {
    let n = record.compared_iterations();
    let mut header = vec!["iteration".to_string()];
    header.extend(record.curves.iter().map(|c| format!("r{}", c.method.number())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(
        &header,
        (1..=n).map(|m| {
            let mut row = vec![m.to_string()];
            row.extend(
                record
                    .curves
                    .iter()
                    .map(|c| c.residuals.get(m - 1).map_or(String::new(), |&r| num(r))),
            );
            row
        }),
    )
}

pub fn convergence_csv(record: &ConvergenceRecord) -> Result<String> {
    csv_text(
        &["method", "level", "parameter", "l2h1", "h1hm1", "iterations", "status"],
        record.points.iter().map(|p| {
            vec![
                p.method.number().to_string(),
                p.level.to_string(),
                num(p.parameter),
                num(p.l2h1),
                num(p.h1hm1),
                p.iterations.to_string(),
                format!("{:?}", p.status),
            ]
        }),
    )
}

pub fn cputable_csv(table: &CpuTable) -> Result<String> {
    csv_text(
        &["problem", "method", "nh_exp", "nk_exp", "median_s", "ratio"],
        table.rows.iter().map(|r| {
            vec![
                r.problem.clone(),
                r.method.number().to_string(),
                r.nh_exp.to_string(),
                r.nk_exp.to_string(),
                num(r.median_s),
                r.ratio.map_or(String::new(), num),
            ]
        }),
    )
}
