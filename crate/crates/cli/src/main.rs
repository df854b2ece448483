use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use st_minres::experiment::{
    self, full_scale_levels, ConvergenceSpec, ProblemSpec, SolveSpec, SweepAxis,
};
use st_minres::{CaseName, Method, SeparatedParabolicProblem, SolverConfig, Status};

#[derive(Parser, Debug)]
#[command(name = "st-minres", version, about = "Low-rank space-time minimal-residual solver for parabolic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem with one method.
    Solve(SolveArgs),
    /// Run several methods and measure every iterate in the Method 1 system.
    Compare(CompareArgs),
    /// Error sweep over space or time levels with fitted convergence slopes.
    Convergence(ConvergenceArgs),
    /// Median wall times over repeated random initializations.
    Cputable(CputableArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Built-in test case.
    #[arg(long, value_parser = parse_case, conflicts_with = "problem")]
    case: Option<CaseName>,
    /// Custom problem description in JSON.
    #[arg(long)]
    problem: Option<PathBuf>,
}

impl ProblemArgs {
    fn load(&self) -> Result<(ProblemSpec, Option<CaseName>), CliError> {
        match (&self.case, &self.problem) {
            (Some(case), _) => Ok((ProblemSpec::case(*case), Some(*case))),
            (None, Some(path)) => {
                let p = SeparatedParabolicProblem::from_json_file(path).map_err(CliError::Run)?;
                Ok((ProblemSpec::custom(p), None))
            }
            (None, None) => Err(CliError::Usage("one of --case or --problem is required".into())),
        }
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps_greedy: f64,
    #[arg(long, default_value_t = 5e-2)]
    eps_alt: f64,
    #[arg(long, default_value_t = 200)]
    max_rank: usize,
    #[arg(long, default_value_t = 50)]
    max_alt_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the twice-finer test mesh for Method 2.
    #[arg(long)]
    pg_refined: bool,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            eps_greedy: self.eps_greedy,
            eps_alt: self.eps_alt,
            max_rank: self.max_rank,
            max_alt_sweeps: self.max_alt_sweeps,
            seed: self.seed,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl OutputArgs {
    fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

#[derive(Args, Debug)]
struct LevelArgs {
    /// Mesh with 2^L cells per side.
    #[arg(long = "nh-exp", value_name = "L")]
    nh_exp: Option<u32>,
    /// Time grid with 2^K elements.
    #[arg(long = "nk-exp", value_name = "K")]
    nk_exp: Option<u32>,
}

impl LevelArgs {
    fn resolve(&self, case: Option<CaseName>) -> Result<(u32, u32), CliError> {
        let defaults = case.map(full_scale_levels);
        let nh = self.nh_exp.or(defaults.map(|d| d.0));
        let nk = self.nk_exp.or(defaults.map(|d| d.1));
        match (nh, nk) {
            (Some(nh), Some(nk)) => Ok((nh, nk)),
            _ => Err(CliError::Usage("--nh-exp and --nk-exp are required for a custom problem".into())),
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_parser = parse_method, default_value = "1")]
    method: Method,
    #[command(flatten)]
    levels: LevelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "1,2,3")]
    methods: Vec<Method>,
    #[command(flatten)]
    levels: LevelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    /// Levels of the swept axis.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Level of the swept axis on the reference grid.
    #[arg(long)]
    ref_exp: Option<u32>,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "1,2,3")]
    methods: Vec<Method>,
    #[command(flatten)]
    levels_fixed: LevelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CputableArgs {
    #[arg(long, value_parser = parse_case, value_delimiter = ',', default_value = "heat-manufactured,time-diffusion,advection-diffusion")]
    cases: Vec<CaseName>,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "1,2,3")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 21)]
    repetitions: usize,
    /// Override the space level of every case.
    #[arg(long = "nh-exp", value_name = "L")]
    nh_exp: Option<u32>,
    /// Override the time level of every case.
    #[arg(long = "nk-exp", value_name = "K")]
    nk_exp: Option<u32>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_case(s: &str) -> Result<CaseName, String> {
    s.parse().map_err(|e: st_minres::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: st_minres::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: st_minres::Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(st_minres::Error),
}

impl From<st_minres::Error> for CliError {
    fn from(e: st_minres::Error) -> Self {
        CliError::Run(e)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Run(st_minres::Error::from(e).context(format!("writing {}", path.display()))))
}

fn status_code(all_converged: bool) -> ExitCode {
    if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn solve(args: &SolveArgs) -> Result<ExitCode, CliError> {
    let (spec, case) = args.problem.load()?;
    let (nh_exp, nk_exp) = args.levels.resolve(case)?;
    let run = SolveSpec {
        method: args.method,
        nh_exp,
        nk_exp,
        pg_refined: args.solver.pg_refined,
        config: args.solver.config()?,
    };
    let out = experiment::run_solve(&spec, &run)?;
    let rec = &out.record;
    let text = match args.output.format {
        Format::Json => experiment::run_record_json_lines(rec)?,
        Format::Csv => experiment::run_record_csv(rec)?,
    };
    args.output.emit(&text)?;
    let residual = rec.rows.last().map_or(0.0, |r| r.residual.total);
    eprintln!(
        "{} method {}: {:?} after {} iterations, {} space solves, residual {residual:.3e}, {:.2} s",
        rec.problem, rec.method, rec.status, rec.rows.len(), rec.space_solves, rec.wall_time_s
    );
    if let Some(e) = rec.final_errors {
        eprintln!("relative errors: L2(H1) {:.3e}, H1(H-1) {:.3e}", e.l2h1, e.h1hm1);
    }
    Ok(status_code(rec.status == Status::Converged))
}

fn compare(args: &CompareArgs) -> Result<ExitCode, CliError> {
    let (spec, case) = args.problem.load()?;
    let (nh_exp, nk_exp) = args.levels.resolve(case)?;
    let cfg = args.solver.config()?;
    let rec = experiment::run_compare(&spec, &args.methods, nh_exp, nk_exp, args.solver.pg_refined, &cfg)?;
    let text = match args.output.format {
        Format::Json => experiment::to_json_line(&rec)? + "\n",
        Format::Csv => experiment::comparison_csv(&rec)?,
    };
    args.output.emit(&text)?;
    for c in &rec.curves {
        eprintln!(
            "method {}: {:?}, {} iterations, final r = {:.3e}",
            c.method,
            c.status,
            c.residuals.len(),
            c.residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    if !rec.ordering_violations.is_empty() {
        eprintln!(
            "warning: Method 1 residual above another method at {} of the iterations ({:?})",
            rec.ordering_violations.len(),
            rec.ordering_violations
        );
    }
    Ok(status_code(rec.curves.iter().all(|c| c.status == Status::Converged)))
}

fn default_time_levels(case: CaseName) -> Vec<u32> {
    match case {
        CaseName::HeatManufactured => (4..=11).collect(),
        CaseName::TimeDiffusion => (4..=10).collect(),
        CaseName::AdvectionDiffusion => (4..=8).collect(),
    }
}

fn convergence(args: &ConvergenceArgs) -> Result<ExitCode, CliError> {
    let (spec, case) = args.problem.load()?;
    let (nh_exp, nk_exp) = args.levels_fixed.resolve(case)?;
    let (fixed_exp, default_ref) = match args.axis {
        SweepAxis::Space => (nk_exp, nh_exp),
        SweepAxis::Time => (nh_exp, nk_exp),
    };
    let levels = match (&args.levels, args.axis, case) {
        (Some(l), _, _) => l.clone(),
        (None, SweepAxis::Space, _) => vec![2, 3, 4],
        (None, SweepAxis::Time, Some(c)) => default_time_levels(c),
        (None, SweepAxis::Time, None) => {
            return Err(CliError::Usage("--levels is required for a custom problem".into()))
        }
    };
    let sweep = ConvergenceSpec {
        axis: args.axis,
        levels,
        fixed_exp,
        reference_exp: args.ref_exp.unwrap_or(default_ref),
        methods: args.methods.clone(),
        pg_refined: args.solver.pg_refined,
        config: args.solver.config()?,
    };
    let rec = match experiment::run_convergence(&spec, &sweep) {
        Err(e @ (st_minres::Error::Degenerate(_) | st_minres::Error::NotNested(_))) => {
            return Err(CliError::Usage(e.to_string()))
        }
        other => other?,
    };
    let text = match args.output.format {
        Format::Json => experiment::to_json_line(&rec)? + "\n",
        Format::Csv => experiment::convergence_csv(&rec)?,
    };
    args.output.emit(&text)?;
    for s in &rec.slopes {
        eprintln!("method {}: slope L2(H1) {:.3}, H1(H-1) {:.3}", s.method, s.l2h1, s.h1hm1);
    }
    Ok(status_code(rec.points.iter().all(|p| p.status == Status::Converged)))
}

fn cputable(args: &CputableArgs) -> Result<ExitCode, CliError> {
    let cfg = args.solver.config()?;
    let problems: Vec<_> = args
        .cases
        .iter()
        .map(|&c| {
            let (nh, nk) = full_scale_levels(c);
            (ProblemSpec::case(c), args.nh_exp.unwrap_or(nh), args.nk_exp.unwrap_or(nk))
        })
        .collect();
    let table = experiment::run_cputable(&problems, &args.methods, args.repetitions, &cfg)
        .map_err(|e| match e {
            st_minres::Error::InvalidConfig(m) => CliError::Usage(m),
            e => CliError::Run(e),
        })?;
    let text = match args.output.format {
        Format::Json => experiment::to_json_line(&table)? + "\n",
        Format::Csv => experiment::cputable_csv(&table)?,
    };
    args.output.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Compare(a) => compare(a),
        Command::Convergence(a) => convergence(a),
        Command::Cputable(a) => cputable(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
