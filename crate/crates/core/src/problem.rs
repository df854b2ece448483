//! Parabolic problems in separated form
//!
//! ```text
//! ∂_t u + Σ_p μ_p(t) A_p u = Σ_q λ_q(t) f_q(x),   u(0) = u0
//! ```
//!
//! on the unit square with homogeneous Dirichlet conditions.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::composite_gauss_legendre;
use crate::space::{assemble_advection, QuadMesh};
use crate::sparse::CsrMatrix;

/// Scalar function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeFunction {
    Constant { value: f64 },
    /// `amplitude · sin(omega · t + phase) + offset`
    Sine {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        TimeFunction::Constant { value }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFunction::Constant { value } => value,
            TimeFunction::Sine {
                amplitude,
                omega,
                phase,
                offset,
            } => amplitude * (omega * t + phase).sin() + offset,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeFunction::Constant { .. } => 0.0,
            TimeFunction::Sine {
                amplitude,
                omega,
                phase,
                ..
            } => amplitude * omega * (omega * t + phase).cos(),
        }
    }
}

/// Scalar function on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceFunction {
    Zero,
    Constant { value: f64 },
    /// `amplitude · sin(nπx) sin(mπy)`
    SineMode { n: u32, m: u32, amplitude: f64 },
    /// `amplitude · exp(-((x-x0)² + (y-y0)²) / width²)`
    Gaussian {
        x0: f64,
        y0: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl SpaceFunction {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            SpaceFunction::Zero => 0.0,
            SpaceFunction::Constant { value } => value,
            SpaceFunction::SineMode { n, m, amplitude } => {
                amplitude * (n as f64 * PI * x).sin() * (m as f64 * PI * y).sin()
            }
            SpaceFunction::Gaussian {
                x0,
                y0,
                width,
                amplitude,
            } => amplitude * (-((x - x0).powi(2) + (y - y0).powi(2)) / (width * width)).exp(),
        }
    }

    /// `-Δ` applied pointwise; only sine modes and constants have a closed form.
    pub fn neg_laplacian(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            SpaceFunction::Zero | SpaceFunction::Constant { .. } => Some(0.0),
            SpaceFunction::SineMode { n, m, .. } => {
                Some(PI * PI * ((n * n + m * m) as f64) * self.eval(x, y))
            }
            SpaceFunction::Gaussian { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Velocity {
    Constant { vx: f64, vy: f64 },
    /// Rigid rotation `omega · (cy - y, x - cx)`.
    Rotation { omega: f64, cx: f64, cy: f64 },
}

impl Velocity {
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Velocity::Constant { vx, vy } => (vx, vy),
            Velocity::Rotation { omega, cx, cy } => (omega * (cy - y), omega * (x - cx)),
        }
    }
}

/// Spatial differential operator `A_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceOperator {
    /// `-coefficient · Δ`
    Diffusion { coefficient: f64 },
    /// `-diffusion · Δ + velocity · ∇`
    AdvectionDiffusion { diffusion: f64, velocity: Velocity },
}

impl SpaceOperator {
    /// Assembles the operator matrix. The unit Laplacian returns `stiffness`
    /// itself so that later products can cancel against its factorization.
    pub fn assemble(&self, mesh: &QuadMesh, stiffness: &Arc<CsrMatrix>) -> Arc<CsrMatrix> {
        match self {
            SpaceOperator::Diffusion { coefficient } if *coefficient == 1.0 => stiffness.clone(),
            SpaceOperator::Diffusion { coefficient } => Arc::new(stiffness.scaled(*coefficient)),
            SpaceOperator::AdvectionDiffusion {
                diffusion,
                velocity,
            } => {
                let c = assemble_advection(mesh, |x, y| velocity.eval(x, y));
                Arc::new(CsrMatrix::linear_combination(&[
                    (*diffusion, stiffness),
                    (1.0, &c),
                ]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorTerm {
    pub mu: TimeFunction,
    pub space: SpaceOperator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub time: TimeFunction,
    pub space: SpaceFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedParabolicProblem {
    pub name: String,
    pub operators: Vec<OperatorTerm>,
    #[serde(default)]
    pub sources: Vec<SourceTerm>,
    pub initial: SpaceFunction,
    #[serde(default = "one")]
    pub horizon: f64,
    /// Weight of the initial-condition residual.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Scaling of the time-derivative part of the trial norm.
    #[serde(default = "one")]
    pub bound_m: f64,
}

impl SeparatedParabolicProblem {
    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::InvalidConfig("problem needs at least one operator term".into()));
        }
        for (what, v) in [
            ("horizon", self.horizon),
            ("alpha", self.alpha),
            ("bound_m", self.bound_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{what} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Reads a custom problem from a JSON file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let problem: SeparatedParabolicProblem = serde_json::from_str(&text)?;
        problem.validate()?;
        Ok(problem)
    }

    /// Same problem with the source terms and initial datum removed.
    pub fn homogeneous(&self) -> Self {
        SeparatedParabolicProblem {
            sources: Vec::new(),
            initial: SpaceFunction::Zero,
            ..self.clone()
        }
    }
}

/// Built-in benchmark problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseName {
    HeatManufactured,
    TimeDiffusion,
    AdvectionDiffusion,
}

impl CaseName {
    pub const ALL: [CaseName; 3] = [
        CaseName::HeatManufactured,
        CaseName::TimeDiffusion,
        CaseName::AdvectionDiffusion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseName::HeatManufactured => "heat-manufactured",
            CaseName::TimeDiffusion => "time-diffusion",
            CaseName::AdvectionDiffusion => "advection-diffusion",
        }
    }

    pub fn problem(&self) -> SeparatedParabolicProblem {
        match self {
            CaseName::HeatManufactured => make_case1().0,
            CaseName::TimeDiffusion => make_case2(),
            CaseName::AdvectionDiffusion => make_case3(),
        }
    }

    pub fn exact_solution(&self) -> Option<ManufacturedSolution> {
        match self {
            CaseName::HeatManufactured => Some(make_case1().1),
            _ => None,
        }
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown case '{s}'")))
    }
}

/// Separated exact solution `u = Σ_n w_n(x) σ_n(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    pub terms: Vec<(SpaceFunction, TimeFunction)>,
}

impl ManufacturedSolution {
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.terms.iter().map(|(w, s)| w.eval(x, y) * s.eval(t)).sum()
    }

    /// `‖u‖²_{L²(I; H¹₀)}` (gradient seminorm) in closed form in space. Requires
    /// pairwise distinct sine modes so that the space Gram matrix is diagonal.
    pub fn l2h1_norm_sq(&self, horizon: f64) -> Option<f64> {
        self.diagonal_norm_sq(horizon, |n, m| PI * PI * (n * n + m * m) as f64 / 4.0, false)
    }

    /// `‖∂_t u‖²_{L²(I; H⁻¹)}` with the dual norm of the gradient seminorm.
    pub fn h1hm1_norm_sq(&self, horizon: f64) -> Option<f64> {
        self.diagonal_norm_sq(horizon, |n, m| 1.0 / (4.0 * PI * PI * (n * n + m * m) as f64), true)
    }

    fn diagonal_norm_sq(
        &self,
        horizon: f64,
        weight: impl Fn(u32, u32) -> f64,
        derivative: bool,
    ) -> Option<f64> {
        let mut modes = Vec::new();
        let mut total = 0.0;
        for (w, s) in &self.terms {
            let SpaceFunction::SineMode { n, m, amplitude } = *w else {
                return None;
            };
            if modes.contains(&(n, m)) {
                return None;
            }
            modes.push((n, m));
            let time = composite_gauss_legendre(
                |t| {
                    let v = if derivative { s.derivative(t) } else { s.eval(t) };
                    v * v
                },
                0.0,
                horizon,
                4096,
            );
            total += amplitude * amplitude * weight(n, m) * time;
        }
        Some(total)
    }
}

/// Heat equation with the exact solution
/// `u = Σ_{n=1}^{10} n⁻⁴ sin(πn³t) sin(nπx) sin(nπy)`.
pub fn make_case1() -> (SeparatedParabolicProblem, ManufacturedSolution) {
    let mut sources = Vec::with_capacity(20);
    let mut terms = Vec::with_capacity(10);
    for n in 1..=10u32 {
        let nf = n as f64;
        let omega = PI * nf.powi(3);
        let a = nf.powi(-4);
        sources.push(SourceTerm {
            time: TimeFunction::Sine {
                amplitude: omega,
                omega,
                phase: PI / 2.0,
                offset: 0.0,
            },
            space: SpaceFunction::SineMode { n, m: n, amplitude: a },
        });
        sources.push(SourceTerm {
            time: TimeFunction::Sine {
                amplitude: 1.0,
                omega,
                phase: 0.0,
                offset: 0.0,
            },
            space: SpaceFunction::SineMode {
                n,
                m: n,
                amplitude: 2.0 * PI * PI * nf * nf * a,
            },
        });
        terms.push((
            SpaceFunction::SineMode { n, m: n, amplitude: a },
            TimeFunction::Sine {
                amplitude: 1.0,
                omega,
                phase: 0.0,
                offset: 0.0,
            },
        ));
    }
    let problem = SeparatedParabolicProblem {
        name: CaseName::HeatManufactured.as_str().into(),
        operators: vec![OperatorTerm {
            mu: TimeFunction::constant(1.0),
            space: SpaceOperator::Diffusion { coefficient: 1.0 },
        }],
        sources,
        initial: SpaceFunction::Zero,
        horizon: 1.0,
        alpha: 1.0,
        bound_m: 1.0,
    };
    (problem, ManufacturedSolution { terms })
}

/// Heat equation with diffusion `sin(100πt) + 2`, unit source, zero initial datum.
pub fn make_case2() -> SeparatedParabolicProblem {
    SeparatedParabolicProblem {
        name: CaseName::TimeDiffusion.as_str().into(),
        operators: vec![OperatorTerm {
            mu: TimeFunction::Sine {
                amplitude: 1.0,
                omega: 100.0 * PI,
                phase: 0.0,
                offset: 2.0,
            },
            space: SpaceOperator::Diffusion { coefficient: 1.0 },
        }],
        sources: vec![SourceTerm {
            time: TimeFunction::constant(1.0),
            space: SpaceFunction::Constant { value: 1.0 },
        }],
        initial: SpaceFunction::Zero,
        horizon: 1.0,
        alpha: 1.0,
        bound_m: 3.0,
    }
}

/// Rotating advection with diffusion 0.1 transporting a Gaussian bump.
pub fn make_case3() -> SeparatedParabolicProblem {
    SeparatedParabolicProblem {
        name: CaseName::AdvectionDiffusion.as_str().into(),
        operators: vec![OperatorTerm {
            mu: TimeFunction::constant(1.0),
            space: SpaceOperator::AdvectionDiffusion {
                diffusion: 0.1,
                velocity: Velocity::Rotation {
                    omega: 2.0 * PI,
                    cx: 0.5,
                    cy: 0.5,
                },
            },
        }],
        sources: Vec::new(),
        initial: SpaceFunction::Gaussian {
            x0: 2.0 / 3.0,
            y0: 0.5,
            width: 0.07,
            amplitude: 1.0,
        },
        horizon: 1.0,
        alpha: 1.0,
        bound_m: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn case1_source_is_consistent_with_exact_solution() {
        let (problem, exact) = make_case1();
        assert_eq!(problem.sources.len(), 20);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (x, y, t): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            let mut residual = -problem
                .sources
                .iter()
                .map(|s| s.time.eval(t) * s.space.eval(x, y))
                .sum::<f64>();
            for (w, s) in &exact.terms {
                residual += w.eval(x, y) * s.derivative(t) + w.neg_laplacian(x, y).unwrap() * s.eval(t);
            }
            assert!(residual.abs() < 1e-12, "{residual}");
        }
    }

    #[test]
    fn case1_initial_and_boundary_values() {
        let (problem, exact) = make_case1();
        assert_eq!(problem.initial, SpaceFunction::Zero);
        for x in [0.0, 0.3, 1.0] {
            assert!(exact.eval(x, 0.7, 0.0).abs() < 1e-15);
            assert!(exact.eval(0.0, x, 0.4).abs() < 1e-15);
            assert!(exact.eval(1.0, x, 0.4).abs() < 1e-12);
        }
        let f0: f64 = problem
            .sources
            .iter()
            .map(|s| s.time.eval(0.0) * s.space.eval(0.3, 0.6))
            .sum();
        let expect: f64 = (1..=10)
            .map(|n| {
                let nf = n as f64;
                PI * nf.powi(3) * nf.powi(-4) * (nf * PI * 0.3).sin() * (nf * PI * 0.6).sin()
            })
            .sum();
        assert!((f0 - expect).abs() < 1e-12);
    }

    #[test]
    fn case1_centre_value() {
        let (_, exact) = make_case1();
        let expect: f64 = [1.0f64, 3.0, 5.0, 7.0, 9.0]
            .iter()
            .map(|&n| n.powi(-4) * (PI * n.powi(3) / 2.0).sin() * (n * PI / 2.0).sin().powi(2))
            .sum();
        assert!((exact.eval(0.5, 0.5, 0.5) - expect).abs() < 1e-14);
    }

    #[test]
    fn case1_analytic_norm() {
        let (_, exact) = make_case1();
        let expect: f64 = (1..=10)
            .map(|n| {
                let nf = n as f64;
                nf.powi(-8) * PI * PI * nf * nf / 4.0
            })
            .sum();
        assert!((exact.l2h1_norm_sq(1.0).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn case2_coefficient_values() {
        let p = make_case2();
        let mu = &p.operators[0].mu;
        assert!((mu.eval(0.0) - 2.0).abs() < 1e-15);
        assert!((mu.eval(0.005) - 3.0).abs() < 1e-12);
        assert!((mu.eval(0.015) - 1.0).abs() < 1e-12);
        assert_eq!(p.bound_m, 3.0);
        assert_eq!(p.alpha, 1.0);
    }

    #[test]
    fn case3_data() {
        let p = make_case3();
        assert!((p.initial.eval(2.0 / 3.0, 0.5) - 1.0).abs() < 1e-15);
        assert!(p.sources.is_empty());
        let SpaceOperator::AdvectionDiffusion { velocity, .. } = &p.operators[0].space else {
            panic!("expected advection");
        };
        let (vx, vy) = velocity.eval(0.2, 0.9);
        assert!((vx - 2.0 * PI * (0.5 - 0.9)).abs() < 1e-15);
        assert!((vy - 2.0 * PI * (0.2 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn unit_diffusion_shares_stiffness() {
        let mesh = QuadMesh::new(2).unwrap();
        let d = Arc::new(crate::space::assemble_stiffness(&mesh));
        let op = SpaceOperator::Diffusion { coefficient: 1.0 };
        assert!(Arc::ptr_eq(&op.assemble(&mesh, &d), &d));
        let op = SpaceOperator::Diffusion { coefficient: 0.5 };
        assert!(!Arc::ptr_eq(&op.assemble(&mesh, &d), &d));
    }

    #[test]
    fn json_round_trip_and_names() {
        for case in CaseName::ALL {
            let p = case.problem();
            let text = serde_json::to_string(&p).unwrap();
            let back: SeparatedParabolicProblem = serde_json::from_str(&text).unwrap();
            assert_eq!(back, p);
            assert_eq!(case.as_str().parse::<CaseName>().unwrap(), case);
        }
        assert!("nope".parse::<CaseName>().is_err());
    }

    #[test]
    fn json_defaults() {
        let text = r#"{
            "name": "custom",
            "operators": [{"mu": {"kind": "constant", "value": 1.0},
                           "space": {"kind": "diffusion", "coefficient": 1.0}}],
            "initial": {"kind": "gaussian", "x0": 0.5, "y0": 0.5, "width": 0.1}
        }"#;
        let p: SeparatedParabolicProblem = serde_json::from_str(text).unwrap();
        assert_eq!((p.horizon, p.alpha, p.bound_m), (1.0, 1.0, 1.0));
        assert!(p.sources.is_empty());
        assert!(p.validate().is_ok());
        let bad = SeparatedParabolicProblem { alpha: 0.0, ..p };
        assert!(bad.validate().is_err());
    }
}
