//! Built-in scenarios: the three interval examples (reflecting, absorbing,
//! reset) and the two-mode torus with a half-turn reset.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::discretization::Discretization;
use crate::field::{DensityField, Field, ObservableField};
use crate::geometry::{AxisGrid, ChartGeometry, GeometryError, GridSpec, Point, Side};
use crate::model::{BoundaryCondition, Drift, FaceId, HybridSystem, InvalidSystem, Mode, ResetMap};

pub const SCENARIO_NAMES: [&str; 4] = [
    "ex1_reflecting",
    "ex2_absorbing",
    "ex3_reset",
    "torus_two_mode",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Ex1Reflecting,
    Ex2Absorbing,
    Ex3Reset,
    TorusTwoMode,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ex1_reflecting" => Some(Self::Ex1Reflecting),
            "ex2_absorbing" => Some(Self::Ex2Absorbing),
            "ex3_reset" => Some(Self::Ex3Reset),
            "torus_two_mode" => Some(Self::TorusTwoMode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ex1Reflecting => "ex1_reflecting",
            Self::Ex2Absorbing => "ex2_absorbing",
            Self::Ex3Reset => "ex3_reset",
            Self::TorusTwoMode => "torus_two_mode",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}` (expected one of ex1_reflecting, ex2_absorbing, ex3_reset, torus_two_mode)")]
    Unknown(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Invalid(#[from] InvalidSystem),
    #[error("initial density has zero or non-finite discrete mass")]
    Degenerate,
}

/// Every tunable parameter of a built-in scenario. Interval scenarios read
/// the interval fields, the torus reads the torus fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Cells on the interval.
    pub n: usize,
    /// Cells in psi over the full circle, split evenly between the modes.
    pub n_psi: usize,
    pub n_theta: usize,
    pub a: f64,
    pub b: f64,
    /// Attractor of the restoring drift `-gamma (x - c)`.
    pub c: f64,
    pub gamma: f64,
    pub diffusion: f64,
    pub major_radius: f64,
    pub minor_radius: f64,
    pub psi_speed: f64,
    pub theta_amplitude: f64,
    pub theta_shift: f64,
    pub init_mean: f64,
    pub init_std: f64,
    pub init_mean_q2: f64,
    pub observable_mean: f64,
    pub observable_std: f64,
    pub t_final: f64,
    pub nt: usize,
    pub stride: usize,
}

impl ScenarioSpec {
    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let kind =
            ScenarioKind::parse(name).ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
        Ok(Self::for_kind(kind))
    }

    pub fn for_kind(kind: ScenarioKind) -> Self {
        let interval = Self {
            kind,
            n: 200,
            n_psi: 100,
            n_theta: 100,
            a: 0.0,
            b: 2.0,
            c: 3.0,
            gamma: 1.0,
            diffusion: 0.5,
            major_radius: 2.0,
            minor_radius: 1.0,
            psi_speed: 3.0,
            theta_amplitude: 6.0,
            theta_shift: PI,
            init_mean: 0.75,
            init_std: 0.2,
            init_mean_q2: 5.0 * PI / 4.0,
            observable_mean: 1.25,
            observable_std: 0.2,
            t_final: 2.5,
            nt: 1000,
            stride: 20,
        };
        match kind {
            ScenarioKind::TorusTwoMode => Self {
                init_mean: 3.0 * PI / 4.0,
                t_final: 3.0,
                ..interval
            },
            _ => interval,
        }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == ScenarioKind::TorusTwoMode
    }

    pub fn set_grid_1d(&mut self, n: usize) {
        self.n = n;
    }

    pub fn set_grid_torus(&mut self, n_psi: usize, n_theta: usize) {
        self.n_psi = n_psi;
        self.n_theta = n_theta;
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        match self.kind {
            ScenarioKind::TorusTwoMode => self.build_torus(),
            _ => self.build_interval(),
        }
    }

    fn build_interval(&self) -> Result<Scenario, ScenarioError> {
        let chart = ChartGeometry::interval(self.a, self.b)?;
        let grid = GridSpec::new(vec![AxisGrid::new(self.n, self.a, self.b)])?;
        let drift = Drift::LinearRestoring {
            gamma: self.gamma,
            center: self.c,
        };
        let mode = Mode::new(chart, grid, drift, self.diffusion);
        let low = FaceId::new(0, 0, Side::Low);
        let high = FaceId::new(0, 0, Side::High);
        let (mode, resets) = match self.kind {
            ScenarioKind::Ex1Reflecting => (
                mode.with_boundary(0, Side::Low, BoundaryCondition::Reflecting)
                    .with_boundary(0, Side::High, BoundaryCondition::Reflecting),
                vec![],
            ),
            ScenarioKind::Ex2Absorbing => (
                mode.with_boundary(0, Side::Low, BoundaryCondition::Reflecting)
                    .with_boundary(0, Side::High, BoundaryCondition::Absorbing),
                vec![],
            ),
            _ => (
                mode.with_boundary(0, Side::Low, BoundaryCondition::ResetImage)
                    .with_boundary(0, Side::High, BoundaryCondition::Guard { reset: 0 }),
                vec![ResetMap {
                    source: high,
                    target: low,
                    shift: 0.0,
                }],
            ),
        };
        let system = HybridSystem::new(vec![mode], resets);
        let (m0, s0) = (self.init_mean, self.init_std);
        let density = move |_: usize, p: Point| gaussian(p[0], m0, s0);
        let (m1, s1) = (self.observable_mean, self.observable_std);
        let observable: ObservableFn = Arc::new(move |_, p| gaussian(p[0], m1, s1));
        self.finish(system, &density, observable)
    }

    fn build_torus(&self) -> Result<Scenario, ScenarioError> {
        let chart = ChartGeometry::torus(self.major_radius, self.minor_radius)?;
        let half = self.n_psi / 2;
        let theta = AxisGrid::periodic(self.n_theta, 0.0, 2.0 * PI);
        let drift = Drift::TorusTwist {
            psi_speed: self.psi_speed,
            theta_amplitude: self.theta_amplitude,
        };
        let q1_low = FaceId::new(0, 0, Side::Low);
        let q1_high = FaceId::new(0, 0, Side::High);
        let q2_low = FaceId::new(1, 0, Side::Low);
        let q2_high = FaceId::new(1, 0, Side::High);
        let q1 = Mode::new(
            chart,
            GridSpec::new(vec![AxisGrid::new(half, 0.0, PI), theta])?,
            drift.clone(),
            self.diffusion,
        )
        .with_boundary(
            0,
            Side::Low,
            BoundaryCondition::Identification { partner: q2_high },
        )
        .with_boundary(0, Side::High, BoundaryCondition::Guard { reset: 0 });
        let q2 = Mode::new(
            chart,
            GridSpec::new(vec![AxisGrid::new(half, PI, 2.0 * PI), theta])?,
            drift,
            self.diffusion,
        )
        .with_boundary(0, Side::Low, BoundaryCondition::Guard { reset: 1 })
        .with_boundary(
            0,
            Side::High,
            BoundaryCondition::Identification { partner: q1_low },
        );
        let resets = vec![
            ResetMap {
                source: q1_high,
                target: q1_low,
                shift: self.theta_shift,
            },
            ResetMap {
                source: q2_low,
                target: q1_low,
                shift: self.theta_shift,
            },
        ];
        let system = HybridSystem::new(vec![q1, q2], resets);
        let means = [self.init_mean, self.init_mean_q2];
        let s = self.init_std;
        let density = move |q: usize, p: Point| wrapped_gaussian(p[0], means[q], s, 2.0 * PI);
        let observable: ObservableFn = Arc::new(|_, p| p[0].cos());
        self.finish(system, &density, observable)
    }

    fn finish(
        &self,
        system: HybridSystem,
        density: &dyn Fn(usize, Point) -> f64,
        observable: ObservableFn,
    ) -> Result<Scenario, ScenarioError> {
        let disc = Discretization::new(&system)?;
        let mut v = Field::from_fn(&system, density);
        let mass: f64 = disc
            .cell_volumes()
            .iter()
            .zip(&v.values)
            .map(|(w, x)| w * x)
            .sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(ScenarioError::Degenerate);
        }
        v.values.iter_mut().for_each(|x| *x /= mass);
        let u = Field::from_fn(&system, |q, p| observable(q, p));
        Ok(Scenario {
            spec: self.clone(),
            system,
            initial_density: v,
            observable: u,
            observable_fn: observable,
        })
    }
}

/// Pointwise observable `f(mode, point)`.
pub type ObservableFn = Arc<dyn Fn(usize, Point) -> f64 + Send + Sync>;

/// A built scenario: validated system, normalized initial density, and the
/// initial observable.
#[derive(Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub system: HybridSystem,
    pub initial_density: DensityField,
    pub observable: ObservableField,
    pub observable_fn: ObservableFn,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("spec", &self.spec)
            .field("system", &self.system)
            .finish_non_exhaustive()
    }
}

pub fn builtin_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    ScenarioSpec::builtin(name)?.build()
}

/// Normal probability density.
pub fn gaussian(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

/// Normal density wrapped over three periods on each side.
pub fn wrapped_gaussian(x: f64, mean: f64, std: f64, period: f64) -> f64 {
    (-3..=3)
        .map(|k| gaussian(x + k as f64 * period, mean, std))
        .sum()
}

/// Unnormalized stationary density `exp(-gamma (x - c)^2 / (2 H))` of the
/// restoring drift with reflecting ends.
pub fn stationary_profile(x: f64, gamma: f64, center: f64, diffusion: f64) -> f64 {
    (-gamma * (x - center).powi(2) / (2.0 * diffusion)).exp()
}
