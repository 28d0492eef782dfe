//! Density (Fokker-Planck) and observable (Koopman) propagation for
//! stochastic hybrid systems on chart-described manifolds.
//!
//! A [`HybridSystem`] declares modes with drift, isotropic diffusion, a
//! boundary condition on every face and reset maps from guards to their
//! images. [`FpOperator`] discretizes the density generator in conservative
//! finite-volume form (WENO5 advection, central diffusion) so guard outflow
//! is re-injected at the reset image by exact index permutation;
//! [`KoopmanOperator`] discretizes the dual observable generator. Both are
//! advanced by the schemes in [`time`], and [`monte_carlo`] provides a
//! particle oracle for cross-validation.

pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod field;
pub mod fv;
pub mod geometry;
pub mod koopman;
pub mod model;
pub mod monte_carlo;
pub mod run;
pub mod scenario;
pub mod time;

pub use config::{parse_config, ConfigError, McConfig, RunConfig};
pub use diagnostics::{
    compare_fields, duality_residual, flux_balance_report, total_mass, FieldComparison,
    FluxBalanceReport, MassReport, RunRecord, RunReport,
};
pub use discretization::{Discretization, FieldKind};
pub use field::{DensityField, Field, ObservableField};
pub use fv::{
    advective_face_flux, apply_boundary_closure, diffusive_face_flux, discrete_divergence,
    weno5_reconstruct, weno5_reconstruct_right, FaceFluxSet, FpOperator,
};
pub use geometry::{
    AxisGrid, BoundaryFace, ChartGeometry, CoefficientEvaluation, GridSpec, Point, Side,
};
pub use koopman::{
    koopman_boundary_closure, koopman_expectation, AdvectionStencil, KoopmanOperator,
};
pub use model::{
    BoundaryCondition, Drift, FaceId, HybridSystem, InvalidSystem, Mode, ResetMap, ValidationReport,
};
pub use monte_carlo::{
    em_step, histogram_density, histogram_noise_l1, mc_koopman, McEstimate, ParticleEnsemble,
};
pub use run::{run, RunError, RunSummary};
pub use scenario::{builtin_scenario, Scenario, ScenarioKind, ScenarioSpec};
pub use time::{
    cfl_estimate, step_explicit, step_implicit, Method, Rhs, SolverConfig, StepStats, TimeError,
};
