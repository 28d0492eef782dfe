//! Conservative finite-volume discretization of the Fokker-Planck
//! (Frobenius-Perron) generator.
//!
//! Face fluxes are `F = F_adv + F_diff` with `F_adv = J X v_upwind` (WENO5
//! interface states) and `F_diff = -H J g^ii (v_{i+1} - v_i) / h`. Each cell
//! changes by the difference of its face fluxes divided by `J h`, so mass
//! telescopes across interior faces. Guard fluxes are exported through their
//! reset and added to the image face by index permutation.

use thiserror::Error;

use crate::discretization::{Discretization, FieldKind};
use crate::geometry::{Side, GHOST_DEPTH};
use crate::model::{BoundaryCondition, FaceId, HybridSystem, InvalidSystem};

/// Regularization of the smoothness indicators, relative to the mean square
/// of the stencil so that small-amplitude data (density tails, freshly
/// re-injected mass) keeps nonlinear weights.
pub const WENO_EPSILON: f64 = 1e-6;
const WENO_IDEAL: [f64; 3] = [0.1, 0.6, 0.3];

/// Densities below `-NEGATIVE_TOLERANCE` abort a run.
pub const NEGATIVE_TOLERANCE: f64 = 1e-10;

/// Fifth-order WENO (Jiang-Shu) reconstruction from cell averages
/// `w = [w_{i-2}, .., w_{i+2}]`: the left-biased value at face `i + 1/2`.
pub fn weno5_reconstruct(w: [f64; 5]) -> f64 {
    let [a, b, c, d, e] = w;
    let q0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0;
    let q1 = (-b + 5.0 * c + 2.0 * d) / 6.0;
    let q2 = (2.0 * c + 5.0 * d - e) / 6.0;

    let b0 = 13.0 / 12.0 * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2);
    let b1 = 13.0 / 12.0 * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2);
    let b2 = 13.0 / 12.0 * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2);

    let eps =
        WENO_EPSILON * (a * a + b * b + c * c + d * d + e * e) / 5.0 + f64::MIN_POSITIVE.sqrt();
    let a0 = WENO_IDEAL[0] / (eps + b0).powi(2);
    let a1 = WENO_IDEAL[1] / (eps + b1).powi(2);
    let a2 = WENO_IDEAL[2] / (eps + b2).powi(2);
    (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)
}

/// Right-biased value at face `i - 1/2` from `w = [w_{i-2}, .., w_{i+2}]`.
pub fn weno5_reconstruct_right(w: [f64; 5]) -> f64 {
    weno5_reconstruct([w[4], w[3], w[2], w[1], w[0]])
}

/// Upwind advective flux `J X v`, taking the state from the side the drift
/// comes from.
pub fn advective_face_flux(v_left: f64, v_right: f64, velocity: f64, jacobian: f64) -> f64 {
    if velocity > 0.0 {
        jacobian * velocity * v_left
    } else if velocity < 0.0 {
        jacobian * velocity * v_right
    } else {
        0.0
    }
}

/// Central diffusive flux `-H J g^ii (v_{i+1} - v_i) / h`.
pub fn diffusive_face_flux(
    v_i: f64,
    v_next: f64,
    spacing: f64,
    diffusion: f64,
    jacobian: f64,
    inv_metric: f64,
) -> f64 {
    -diffusion * jacobian * inv_metric * (v_next - v_i) / spacing
}

/// Per-face coefficients along one grid line.
#[derive(Debug, Clone, Copy)]
pub struct FaceCoefficients {
    pub velocity: f64,
    pub jacobian: f64,
    pub inv_metric: f64,
}

/// Total flux through face `f` (between cells `f - 1` and `f`) of a line
/// padded with `GHOST_DEPTH` ghost cells on each side.
pub fn line_face_flux(
    padded: &[f64],
    f: usize,
    c: FaceCoefficients,
    diffusion: f64,
    spacing: f64,
) -> f64 {
    let adv = if c.velocity > 0.0 {
        let w = &padded[f..f + 5];
        advective_face_flux(
            weno5_reconstruct([w[0], w[1], w[2], w[3], w[4]]),
            0.0,
            c.velocity,
            c.jacobian,
        )
    } else if c.velocity < 0.0 {
        let w = &padded[f + 1..f + 6];
        advective_face_flux(
            0.0,
            weno5_reconstruct_right([w[0], w[1], w[2], w[3], w[4]]),
            c.velocity,
            c.jacobian,
        )
    } else {
        0.0
    };
    let diff = if diffusion != 0.0 {
        diffusive_face_flux(
            padded[f + GHOST_DEPTH - 1],
            padded[f + GHOST_DEPTH],
            spacing,
            diffusion,
            c.jacobian,
            c.inv_metric,
        )
    } else {
        0.0
    };
    adv + diff
}

/// Face fluxes of one density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxSet {
    /// `modes[q][axis]`: total flux in the `+axis` direction at every face
    /// normal to `axis`, indexed by `GridSpec::face_on_line`.
    pub modes: Vec<[Vec<f64>; 2]>,
    /// Per reset: outward flux per source tangential cell.
    pub exports: Vec<Vec<f64>>,
    /// Per reset: inward flux per target tangential cell.
    pub imports: Vec<Vec<f64>>,
    /// Total outward mass rate through absorbing faces.
    pub absorbed: f64,
}

impl FaceFluxSet {
    fn zeros(system: &HybridSystem) -> Self {
        let modes = system
            .modes
            .iter()
            .map(|m| {
                let g = &m.grid;
                let a1 = if g.dimension() > 1 {
                    vec![0.0; g.face_count(1)]
                } else {
                    Vec::new()
                };
                [vec![0.0; g.face_count(0)], a1]
            })
            .collect();
        Self {
            modes,
            exports: system
                .resets
                .iter()
                .map(|r| vec![0.0; system.modes[r.source.mode].grid.line_count(r.source.axis)])
                .collect(),
            imports: system
                .resets
                .iter()
                .map(|r| vec![0.0; system.modes[r.target.mode].grid.line_count(r.target.axis)])
                .collect(),
            absorbed: 0.0,
        }
    }

    /// Flux in the `+axis` direction on each tangential cell of `face`.
    pub fn face_flux(&self, system: &HybridSystem, face: FaceId) -> Vec<f64> {
        let g = &system.modes[face.mode].grid;
        let f = match face.side {
            Side::Low => 0,
            Side::High => g.line_len(face.axis),
        };
        let arr = &self.modes[face.mode][face.axis];
        (0..g.line_count(face.axis))
            .map(|t| arr[g.face_on_line(face.axis, f, t)])
            .collect()
    }

    /// Outward boundary flux integrand per tangential cell (the flux times
    /// the outward normal sign).
    pub fn outward_flux(&self, system: &HybridSystem, face: FaceId) -> Vec<f64> {
        let s = face.side.normal_sign();
        self.face_flux(system, face)
            .into_iter()
            .map(|v| s * v)
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("negative density {value:e} in q{} cell {cell} (tolerance {NEGATIVE_TOLERANCE:e})", mode + 1)]
pub struct NegativeDensity {
    pub mode: usize,
    pub cell: usize,
    pub value: f64,
}

/// Rejects densities below `-NEGATIVE_TOLERANCE` or non-finite entries.
pub fn check_density(disc: &Discretization, v: &[f64]) -> Result<(), NegativeDensity> {
    for q in 0..disc.mode_count() {
        for (cell, &value) in disc.mode_slice(v, q).iter().enumerate() {
            if !(value >= -NEGATIVE_TOLERANCE) {
                return Err(NegativeDensity {
                    mode: q,
                    cell,
                    value,
                });
            }
        }
    }
    Ok(())
}

/// Spatial operator of the density equation, `dv/dt = A*_h v`.
#[derive(Debug, Clone)]
pub struct FpOperator {
    disc: Discretization,
}

impl FpOperator {
    pub fn new(system: &HybridSystem) -> Result<Self, InvalidSystem> {
        Ok(Self {
            disc: Discretization::new(system)?,
        })
    }

    pub fn from_discretization(disc: Discretization) -> Self {
        Self { disc }
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn system(&self) -> &HybridSystem {
        self.disc.system()
    }

    pub fn len(&self) -> usize {
        self.disc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disc.is_empty()
    }

    /// All face fluxes, with guard/reset transfer and identification
    /// continuity applied.
    pub fn fluxes(&self, v: &[f64]) -> FaceFluxSet {
        let system = self.disc.system();
        let mut out = FaceFluxSet::zeros(system);
        let mut padded = Vec::new();

        for (q, m) in system.modes.iter().enumerate() {
            let grid = &m.grid;
            let data = self.disc.mode(q);
            for axis in 0..grid.dimension() {
                let n = grid.line_len(axis);
                let wrap = grid.axis(axis).wrap;
                let spacing = data.spacing[axis];
                let coeffs = |f: usize, line: usize| {
                    let k = grid.face_on_line(axis, f, line);
                    FaceCoefficients {
                        velocity: data.face_velocity[axis][k],
                        jacobian: data.metrics.face_jacobian[axis][k],
                        inv_metric: data.metrics.face_inv_metric[axis][k],
                    }
                };
                let low = m.condition(axis, Side::Low);
                let high = m.condition(axis, Side::High);
                let computes = |bc: Option<BoundaryCondition>, side: Side| match bc {
                    Some(BoundaryCondition::Reflecting) | Some(BoundaryCondition::ResetImage) => {
                        false
                    }
                    Some(BoundaryCondition::Identification { partner }) => {
                        FaceId::new(q, axis, side) < partner
                    }
                    _ => true,
                };
                let (do_low, do_high) = (
                    wrap || computes(low, Side::Low),
                    !wrap && computes(high, Side::High),
                );

                padded.resize(n + 2 * GHOST_DEPTH, 0.0);
                let flux = &mut out.modes[q][axis];
                for line in 0..grid.line_count(axis) {
                    self.disc
                        .fill_line(v, q, axis, line, FieldKind::Density, &mut padded);
                    for f in 1..n {
                        flux[grid.face_on_line(axis, f, line)] =
                            line_face_flux(&padded, f, coeffs(f, line), m.diffusion, spacing);
                    }
                    let f0 = grid.face_on_line(axis, 0, line);
                    let fn_ = grid.face_on_line(axis, n, line);
                    if do_low {
                        flux[f0] =
                            line_face_flux(&padded, 0, coeffs(0, line), m.diffusion, spacing);
                    }
                    if wrap {
                        flux[fn_] = flux[f0];
                    } else if do_high {
                        flux[fn_] =
                            line_face_flux(&padded, n, coeffs(n, line), m.diffusion, spacing);
                    }
                }
            }
        }

        // Identification faces share one flux value, owned by the lesser face.
        for face in system.faces() {
            if let Some(BoundaryCondition::Identification { partner }) = system.condition(face) {
                if partner < face {
                    let src = out.face_flux(system, partner);
                    self.set_face_flux(&mut out, face, &src);
                }
            }
        }

        // Guard export, permuted import at the image.
        for (k, r) in system.resets.iter().enumerate() {
            let exported = out.outward_flux(system, r.source);
            let perm = self.disc.permutation(k);
            let mut imported = vec![0.0; exported.len()];
            for (j, &e) in exported.iter().enumerate() {
                imported[perm[j]] = e;
            }
            let mut target = out.face_flux(system, r.target);
            // Inward at a low face is +axis, at a high face -axis.
            let s = -r.target.side.normal_sign();
            for (t, &i) in target.iter_mut().zip(&imported) {
                *t += s * i;
            }
            self.set_face_flux(&mut out, r.target, &target);
            out.exports[k] = exported;
            out.imports[k] = imported;
        }

        let mut absorbed = 0.0;
        for face in system.faces() {
            if let Some(BoundaryCondition::Absorbing) = system.condition(face) {
                let w = system.modes[face.mode].grid.tangential_width(face.axis);
                absorbed += out.outward_flux(system, face).iter().sum::<f64>() * w;
            }
        }
        out.absorbed = absorbed;
        out
    }

    fn set_face_flux(&self, out: &mut FaceFluxSet, face: FaceId, values: &[f64]) {
        let g = &self.disc.system().modes[face.mode].grid;
        let f = match face.side {
            Side::Low => 0,
            Side::High => g.line_len(face.axis),
        };
        let arr = &mut out.modes[face.mode][face.axis];
        for (t, &val) in values.iter().enumerate() {
            arr[g.face_on_line(face.axis, f, t)] = val;
        }
    }

    /// `dv/dt` from a flux set: minus the flux difference over `J h`.
    pub fn divergence(&self, fluxes: &FaceFluxSet, out: &mut [f64]) {
        let system = self.disc.system();
        for (q, m) in system.modes.iter().enumerate() {
            let grid = &m.grid;
            let data = self.disc.mode(q);
            let off = self.disc.offsets()[q];
            let cells = &mut out[off..off + grid.len()];
            cells.iter_mut().for_each(|c| *c = 0.0);
            for axis in 0..grid.dimension() {
                let h = data.spacing[axis];
                let flux = &fluxes.modes[q][axis];
                for line in 0..grid.line_count(axis) {
                    for pos in 0..grid.line_len(axis) {
                        let c = grid.cell_on_line(axis, pos, line);
                        let df = flux[grid.face_on_line(axis, pos + 1, line)]
                            - flux[grid.face_on_line(axis, pos, line)];
                        cells[c] -= df / (data.metrics.cell_jacobian[c] * h);
                    }
                }
            }
        }
    }

    pub fn rhs(&self, v: &[f64], out: &mut [f64]) {
        let fl = self.fluxes(v);
        self.divergence(&fl, out);
    }

    pub fn rhs_with_fluxes(&self, v: &[f64], out: &mut [f64]) -> FaceFluxSet {
        let fl = self.fluxes(v);
        self.divergence(&fl, out);
        fl
    }

    /// Diagonal of `I - dt * (diffusion part of A*_h)`, used as a Jacobi
    /// preconditioner for the implicit step.
    pub fn diffusion_diagonal(&self, dt: f64) -> Vec<f64> {
        self.disc.diffusion_diagonal(dt)
    }
}

/// Ghost layers and resulting face fluxes of one boundary face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceClosure {
    pub face: FaceId,
    /// Per tangential cell, the three ghost values ordered outward.
    pub ghosts: Vec<[f64; 3]>,
    /// Flux in the `+axis` direction after closure and reset transfer.
    pub flux: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryClosure {
    pub faces: Vec<FaceClosure>,
    pub fluxes: FaceFluxSet,
}

/// Ghost states and boundary flux overrides for density `v`.
pub fn apply_boundary_closure(op: &FpOperator, v: &[f64]) -> BoundaryClosure {
    let disc = op.discretization();
    let system = disc.system();
    let fluxes = op.fluxes(v);
    let faces = system
        .faces()
        .into_iter()
        .map(|face| {
            let lines = system.modes[face.mode].grid.line_count(face.axis);
            FaceClosure {
                face,
                ghosts: (0..lines)
                    .map(|t| std::array::from_fn(|k| disc.ghost(v, face, t, k, FieldKind::Density)))
                    .collect(),
                flux: fluxes.face_flux(system, face),
            }
        })
        .collect();
    BoundaryClosure { faces, fluxes }
}

pub fn discrete_divergence(op: &FpOperator, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.len()];
    op.rhs(v, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::total_mass;
    use crate::scenario::{builtin_scenario, ScenarioSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Exact cell averages of a polynomial with antiderivative `prim` on unit
    /// cells centered at -2..=2.
    fn unit_cell_averages(prim: impl Fn(f64) -> f64) -> [f64; 5] {
        std::array::from_fn(|k| {
            let c = k as f64 - 2.0;
            prim(c + 0.5) - prim(c - 0.5)
        })
    }

    #[test]
    fn weno_constant_linear_quadratic() {
        for c in [-3.5, 0.0, 1.0, 1e3] {
            assert!((weno5_reconstruct([c; 5]) - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
        let lin = unit_cell_averages(|x| x * x / 2.0);
        assert_eq!(lin, [-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!((weno5_reconstruct(lin) - 0.5).abs() < 1e-12);
        let quad = unit_cell_averages(|x| x * x * x / 3.0);
        assert!((weno5_reconstruct(quad) - 0.25).abs() < 1e-12);
        // Right-biased value at x = -1/2.
        assert!((weno5_reconstruct_right(quad) - 0.25).abs() < 1e-12);
        assert!((weno5_reconstruct_right(lin) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn weno_sine_reconstruction_order() {
        // Cell averages of sin(2 pi x) on [0,1); interface error at x_{i+1/2}.
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let avg = |i: isize| {
                let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                ((2.0 * PI * a).cos() - (2.0 * PI * b).cos()) / (2.0 * PI * h)
            };
            (0..n as isize)
                .map(|i| {
                    let w = std::array::from_fn(|k| avg(i - 2 + k as isize));
                    (weno5_reconstruct(w) - (2.0 * PI * (i + 1) as f64 * h).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let e: Vec<f64> = [64, 128, 256].iter().map(|&n| err(n)).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() >= 4.5, "{e:?}");
        }
    }

    #[test]
    fn weno_small_amplitude_spike_does_not_undershoot() {
        assert_eq!(weno5_reconstruct([0.0; 5]), 0.0);
        for a in [1.0, 1e-5, 1e-12] {
            let v = weno5_reconstruct([0.0, a, 0.0, 0.0, 0.0]);
            assert!(v.abs() <= 1e-12 * a, "{a}: {v}");
        }
    }

    proptest! {
        #[test]
        fn weno_scale_invariant(w in prop::array::uniform5(-10.0f64..10.0), exp in -12i32..6) {
            let s = 10f64.powi(exp);
            let scaled = weno5_reconstruct(w.map(|x| x * s));
            let tol = 1e-12 * s * w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            prop_assert!((scaled - s * weno5_reconstruct(w)).abs() <= tol);
        }

        #[test]
        fn weno_mirror_symmetry(w in prop::array::uniform5(-10.0f64..10.0)) {
            let rev = [w[4], w[3], w[2], w[1], w[0]];
            prop_assert_eq!(weno5_reconstruct_right(rev), weno5_reconstruct(w));
        }

        #[test]
        fn upwind_consistency(v in -5.0f64..5.0, vel in -5.0f64..5.0, j in 0.1f64..4.0) {
            prop_assert_eq!(advective_face_flux(v, v, vel, j), if vel == 0.0 { 0.0 } else { j * vel * v });
        }
    }

    #[test]
    fn advective_flux_sign_selection() {
        assert_eq!(advective_face_flux(2.0, 5.0, 1.0, 3.0), 6.0);
        assert_eq!(advective_face_flux(2.0, 5.0, -1.0, 3.0), -15.0);
        assert_eq!(advective_face_flux(2.0, 5.0, 0.0, 3.0), 0.0);
    }

    #[test]
    fn diffusive_flux_values() {
        assert_eq!(diffusive_face_flux(0.7, 0.7, 0.1, 0.5, 1.0, 1.0), 0.0);
        assert!((diffusive_face_flux(1.0, 1.2, 0.1, 0.5, 1.0, 1.0) + 1.0).abs() < 1e-12);
        let torus = crate::geometry::ChartGeometry::torus(2.0, 1.0).unwrap();
        let j = torus.jacobian([0.0, 0.0]);
        let g = torus.inverse_metric_diag([0.0, 0.0])[0];
        assert!((diffusive_face_flux(1.0, 1.2, 0.1, 0.5, j, g) + 1.0 / 3.0).abs() < 1e-12);
    }

    fn small_torus() -> HybridSystem {
        let mut spec = ScenarioSpec::builtin("torus_two_mode").unwrap();
        spec.set_grid_torus(16, 16);
        spec.build().unwrap().system
    }

    #[test]
    fn uniform_density_stationary_without_drift() {
        use crate::geometry::{AxisGrid, ChartGeometry, GridSpec};
        use crate::model::{Drift, Mode};
        let grid = GridSpec::new(vec![
            AxisGrid::periodic(12, 0.0, 2.0 * PI),
            AxisGrid::periodic(10, 0.0, 2.0 * PI),
        ])
        .unwrap();
        let m = Mode::new(
            ChartGeometry::torus(2.0, 1.0).unwrap(),
            grid,
            Drift::Zero,
            0.5,
        );
        let sys = HybridSystem::new(vec![m], vec![]);
        let op = FpOperator::new(&sys).unwrap();
        let dv = discrete_divergence(&op, &vec![0.3; op.len()]);
        assert!(dv.iter().all(|&d| d.abs() < 1e-14));
    }

    #[test]
    fn stationary_ou_density_residual_second_order() {
        let res = |n: usize| {
            let mut spec = ScenarioSpec::builtin("ex1_reflecting").unwrap();
            spec.set_grid_1d(n);
            let sc = spec.build().unwrap();
            let op = FpOperator::new(&sc.system).unwrap();
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let x = sc.system.modes[0].grid.cell_center(i)[0];
                    (-(x - 3.0) * (x - 3.0)).exp()
                })
                .collect();
            discrete_divergence(&op, &v)
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()))
        };
        let e: Vec<f64> = [50, 100, 200].iter().map(|&n| res(n)).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{e:?}");
        }
    }

    #[test]
    fn reflecting_faces_carry_zero_flux() {
        let sc = builtin_scenario("ex1_reflecting").unwrap();
        let op = FpOperator::new(&sc.system).unwrap();
        let cl = apply_boundary_closure(&op, &sc.initial_density.values);
        for f in &cl.faces {
            assert!(f.flux.iter().all(|&x| x == 0.0));
            // Ghosts continue the quadratic through the three wall cells.
            let inner: Vec<f64> = (0..3)
                .map(|k| {
                    op.discretization()
                        .inner(&sc.initial_density.values, f.face, 0, k)
                })
                .collect();
            let (c0, c1, c2) = (inner[0], inner[1], inner[2]);
            let a = (c0 - 2.0 * c1 + c2) / 2.0;
            let b = c1 - c0 - a;
            for k in 0..3 {
                let x = -(k as f64) - 1.0;
                let q = c0 + b * x + a * x * x;
                assert!((f.ghosts[0][k] - q).abs() < 1e-14 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn guard_flux_reappears_at_shifted_image() {
        let sys = small_torus();
        let op = FpOperator::new(&sys).unwrap();
        let v: Vec<f64> = (0..op.len())
            .map(|i| 1.0 + 0.5 * ((i * 7919) % 13) as f64 / 13.0)
            .collect();
        let fl = op.fluxes(&v);
        let n = 16;
        for k in 0..sys.resets.len() {
            for j in 0..n {
                assert_eq!(fl.imports[k][(j + n / 2) % n], fl.exports[k][j]);
            }
            let mut a = fl.exports[k].clone();
            let mut b = fl.imports[k].clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn absorbing_outflux_matches_mass_rate() {
        let sc = builtin_scenario("ex2_absorbing").unwrap();
        let op = FpOperator::new(&sc.system).unwrap();
        let v: Vec<f64> = (0..op.len())
            .map(|i| 0.2 + (i as f64 * 0.37).sin().abs())
            .collect();
        let mut dv = vec![0.0; op.len()];
        let fl = op.rhs_with_fluxes(&v, &mut dv);
        let rate = total_mass(op.discretization(), &dv).total;
        assert!(fl.absorbed > 0.0);
        assert!((rate + fl.absorbed).abs() < 1e-12 * fl.absorbed.max(1.0));
    }

    fn conservative_systems() -> Vec<HybridSystem> {
        let mut out = Vec::new();
        for name in ["ex1_reflecting", "ex3_reset"] {
            let mut spec = ScenarioSpec::builtin(name).unwrap();
            spec.set_grid_1d(40);
            out.push(spec.build().unwrap().system);
        }
        out.push(small_torus());
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn no_absorbing_faces_conserve_mass(seed in any::<u64>(), which in 0usize..3) {
            use rand::{Rng, SeedableRng};
            let sys = &conservative_systems()[which];
            let op = FpOperator::new(sys).unwrap();
            let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed);
            let v: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>()).collect();
            let dv = discrete_divergence(&op, &v);
            let rate = total_mass(op.discretization(), &dv).total;
            let scale = total_mass(op.discretization(), &v).total;
            prop_assert!(rate.abs() <= 1e-13 * scale.max(1.0) * 10.0, "rate {rate}");
        }
    }

    #[test]
    fn density_check_tolerates_tiny_negatives() {
        let sc = builtin_scenario("ex1_reflecting").unwrap();
        let op = FpOperator::new(&sc.system).unwrap();
        let mut v = vec![0.1; op.len()];
        v[3] = -0.5e-10;
        assert!(check_density(op.discretization(), &v).is_ok());
        v[3] = -2e-10;
        assert_eq!(check_density(op.discretization(), &v).unwrap_err().cell, 3);
    }
}
