//! Declarative stochastic hybrid systems: modes with drift and isotropic
//! diffusion, a boundary condition on every face, and reset maps that carry
//! trajectories from guard faces to their images.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{BoundaryFace, ChartGeometry, GridSpec, Point, Side};

/// Drift vector field, chart components per axis.
#[derive(Clone)]
pub enum Drift {
    Zero,
    Constant([f64; 2]),
    /// `X(x) = -gamma (x - center)` on a one-dimensional chart.
    LinearRestoring {
        gamma: f64,
        center: f64,
    },
    /// `X_psi = psi_speed`, `X_theta = -theta_amplitude * sin(theta - psi)`.
    TorusTwist {
        psi_speed: f64,
        theta_amplitude: f64,
    },
    Custom(Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>),
}

impl Drift {
    pub fn eval(&self, p: Point) -> [f64; 2] {
        match self {
            Drift::Zero => [0.0, 0.0],
            Drift::Constant(c) => *c,
            Drift::LinearRestoring { gamma, center } => [-gamma * (p[0] - center), 0.0],
            Drift::TorusTwist {
                psi_speed,
                theta_amplitude,
            } => [*psi_speed, -theta_amplitude * (p[1] - p[0]).sin()],
            Drift::Custom(f) => f(p),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Constant(c) => write!(f, "Constant({c:?})"),
            Drift::LinearRestoring { gamma, center } => {
                write!(f, "LinearRestoring {{ gamma: {gamma}, center: {center} }}")
            }
            Drift::TorusTwist {
                psi_speed,
                theta_amplitude,
            } => write!(
                f,
                "TorusTwist {{ psi_speed: {psi_speed}, theta_amplitude: {theta_amplitude} }}"
            ),
            Drift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Identifies one boundary face: `(mode, axis, side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceId {
    pub mode: usize,
    pub axis: usize,
    pub side: Side,
}

impl FaceId {
    pub fn new(mode: usize, axis: usize, side: Side) -> Self {
        Self { mode, axis, side }
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Low => "low",
            Side::High => "high",
        };
        write!(f, "q{} axis {} {}", self.mode + 1, self.axis, side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    /// Zero normal probability flux; Neumann condition on observables.
    Reflecting,
    /// Density and observable vanish; outgoing flux leaves the system.
    Absorbing,
    /// Density trace vanishes; the outgoing flux is carried by `resets[reset]`.
    Guard { reset: usize },
    /// Reflecting for the face's own flux, plus the influx of every reset
    /// targeting this face.
    ResetImage,
    /// Glued to `partner` (periodic cut): continuity of fields and flux.
    Identification { partner: FaceId },
}

/// Reset from a guard face onto a target face, acting on the tangential
/// coordinate by a shift `x -> x + shift` (mod period).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetMap {
    pub source: FaceId,
    pub target: FaceId,
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub geometry: ChartGeometry,
    pub grid: GridSpec,
    pub drift: Drift,
    /// `H = sigma^2 / 2`.
    pub diffusion: f64,
    /// `boundary[axis][side]`; `None` on wrapped axes.
    pub boundary: [[Option<BoundaryCondition>; 2]; 2],
}

impl Mode {
    pub fn new(geometry: ChartGeometry, grid: GridSpec, drift: Drift, diffusion: f64) -> Self {
        Self {
            geometry,
            grid,
            drift,
            diffusion,
            boundary: [[None; 2]; 2],
        }
    }

    pub fn with_boundary(mut self, axis: usize, side: Side, bc: BoundaryCondition) -> Self {
        self.boundary[axis][side.index()] = Some(bc);
        self
    }

    pub fn condition(&self, axis: usize, side: Side) -> Option<BoundaryCondition> {
        self.boundary[axis][side.index()]
    }

    /// `sigma = sqrt(2 H)`.
    pub fn sigma(&self) -> f64 {
        (2.0 * self.diffusion).sqrt()
    }
}

#[derive(Debug, Error)]
#[error("invalid hybrid system: {0}")]
pub struct InvalidSystem(pub ValidationReport);

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub face: Option<FaceId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.face {
            Some(face) => write!(f, "{face}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, face: Option<FaceId>, message: impl Into<String>) {
        self.violations.push(Violation {
            face,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Hybrid state space: the disjoint union of the modes' chart domains.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    pub modes: Vec<Mode>,
    pub resets: Vec<ResetMap>,
}

impl HybridSystem {
    pub fn new(modes: Vec<Mode>, resets: Vec<ResetMap>) -> Self {
        Self { modes, resets }
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Flat offsets of each mode's cells in a concatenated field vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.modes.len() + 1);
        let mut acc = 0;
        off.push(0);
        for m in &self.modes {
            acc += m.grid.len();
            off.push(acc);
        }
        off
    }

    pub fn total_cells(&self) -> usize {
        self.modes.iter().map(|m| m.grid.len()).sum()
    }

    pub fn condition(&self, face: FaceId) -> Option<BoundaryCondition> {
        self.modes
            .get(face.mode)
            .and_then(|m| m.boundary.get(face.axis))
            .and_then(|b| b[face.side.index()])
    }

    /// Every non-wrapped face of every mode.
    pub fn faces(&self) -> Vec<FaceId> {
        let mut out = Vec::new();
        for (q, m) in self.modes.iter().enumerate() {
            for axis in 0..m.grid.dimension() {
                if !m.grid.axis(axis).wrap {
                    out.push(FaceId::new(q, axis, Side::Low));
                    out.push(FaceId::new(q, axis, Side::High));
                }
            }
        }
        out
    }

    pub fn boundary_face(&self, face: FaceId) -> BoundaryFace {
        let m = &self.modes[face.mode];
        BoundaryFace::new(face.mode, &m.geometry, &m.grid, face.axis, face.side)
    }

    pub fn has_absorbing(&self) -> bool {
        self.faces()
            .into_iter()
            .any(|f| matches!(self.condition(f), Some(BoundaryCondition::Absorbing)))
    }

    /// Resets whose image is `face`.
    pub fn resets_into(&self, face: FaceId) -> Vec<usize> {
        (0..self.resets.len())
            .filter(|&k| self.resets[k].target == face)
            .collect()
    }

    /// Tangential index shift of reset `k`, if it is cell-aligned.
    pub fn reset_index_shift(&self, k: usize) -> Option<isize> {
        let r = &self.resets[k];
        let grid = &self.modes[r.source.mode].grid;
        match grid.tangential_axis(r.source.axis) {
            None => (r.shift == 0.0).then_some(0),
            Some(t) => {
                let cells = r.shift / t.spacing();
                let k = cells.round();
                ((cells - k).abs() <= 1e-9 * cells.abs().max(1.0)).then_some(k as isize)
            }
        }
    }

    /// Index permutation of reset `k`: source tangential cell `j` lands on
    /// target tangential cell `perm[j]`.
    pub fn reset_permutation(&self, k: usize) -> Option<Vec<usize>> {
        let r = &self.resets[k];
        let n = self.modes[r.source.mode].grid.line_count(r.source.axis);
        let s = self.reset_index_shift(k)?;
        Some(
            (0..n)
                .map(|j| (j as isize + s).rem_euclid(n as isize) as usize)
                .collect(),
        )
    }

    /// Structural checks: every face assigned, guards wired to resets,
    /// resets landing on images with matching cell-aligned tangential grids,
    /// identifications paired, and positive diffusion.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.modes.is_empty() {
            report.push(None, "system has no modes");
            return report;
        }
        for (q, m) in self.modes.iter().enumerate() {
            let tag = |axis: usize, side: Side| Some(FaceId::new(q, axis, side));
            if !(m.diffusion > 0.0 && m.diffusion.is_finite()) {
                report.push(
                    None,
                    format!(
                        "q{}: diffusion strength must be positive (H = {})",
                        q + 1,
                        m.diffusion
                    ),
                );
            }
            if m.grid.dimension() != m.geometry.dimension() {
                report.push(
                    None,
                    format!(
                        "q{}: grid dimension {} does not match chart dimension {}",
                        q + 1,
                        m.grid.dimension(),
                        m.geometry.dimension()
                    ),
                );
                continue;
            }
            for axis in 0..m.grid.dimension() {
                let g = m.grid.axis(axis);
                let (clo, chi) = m.geometry.domain(axis);
                match m.geometry.period(axis) {
                    None => {
                        if g.lo < clo - 1e-12 || g.hi > chi + 1e-12 {
                            report.push(
                                None,
                                format!("q{}: axis {axis} grid leaves the chart domain", q + 1),
                            );
                        }
                        if g.wrap {
                            report.push(None, format!("q{}: axis {axis} is not periodic", q + 1));
                        }
                    }
                    Some(p) => {
                        if g.wrap && ((g.hi - g.lo) - p).abs() > 1e-12 * p {
                            report.push(
                                None,
                                format!(
                                    "q{}: wrapped axis {axis} must span one full period",
                                    q + 1
                                ),
                            );
                        }
                    }
                }
                for side in [Side::Low, Side::High] {
                    let bc = m.condition(axis, side);
                    if g.wrap {
                        if bc.is_some() {
                            report.push(
                                tag(axis, side),
                                "wrapped axis cannot carry a boundary condition",
                            );
                        }
                        continue;
                    }
                    match bc {
                        None => report.push(tag(axis, side), "unassigned face"),
                        Some(BoundaryCondition::Guard { reset }) => match self.resets.get(reset) {
                            None => report.push(tag(axis, side), "guard without reset"),
                            Some(r) if r.source != FaceId::new(q, axis, side) => report.push(
                                tag(axis, side),
                                format!(
                                    "guard refers to reset {reset} whose source is {}",
                                    r.source
                                ),
                            ),
                            Some(_) => {}
                        },
                        Some(BoundaryCondition::Identification { partner }) => self
                            .check_identification(FaceId::new(q, axis, side), partner, &mut report),
                        Some(_) => {}
                    }
                }
            }
            for idx in 0..m.grid.len() {
                let x = m.drift.eval(m.grid.cell_center(idx));
                if x.iter().any(|v| !v.is_finite()) {
                    report.push(None, format!("q{}: drift is not finite", q + 1));
                    break;
                }
            }
        }
        for k in 0..self.resets.len() {
            self.check_reset(k, &mut report);
        }
        report
    }

    fn face_exists(&self, f: FaceId) -> bool {
        self.modes
            .get(f.mode)
            .is_some_and(|m| f.axis < m.grid.dimension() && !m.grid.axis(f.axis).wrap)
    }

    fn tangential_matches(&self, a: FaceId, b: FaceId) -> bool {
        let ga = &self.modes[a.mode].grid;
        let gb = &self.modes[b.mode].grid;
        match (ga.tangential_axis(a.axis), gb.tangential_axis(b.axis)) {
            (None, None) => true,
            (Some(x), Some(y)) => {
                x.n == y.n && (x.lo - y.lo).abs() < 1e-12 && (x.hi - y.hi).abs() < 1e-12
            }
            _ => false,
        }
    }

    fn check_identification(&self, face: FaceId, partner: FaceId, report: &mut ValidationReport) {
        if !self.face_exists(partner) {
            report.push(
                Some(face),
                format!("identification partner {partner} does not exist"),
            );
            return;
        }
        match self.condition(partner) {
            Some(BoundaryCondition::Identification { partner: back }) if back == face => {}
            _ => report.push(
                Some(face),
                format!("identification partner {partner} does not point back"),
            ),
        }
        if partner.axis != face.axis || partner.side != face.side.opposite() {
            report.push(
                Some(face),
                "identification must join opposite sides of the same axis",
            );
        }
        if !self.tangential_matches(face, partner) {
            report.push(
                Some(face),
                "identification faces have different tangential grids",
            );
        }
        let ha = self.modes[face.mode].grid.axis(face.axis).spacing();
        let hb = self.modes[partner.mode].grid.axis(partner.axis).spacing();
        if (ha - hb).abs() > 1e-12 * ha {
            report.push(
                Some(face),
                "identification faces have different normal spacing",
            );
        }
    }

    fn check_reset(&self, k: usize, report: &mut ValidationReport) {
        let r = self.resets[k];
        if !self.face_exists(r.source) || !self.face_exists(r.target) {
            report.push(
                None,
                format!("reset {k}: source or target face does not exist"),
            );
            return;
        }
        match self.condition(r.source) {
            Some(BoundaryCondition::Guard { reset }) if reset == k => {}
            _ => report.push(
                Some(r.source),
                format!("reset {k}: source face is not its guard"),
            ),
        }
        match self.condition(r.target) {
            Some(BoundaryCondition::ResetImage)
            | Some(BoundaryCondition::Identification { .. }) => {}
            _ => report.push(
                Some(r.target),
                format!("reset {k}: target must be a reset image or identification face"),
            ),
        }
        if !self.tangential_matches(r.source, r.target) {
            report.push(
                Some(r.target),
                format!("reset {k}: target tangential grid differs from source"),
            );
            return;
        }
        if self.reset_index_shift(k).is_none() {
            report.push(
                Some(r.source),
                format!("reset {k}: shift not cell-aligned (shift = {})", r.shift),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AxisGrid;
    use std::f64::consts::PI;

    fn interval_mode(h: f64) -> Mode {
        Mode::new(
            ChartGeometry::interval(0.0, 2.0).unwrap(),
            GridSpec::new(vec![AxisGrid::new(20, 0.0, 2.0)]).unwrap(),
            Drift::LinearRestoring {
                gamma: 1.0,
                center: 3.0,
            },
            h,
        )
    }

    fn ex3(h: f64) -> HybridSystem {
        let m = interval_mode(h)
            .with_boundary(0, Side::Low, BoundaryCondition::ResetImage)
            .with_boundary(0, Side::High, BoundaryCondition::Guard { reset: 0 });
        HybridSystem::new(
            vec![m],
            vec![ResetMap {
                source: FaceId::new(0, 0, Side::High),
                target: FaceId::new(0, 0, Side::Low),
                shift: 0.0,
            }],
        )
    }

    #[test]
    fn reset_system_validates() {
        let r = ex3(0.5).validate();
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn zero_diffusion_rejected() {
        let r = ex3(0.0).validate();
        assert!(r.contains("diffusion strength must be positive"));
    }

    #[test]
    fn unassigned_and_dangling_guard() {
        let m =
            interval_mode(0.5).with_boundary(0, Side::High, BoundaryCondition::Guard { reset: 3 });
        let r = HybridSystem::new(vec![m], vec![]).validate();
        assert!(r.contains("unassigned face"));
        assert!(r.contains("guard without reset"));
    }

    fn torus_half(n_theta: usize, shift: f64) -> HybridSystem {
        let chart = ChartGeometry::torus(2.0, 1.0).unwrap();
        let grid = GridSpec::new(vec![
            AxisGrid::new(10, 0.0, PI),
            AxisGrid::periodic(n_theta, 0.0, 2.0 * PI),
        ])
        .unwrap();
        let m = Mode::new(chart, grid, Drift::Zero, 0.5)
            .with_boundary(0, Side::Low, BoundaryCondition::ResetImage)
            .with_boundary(0, Side::High, BoundaryCondition::Guard { reset: 0 });
        HybridSystem::new(
            vec![m],
            vec![ResetMap {
                source: FaceId::new(0, 0, Side::High),
                target: FaceId::new(0, 0, Side::Low),
                shift,
            }],
        )
    }

    #[test]
    fn odd_theta_grid_with_half_turn_shift_rejected() {
        let r = torus_half(101, PI).validate();
        assert!(r.contains("shift not cell-aligned"), "{r}");
        assert!(torus_half(100, PI).validate().is_ok());
    }

    #[test]
    fn half_turn_permutation_is_an_involution() {
        let s = torus_half(100, PI);
        let p = s.reset_permutation(0).unwrap();
        assert_eq!(p[3], 53);
        for j in 0..100 {
            assert_eq!(p[p[j]], j);
        }
    }

    #[test]
    fn wrapped_axis_with_condition_rejected() {
        let mut s = torus_half(100, PI);
        s.modes[0].boundary[1][0] = Some(BoundaryCondition::Reflecting);
        assert!(s.validate().contains("wrapped axis"));
    }

    #[test]
    fn reset_onto_reflecting_face_rejected() {
        let mut s = ex3(0.5);
        s.modes[0].boundary[0][0] = Some(BoundaryCondition::Reflecting);
        assert!(s.validate().contains("target must be a reset image"));
    }
}
