//! Precomputed per-mode coefficients and ghost-cell closures shared by the
//! density and observable solvers.

use crate::geometry::{CoefficientEvaluation, GridMetrics, Side, GHOST_DEPTH};
use crate::model::{BoundaryCondition, FaceId, HybridSystem, InvalidSystem};

/// Safety factor of the explicit step bound.
pub const CFL_NUMBER: f64 = 0.4;

/// Which field a line is being closed for. Densities and observables obey
/// different (dual) boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Density,
    Observable,
}

#[derive(Debug, Clone)]
pub struct ModeData {
    pub metrics: GridMetrics,
    /// Per axis, the drift component normal to each face.
    pub face_velocity: [Vec<f64>; 2],
    pub cell_velocity: Vec<[f64; 2]>,
    pub spacing: [f64; 2],
}

/// A validated system together with everything the spatial operators need.
#[derive(Debug, Clone)]
pub struct Discretization {
    system: HybridSystem,
    modes: Vec<ModeData>,
    offsets: Vec<usize>,
    perms: Vec<Vec<usize>>,
}

impl Discretization {
    pub fn new(system: &HybridSystem) -> Result<Self, InvalidSystem> {
        Self::with_evaluation(system, CoefficientEvaluation::Exact)
    }

    pub fn with_evaluation(
        system: &HybridSystem,
        evaluation: CoefficientEvaluation,
    ) -> Result<Self, InvalidSystem> {
        let report = system.validate();
        if !report.is_ok() {
            return Err(InvalidSystem(report));
        }
        let mut modes = Vec::with_capacity(system.modes.len());
        for m in &system.modes {
            let metrics = GridMetrics::new(&m.geometry, &m.grid, evaluation).map_err(|e| {
                InvalidSystem(crate::model::ValidationReport {
                    violations: vec![crate::model::Violation {
                        face: None,
                        message: e.to_string(),
                    }],
                })
            })?;
            let grid = &m.grid;
            let mut face_velocity = [Vec::new(), Vec::new()];
            for (axis, fv) in face_velocity.iter_mut().enumerate().take(grid.dimension()) {
                let h = grid.axis(axis).spacing();
                let mut v = vec![0.0; grid.face_count(axis)];
                for line in 0..grid.line_count(axis) {
                    for f in 0..=grid.line_len(axis) {
                        let p = grid.face_center(axis, f, line);
                        v[grid.face_on_line(axis, f, line)] = match evaluation {
                            CoefficientEvaluation::Exact => m.drift.eval(p)[axis],
                            CoefficientEvaluation::Averaged => {
                                let (mut lo, mut hi) = (p, p);
                                lo[axis] -= 0.5 * h;
                                hi[axis] += 0.5 * h;
                                0.5 * (m.drift.eval(lo)[axis] + m.drift.eval(hi)[axis])
                            }
                        };
                    }
                }
                *fv = v;
            }
            let cell_velocity = (0..grid.len())
                .map(|idx| m.drift.eval(grid.cell_center(idx)))
                .collect();
            modes.push(ModeData {
                metrics,
                face_velocity,
                cell_velocity,
                spacing: grid.spacing(),
            });
        }
        let perms = (0..system.resets.len())
            .map(|k| system.reset_permutation(k).expect("validated reset"))
            .collect();
        Ok(Self {
            system: system.clone(),
            modes,
            offsets: system.offsets(),
            perms,
        })
    }

    pub fn system(&self) -> &HybridSystem {
        &self.system
    }

    pub fn mode(&self, q: usize) -> &ModeData {
        &self.modes[q]
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Total number of cells across all modes.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode_slice<'a>(&self, field: &'a [f64], q: usize) -> &'a [f64] {
        &field[self.offsets[q]..self.offsets[q + 1]]
    }

    /// Riemannian volume of each cell, concatenated over modes.
    pub fn cell_volumes(&self) -> Vec<f64> {
        self.modes
            .iter()
            .flat_map(|m| (0..m.metrics.cell_jacobian.len()).map(move |i| m.metrics.cell_volume(i)))
            .collect()
    }

    pub fn permutation(&self, reset: usize) -> &[usize] {
        &self.perms[reset]
    }

    /// Diagonal of `I - dt * H * Lap_h`, the same for both generators.
    pub fn diffusion_diagonal(&self, dt: f64) -> Vec<f64> {
        let mut diag = vec![1.0; self.len()];
        for (q, m) in self.system.modes.iter().enumerate() {
            let grid = &m.grid;
            let data = &self.modes[q];
            let off = self.offsets[q];
            for axis in 0..grid.dimension() {
                let h = data.spacing[axis];
                for line in 0..grid.line_count(axis) {
                    for pos in 0..grid.line_len(axis) {
                        let c = grid.cell_on_line(axis, pos, line);
                        let s: f64 = [pos, pos + 1]
                            .iter()
                            .map(|&f| {
                                let k = grid.face_on_line(axis, f, line);
                                data.metrics.face_jacobian[axis][k]
                                    * data.metrics.face_inv_metric[axis][k]
                            })
                            .sum();
                        diag[off + c] +=
                            dt * m.diffusion * s / (data.metrics.cell_jacobian[c] * h * h);
                    }
                }
            }
        }
        diag
    }

    /// Largest explicit step: `0.4 * min(h / |X|, h^2 / (2 H g^ii))` over
    /// cells and axes.
    pub fn cfl_estimate(&self) -> f64 {
        let mut bound = f64::INFINITY;
        for (q, m) in self.system.modes.iter().enumerate() {
            let data = &self.modes[q];
            for idx in 0..m.grid.len() {
                let p = m.grid.cell_center(idx);
                let ginv = m.geometry.inverse_metric_diag(p);
                for axis in 0..m.grid.dimension() {
                    let h = data.spacing[axis];
                    let x = data.cell_velocity[idx][axis].abs();
                    if x > 0.0 {
                        bound = bound.min(h / x);
                    }
                    bound = bound.min(h * h / (2.0 * m.diffusion * ginv[axis]));
                }
            }
        }
        CFL_NUMBER * bound
    }

    /// Value of `field` in the interior cell `k` cells away from `face`, on
    /// tangential line `line`.
    pub(crate) fn inner(&self, field: &[f64], face: FaceId, line: usize, k: usize) -> f64 {
        let grid = &self.system.modes[face.mode].grid;
        let n = grid.line_len(face.axis);
        let pos = match face.side {
            Side::Low => k,
            Side::High => n - 1 - k,
        };
        field[self.offsets[face.mode] + grid.cell_on_line(face.axis, pos, line)]
    }

    /// Ghost value `k` layers outside `face` (k = 0 touches the face).
    pub(crate) fn ghost(
        &self,
        field: &[f64],
        face: FaceId,
        line: usize,
        k: usize,
        kind: FieldKind,
    ) -> f64 {
        let bc = self.system.condition(face).expect("validated face");
        match bc {
            BoundaryCondition::Reflecting | BoundaryCondition::ResetImage => match kind {
                // A zero-flux wall does not force v' = 0, so an even mirror
                // would hand WENO a kinked stencil next to the wall. The face
                // flux itself is zeroed by the closure either way.
                FieldKind::Density => {
                    let m = (k + 1) as f64;
                    let w = [
                        (m + 1.0) * (m + 2.0) / 2.0,
                        -m * (m + 2.0),
                        m * (m + 1.0) / 2.0,
                    ];
                    (0..3)
                        .map(|j| w[j] * self.inner(field, face, line, j))
                        .sum()
                }
                FieldKind::Observable => self.inner(field, face, line, k),
            },
            BoundaryCondition::Absorbing => -self.inner(field, face, line, k),
            BoundaryCondition::Identification { partner } => self.inner(field, partner, line, k),
            BoundaryCondition::Guard { reset } => match kind {
                FieldKind::Density => -self.inner(field, face, line, k),
                FieldKind::Observable => {
                    let target = self.system.resets[reset].target;
                    let image = self.observable_face_value(field, target, self.perms[reset][line]);
                    2.0 * image - self.inner(field, face, line, k)
                }
            },
        }
    }

    /// Face value of an observable after closure: the mean of the adjacent
    /// interior cell and the first ghost.
    pub fn observable_face_value(&self, field: &[f64], face: FaceId, line: usize) -> f64 {
        let inner = self.inner(field, face, line, 0);
        let ghost = self.ghost(field, face, line, 0, FieldKind::Observable);
        0.5 * (inner + ghost)
    }

    /// Copies line `line` of mode `q` along `axis` into `padded` (length
    /// `n + 2 * GHOST_DEPTH`) and fills the ghost layers.
    pub(crate) fn fill_line(
        &self,
        field: &[f64],
        q: usize,
        axis: usize,
        line: usize,
        kind: FieldKind,
        padded: &mut [f64],
    ) {
        let grid = &self.system.modes[q].grid;
        let n = grid.line_len(axis);
        debug_assert_eq!(padded.len(), n + 2 * GHOST_DEPTH);
        let off = self.offsets[q];
        for pos in 0..n {
            padded[GHOST_DEPTH + pos] = field[off + grid.cell_on_line(axis, pos, line)];
        }
        if grid.axis(axis).wrap {
            for k in 0..GHOST_DEPTH {
                padded[GHOST_DEPTH - 1 - k] = padded[GHOST_DEPTH + n - 1 - k];
                padded[GHOST_DEPTH + n + k] = padded[GHOST_DEPTH + k];
            }
            return;
        }
        let low = FaceId::new(q, axis, Side::Low);
        let high = FaceId::new(q, axis, Side::High);
        for k in 0..GHOST_DEPTH {
            padded[GHOST_DEPTH - 1 - k] = self.ghost(field, low, line, k, kind);
            padded[GHOST_DEPTH + n + k] = self.ghost(field, high, line, k, kind);
        }
    }
}
