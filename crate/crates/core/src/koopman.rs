//! Backward (Koopman) generator `A u = X . grad u + H Lap u` on cell-centered
//! observables, with closures dual to the density solver: Neumann at
//! reflecting faces, `u = 0` at absorbing faces, `u = u o Phi` at guards.

use thiserror::Error;

use crate::discretization::{Discretization, FieldKind};
use crate::fv::{weno5_reconstruct, weno5_reconstruct_right};
use crate::geometry::GHOST_DEPTH;
use crate::model::{FaceId, HybridSystem, InvalidSystem};

/// Discretization of the transport term `X . grad u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvectionStencil {
    /// First-order upwind; monotone.
    #[default]
    Upwind,
    Weno5,
}

impl AdvectionStencil {
    pub fn name(self) -> &'static str {
        match self {
            AdvectionStencil::Upwind => "upwind",
            AdvectionStencil::Weno5 => "weno5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "upwind" => Some(Self::Upwind),
            "weno5" => Some(Self::Weno5),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KoopmanOperator {
    disc: Discretization,
    stencil: AdvectionStencil,
}

impl KoopmanOperator {
    pub fn new(system: &HybridSystem, stencil: AdvectionStencil) -> Result<Self, InvalidSystem> {
        Ok(Self {
            disc: Discretization::new(system)?,
            stencil,
        })
    }

    pub fn from_discretization(disc: Discretization, stencil: AdvectionStencil) -> Self {
        Self { disc, stencil }
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn stencil(&self) -> AdvectionStencil {
        self.stencil
    }

    pub fn len(&self) -> usize {
        self.disc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disc.is_empty()
    }

    /// `du/dt` at every cell.
    pub fn rhs(&self, u: &[f64], out: &mut [f64]) {
        let system = self.disc.system();
        let mut p = Vec::new();
        for (q, m) in system.modes.iter().enumerate() {
            let grid = &m.grid;
            let data = self.disc.mode(q);
            let off = self.disc.offsets()[q];
            let cells = &mut out[off..off + grid.len()];
            cells.iter_mut().for_each(|c| *c = 0.0);
            for axis in 0..grid.dimension() {
                let n = grid.line_len(axis);
                let h = data.spacing[axis];
                p.resize(n + 2 * GHOST_DEPTH, 0.0);
                for line in 0..grid.line_count(axis) {
                    self.disc
                        .fill_line(u, q, axis, line, FieldKind::Observable, &mut p);
                    for k in 0..n {
                        let c = grid.cell_on_line(axis, k, line);
                        let i = k + GHOST_DEPTH;
                        let x = data.cell_velocity[c][axis];
                        let adv = if x == 0.0 {
                            0.0
                        } else {
                            x * match (self.stencil, x > 0.0) {
                                (AdvectionStencil::Upwind, true) => (p[i + 1] - p[i]) / h,
                                (AdvectionStencil::Upwind, false) => (p[i] - p[i - 1]) / h,
                                (AdvectionStencil::Weno5, true) => {
                                    (weno5_reconstruct_right(stencil(&p, i - 1))
                                        - weno5_reconstruct_right(stencil(&p, i - 2)))
                                        / h
                                }
                                (AdvectionStencil::Weno5, false) => {
                                    (weno5_reconstruct(stencil(&p, i - 2))
                                        - weno5_reconstruct(stencil(&p, i - 3)))
                                        / h
                                }
                            }
                        };
                        let lo = grid.face_on_line(axis, k, line);
                        let hi = grid.face_on_line(axis, k + 1, line);
                        let jg = |f: usize| {
                            data.metrics.face_jacobian[axis][f]
                                * data.metrics.face_inv_metric[axis][f]
                        };
                        let lap = (jg(hi) * (p[i + 1] - p[i]) - jg(lo) * (p[i] - p[i - 1]))
                            / (data.metrics.cell_jacobian[c] * h * h);
                        cells[c] += adv + m.diffusion * lap;
                    }
                }
            }
        }
    }

    /// Face values of `u` after closure, per tangential cell of `face`.
    pub fn face_values(&self, u: &[f64], face: FaceId) -> Vec<f64> {
        let lines = self.disc.system().modes[face.mode]
            .grid
            .line_count(face.axis);
        (0..lines)
            .map(|t| self.disc.observable_face_value(u, face, t))
            .collect()
    }

    /// Outward one-sided normal difference `(ghost - inner) / h` at `face`.
    pub fn normal_difference(&self, u: &[f64], face: FaceId) -> Vec<f64> {
        let g = &self.disc.system().modes[face.mode].grid;
        let h = g.axis(face.axis).spacing();
        (0..g.line_count(face.axis))
            .map(|t| {
                let inner = self.disc.inner(u, face, t, 0);
                let ghost = self.disc.ghost(u, face, t, 0, FieldKind::Observable);
                (ghost - inner) / h
            })
            .collect()
    }
}

fn stencil(p: &[f64], start: usize) -> [f64; 5] {
    [
        p[start],
        p[start + 1],
        p[start + 2],
        p[start + 3],
        p[start + 4],
    ]
}

/// Observable ghosts of one boundary face.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableClosure {
    pub face: FaceId,
    /// Per tangential cell, the three ghost values ordered outward.
    pub ghosts: Vec<[f64; 3]>,
    pub face_values: Vec<f64>,
}

pub fn koopman_boundary_closure(op: &KoopmanOperator, u: &[f64]) -> Vec<ObservableClosure> {
    let disc = op.discretization();
    let system = disc.system();
    system
        .faces()
        .into_iter()
        .map(|face| {
            let lines = system.modes[face.mode].grid.line_count(face.axis);
            ObservableClosure {
                face,
                ghosts: (0..lines)
                    .map(|t| {
                        std::array::from_fn(|k| disc.ghost(u, face, t, k, FieldKind::Observable))
                    })
                    .collect(),
                face_values: op.face_values(u, face),
            }
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("field length {found} does not match the grid ({expected} cells)")]
pub struct GridMismatch {
    pub expected: usize,
    pub found: usize,
}

/// Duality pairing `<v, u> = sum_q sum_cells v u J dV`.
pub fn koopman_expectation(
    disc: &Discretization,
    u: &[f64],
    v: &[f64],
) -> Result<f64, GridMismatch> {
    for len in [u.len(), v.len()] {
        if len != disc.len() {
            return Err(GridMismatch {
                expected: disc.len(),
                found: len,
            });
        }
    }
    Ok(disc
        .cell_volumes()
        .iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}
