//! Cell-centered grid functions over all modes of a hybrid system.

use crate::geometry::Point;
use crate::model::HybridSystem;

/// Per-mode cell values concatenated in mode order, with a timestamp.
///
/// Densities are probability per unit Riemannian volume; observables are
/// point values at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub time: f64,
}

pub type DensityField = Field;
pub type ObservableField = Field;

impl Field {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        Self { values, time }
    }

    pub fn zeros(system: &HybridSystem) -> Self {
        Self::new(vec![0.0; system.total_cells()], 0.0)
    }

    pub fn constant(system: &HybridSystem, c: f64) -> Self {
        Self::new(vec![c; system.total_cells()], 0.0)
    }

    /// Samples `f(mode, point)` at every cell center.
    pub fn from_fn(system: &HybridSystem, f: impl Fn(usize, Point) -> f64) -> Self {
        let mut values = Vec::with_capacity(system.total_cells());
        for (q, m) in system.modes.iter().enumerate() {
            for idx in 0..m.grid.len() {
                values.push(f(q, m.grid.cell_center(idx)));
            }
        }
        Self::new(values, 0.0)
    }

    pub fn mode<'a>(&'a self, system: &HybridSystem, q: usize) -> &'a [f64] {
        let off = system.offsets();
        &self.values[off[q]..off[q + 1]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
