//! Chart geometry for each mode: diagonal metric, volume Jacobian, uniform
//! grids and boundary faces.
//!
//! Two charts are supported: a closed interval with the Euclidean metric and
//! the 2-torus embedded in R^3. On the torus, axis 0 is the toroidal angle
//! `psi` and axis 1 the poloidal angle `theta`, so grid index `(i, j)` maps to
//! `(psi_i, theta_j)`.

use std::f64::consts::PI;

use thiserror::Error;

/// Chart coordinates. Only the first `dimension()` entries are meaningful.
pub type Point = [f64; 2];

/// Minimum number of cells per axis. The WENO5 stencil reaches three cells
/// past each face.
pub const MIN_CELLS: usize = 6;

/// Ghost layers on each side of a line.
pub const GHOST_DEPTH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("torus radii must satisfy R > r > 0 (got R = {major}, r = {minor})")]
    InvalidTorus { major: f64, minor: f64 },
    #[error("interval requires a < b (got a = {a}, b = {b})")]
    InvalidInterval { a: f64, b: f64 },
    #[error("axis {axis}: {n} cells is below the minimum of {MIN_CELLS}")]
    TooFewCells { axis: usize, n: usize },
    #[error("axis {axis}: empty or inverted range [{lo}, {hi}]")]
    EmptyRange { axis: usize, lo: f64, hi: f64 },
    #[error("grid has {grid} axes but the chart is {chart}-dimensional")]
    DimensionMismatch { grid: usize, chart: usize },
    #[error("non-positive {what} ({value}) at {point:?}")]
    NonPositive {
        what: &'static str,
        value: f64,
        point: Point,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// `[a, b]` with `g = 1`, `J = 1`.
    Interval { a: f64, b: f64 },
    /// Torus with major radius `major` (R) and minor radius `minor` (r).
    Torus { major: f64, minor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartGeometry {
    chart: Chart,
}

impl ChartGeometry {
    pub fn torus(major: f64, minor: f64) -> Result<Self, GeometryError> {
        if !(minor > 0.0 && major > minor && major.is_finite()) {
            return Err(GeometryError::InvalidTorus { major, minor });
        }
        Ok(Self {
            chart: Chart::Torus { major, minor },
        })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self, GeometryError> {
        if !(a < b && a.is_finite() && b.is_finite()) {
            return Err(GeometryError::InvalidInterval { a, b });
        }
        Ok(Self {
            chart: Chart::Interval { a, b },
        })
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn dimension(&self) -> usize {
        match self.chart {
            Chart::Interval { .. } => 1,
            Chart::Torus { .. } => 2,
        }
    }

    /// Diagonal metric entries `g_ii`. Absent axes report 1.
    pub fn metric_diag(&self, p: Point) -> [f64; 2] {
        match self.chart {
            Chart::Interval { .. } => [1.0, 1.0],
            Chart::Torus { major, minor } => {
                let rho = major + minor * p[1].cos();
                [rho * rho, minor * minor]
            }
        }
    }

    /// Inverse metric entries `g^ii = 1 / g_ii`.
    pub fn inverse_metric_diag(&self, p: Point) -> [f64; 2] {
        let g = self.metric_diag(p);
        [1.0 / g[0], 1.0 / g[1]]
    }

    /// Volume Jacobian `J = sqrt(det g)`.
    pub fn jacobian(&self, p: Point) -> f64 {
        match self.chart {
            Chart::Interval { .. } => 1.0,
            Chart::Torus { major, minor } => minor * (major + minor * p[1].cos()),
        }
    }

    /// First-order part of the Laplace-Beltrami operator in chart
    /// coordinates, `(1/J) d_i (J g^ii)`. Brownian motion needs `H` times this
    /// as an Ito drift on top of the `sigma g_ii^{-1/2}` noise.
    pub fn laplacian_drift(&self, p: Point) -> [f64; 2] {
        match self.chart {
            Chart::Interval { .. } => [0.0, 0.0],
            Chart::Torus { major, minor } => {
                let rho = major + minor * p[1].cos();
                [0.0, -p[1].sin() / (minor * rho)]
            }
        }
    }

    pub fn axis_periodic(&self) -> [bool; 2] {
        match self.chart {
            Chart::Interval { .. } => [false, false],
            Chart::Torus { .. } => [true, true],
        }
    }

    pub fn period(&self, axis: usize) -> Option<f64> {
        if axis < self.dimension() && self.axis_periodic()[axis] {
            Some(2.0 * PI)
        } else {
            None
        }
    }

    /// Coordinate range covered by the chart along `axis`.
    pub fn domain(&self, axis: usize) -> (f64, f64) {
        match self.chart {
            Chart::Interval { a, b } => (a, b),
            Chart::Torus { .. } => {
                debug_assert!(axis < 2);
                (0.0, 2.0 * PI)
            }
        }
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match self.chart {
            Chart::Interval { a, b } => vec![("a", a), ("b", b)],
            Chart::Torus { major, minor } => vec![("R", major), ("r", minor)],
        }
    }

    /// Analytic Riemannian volume of the whole chart.
    pub fn volume(&self) -> f64 {
        match self.chart {
            Chart::Interval { a, b } => b - a,
            Chart::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    /// The axis closes on itself (covers a full period with no boundary).
    pub wrap: bool,
}

impl AxisGrid {
    pub fn new(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            n,
            lo,
            hi,
            wrap: false,
        }
    }

    pub fn periodic(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            n,
            lo,
            hi,
            wrap: true,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.spacing()
    }

    pub fn face(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    /// Cell containing `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> usize {
        let k = ((x - self.lo) / self.spacing()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }
}

/// Uniform tensor-product grid over one mode's chart domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<AxisGrid>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisGrid>) -> Result<Self, GeometryError> {
        for (axis, g) in axes.iter().enumerate() {
            if g.n < MIN_CELLS {
                return Err(GeometryError::TooFewCells { axis, n: g.n });
            }
            if !(g.lo < g.hi && g.lo.is_finite() && g.hi.is_finite()) {
                return Err(GeometryError::EmptyRange {
                    axis,
                    lo: g.lo,
                    hi: g.hi,
                });
            }
        }
        Ok(Self { axes })
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisGrid] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &AxisGrid {
        &self.axes[a]
    }

    /// `[n0, n1]`, with `n1 = 1` for one-dimensional grids.
    pub fn shape(&self) -> [usize; 2] {
        [self.axes[0].n, self.axes.get(1).map_or(1, |g| g.n)]
    }

    pub fn len(&self) -> usize {
        let [n0, n1] = self.shape();
        n0 * n1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spacing per axis; 1 for an absent axis.
    pub fn spacing(&self) -> [f64; 2] {
        [
            self.axes[0].spacing(),
            self.axes.get(1).map_or(1.0, |g| g.spacing()),
        ]
    }

    /// Product of the cell widths (coordinate volume of one cell).
    pub fn cell_width(&self) -> f64 {
        let [d0, d1] = self.spacing();
        d0 * d1
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.shape()[1] + j
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let n1 = self.shape()[1];
        let (i, j) = (idx / n1, idx % n1);
        [
            self.axes[0].center(i),
            self.axes.get(1).map_or(0.0, |g| g.center(j)),
        ]
    }

    /// Cells along `axis` (the line length).
    pub fn line_len(&self, axis: usize) -> usize {
        self.shape()[axis]
    }

    /// Number of lines parallel to `axis` (equal to the tangential cell count
    /// of a face normal to `axis`).
    pub fn line_count(&self, axis: usize) -> usize {
        let [n0, n1] = self.shape();
        if axis == 0 {
            n1
        } else {
            n0
        }
    }

    /// Flat cell index of position `pos` along `axis` on line `line`.
    pub fn cell_on_line(&self, axis: usize, pos: usize, line: usize) -> usize {
        if axis == 0 {
            self.index(pos, line)
        } else {
            self.index(line, pos)
        }
    }

    /// Number of faces normal to `axis`, counting both boundary faces.
    pub fn face_count(&self, axis: usize) -> usize {
        (self.line_len(axis) + 1) * self.line_count(axis)
    }

    /// Flat index of face `f` (0..=n) along `axis` on line `line`.
    pub fn face_on_line(&self, axis: usize, f: usize, line: usize) -> usize {
        if axis == 0 {
            f * self.shape()[1] + line
        } else {
            line * (self.shape()[1] + 1) + f
        }
    }

    /// Face center for face `f` along `axis` on line `line`.
    pub fn face_center(&self, axis: usize, f: usize, line: usize) -> Point {
        if axis == 0 {
            [
                self.axes[0].face(f),
                self.axes.get(1).map_or(0.0, |g| g.center(line)),
            ]
        } else {
            [self.axes[0].center(line), self.axes[1].face(f)]
        }
    }

    /// Width of one tangential cell on a face normal to `axis`; 1 in 1D.
    pub fn tangential_width(&self, axis: usize) -> f64 {
        if self.dimension() == 1 {
            1.0
        } else {
            self.axes[1 - axis].spacing()
        }
    }

    /// Tangential axis grid of a face normal to `axis`, if any.
    pub fn tangential_axis(&self, axis: usize) -> Option<&AxisGrid> {
        if self.dimension() == 1 {
            None
        } else {
            Some(&self.axes[1 - axis])
        }
    }
}

/// How face coefficients (J, g^ii, drift) are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientEvaluation {
    /// Closed-form evaluation at the face center.
    #[default]
    Exact,
    /// Mean of the two adjacent cell-center values.
    Averaged,
}

/// Metric quantities sampled on a grid, checked positive at construction.
#[derive(Debug, Clone)]
pub struct GridMetrics {
    pub cell_jacobian: Vec<f64>,
    /// Per axis, `J` at faces normal to that axis.
    pub face_jacobian: [Vec<f64>; 2],
    /// Per axis, `g^ii` at faces normal to that axis.
    pub face_inv_metric: [Vec<f64>; 2],
    pub cell_width: f64,
}

impl GridMetrics {
    pub fn new(
        chart: &ChartGeometry,
        grid: &GridSpec,
        evaluation: CoefficientEvaluation,
    ) -> Result<Self, GeometryError> {
        if grid.dimension() != chart.dimension() {
            return Err(GeometryError::DimensionMismatch {
                grid: grid.dimension(),
                chart: chart.dimension(),
            });
        }
        let cell_jacobian: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let p = grid.cell_center(idx);
                positive("J", chart.jacobian(p), p)
            })
            .collect::<Result<_, _>>()?;
        for idx in 0..grid.len() {
            let p = grid.cell_center(idx);
            for (a, g) in chart.metric_diag(p).into_iter().enumerate() {
                positive(if a == 0 { "g_00" } else { "g_11" }, g, p)?;
            }
        }

        let mut face_jacobian = [Vec::new(), Vec::new()];
        let mut face_inv_metric = [Vec::new(), Vec::new()];
        for axis in 0..grid.dimension() {
            let mut jac = vec![0.0; grid.face_count(axis)];
            let mut ginv = vec![0.0; grid.face_count(axis)];
            let h = grid.axis(axis).spacing();
            for line in 0..grid.line_count(axis) {
                for f in 0..=grid.line_len(axis) {
                    let p = grid.face_center(axis, f, line);
                    let (j, gi) = match evaluation {
                        CoefficientEvaluation::Exact => {
                            (chart.jacobian(p), chart.inverse_metric_diag(p)[axis])
                        }
                        CoefficientEvaluation::Averaged => {
                            let mut lo = p;
                            let mut hi = p;
                            lo[axis] -= 0.5 * h;
                            hi[axis] += 0.5 * h;
                            (
                                0.5 * (chart.jacobian(lo) + chart.jacobian(hi)),
                                0.5 * (chart.inverse_metric_diag(lo)[axis]
                                    + chart.inverse_metric_diag(hi)[axis]),
                            )
                        }
                    };
                    let k = grid.face_on_line(axis, f, line);
                    jac[k] = positive("face J", j, p)?;
                    ginv[k] = positive("face g^ii", gi, p)?;
                }
            }
            face_jacobian[axis] = jac;
            face_inv_metric[axis] = ginv;
        }

        Ok(Self {
            cell_jacobian,
            face_jacobian,
            face_inv_metric,
            cell_width: grid.cell_width(),
        })
    }

    /// Riemannian volume of cell `idx`.
    pub fn cell_volume(&self, idx: usize) -> f64 {
        self.cell_jacobian[idx] * self.cell_width
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_jacobian.iter().sum::<f64>() * self.cell_width
    }
}

fn positive(what: &'static str, value: f64, point: Point) -> Result<f64, GeometryError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(GeometryError::NonPositive { what, value, point })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Low,
    High,
}

impl Side {
    /// Sign of the outward normal in chart coordinates.
    pub fn normal_sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Low => Side::High,
            Side::High => Side::Low,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Low => 0,
            Side::High => 1,
        }
    }
}

/// Discrete boundary face: the outward orientation and the per-cell weights
/// turning a face flux into a mass rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace {
    pub mode: usize,
    pub axis: usize,
    pub side: Side,
    pub normal_sign: f64,
    /// Chart coordinate of the face along `axis`.
    pub coordinate: f64,
    /// Tangential cell widths (all 1 in 1D).
    pub weights: Vec<f64>,
    /// `J` at each face cell center.
    pub jacobian: Vec<f64>,
    /// `g^ii` at each face cell center.
    pub inv_metric: Vec<f64>,
}

impl BoundaryFace {
    pub fn new(
        mode: usize,
        chart: &ChartGeometry,
        grid: &GridSpec,
        axis: usize,
        side: Side,
    ) -> Self {
        let f = match side {
            Side::Low => 0,
            Side::High => grid.line_len(axis),
        };
        let lines = grid.line_count(axis);
        let points: Vec<Point> = (0..lines).map(|t| grid.face_center(axis, f, t)).collect();
        Self {
            mode,
            axis,
            side,
            normal_sign: side.normal_sign(),
            coordinate: grid.axis(axis).face(f),
            weights: vec![grid.tangential_width(axis); lines],
            jacobian: points.iter().map(|&p| chart.jacobian(p)).collect(),
            inv_metric: points
                .iter()
                .map(|&p| chart.inverse_metric_diag(p)[axis])
                .collect(),
        }
    }
}
