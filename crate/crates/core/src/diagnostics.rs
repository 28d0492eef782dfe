//! Mass, flux-balance, comparison and duality diagnostics, and the per-step
//! run report.

use std::io;

use thiserror::Error;

use crate::discretization::Discretization;
use crate::fv::{FaceFluxSet, FpOperator};
use crate::koopman::{koopman_expectation, AdvectionStencil, GridMismatch, KoopmanOperator};
use crate::model::{BoundaryCondition, FaceId, HybridSystem, InvalidSystem};
use crate::time::{step, SolverConfig, TimeError};

#[derive(Debug, Clone, PartialEq)]
pub struct MassReport {
    pub per_mode: Vec<f64>,
    pub total: f64,
}

/// `sum_q sum_cells v J dV`, accumulated in cell order.
pub fn total_mass(disc: &Discretization, v: &[f64]) -> MassReport {
    let system = disc.system();
    let mut per_mode = Vec::with_capacity(system.modes.len());
    for q in 0..system.modes.len() {
        let data = disc.mode(q);
        let w = data.metrics.cell_width;
        let m: f64 = disc
            .mode_slice(v, q)
            .iter()
            .zip(&data.metrics.cell_jacobian)
            .map(|(x, j)| x * j * w)
            .sum();
        per_mode.push(m);
    }
    let total = per_mode.iter().sum();
    MassReport { per_mode, total }
}

/// Residuals of the discrete boundary identities for one flux evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FluxBalanceReport {
    /// Per reset: `max_j |export_j - import_{perm(j)}|`.
    pub reset_residuals: Vec<f64>,
    /// Per reset: total exported mass rate.
    pub exported: Vec<f64>,
    /// Per reset: total imported mass rate.
    pub imported: Vec<f64>,
    /// Per reset image face: max residual of
    /// `F_image - F_partner = sum of imports` (partner term only for
    /// identification faces).
    pub image_residuals: Vec<(FaceId, f64)>,
    /// Largest own flux at reflecting and reset-image faces.
    pub reflecting_residual: f64,
    /// Largest flux jump across identification pairs, imports removed.
    pub identification_residual: f64,
    pub absorbed_rate: f64,
}

impl FluxBalanceReport {
    pub fn max_residual(&self) -> f64 {
        self.reset_residuals
            .iter()
            .chain(self.image_residuals.iter().map(|(_, r)| r))
            .fold(
                self.reflecting_residual.max(self.identification_residual),
                |m, &r| m.max(r),
            )
    }
}

pub fn flux_balance_report(disc: &Discretization, fluxes: &FaceFluxSet) -> FluxBalanceReport {
    let system = disc.system();
    let mut out = FluxBalanceReport {
        absorbed_rate: fluxes.absorbed,
        ..Default::default()
    };
    for (k, r) in system.resets.iter().enumerate() {
        let perm = disc.permutation(k);
        let (ex, im) = (&fluxes.exports[k], &fluxes.imports[k]);
        let res = ex
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (j, e)| m.max((e - im[perm[j]]).abs()));
        out.reset_residuals.push(res);
        let w = system.modes[r.source.mode]
            .grid
            .tangential_width(r.source.axis);
        out.exported.push(ex.iter().sum::<f64>() * w);
        out.imported.push(im.iter().sum::<f64>() * w);
    }

    // Inward import per tangential cell of `face`, recomputed from the source
    // face fluxes rather than the stored transfer vectors.
    let imports_into = |face: FaceId| -> Vec<f64> {
        let lines = system.modes[face.mode].grid.line_count(face.axis);
        let mut acc = vec![0.0; lines];
        for k in system.resets_into(face) {
            let src = system.resets[k].source;
            let perm = disc.permutation(k);
            let s = src.side.normal_sign();
            for (j, f) in fluxes.face_flux(system, src).iter().enumerate() {
                acc[perm[j]] += s * f;
            }
        }
        acc
    };
    let own = |face: FaceId| -> Vec<f64> {
        let s_in = -face.side.normal_sign();
        let imp = imports_into(face);
        fluxes
            .face_flux(system, face)
            .iter()
            .zip(&imp)
            .map(|(f, i)| f - s_in * i)
            .collect()
    };

    for face in system.faces() {
        let bc = system.condition(face);
        match bc {
            Some(BoundaryCondition::Reflecting) | Some(BoundaryCondition::ResetImage) => {
                let m = own(face).iter().fold(0.0f64, |m, f| m.max(f.abs()));
                out.reflecting_residual = out.reflecting_residual.max(m);
            }
            Some(BoundaryCondition::Identification { partner }) if face < partner => {
                let a = own(face);
                let b = own(partner);
                let m = a
                    .iter()
                    .zip(&b)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                out.identification_residual = out.identification_residual.max(m);
            }
            _ => {}
        }
        if system.resets_into(face).is_empty() {
            continue;
        }
        let s_in = -face.side.normal_sign();
        let f = fluxes.face_flux(system, face);
        let partner = match bc {
            Some(BoundaryCondition::Identification { partner }) => {
                Some(fluxes.face_flux(system, partner))
            }
            _ => None,
        };
        let imp = imports_into(face);
        let mut m = 0.0f64;
        for t in 0..f.len() {
            let p = partner.as_ref().map_or(0.0, |p| p[t]);
            m = m.max((f[t] - p - s_in * imp[t]).abs());
        }
        out.image_residuals.push((face, m));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldComparison {
    pub l1: f64,
    pub linf: f64,
    pub mass_difference: f64,
}

/// `L1 = sum |a - b| J dV`, `Linf = max |a - b|`, and `mass(a) - mass(b)`.
pub fn compare_fields(
    disc: &Discretization,
    a: &[f64],
    b: &[f64],
) -> Result<FieldComparison, GridMismatch> {
    for len in [a.len(), b.len()] {
        if len != disc.len() {
            return Err(GridMismatch {
                expected: disc.len(),
                found: len,
            });
        }
    }
    let vol = disc.cell_volumes();
    let mut l1 = 0.0;
    let mut linf = 0.0f64;
    let mut dm = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        l1 += d.abs() * vol[i];
        linf = linf.max(d.abs());
        dm += d * vol[i];
    }
    Ok(FieldComparison {
        l1,
        linf,
        mass_difference: dm,
    })
}

#[derive(Debug, Error)]
pub enum DualityError {
    #[error(transparent)]
    Invalid(#[from] InvalidSystem),
    #[error(transparent)]
    Solver(#[from] TimeError),
    #[error(transparent)]
    Grid(#[from] GridMismatch),
}

/// Evolves density `g` and observable `f` to `t_final` in `steps` steps of
/// the configured method and returns `|<P_T g, f> - <g, K_T f>|`.
pub fn duality_residual(
    system: &HybridSystem,
    f: &[f64],
    g: &[f64],
    t_final: f64,
    steps: usize,
    solver: &SolverConfig,
    stencil: AdvectionStencil,
) -> Result<f64, DualityError> {
    let fp = FpOperator::new(system)?;
    let disc = fp.discretization().clone();
    let ko = KoopmanOperator::from_discretization(disc.clone(), stencil);
    let mut v = g.to_vec();
    let mut u = f.to_vec();
    if t_final > 0.0 && steps > 0 {
        let cfg = SolverConfig {
            dt: t_final / steps as f64,
            ..solver.clone()
        };
        for _ in 0..steps {
            v = step(&fp, &v, &cfg)?.0;
            u = step(&ko, &u, &cfg)?.0;
        }
    }
    let forward = koopman_expectation(&disc, f, &v)?;
    let backward = koopman_expectation(&disc, &u, g)?;
    Ok((forward - backward).abs())
}

/// One recorded step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub time: f64,
    pub mass_per_mode: Vec<f64>,
    pub mass_total: f64,
    pub absorbed_cum: f64,
    pub exported: Vec<f64>,
    pub imported: Vec<f64>,
    pub absorbed_rate: f64,
    pub flux_residual: f64,
    pub newton_iters: usize,
    pub gmres_iters: usize,
    pub l1_reference: Option<f64>,
    pub linf_reference: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// Time series of a run, one record per recorded step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub mode_count: usize,
    pub reset_count: usize,
    pub records: Vec<RunRecord>,
}

impl RunReport {
    pub fn new(mode_count: usize, reset_count: usize) -> Self {
        Self {
            mode_count,
            reset_count,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, r: RunRecord) {
        debug_assert_eq!(r.mass_per_mode.len(), self.mode_count);
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_mass_deviation(&self, reference: f64) -> f64 {
        self.records
            .iter()
            .fold(0.0f64, |m, r| m.max((r.mass_total - reference).abs()))
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "time".to_string()];
        h.extend((1..=self.mode_count).map(|q| format!("mass_q{q}")));
        h.push("mass_total".into());
        h.push("absorbed_cum".into());
        for k in 0..self.reset_count {
            h.push(format!("exported_r{k}"));
            h.push(format!("imported_r{k}"));
        }
        for c in [
            "absorbed_rate",
            "flux_residual",
            "newton_iters",
            "gmres_iters",
            "l1_reference",
            "linf_reference",
        ] {
            h.push(c.into());
        }
        h
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), ReportError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.step.to_string(), r.time.to_string()];
            row.extend(r.mass_per_mode.iter().map(f64::to_string));
            row.push(r.mass_total.to_string());
            row.push(r.absorbed_cum.to_string());
            for k in 0..self.reset_count {
                row.push(r.exported[k].to_string());
                row.push(r.imported[k].to_string());
            }
            row.push(r.absorbed_rate.to_string());
            row.push(r.flux_residual.to_string());
            row.push(r.newton_iters.to_string());
            row.push(r.gmres_iters.to_string());
            row.push(opt(r.l1_reference));
            row.push(opt(r.linf_reference));
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, ReportError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let count = |prefix: &str| headers.iter().filter(|h| h.starts_with(prefix)).count();
        let mode_count = count("mass_q");
        let reset_count = count("exported_r");
        let mut report = Self::new(mode_count, reset_count);
        if report.header() != headers.iter().collect::<Vec<_>>() {
            return Err(ReportError::Malformed("unexpected columns".into()));
        }
        for rec in rd.records() {
            let rec = rec?;
            let mut it = rec.iter();
            let mut next = || {
                it.next()
                    .ok_or_else(|| ReportError::Malformed("short row".into()))
            };
            let f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| ReportError::Malformed(format!("{s}: {e}")))
            };
            let u = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| ReportError::Malformed(format!("{s}: {e}")))
            };
            let o = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    f(s).map(Some)
                }
            };
            let step = u(next()?)?;
            let time = f(next()?)?;
            let mut mass_per_mode = Vec::with_capacity(mode_count);
            for _ in 0..mode_count {
                mass_per_mode.push(f(next()?)?);
            }
            let mass_total = f(next()?)?;
            let absorbed_cum = f(next()?)?;
            let (mut exported, mut imported) = (Vec::new(), Vec::new());
            for _ in 0..reset_count {
                exported.push(f(next()?)?);
                imported.push(f(next()?)?);
            }
            report.records.push(RunRecord {
                step,
                time,
                mass_per_mode,
                mass_total,
                absorbed_cum,
                exported,
                imported,
                absorbed_rate: f(next()?)?,
                flux_residual: f(next()?)?,
                newton_iters: u(next()?)?,
                gmres_iters: u(next()?)?,
                l1_reference: o(next()?)?,
                linf_reference: o(next()?)?,
            });
        }
        Ok(report)
    }
}
