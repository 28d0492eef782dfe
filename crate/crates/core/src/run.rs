//! Run orchestration: advances density and observable side by side,
//! records diagnostics every step, and writes snapshots and reports.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::RunConfig;
use crate::diagnostics::{
    compare_fields, flux_balance_report, total_mass, FluxBalanceReport, ReportError, RunRecord,
    RunReport,
};
use crate::discretization::Discretization;
use crate::fv::{check_density, FpOperator, NegativeDensity};
use crate::koopman::KoopmanOperator;
use crate::model::HybridSystem;
use crate::monte_carlo::{
    evolve, histogram_density, histogram_noise_l1, McError, ParticleEnsemble,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::time::{step, Method, Rhs, StepStats, TimeError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("density solver failed at step {step}")]
    Density { step: usize, source: TimeError },
    #[error("observable solver failed at step {step}")]
    Observable { step: usize, source: TimeError },
    #[error("density check failed at step {step}")]
    Negative {
        step: usize,
        source: NegativeDensity,
    },
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error("writing {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// MC histogram agreement at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct McSnapshot {
    pub snapshot: usize,
    pub time: f64,
    pub alive_fraction: f64,
    pub l1: f64,
    /// Expected L1 from histogram noise alone.
    pub noise_l1: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: Option<PathBuf>,
    pub report: RunReport,
    /// One per step, starting with the initial state.
    pub flux_balance: Vec<FluxBalanceReport>,
    pub final_density: Vec<f64>,
    pub final_observable: Vec<f64>,
    pub snapshots: usize,
    pub mc: Vec<McSnapshot>,
    pub max_newton_iters: usize,
}

/// Runs `cfg` and writes every output into its directory (default
/// `runs/<scenario>_<unix seconds>`).
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    execute(cfg, Some(&dir))
}

/// Runs `cfg` without touching the file system.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    execute(cfg, None)
}

pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{}_{secs}", cfg.scenario.kind.name()))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let scenario = cfg.scenario.build()?;
    let system = &scenario.system;
    let fp = FpOperator::new(system).map_err(ScenarioError::from)?;
    let disc = fp.discretization().clone();
    let ko = KoopmanOperator::from_discretization(disc.clone(), cfg.koopman_stencil);
    let nt = cfg.scenario.nt;
    let stride = cfg.scenario.stride;
    let dt = cfg.solver.dt;

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest_text(cfg)).map_err(io_err(&path))?;
    }

    let mut ensemble = match &cfg.mc {
        Some(mc) => Some(ParticleEnsemble::sample_density(
            &disc,
            &scenario.initial_density.values,
            mc.particles,
            cfg.seed,
        )?),
        None => None,
    };
    let mut mc_time = 0.0;

    let mut v = scenario.initial_density.values.clone();
    let mut u = scenario.observable.values.clone();
    let mut absorbed_cum = 0.0;
    let mut report = RunReport::new(system.modes.len(), system.resets.len());
    let mut balances = Vec::with_capacity(nt + 1);
    let mut mc_rows = Vec::new();
    let mut max_newton = 0;

    let record = |stepno: usize,
                  v: &[f64],
                  absorbed_cum: f64,
                  stats: &StepStats,
                  report: &mut RunReport,
                  balances: &mut Vec<FluxBalanceReport>| {
        let fluxes = fp.fluxes(v);
        let bal = flux_balance_report(&disc, &fluxes);
        let mass = total_mass(&disc, v);
        report.push(RunRecord {
            step: stepno,
            time: stepno as f64 * dt,
            mass_per_mode: mass.per_mode,
            mass_total: mass.total,
            absorbed_cum,
            exported: bal.exported.clone(),
            imported: bal.imported.clone(),
            absorbed_rate: bal.absorbed_rate,
            flux_residual: bal.max_residual(),
            newton_iters: stats.newton_iters,
            gmres_iters: stats.gmres_iters,
            l1_reference: None,
            linf_reference: None,
        });
        balances.push(bal);
    };

    record(
        0,
        &v,
        0.0,
        &StepStats::default(),
        &mut report,
        &mut balances,
    );
    let mut snapshot = 0;
    let mut snapshot_out = |k: usize,
                            v: &[f64],
                            u: &[f64],
                            ensemble: &mut Option<ParticleEnsemble>,
                            mc_time: &mut f64,
                            report: &mut RunReport|
     -> Result<(), RunError> {
        let t = k as f64 * stride as f64 * dt;
        if let Some(dir) = out {
            write_fields(dir, "density", k, t, system, v)?;
            write_fields(dir, "observable", k, t, system, u)?;
        }
        if let (Some(ens), Some(mc)) = (ensemble.as_mut(), cfg.mc.as_ref()) {
            evolve(ens, system, t - *mc_time, mc.dt)?;
            *mc_time = t;
            let h = histogram_density(ens, &disc);
            let cmp = compare_fields(&disc, v, &h).expect("same grid");
            if let Some(last) = report.records.last_mut() {
                last.l1_reference = Some(cmp.l1);
                last.linf_reference = Some(cmp.linf);
            }
            mc_rows.push(McSnapshot {
                snapshot: k,
                time: t,
                alive_fraction: ens.alive_fraction(),
                l1: cmp.l1,
                noise_l1: histogram_noise_l1(&disc, v, mc.particles),
            });
            if let Some(dir) = out {
                write_fields(dir, "mc_density", k, t, system, &h)?;
            }
        }
        Ok(())
    };
    snapshot_out(0, &v, &u, &mut ensemble, &mut mc_time, &mut report)?;

    for n in 1..=nt {
        let (next, stats, absorbed) = match cfg.solver.method {
            Method::Implicit => {
                let (next, stats) = step(&fp, &v, &cfg.solver)
                    .map_err(|source| RunError::Density { step: n, source })?;
                let absorbed = dt * fp.fluxes(&next).absorbed;
                (next, stats, absorbed)
            }
            Method::Explicit => {
                let (next, count, absorbed) = explicit_density_step(&fp, &v, dt)
                    .map_err(|source| RunError::Density { step: n, source })?;
                let stats = StepStats {
                    newton_iters: count,
                    ..StepStats::default()
                };
                (next, stats, absorbed)
            }
        };
        check_density(&disc, &next).map_err(|source| RunError::Negative { step: n, source })?;
        v = next;
        absorbed_cum += absorbed;
        max_newton = max_newton.max(stats.newton_iters);
        u = step(&ko, &u, &koopman_config(cfg))
            .map_err(|source| RunError::Observable { step: n, source })?
            .0;
        record(n, &v, absorbed_cum, &stats, &mut report, &mut balances);
        if n % stride == 0 {
            snapshot += 1;
            snapshot_out(snapshot, &v, &u, &mut ensemble, &mut mc_time, &mut report)?;
        }
    }

    if let Some(dir) = out {
        write_reports(dir, &report, &balances, &mc_rows, stride)?;
    }

    Ok(RunSummary {
        out_dir: out.map(Path::to_path_buf),
        report,
        flux_balance: balances,
        final_density: v,
        final_observable: u,
        snapshots: snapshot + 1,
        mc: mc_rows,
        max_newton_iters: max_newton,
    })
}

fn koopman_config(cfg: &RunConfig) -> crate::time::SolverConfig {
    crate::time::SolverConfig {
        method: cfg.koopman_method,
        ..cfg.solver.clone()
    }
}

/// SSP-RK3 substeps of the density equation under the CFL bound, returning
/// the new state, the substep count, and the absorbed mass with the same
/// stage weights as the update.
pub fn explicit_density_step(
    fp: &FpOperator,
    v: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, usize, f64), TimeError> {
    let max_dt = fp.max_stable_dt().unwrap_or(dt);
    let count = ((dt / max_dt).ceil() as usize).max(1);
    let h = dt / count as f64;
    let n = v.len();
    let mut state = v.to_vec();
    let mut absorbed = 0.0;
    let mut k = vec![0.0; n];
    for _ in 0..count {
        let a0 = fp.rhs_with_fluxes(&state, &mut k).absorbed;
        let v1: Vec<f64> = (0..n).map(|i| state[i] + h * k[i]).collect();
        let a1 = fp.rhs_with_fluxes(&v1, &mut k).absorbed;
        let v2: Vec<f64> = (0..n)
            .map(|i| 0.75 * state[i] + 0.25 * (v1[i] + h * k[i]))
            .collect();
        let a2 = fp.rhs_with_fluxes(&v2, &mut k).absorbed;
        state = (0..n)
            .map(|i| state[i] / 3.0 + 2.0 / 3.0 * (v2[i] + h * k[i]))
            .collect();
        absorbed += h * (a0 / 6.0 + a1 / 6.0 + 2.0 * a2 / 3.0);
        if state.iter().any(|x| !x.is_finite()) {
            return Err(TimeError::NonFinite);
        }
    }
    Ok((state, count, absorbed))
}

pub fn manifest_text(cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "# shsprop {} run manifest\n",
        env!("CARGO_PKG_VERSION")
    ));
    s.push_str("# Re-run with: shsprop run --config manifest.txt\n");
    s.push_str(&cfg.to_config_text());
    if let Some(dir) = &cfg.out_dir {
        s.push_str(&format!("# output.dir = \"{}\"\n", dir.display()));
    }
    s
}

/// Header line describing a mode's grid: `# mode=1 time=0.06 axis0=lo:hi:n ...`.
pub fn snapshot_header(system: &HybridSystem, q: usize, time: f64) -> String {
    let g = &system.modes[q].grid;
    let mut h = format!("# mode={} time={time:?}", q + 1);
    for (a, ax) in g.axes().iter().enumerate() {
        h.push_str(&format!(" axis{a}={:?}:{:?}:{}", ax.lo, ax.hi, ax.n));
    }
    h
}

/// Writes one `<stem>_q<q>_t<k>.csv` per mode: rows follow axis 0, columns
/// axis 1.
pub fn write_fields(
    dir: &Path,
    stem: &str,
    k: usize,
    time: f64,
    system: &HybridSystem,
    field: &[f64],
) -> Result<(), RunError> {
    let offsets = system.offsets();
    for (q, m) in system.modes.iter().enumerate() {
        let path = dir.join(format!("{stem}_q{}_t{k}.csv", q + 1));
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        let values = &field[offsets[q]..offsets[q + 1]];
        let [n0, n1] = m.grid.shape();
        let mut text = snapshot_header(system, q, time);
        text.push('\n');
        for i in 0..n0 {
            let row: Vec<String> = (0..n1)
                .map(|j| format!("{:e}", values[i * n1 + j]))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        w.write_all(text.as_bytes()).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_fields`]: header and row-major values.
pub fn read_snapshot(path: &Path) -> io::Result<(String, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
                })
                .collect()
        })
        .collect::<io::Result<_>>()?;
    Ok((header, rows))
}

fn write_reports(
    dir: &Path,
    report: &RunReport,
    balances: &[FluxBalanceReport],
    mc: &[McSnapshot],
    stride: usize,
) -> Result<(), RunError> {
    let path = dir.join("report.csv");
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    report.write_csv(BufWriter::new(f))?;

    let path = dir.join("mass.csv");
    let mut wr = csv::Writer::from_path(&path).map_err(ReportError::from)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((1..=report.mode_count).map(|q| format!("mass_q{q}")));
    header.extend(["mass_total".to_string(), "absorbed_cum".to_string()]);
    if !mc.is_empty() {
        header.push("mc_alive".into());
    }
    wr.write_record(&header).map_err(ReportError::from)?;
    for r in &report.records {
        let mut row = vec![r.step.to_string(), r.time.to_string()];
        row.extend(r.mass_per_mode.iter().map(f64::to_string));
        row.push(r.mass_total.to_string());
        row.push(r.absorbed_cum.to_string());
        if !mc.is_empty() {
            let alive = (r.step % stride == 0)
                .then(|| mc.iter().find(|s| s.snapshot == r.step / stride))
                .flatten()
                .map(|s| s.alive_fraction.to_string())
                .unwrap_or_default();
            row.push(alive);
        }
        wr.write_record(&row).map_err(ReportError::from)?;
    }
    wr.flush().map_err(io_err(&path))?;

    let path = dir.join("fluxbalance.csv");
    let mut wr = csv::Writer::from_path(&path).map_err(ReportError::from)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    for k in 0..report.reset_count {
        header.extend([
            format!("exported_r{k}"),
            format!("imported_r{k}"),
            format!("transfer_residual_r{k}"),
        ]);
    }
    if let Some(b) = balances.first() {
        for (face, _) in &b.image_residuals {
            header.push(
                format!(
                    "image_residual_q{}_axis{}_{:?}",
                    face.mode + 1,
                    face.axis,
                    face.side
                )
                .to_lowercase(),
            );
        }
    }
    header.extend(
        [
            "reflecting_residual",
            "identification_residual",
            "absorbed_rate",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    wr.write_record(&header).map_err(ReportError::from)?;
    for (r, b) in report.records.iter().zip(balances) {
        let mut row = vec![r.step.to_string(), r.time.to_string()];
        for k in 0..report.reset_count {
            row.push(b.exported[k].to_string());
            row.push(b.imported[k].to_string());
            row.push(b.reset_residuals[k].to_string());
        }
        row.extend(b.image_residuals.iter().map(|(_, x)| x.to_string()));
        row.push(b.reflecting_residual.to_string());
        row.push(b.identification_residual.to_string());
        row.push(b.absorbed_rate.to_string());
        wr.write_record(&row).map_err(ReportError::from)?;
    }
    wr.flush().map_err(io_err(&path))?;
    Ok(())
}

/// Convenience: the discretization and operators of a built scenario.
pub fn operators(
    scenario: &Scenario,
    cfg: &RunConfig,
) -> Result<(Discretization, FpOperator, KoopmanOperator), RunError> {
    let fp = FpOperator::new(&scenario.system).map_err(ScenarioError::from)?;
    let disc = fp.discretization().clone();
    let ko = KoopmanOperator::from_discretization(disc.clone(), cfg.koopman_stencil);
    Ok((disc, fp, ko))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn small_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = parse_config(
            "grid.n = 40\ntime.nt = 100\noutput.stride = 50\n",
            Some("ex3_reset"),
        )
        .unwrap();
        cfg.out_dir = Some(dir.path().to_path_buf());
        let s = run(&cfg).unwrap();
        assert_eq!(s.snapshots, 3);
        assert_eq!(s.report.len(), 101);
        for f in [
            "manifest.txt",
            "mass.csv",
            "fluxbalance.csv",
            "report.csv",
            "density_q1_t2.csv",
            "observable_q1_t0.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let (header, rows) = read_snapshot(&dir.path().join("density_q1_t1.csv")).unwrap();
        assert!(
            header.starts_with("# mode=1 time=1.25 axis0=0.0:2.0:40"),
            "{header}"
        );
        assert_eq!(rows.len(), 40);
        assert!(s.report.max_mass_deviation(1.0) < 1e-10);
    }
}
