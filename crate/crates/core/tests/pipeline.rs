use std::fs;

use shsprop::monte_carlo::{evolve, mc_koopman};
use shsprop::run::{read_snapshot, run_in_memory};
use shsprop::time::step;
use shsprop::{
    compare_fields, duality_residual, histogram_density, parse_config, run, AdvectionStencil,
    FpOperator, KoopmanOperator, Method, ParticleEnsemble, RunConfig, RunReport, ScenarioKind,
    ScenarioSpec, SolverConfig,
};

fn small(kind: ScenarioKind, n: usize, nt: usize, t_final: f64) -> RunConfig {
    let mut cfg = RunConfig::for_scenario(kind);
    cfg.scenario.set_grid_1d(n);
    cfg.scenario.nt = nt;
    cfg.scenario.t_final = t_final;
    cfg.scenario.stride = nt / 5;
    cfg.sync_dt();
    cfg
}

#[test]
fn outputs_on_disk_match_the_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(ScenarioKind::Ex2Absorbing, 60, 50, 1.0);
    cfg.out_dir = Some(tmp.path().to_path_buf());
    let s = run(&cfg).unwrap();

    let report =
        RunReport::read_csv(fs::File::open(tmp.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(report, s.report);

    let (header, rows) = read_snapshot(&tmp.path().join("density_q1_t5.csv")).unwrap();
    assert!(header.contains("time=1.0"), "{header}");
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    assert_eq!(values, s.final_density);

    // The manifest alone reproduces the run.
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    let again = run_in_memory(&parse_config(&manifest, None).unwrap()).unwrap();
    assert_eq!(again.final_density, s.final_density);
    assert_eq!(again.report, s.report);
}

#[test]
fn small_torus_run_balances_fluxes() {
    let mut cfg = RunConfig::for_scenario(ScenarioKind::TorusTwoMode);
    cfg.scenario.set_grid_torus(64, 32);
    cfg.scenario.t_final = 0.2;
    cfg.scenario.nt = 40;
    cfg.scenario.stride = 20;
    cfg.sync_dt();
    let s = run_in_memory(&cfg).unwrap();
    assert!(s.report.max_mass_deviation(1.0) <= 1e-12);
    for b in &s.flux_balance {
        assert!(b.reset_residuals.iter().all(|&r| r == 0.0));
        assert!(b.image_residuals.iter().all(|&(_, r)| r <= 1e-13));
        assert!(b.identification_residual <= 1e-13);
    }
    // Mass has started to move through the guard into the image cells.
    let last = s.report.records.last().unwrap();
    assert!(last.exported.iter().sum::<f64>() > 0.0);
}

#[test]
fn explicit_and_implicit_runs_agree() {
    let mut a = small(ScenarioKind::Ex1Reflecting, 100, 200, 0.5);
    a.solver.method = Method::Implicit;
    let mut b = a.clone();
    b.solver.method = Method::Explicit;
    let sa = run_in_memory(&a).unwrap();
    let sb = run_in_memory(&b).unwrap();
    let disc = FpOperator::new(&a.scenario.build().unwrap().system)
        .unwrap()
        .discretization()
        .clone();
    let cmp = compare_fields(&disc, &sa.final_density, &sb.final_density).unwrap();
    // Backward Euler is first order in time: dt = 2.5e-3.
    assert!(cmp.l1 < 1e-2, "{cmp:?}");
    assert!(cmp.mass_difference.abs() < 1e-12);
}

#[test]
fn duality_trivial_identities() {
    let sc = ScenarioSpec::for_kind(ScenarioKind::Ex3Reset)
        .build()
        .unwrap();
    let cfg = SolverConfig::with_dt(0.01);
    let f = sc.observable.values.clone();
    let g = sc.initial_density.values.clone();
    assert_eq!(
        duality_residual(&sc.system, &f, &g, 0.0, 0, &cfg, AdvectionStencil::Upwind).unwrap(),
        0.0
    );
    let ones = vec![1.0; f.len()];
    let r = duality_residual(
        &sc.system,
        &ones,
        &g,
        0.5,
        50,
        &cfg,
        AdvectionStencil::Upwind,
    )
    .unwrap();
    assert!(r <= 1e-10, "{r}");
}

#[test]
fn koopman_value_matches_particle_expectation() {
    let mut spec = ScenarioSpec::for_kind(ScenarioKind::Ex3Reset);
    spec.set_grid_1d(200);
    let sc = spec.build().unwrap();
    let ko = KoopmanOperator::new(&sc.system, AdvectionStencil::Weno5).unwrap();
    let t = 0.5;
    let cfg = SolverConfig::with_dt(t / 200.0);
    let mut u = sc.observable.values.clone();
    for _ in 0..200 {
        u = step(&ko, &u, &cfg).unwrap().0;
    }
    let cell = 75;
    let x0 = sc.system.modes[0].grid.cell_center(cell);
    let est = mc_koopman(&sc.system, &sc.observable_fn, (0, x0), 200_000, t, 1e-3, 11).unwrap();
    let diff = (u[cell] - est.mean).abs();
    assert!(
        diff <= 4.0 * est.std_error + 1e-2,
        "FV {} MC {} +- {}",
        u[cell],
        est.mean,
        est.std_error
    );
}

#[test]
fn density_matches_particle_histogram() {
    let cfg = small(ScenarioKind::Ex3Reset, 100, 100, 1.0);
    let s = run_in_memory(&cfg).unwrap();
    let sc = cfg.scenario.build().unwrap();
    let disc = FpOperator::new(&sc.system)
        .unwrap()
        .discretization()
        .clone();
    let mut ens =
        ParticleEnsemble::sample_density(&disc, &sc.initial_density.values, 200_000, 3).unwrap();
    evolve(&mut ens, &sc.system, 1.0, 1e-3).unwrap();
    let h = histogram_density(&ens, &disc);
    let cmp = compare_fields(&disc, &s.final_density, &h).unwrap();
    assert!(cmp.l1 < 0.05, "{cmp:?}");
}
