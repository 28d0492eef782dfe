use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use shsprop::scenario::SCENARIO_NAMES;
use shsprop::{parse_config, run, McConfig, Method, RunConfig, RunSummary};

#[derive(Parser)]
#[command(
    name = "shsprop",
    version,
    about = "Density and observable propagation for stochastic hybrid systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write snapshots, reports and a manifest.
    Run(RunArgs),
    /// Print the resolved configuration without running.
    Config(RunArgs),
    /// List the built-in scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name; overrides `scenario` in the config file.
    #[arg(long)]
    scenario: Option<String>,
    /// Config file in the flat `key = value` grammar.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of time steps.
    #[arg(long, conflicts_with = "dt")]
    nt: Option<usize>,
    /// Time step; must divide the horizon.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Density time stepping: explicit or implicit.
    #[arg(long)]
    method: Option<String>,
    /// Cells of a 1D scenario.
    #[arg(long)]
    n: Option<usize>,
    /// Total cells along psi on the torus (split evenly between the modes).
    #[arg(long)]
    n_psi: Option<usize>,
    #[arg(long)]
    n_theta: Option<usize>,
    /// Monte Carlo particle count; enables the particle cross-check.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Snapshot every k steps; must divide the step count.
    #[arg(long)]
    stride: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text, self.scenario.as_deref())
                    .with_context(|| format!("in {}", path.display()))?
            }
            None => match &self.scenario {
                Some(name) => parse_config("", Some(name))?,
                None => bail!("either --scenario or --config is required"),
            },
        };
        let s = &mut cfg.scenario;
        if let Some(n) = self.n {
            if s.is_torus() {
                bail!("--n applies to 1D scenarios; use --n-psi/--n-theta on the torus");
            }
            s.set_grid_1d(n);
        }
        if self.n_psi.is_some() || self.n_theta.is_some() {
            if !s.is_torus() {
                bail!("--n-psi/--n-theta apply to the torus scenario");
            }
            let (np, nth) = (
                self.n_psi.unwrap_or(s.n_psi),
                self.n_theta.unwrap_or(s.n_theta),
            );
            s.set_grid_torus(np, nth);
        }
        if let Some(t) = self.t_final {
            s.t_final = t;
        }
        if let Some(nt) = self.nt {
            s.nt = nt;
        }
        if let Some(stride) = self.stride {
            s.stride = stride;
        }
        cfg.sync_dt();
        if let Some(dt) = self.dt {
            cfg.set_dt(dt)?;
        }
        if let Some(m) = &self.method {
            cfg.solver.method =
                Method::parse(m).with_context(|| format!("unknown method {m:?}"))?;
        }
        if let Some(particles) = self.mc {
            let mc = cfg.mc.get_or_insert_with(McConfig::default);
            mc.particles = particles;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(cfg: &RunConfig, s: &RunSummary) {
    let last = s
        .report
        .records
        .last()
        .expect("initial state is always recorded");
    if let Some(dir) = &s.out_dir {
        println!("output      {}", dir.display());
    }
    println!(
        "scenario    {} ({} steps of {:e}, {})",
        cfg.scenario.kind,
        cfg.scenario.nt,
        cfg.solver.dt,
        cfg.solver.method.name()
    );
    println!("snapshots   {}", s.snapshots);
    println!(
        "final mass  {:.12} (absorbed {:.3e})",
        last.mass_total, last.absorbed_cum
    );
    let drift = s
        .report
        .records
        .iter()
        .map(|r| (r.mass_total + r.absorbed_cum - 1.0).abs())
        .fold(0.0, f64::max);
    println!("mass drift  {drift:.3e} (max |mass + absorbed - 1|)");
    let residual = s
        .report
        .records
        .iter()
        .map(|r| r.flux_residual)
        .fold(0.0, f64::max);
    println!("flux resid  {residual:.3e}");
    if cfg.solver.method == Method::Implicit {
        println!("newton max  {}", s.max_newton_iters);
    }
    if let Some(m) = s.mc.last() {
        println!(
            "mc L1       {:.4} at t={} (alive {:.4})",
            m.l1, m.time, m.alive_fraction
        );
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for name in SCENARIO_NAMES {
                println!("{name}");
            }
        }
        Command::Config(args) => print!("{}", args.resolve()?.to_config_text()),
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let summary = run(&cfg)?;
            print_summary(&cfg, &summary);
        }
    }
    Ok(())
}
