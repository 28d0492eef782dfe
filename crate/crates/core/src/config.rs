//! Run configuration and its flat `key = value` text grammar.
//!
//! ```text
//! # comment
//! scenario = "ex1_reflecting"
//! grid.n = 400
//! diffusion.H = 0.5
//! solver.jacobi = true
//! ```
//!
//! Values are integers, decimals, booleans, or double-quoted strings. Keys
//! not set fall back to the named scenario's defaults.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::koopman::AdvectionStencil;
use crate::scenario::{ScenarioError, ScenarioKind, ScenarioSpec};
use crate::time::{Method, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub particles: usize,
    /// Largest Euler-Maruyama step.
    pub dt: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            particles: 100_000,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    /// Density solver; `dt` is kept equal to `t_final / nt`.
    pub solver: SolverConfig,
    pub koopman_method: Method,
    pub koopman_stencil: AdvectionStencil,
    pub mc: Option<McConfig>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn for_scenario(kind: ScenarioKind) -> Self {
        let scenario = ScenarioSpec::for_kind(kind);
        let solver = SolverConfig::with_dt(scenario.dt());
        Self {
            scenario,
            solver,
            koopman_method: Method::Explicit,
            koopman_stencil: AdvectionStencil::Upwind,
            mc: None,
            seed: 0,
            out_dir: None,
        }
    }

    /// Checks cross-field invariants and that the scenario builds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if !(s.t_final > 0.0 && s.t_final.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "t_final must be positive, got {}",
                s.t_final
            )));
        }
        if s.nt == 0 {
            return Err(ConfigError::Invalid("nt must be positive".into()));
        }
        if s.stride == 0 || !s.nt.is_multiple_of(s.stride) {
            return Err(ConfigError::Invalid(format!(
                "output stride {} must divide nt = {}",
                s.stride, s.nt
            )));
        }
        self.solver
            .check()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(mc) = &self.mc {
            if mc.particles == 0 || !(mc.dt > 0.0) {
                return Err(ConfigError::Invalid(
                    "mc.particles and mc.dt must be positive".into(),
                ));
            }
        }
        s.build().map(|_| ()).map_err(|e| match e {
            ScenarioError::Invalid(inv) => ConfigError::Invalid(inv.0.to_string()),
            other => ConfigError::Invalid(other.to_string()),
        })
    }

    /// Sets `nt` from a step size; the horizon must be a whole number of steps.
    pub fn set_dt(&mut self, dt: f64) -> Result<(), ConfigError> {
        let nt = (self.scenario.t_final / dt).round();
        if !(nt >= 1.0) || (nt * dt - self.scenario.t_final).abs() > 1e-9 * self.scenario.t_final {
            return Err(ConfigError::Invalid(format!(
                "dt = {dt} does not divide t_final = {}",
                self.scenario.t_final
            )));
        }
        self.scenario.nt = nt as usize;
        self.sync_dt();
        Ok(())
    }

    /// Recomputes the solver step from the horizon and step count.
    pub fn sync_dt(&mut self) {
        self.solver.dt = self.scenario.dt();
    }

    /// Serializes every resolved parameter in the config grammar.
    pub fn to_config_text(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scenario", format!("\"{}\"", s.kind.name()));
        if s.is_torus() {
            kv("grid.n_psi", s.n_psi.to_string());
            kv("grid.n_theta", s.n_theta.to_string());
            kv("torus.R", fmt_f(s.major_radius));
            kv("torus.r", fmt_f(s.minor_radius));
            kv("drift.psi_speed", fmt_f(s.psi_speed));
            kv("drift.theta_amplitude", fmt_f(s.theta_amplitude));
            kv("reset.theta_shift", fmt_f(s.theta_shift));
            kv("init.mean", fmt_f(s.init_mean));
            kv("init.mean_q2", fmt_f(s.init_mean_q2));
            kv("init.std", fmt_f(s.init_std));
        } else {
            kv("grid.n", s.n.to_string());
            kv("domain.a", fmt_f(s.a));
            kv("domain.b", fmt_f(s.b));
            kv("drift.c", fmt_f(s.c));
            kv("drift.gamma", fmt_f(s.gamma));
            kv("init.mean", fmt_f(s.init_mean));
            kv("init.std", fmt_f(s.init_std));
            kv("observable.mean", fmt_f(s.observable_mean));
            kv("observable.std", fmt_f(s.observable_std));
        }
        kv("diffusion.H", fmt_f(s.diffusion));
        kv("time.t_final", fmt_f(s.t_final));
        kv("time.nt", s.nt.to_string());
        kv("time.method", format!("\"{}\"", self.solver.method.name()));
        kv(
            "solver.newton_max_iters",
            self.solver.newton_max_iters.to_string(),
        );
        kv("solver.newton_rtol", fmt_f(self.solver.newton_rtol));
        kv("solver.newton_atol", fmt_f(self.solver.newton_atol));
        kv(
            "solver.gmres_restart",
            self.solver.gmres_restart.to_string(),
        );
        kv(
            "solver.gmres_max_iters",
            self.solver.gmres_max_iters.to_string(),
        );
        kv("solver.gmres_rtol", fmt_f(self.solver.gmres_rtol));
        kv("solver.jacobi", self.solver.jacobi.to_string());
        kv(
            "koopman.method",
            format!("\"{}\"", self.koopman_method.name()),
        );
        kv(
            "koopman.stencil",
            format!("\"{}\"", self.koopman_stencil.name()),
        );
        kv("mc.seed", self.seed.to_string());
        if let Some(mc) = &self.mc {
            kv("mc.particles", mc.particles.to_string());
            kv("mc.dt", fmt_f(mc.dt));
        }
        kv("output.stride", s.stride.to_string());
        out
    }
}

/// Shortest decimal that parses back to the same `f64`, always with a
/// decimal point or exponent.
fn fmt_f(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` expects {expected}")]
    TypeMismatch {
        line: usize,
        key: String,
        expected: &'static str,
    },
    #[error("line {line}: unknown scenario `{name}`")]
    UnknownScenario { line: usize, name: String },
    #[error("missing scenario: set `scenario = \"...\"` or pass --scenario")]
    MissingScenario,
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

fn parse_value(raw: &str) -> Option<Value> {
    if let Some(rest) = raw.strip_prefix('"') {
        let body = rest.strip_suffix('"')?;
        return (!body.contains('"')).then(|| Value::Str(body.to_string()));
    }
    match raw {
        "true" => return Some(Value::Bool(true)),
        "false" => return Some(Value::Bool(false)),
        _ => {}
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Some(Value::Int(i));
    }
    raw.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .map(Value::Float)
}

/// Strips a trailing `#` comment that is not inside a string.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn tokenize(text: &str) -> Result<Vec<(usize, String, Value)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, found `{body}`"),
        })?;
        let key = k.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            return Err(ConfigError::Syntax {
                line,
                message: format!("malformed key `{key}`"),
            });
        }
        let value = parse_value(v.trim()).ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("malformed value `{}`", v.trim()),
        })?;
        out.push((line, key.to_string(), value));
    }
    Ok(out)
}

/// Parses config text. `scenario` (e.g. from the command line) takes
/// precedence over a `scenario` key in the text.
pub fn parse_config(text: &str, scenario: Option<&str>) -> Result<RunConfig, ConfigError> {
    let entries = tokenize(text)?;
    let kind = match scenario {
        Some(name) => ScenarioKind::parse(name).ok_or(ConfigError::UnknownScenario {
            line: 0,
            name: name.to_string(),
        })?,
        None => {
            let (line, _, v) = entries
                .iter()
                .rev()
                .find(|(_, k, _)| k == "scenario")
                .ok_or(ConfigError::MissingScenario)?;
            let Value::Str(name) = v else {
                return Err(ConfigError::TypeMismatch {
                    line: *line,
                    key: "scenario".into(),
                    expected: "a quoted string",
                });
            };
            ScenarioKind::parse(name).ok_or(ConfigError::UnknownScenario {
                line: *line,
                name: name.clone(),
            })?
        }
    };
    let mut cfg = RunConfig::for_scenario(kind);
    let mut mc_particles = None;
    let mut mc_dt = None;
    let mut dt = None;
    for (line, key, value) in entries {
        let mismatch = |expected| ConfigError::TypeMismatch {
            line,
            key: key.clone(),
            expected,
        };
        let float = |v: &Value| match v {
            Value::Float(x) => Ok(*x),
            Value::Int(i) => Ok(*i as f64),
            _ => Err(mismatch("a number")),
        };
        let count = |v: &Value| match v {
            Value::Int(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(mismatch("a non-negative integer")),
        };
        let text = |v: &Value| match v {
            Value::Str(s) => Ok(s.clone()),
            _ => Err(mismatch("a quoted string")),
        };
        let s = &mut cfg.scenario;
        match key.as_str() {
            "scenario" => {
                text(&value)?;
            }
            "grid.n" => s.n = count(&value)?,
            "grid.n_psi" => s.n_psi = count(&value)?,
            "grid.n_theta" => s.n_theta = count(&value)?,
            "domain.a" => s.a = float(&value)?,
            "domain.b" => s.b = float(&value)?,
            "drift.c" => s.c = float(&value)?,
            "drift.gamma" => s.gamma = float(&value)?,
            "drift.psi_speed" => s.psi_speed = float(&value)?,
            "drift.theta_amplitude" => s.theta_amplitude = float(&value)?,
            "diffusion.H" => s.diffusion = float(&value)?,
            "torus.R" => s.major_radius = float(&value)?,
            "torus.r" => s.minor_radius = float(&value)?,
            "reset.theta_shift" => s.theta_shift = float(&value)?,
            "init.mean" => s.init_mean = float(&value)?,
            "init.mean_q2" => s.init_mean_q2 = float(&value)?,
            "init.std" => s.init_std = float(&value)?,
            "observable.mean" => s.observable_mean = float(&value)?,
            "observable.std" => s.observable_std = float(&value)?,
            "time.t_final" => s.t_final = float(&value)?,
            "time.nt" => s.nt = count(&value)?,
            "time.dt" => dt = Some(float(&value)?),
            "time.method" => {
                cfg.solver.method = Method::parse(&text(&value)?)
                    .ok_or_else(|| mismatch("\"explicit\" or \"implicit\""))?
            }
            "solver.newton_max_iters" => cfg.solver.newton_max_iters = count(&value)?,
            "solver.newton_rtol" => cfg.solver.newton_rtol = float(&value)?,
            "solver.newton_atol" => cfg.solver.newton_atol = float(&value)?,
            "solver.gmres_restart" => cfg.solver.gmres_restart = count(&value)?,
            "solver.gmres_max_iters" => cfg.solver.gmres_max_iters = count(&value)?,
            "solver.gmres_rtol" => cfg.solver.gmres_rtol = float(&value)?,
            "solver.jacobi" => {
                cfg.solver.jacobi = match value {
                    Value::Bool(b) => b,
                    _ => return Err(mismatch("a boolean")),
                }
            }
            "koopman.method" => {
                cfg.koopman_method = Method::parse(&text(&value)?)
                    .ok_or_else(|| mismatch("\"explicit\" or \"implicit\""))?
            }
            "koopman.stencil" => {
                cfg.koopman_stencil = AdvectionStencil::parse(&text(&value)?)
                    .ok_or_else(|| mismatch("\"upwind\" or \"weno5\""))?
            }
            "mc.particles" => mc_particles = Some(count(&value)?),
            "mc.dt" => mc_dt = Some(float(&value)?),
            "mc.seed" => {
                cfg.seed = match value {
                    Value::Int(i) if i >= 0 => i as u64,
                    _ => return Err(mismatch("a non-negative integer")),
                }
            }
            "output.stride" => s.stride = count(&value)?,
            "output.dir" => cfg.out_dir = Some(PathBuf::from(text(&value)?)),
            _ => return Err(ConfigError::UnknownKey { line, key }),
        }
    }
    cfg.sync_dt();
    if let Some(dt) = dt {
        cfg.set_dt(dt)?;
    }
    if mc_particles.is_some() || mc_dt.is_some() {
        let d = McConfig::default();
        cfg.mc = Some(McConfig {
            particles: mc_particles.unwrap_or(d.particles),
            dt: mc_dt.unwrap_or(d.dt),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}
