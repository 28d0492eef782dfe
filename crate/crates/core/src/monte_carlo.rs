//! Particle oracle: Euler-Maruyama for the hybrid SDE with identification,
//! reset, reflection and absorption events, histogram densities, and Monte
//! Carlo Koopman estimates.

use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use thiserror::Error;

use crate::discretization::Discretization;
use crate::geometry::{Point, Side};
use crate::model::{BoundaryCondition, FaceId, HybridSystem};
use crate::scenario::ObservableFn;

/// Event resolution gives up after this many boundary events in one step.
pub const MAX_EVENTS_PER_STEP: usize = 10;

#[derive(Debug, Clone)]
pub struct Particle {
    pub mode: usize,
    pub x: Point,
    pub alive: bool,
    rng: Pcg64Mcg,
}

impl Particle {
    pub fn new(mode: usize, x: Point, seed: u64, index: u64) -> Self {
        Self {
            mode,
            x,
            alive: true,
            rng: stream(seed, index),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for particle `index`, a pure function of
/// `(seed, index)`.
fn stream(seed: u64, index: u64) -> Pcg64Mcg {
    let hi = splitmix64(seed ^ splitmix64(index));
    let lo = splitmix64(hi ^ index.rotate_left(32));
    Pcg64Mcg::new(((hi as u128) << 64) | lo as u128 | 1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error(
        "event resolution did not terminate for particle {index} (q{}, x = {x:?}); time step too large",
        mode + 1
    )]
    EventLoop { index: usize, mode: usize, x: Point },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("density has no positive mass to sample from")]
    EmptyDensity,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub seed: u64,
}

impl ParticleEnsemble {
    /// `n` copies of the hybrid state `(mode, x)`.
    pub fn at_state(mode: usize, x: Point, n: usize, seed: u64) -> Self {
        Self {
            particles: (0..n)
                .map(|i| Particle::new(mode, x, seed, i as u64))
                .collect(),
            seed,
        }
    }

    /// Draws `n` particles from a discrete density: a cell with probability
    /// `v J dV`, then a point uniform in Riemannian volume within that cell.
    pub fn sample_density(
        disc: &Discretization,
        v: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Self, McError> {
        let vol = disc.cell_volumes();
        let mut cdf = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        for (x, w) in v.iter().zip(&vol) {
            acc += x.max(0.0) * w;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(McError::EmptyDensity);
        }
        let system = disc.system();
        let offsets = disc.offsets().to_vec();
        let particles = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut p = Particle::new(0, [0.0; 2], seed, i as u64);
                let u: f64 = p.rng.random::<f64>() * acc;
                let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let q = offsets.partition_point(|&o| o <= cell) - 1;
                let m = &system.modes[q];
                let idx = cell - offsets[q];
                let center = m.grid.cell_center(idx);
                let h = m.grid.spacing();
                let dim = m.grid.dimension();
                let jmax = {
                    let mut j = m.geometry.jacobian(center);
                    for axis in 0..dim {
                        for s in [-0.5, 0.5] {
                            let mut c = center;
                            c[axis] += s * h[axis];
                            j = j.max(m.geometry.jacobian(c));
                        }
                    }
                    j * (1.0 + 1e-12)
                };
                loop {
                    let mut x = center;
                    for axis in 0..dim {
                        x[axis] += (p.rng.random::<f64>() - 0.5) * h[axis];
                    }
                    if p.rng.random::<f64>() * jmax <= m.geometry.jacobian(x) {
                        p.mode = q;
                        p.x = x;
                        break;
                    }
                }
                p
            })
            .collect();
        Ok(Self { particles, seed })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.particles.iter().filter(|p| p.alive).count()
    }

    pub fn alive_fraction(&self) -> f64 {
        if self.particles.is_empty() {
            return 0.0;
        }
        self.alive_count() as f64 / self.particles.len() as f64
    }
}

fn face_coordinate(system: &HybridSystem, face: FaceId) -> f64 {
    let g = system.modes[face.mode].grid.axis(face.axis);
    match face.side {
        Side::Low => g.lo,
        Side::High => g.hi,
    }
}

/// Places a point `depth` inside `face`.
fn inward(system: &HybridSystem, face: FaceId, depth: f64) -> f64 {
    face_coordinate(system, face) - face.side.normal_sign() * depth
}

/// Resolves boundary events until the particle lies in its mode's domain.
/// Returns false if the event budget ran out.
pub fn resolve_events(system: &HybridSystem, p: &mut Particle) -> bool {
    for _ in 0..=MAX_EVENTS_PER_STEP {
        let m = &system.modes[p.mode];
        let mut violation: Option<(u8, FaceId, f64)> = None;
        for axis in 0..m.grid.dimension() {
            let g = m.grid.axis(axis);
            if g.wrap {
                let period = g.hi - g.lo;
                p.x[axis] = g.lo + (p.x[axis] - g.lo).rem_euclid(period);
                continue;
            }
            let (side, depth) = if p.x[axis] < g.lo {
                (Side::Low, g.lo - p.x[axis])
            } else if p.x[axis] > g.hi {
                (Side::High, p.x[axis] - g.hi)
            } else {
                continue;
            };
            let face = FaceId::new(p.mode, axis, side);
            let rank = match system.condition(face) {
                Some(BoundaryCondition::Identification { .. }) => 0,
                Some(BoundaryCondition::Guard { .. }) => 1,
                Some(BoundaryCondition::Reflecting) | Some(BoundaryCondition::ResetImage) => 2,
                Some(BoundaryCondition::Absorbing) | None => 3,
            };
            if violation.is_none_or(|(r, _, _)| rank < r) {
                violation = Some((rank, face, depth));
            }
        }
        let Some((_, face, depth)) = violation else {
            return true;
        };
        match system.condition(face) {
            Some(BoundaryCondition::Identification { partner }) => {
                p.mode = partner.mode;
                p.x[partner.axis] = inward(system, partner, depth);
            }
            Some(BoundaryCondition::Guard { reset }) => {
                let r = system.resets[reset];
                if system.modes[r.source.mode]
                    .grid
                    .tangential_axis(r.source.axis)
                    .is_some()
                {
                    p.x[1 - r.source.axis] += r.shift;
                }
                p.mode = r.target.mode;
                p.x[r.target.axis] = inward(system, r.target, depth);
            }
            Some(BoundaryCondition::Reflecting) | Some(BoundaryCondition::ResetImage) => {
                p.x[face.axis] = inward(system, face, depth);
            }
            Some(BoundaryCondition::Absorbing) | None => {
                p.x[face.axis] = face_coordinate(system, face);
                p.alive = false;
                return true;
            }
        }
    }
    false
}

/// Brownian-bridge test for a guard or absorbing face crossed and
/// re-crossed within one step. Both endpoints inside the domain still leave
/// a hit probability `exp(-2 d0 d1 / variance)`; on a hit the endpoint is
/// mirrored across the face, so event resolution applies the jump or the
/// absorption. Without it the discretely monitored boundary sits about
/// `0.58 sqrt(variance)` outside the true one.
fn bridge_crossing(
    system: &HybridSystem,
    p: &mut Particle,
    axis: usize,
    start: f64,
    variance: f64,
) {
    let g = system.modes[p.mode].grid.axis(axis);
    if g.wrap || !(variance > 0.0) {
        return;
    }
    let end = p.x[axis];
    if !(g.lo..=g.hi).contains(&start) || !(g.lo..=g.hi).contains(&end) {
        return;
    }
    for side in [Side::Low, Side::High] {
        let face = FaceId::new(p.mode, axis, side);
        if !matches!(
            system.condition(face),
            Some(BoundaryCondition::Guard { .. }) | Some(BoundaryCondition::Absorbing) | None
        ) {
            continue;
        }
        let wall = face_coordinate(system, face);
        let (d0, d1) = ((start - wall).abs(), (end - wall).abs());
        let hit = (-2.0 * d0 * d1 / variance).exp();
        if hit > 1e-300 && p.rng.random::<f64>() < hit {
            p.x[axis] = wall + side.normal_sign() * d1;
            return;
        }
    }
}

/// One Euler-Maruyama step for every alive particle:
/// `x += (X + H b) dt + sigma g_ii^{-1/2} sqrt(dt) xi`, a bridge test for
/// guard and absorbing faces, then event resolution. `b` is the chart's Laplace-Beltrami drift, so the noise is
/// Brownian motion on the manifold (generator `H Delta`, as in the density
/// operator) rather than a coordinate random walk.
pub fn em_step(ens: &mut ParticleEnsemble, system: &HybridSystem, dt: f64) -> Result<(), McError> {
    if !(dt > 0.0) {
        return Err(McError::InvalidStep(dt));
    }
    let sqdt = dt.sqrt();
    let failure = ens
        .particles
        .par_iter_mut()
        .enumerate()
        .filter_map(|(index, p)| {
            if !p.alive {
                return None;
            }
            let m = &system.modes[p.mode];
            let sigma = m.sigma();
            let x0 = p.x;
            let drift = m.drift.eval(x0);
            let correction = m.geometry.laplacian_drift(x0);
            let g = m.geometry.metric_diag(x0);
            for axis in 0..m.grid.dimension() {
                let xi: f64 = p.rng.sample(StandardNormal);
                let b = drift[axis] + m.diffusion * correction[axis];
                p.x[axis] += b * dt + sigma / g[axis].sqrt() * sqdt * xi;
            }
            for axis in 0..m.grid.dimension() {
                let variance = sigma * sigma / g[axis] * dt;
                bridge_crossing(system, p, axis, x0[axis], variance);
            }
            (!resolve_events(system, p)).then_some(McError::EventLoop {
                index,
                mode: p.mode,
                x: p.x,
            })
        })
        .min_by_key(|e| match e {
            McError::EventLoop { index, .. } => *index,
            _ => usize::MAX,
        });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Advances the ensemble by `t` in equal steps no larger than `dt_max`.
pub fn evolve(
    ens: &mut ParticleEnsemble,
    system: &HybridSystem,
    t: f64,
    dt_max: f64,
) -> Result<usize, McError> {
    if !(dt_max > 0.0) {
        return Err(McError::InvalidStep(dt_max));
    }
    if t <= 0.0 {
        return Ok(0);
    }
    let steps = ((t / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    for _ in 0..steps {
        em_step(ens, system, dt)?;
    }
    Ok(steps)
}

/// Expected L1 distance between `v` and the histogram of `particles` exact
/// samples from it: the sum over cells of E|p_hat - p| for binomial counts,
/// in the normal approximation sqrt(2 p (1 - p) / (pi N)). This is the floor
/// below which an MC comparison on this grid cannot go.
pub fn histogram_noise_l1(disc: &Discretization, v: &[f64], particles: usize) -> f64 {
    let n = particles as f64;
    v.iter()
        .zip(disc.cell_volumes())
        .map(|(&x, vol)| {
            let p = (x * vol).clamp(0.0, 1.0);
            (2.0 * p * (1.0 - p) / (std::f64::consts::PI * n)).sqrt()
        })
        .sum()
}

/// Histogram estimate `count / (N J dV)` per cell; dead particles excluded.
pub fn histogram_density(ens: &ParticleEnsemble, disc: &Discretization) -> Vec<f64> {
    let system = disc.system();
    let mut counts = vec![0u64; disc.len()];
    for p in ens.particles.iter().filter(|p| p.alive) {
        let g = &system.modes[p.mode].grid;
        let idx = match g.dimension() {
            1 => g.axis(0).locate(p.x[0]),
            _ => g.index(g.axis(0).locate(p.x[0]), g.axis(1).locate(p.x[1])),
        };
        counts[disc.offsets()[p.mode] + idx] += 1;
    }
    let n = ens.len().max(1) as f64;
    counts
        .iter()
        .zip(disc.cell_volumes())
        .map(|(&c, w)| c as f64 / (n * w))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub alive_fraction: f64,
}

/// Ensemble mean of `f` over alive particles (dead ones count as 0).
pub fn ensemble_expectation(ens: &ParticleEnsemble, f: &ObservableFn) -> McEstimate {
    let n = ens.len() as f64;
    let values: Vec<f64> = ens
        .particles
        .iter()
        .map(|p| if p.alive { f(p.mode, p.x) } else { 0.0 })
        .collect();
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        alive_fraction: ens.alive_fraction(),
    }
}

/// Monte Carlo estimate of `E[f(z_T) | z_0 = (mode, x)]`.
pub fn mc_koopman(
    system: &HybridSystem,
    f: &ObservableFn,
    start: (usize, Point),
    n: usize,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<McEstimate, McError> {
    let mut ens = ParticleEnsemble::at_state(start.0, start.1, n, seed);
    evolve(&mut ens, system, t, dt)?;
    Ok(ensemble_expectation(&ens, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::total_mass;
    use crate::geometry::{AxisGrid, ChartGeometry, GridSpec};
    use crate::model::{Drift, Mode};
    use crate::scenario::{builtin_scenario, ScenarioSpec};
    use rand::SeedableRng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn particle_at(mode: usize, x: Point) -> Particle {
        Particle::new(mode, x, 0, 0)
    }

    #[test]
    fn frozen_dynamics() {
        let mut sys = builtin_scenario("ex1_reflecting").unwrap().system;
        sys.modes[0].drift = Drift::Zero;
        sys.modes[0].diffusion = 0.0;
        let mut ens = ParticleEnsemble::at_state(0, [0.7, 0.0], 10, 1);
        em_step(&mut ens, &sys, 0.1).unwrap();
        assert!(ens.particles.iter().all(|p| p.x == [0.7, 0.0] && p.alive));
    }

    #[test]
    fn reflection_mirrors() {
        let sys = builtin_scenario("ex1_reflecting").unwrap().system;
        let mut p = particle_at(0, [0.01 - 0.05, 0.0]);
        assert!(resolve_events(&sys, &mut p));
        assert!((p.x[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn reset_overshoot_lands_inside_image() {
        let sys = builtin_scenario("ex3_reset").unwrap().system;
        let mut p = particle_at(0, [2.03, 0.0]);
        assert!(resolve_events(&sys, &mut p));
        assert!((p.x[0] - 0.03).abs() < 1e-12);
        assert_eq!(p.mode, 0);
    }

    #[test]
    fn absorption_kills() {
        let sys = builtin_scenario("ex2_absorbing").unwrap().system;
        let mut p = particle_at(0, [2.2, 0.0]);
        assert!(resolve_events(&sys, &mut p));
        assert!(!p.alive);
    }

    #[test]
    fn torus_events() {
        let sys = builtin_scenario("torus_two_mode").unwrap().system;
        // Guard at pi^- : jump to psi = 0^+ in the first mode, theta + pi.
        let mut p = particle_at(0, [PI + 0.02, 0.5]);
        assert!(resolve_events(&sys, &mut p));
        assert_eq!(p.mode, 0);
        assert!((p.x[0] - 0.02).abs() < 1e-12);
        assert!((p.x[1] - (0.5 + PI)).abs() < 1e-12);
        // Identification at 2pi^- continues into the first mode.
        let mut p = particle_at(1, [2.0 * PI + 0.01, 6.0]);
        assert!(resolve_events(&sys, &mut p));
        assert_eq!(p.mode, 0);
        assert!((p.x[0] - 0.01).abs() < 1e-12);
        assert!((p.x[1] - 6.0).abs() < 1e-12);
        // Guard at pi^+ with theta wrapping.
        let mut p = particle_at(1, [PI - 0.03, 4.0]);
        assert!(resolve_events(&sys, &mut p));
        assert_eq!(p.mode, 0);
        assert!((p.x[0] - 0.03).abs() < 1e-12);
        assert!((p.x[1] - (4.0 + PI - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn histogram_point_mass() {
        let sc = builtin_scenario("ex1_reflecting").unwrap();
        let disc = Discretization::new(&sc.system).unwrap();
        let ens = ParticleEnsemble::at_state(0, [0.501, 0.0], 100, 3);
        let h = histogram_density(&ens, &disc);
        let cell = sc.system.modes[0].grid.axis(0).locate(0.501);
        assert!((h[cell] - 1.0 / 0.01).abs() < 1e-9);
        assert_eq!(h.iter().filter(|&&x| x != 0.0).count(), 1);
        assert!((total_mass(&disc, &h).total - 1.0).abs() < 1e-12);
    }

    fn inverse_cdf_theta(u: f64, major: f64, minor: f64) -> f64 {
        // CDF(theta) = (R theta + r sin theta) / (2 pi R), solved by Newton.
        let target = u * 2.0 * PI * major;
        let mut th = 2.0 * PI * u;
        for _ in 0..50 {
            let f = major * th + minor * th.sin() - target;
            th -= f / (major + minor * th.cos());
        }
        th
    }

    #[test]
    fn uniform_torus_histogram() {
        let grid = GridSpec::new(vec![
            AxisGrid::periodic(20, 0.0, 2.0 * PI),
            AxisGrid::periodic(20, 0.0, 2.0 * PI),
        ])
        .unwrap();
        let m = Mode::new(
            ChartGeometry::torus(2.0, 1.0).unwrap(),
            grid,
            Drift::Zero,
            0.5,
        );
        let sys = HybridSystem::new(vec![m], vec![]);
        let disc = Discretization::new(&sys).unwrap();
        let n = 400_000;
        let mut rng = Pcg64Mcg::seed_from_u64(99);
        let particles = (0..n)
            .map(|i| {
                let psi = rng.random::<f64>() * 2.0 * PI;
                let th = inverse_cdf_theta(rng.random::<f64>(), 2.0, 1.0);
                Particle::new(0, [psi, th], 0, i)
            })
            .collect();
        let ens = ParticleEnsemble { particles, seed: 0 };
        let h = histogram_density(&ens, &disc);
        let level = 1.0 / (8.0 * PI * PI);
        let per_cell = n as f64 / 400.0;
        let rel = h
            .iter()
            .map(|x| (x / level - 1.0).abs())
            .fold(0.0, f64::max);
        // Five standard deviations of a Poisson count.
        assert!(rel < 5.0 / per_cell.sqrt() * 1.5, "{rel}");

        // The density sampler produces the same level.
        let ens2 = ParticleEnsemble::sample_density(&disc, &vec![level; disc.len()], n as usize, 5)
            .unwrap();
        let h2 = histogram_density(&ens2, &disc);
        let rel2 = h2
            .iter()
            .map(|x| (x / level - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(rel2 < 5.0 / per_cell.sqrt() * 1.5, "{rel2}");
    }

    #[test]
    fn brownian_motion_keeps_volume_measure() {
        // Pure diffusion on the torus leaves the uniform volume density
        // invariant; a coordinate random walk would flatten the theta
        // marginal towards uniform in theta instead.
        let grid = GridSpec::new(vec![
            AxisGrid::periodic(6, 0.0, 2.0 * PI),
            AxisGrid::periodic(12, 0.0, 2.0 * PI),
        ])
        .unwrap();
        let m = Mode::new(
            ChartGeometry::torus(2.0, 1.0).unwrap(),
            grid,
            Drift::Zero,
            0.5,
        );
        let sys = HybridSystem::new(vec![m], vec![]);
        let disc = Discretization::new(&sys).unwrap();
        let level = 1.0 / (8.0 * PI * PI);
        let n = 200_000;
        let mut ens =
            ParticleEnsemble::sample_density(&disc, &vec![level; disc.len()], n, 8).unwrap();
        evolve(&mut ens, &sys, 2.0, 1e-2).unwrap();
        let h = histogram_density(&ens, &disc);
        let marginal: Vec<f64> = (0..12)
            .map(|j| (0..6).map(|i| h[i * 12 + j]).sum::<f64>() / 6.0)
            .collect();
        let per_bin = n as f64 / 12.0;
        let rel = marginal
            .iter()
            .map(|x| (x / level - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(rel < 5.0 / per_bin.sqrt() * 1.5, "{marginal:?}");
    }

    #[test]
    fn reproducible_and_partition_independent() {
        let sc = builtin_scenario("ex3_reset").unwrap();
        let disc = Discretization::new(&sc.system).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut e =
                    ParticleEnsemble::sample_density(&disc, &sc.initial_density.values, 2000, 11)
                        .unwrap();
                evolve(&mut e, &sc.system, 0.2, 0.01).unwrap();
                e.particles
                    .iter()
                    .map(|p| (p.mode, p.x))
                    .collect::<Vec<_>>()
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn koopman_estimates_of_constants() {
        let one: ObservableFn = Arc::new(|_, _| 1.0);
        let sc = builtin_scenario("ex1_reflecting").unwrap();
        let e = mc_koopman(&sc.system, &one, (0, [1.0, 0.0]), 500, 0.5, 0.01, 1).unwrap();
        assert_eq!((e.mean, e.std_error), (1.0, 0.0));
        let sc2 = builtin_scenario("ex2_absorbing").unwrap();
        let e2 = mc_koopman(&sc2.system, &one, (0, [1.9, 0.0]), 2000, 1.0, 0.01, 1).unwrap();
        assert!(e2.alive_fraction < 1.0);
        assert_eq!(e2.mean, e2.alive_fraction);
    }

    #[test]
    fn coarse_steps_still_detect_absorption() {
        // Driftless, sigma = 1, start 0.5 below the absorbing end: the
        // survival probability at t = 0.25 is erf(0.5 / sqrt(2 t)) = erf(1/sqrt 2).
        let mut sys = builtin_scenario("ex2_absorbing").unwrap().system;
        sys.modes[0].drift = Drift::Zero;
        let exact = 0.682_689_492_137_085_9;
        let mut ens = ParticleEnsemble::at_state(0, [1.5, 0.0], 200_000, 9);
        evolve(&mut ens, &sys, 0.25, 0.025).unwrap();
        let survival = ens.alive_fraction();
        // Binomial standard error is about 1e-3; unmonitored excursions
        // would leave survival near 0.74.
        assert!((survival - exact).abs() < 5e-3, "{survival}");
    }

    #[test]
    fn noise_floor_matches_exact_binomial_mean_deviation() {
        let mut spec = ScenarioSpec::builtin("ex1_reflecting").unwrap();
        spec.set_grid_1d(8);
        let sc = spec.build().unwrap();
        let disc = Discretization::new(&sc.system).unwrap();
        let vol = disc.cell_volumes().to_vec();
        let probs = [0.05, 0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05];
        let v: Vec<f64> = probs.iter().zip(&vol).map(|(p, w)| p / w).collect();
        let n = 400usize;
        // E|X - n p| / n for X ~ Bin(n, p), summed exactly.
        let exact: f64 = probs
            .iter()
            .map(|&p| {
                let mut pmf = (1.0 - p).powi(n as i32);
                let mut acc = 0.0;
                for k in 0..=n {
                    acc += pmf * (k as f64 - n as f64 * p).abs();
                    pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
                }
                acc / n as f64
            })
            .sum();
        let approx = histogram_noise_l1(&disc, &v, n);
        assert!((approx / exact - 1.0).abs() < 0.02, "{approx} vs {exact}");
    }

    #[test]
    fn alive_fraction_is_nonincreasing() {
        let mut spec = ScenarioSpec::builtin("ex2_absorbing").unwrap();
        spec.set_grid_1d(50);
        let sc = spec.build().unwrap();
        let disc = Discretization::new(&sc.system).unwrap();
        let mut e =
            ParticleEnsemble::sample_density(&disc, &sc.initial_density.values, 5000, 2).unwrap();
        let mut last = 1.0;
        for _ in 0..50 {
            em_step(&mut e, &sc.system, 0.01).unwrap();
            let a = e.alive_fraction();
            assert!(a <= last);
            last = a;
        }
        assert!(last < 1.0);
    }
}
