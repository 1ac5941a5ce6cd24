//! Fixed-step time stepping: RK4 for deterministic flows and Euler–Maruyama
//! for the noise-forced Duffing oscillator.
//!
//! Both steppers report every accepted step to a [`StepObserver`], which is
//! how the descriptor accumulates the action without storing trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{PhaseState, SystemSpec, MAX_DIM};
use crate::error::{invalid, Error, Result};

/// Coordinates beyond this magnitude mark a trajectory as escaped.
pub const ESCAPE_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    /// Euler–Maruyama; explicit Euler on the drift when there is no noise.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Which noise sequence drives the backward leg of a stochastic trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardNoise {
    /// The independent negative-time branch of the two-sided Wiener path.
    #[default]
    IndependentBranch,
    /// The forward increments replayed with their sign flipped.
    ReflectedForward,
}

/// Axis-aligned box in phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl StopBox {
    /// `[-half, half]^dim`.
    pub fn square(half: f64, dim: usize) -> Self {
        Self {
            min: vec![-half; dim],
            max: vec![half; dim],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.min.len() != dim || self.max.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.min.len().max(self.max.len()),
            });
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(a < b)) {
            return Err(invalid("stop_region", "every min must be below its max"));
        }
        Ok(())
    }

    pub fn contains(&self, x: &PhaseState) -> bool {
        x.coords()
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Distance from a point inside the box to the nearest face.
    pub fn depth(&self, x: &PhaseState) -> f64 {
        x.coords()
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v - lo).min(hi - v))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub method: Method,
    pub direction: Direction,
    pub t0: f64,
    pub tau: f64,
    pub stop_region: Option<StopBox>,
    pub backward_noise: BackwardNoise,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, tau: f64, direction: Direction) -> Self {
        Self {
            dt,
            method: Method::Rk4,
            direction,
            t0: 0.0,
            tau,
            stop_region: None,
            backward_noise: BackwardNoise::default(),
        }
    }

    pub fn with_stop_region(mut self, region: StopBox) -> Self {
        self.stop_region = Some(region);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(invalid("tau", format!("must be finite and >= 0, got {}", self.tau)));
        }
        if self.tau > 0.0 && self.dt > self.tau * (1.0 + 1e-12) {
            return Err(invalid("dt", "must not exceed the integration horizon"));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(())
    }
}

/// Why a trajectory stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Horizon,
    RegionExit,
    /// A coordinate exceeded [`ESCAPE_LIMIT`] or became non-finite.
    Blowup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult {
    pub final_state: PhaseState,
    pub elapsed: f64,
    /// Set on blow-up and on leaving the stop region.
    pub escaped: bool,
    pub stop: StopReason,
    pub accumulated: f64,
}

/// Receives the start state and every accepted step.
pub trait StepObserver {
    fn begin(&mut self, _sys: &SystemSpec, _state: &PhaseState) {}
    /// `dt` is signed: negative on backward legs.
    fn step(&mut self, _sys: &SystemSpec, _state: &PhaseState, _dt: f64) {}
    fn accumulated(&self) -> f64 {
        0.0
    }
}

impl StepObserver for () {}

/// Records every visited state.
#[derive(Debug, Default, Clone)]
pub struct TrajectoryRecorder {
    pub states: Vec<PhaseState>,
}

impl StepObserver for TrajectoryRecorder {
    fn begin(&mut self, _sys: &SystemSpec, state: &PhaseState) {
        self.states.push(*state);
    }

    fn step(&mut self, _sys: &SystemSpec, state: &PhaseState, _dt: f64) {
        self.states.push(*state);
    }
}

/// Number of steps of size `dt` covering `tau`; a ratio within 1e-9 of an
/// integer is rounded rather than ceiled.
pub fn step_count(tau: f64, dt: f64) -> usize {
    if tau <= 0.0 {
        return 0;
    }
    let r = tau / dt;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * n.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

fn step_size(k: usize, n: usize, tau: f64, dt: f64) -> f64 {
    if k + 1 < n {
        dt
    } else {
        let rest = tau - (n - 1) as f64 * dt;
        if (rest - dt).abs() <= 1e-9 * dt {
            dt
        } else {
            rest
        }
    }
}

#[inline]
fn axpy(x: &[f64; MAX_DIM], h: f64, k: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
}

/// One classical RK4 step of size `h` (signed).
#[inline]
pub(crate) fn rk4_step(sys: &SystemSpec, x: &[f64; MAX_DIM], h: f64) -> [f64; MAX_DIM] {
    let k1 = sys.rates(x);
    let k2 = sys.rates(&axpy(x, 0.5 * h, &k1));
    let k3 = sys.rates(&axpy(x, 0.5 * h, &k2));
    let k4 = sys.rates(&axpy(x, h, &k3));
    let mut out = *x;
    for i in 0..MAX_DIM {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One explicit Euler step of the drift. Shares the update expression with
/// the Euler–Maruyama stepper so that zero noise reproduces it bit for bit.
#[inline]
fn euler_step(sys: &SystemSpec, x: &[f64; MAX_DIM], h: f64) -> [f64; MAX_DIM] {
    axpy(x, h, &sys.rates(x))
}

fn blown_up(x: &[f64; MAX_DIM], dim: usize) -> bool {
    x[..dim].iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_LIMIT)
}

fn check_start(sys: &SystemSpec, x0: &PhaseState, cfg: &IntegratorConfig) -> Result<()> {
    cfg.validate()?;
    if x0.dof() != sys.dof() {
        return Err(Error::DimensionMismatch {
            expected: sys.dof(),
            got: x0.dof(),
        });
    }
    if !x0.is_finite() {
        return Err(Error::Contract("initial state is not finite".into()));
    }
    if let Some(region) = &cfg.stop_region {
        region.validate(x0.dim())?;
    }
    Ok(())
}

/// Optional map `(x, h) ↦ x(h)` advancing a state by part of a step.
type SubStep<'a> = Option<&'a dyn Fn(&[f64; MAX_DIM], f64) -> [f64; MAX_DIM]>;

/// Point where the step `x → next` (of signed size `h`) leaves `region`,
/// with the partial step size. Bisects on the sub-step map when one is
/// given and on the chord otherwise; the returned point lies just outside.
fn locate_exit(
    region: &StopBox,
    x: &[f64; MAX_DIM],
    next: &[f64; MAX_DIM],
    h: f64,
    dof: usize,
    substep: SubStep<'_>,
) -> ([f64; MAX_DIM], f64) {
    let at = |s: f64| -> [f64; MAX_DIM] {
        match substep {
            Some(f) => f(x, s * h),
            None => {
                let mut out = *x;
                for i in 0..MAX_DIM {
                    out[i] += s * (next[i] - x[i]);
                }
                out
            }
        }
    };
    let inside = |y: &[f64; MAX_DIM]| region.contains(&PhaseState::from_raw(*y, dof, 0.0));
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = *next;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let y = at(mid);
        if inside(&y) {
            lo = mid;
        } else {
            hi = mid;
            best = y;
        }
    }
    (best, hi * h)
}

/// Shared fixed-step loop; `advance(k, state, h)` produces step `k`.
/// When a step leaves the stop region it is cut back to the boundary.
fn run_steps<O, F>(
    sys: &SystemSpec,
    x0: &PhaseState,
    cfg: &IntegratorConfig,
    observer: &mut O,
    mut advance: F,
    substep: SubStep<'_>,
) -> IntegrationResult
where
    O: StepObserver + ?Sized,
    F: FnMut(usize, &[f64; MAX_DIM], f64) -> [f64; MAX_DIM],
{
    let dof = x0.dof();
    let dim = 2 * dof;
    let sign = cfg.direction.sign();
    let n = step_count(cfg.tau, cfg.dt);
    let mut state = PhaseState::from_raw(*x0.raw(), dof, cfg.t0);
    let mut elapsed = 0.0;
    let mut stop = StopReason::Horizon;
    observer.begin(sys, &state);

    if let Some(region) = &cfg.stop_region {
        if !region.contains(&state) {
            return IntegrationResult {
                final_state: state,
                elapsed,
                escaped: true,
                stop: StopReason::RegionExit,
                accumulated: observer.accumulated(),
            };
        }
    }

    for k in 0..n {
        let h = sign * step_size(k, n, cfg.tau, cfg.dt);
        let next = advance(k, state.raw(), h);
        if blown_up(&next, dim) {
            stop = StopReason::Blowup;
            break;
        }
        if let Some(region) = &cfg.stop_region {
            let candidate = PhaseState::from_raw(next, dof, 0.0);
            if !region.contains(&candidate) {
                let (exit, h_exit) = locate_exit(region, state.raw(), &next, h, dof, substep);
                elapsed += h_exit.abs();
                state = PhaseState::from_raw(exit, dof, cfg.t0 + sign * elapsed);
                observer.step(sys, &state, h_exit);
                stop = StopReason::RegionExit;
                break;
            }
        }
        elapsed += h.abs();
        state = PhaseState::from_raw(next, dof, cfg.t0 + sign * elapsed);
        observer.step(sys, &state, h);
    }
    if stop == StopReason::Horizon {
        elapsed = cfg.tau;
        state.t = cfg.t0 + sign * cfg.tau;
    }
    IntegrationResult {
        final_state: state,
        elapsed,
        escaped: stop != StopReason::Horizon,
        stop,
        accumulated: observer.accumulated(),
    }
}

/// Fixed-step integration of the deterministic flow.
///
/// `Method::EulerMaruyama` is accepted only for noise-free systems and then
/// runs explicit Euler on the drift.
pub fn integrate_deterministic<O: StepObserver + ?Sized>(
    sys: &SystemSpec,
    x0: &PhaseState,
    cfg: &IntegratorConfig,
    observer: &mut O,
) -> Result<IntegrationResult> {
    check_start(sys, x0, cfg)?;
    match cfg.method {
        Method::Rk4 => {
            if sys.is_stochastic() {
                return Err(Error::Contract(
                    "RK4 cannot integrate a system with a noise term; use Euler–Maruyama".into(),
                ));
            }
            let sub = |x: &[f64; MAX_DIM], h: f64| rk4_step(sys, x, h);
            Ok(run_steps(sys, x0, cfg, observer, |_, x, h| rk4_step(sys, x, h), Some(&sub)))
        }
        Method::EulerMaruyama => {
            if sys.is_stochastic() {
                return Err(Error::Contract(
                    "stochastic systems need a Wiener path; use integrate_stochastic_em".into(),
                ));
            }
            let sub = |x: &[f64; MAX_DIM], h: f64| euler_step(sys, x, h);
            Ok(run_steps(sys, x0, cfg, observer, |_, x, h| euler_step(sys, x, h), Some(&sub)))
        }
    }
}

/// Discretised two-sided Wiener path anchored at `W(t₀) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub dt: f64,
    pub increments_forward: Vec<f64>,
    pub increments_backward: Vec<f64>,
}

const FORWARD_STREAM: u64 = 0;
const BACKWARD_STREAM: u64 = 1;

fn gaussian_increments(seed: u64, stream: u64, count: usize, dt: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale = dt.sqrt();
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Draws `⌈τ_f/dt⌉` forward and `⌈τ_b/dt⌉` backward `N(0, dt)` increments.
/// The two branches are separate streams of one ChaCha8 key, so they are
/// independent and reproducible from `seed` alone.
pub fn sample_wiener_path(seed: u64, dt: f64, tau_f: f64, tau_b: f64) -> Result<WienerPath> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    Ok(WienerPath {
        seed,
        dt,
        increments_forward: gaussian_increments(seed, FORWARD_STREAM, step_count(tau_f, dt), dt),
        increments_backward: gaussian_increments(seed, BACKWARD_STREAM, step_count(tau_b, dt), dt),
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the noise stream for one (grid point, realisation) pair. Depends
/// only on its arguments, never on scheduling.
pub fn stream_seed(global_seed: u64, point_index: u64, realization: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(global_seed) ^ point_index) ^ realization.rotate_left(32))
}

/// Euler–Maruyama integration of the Duffing SDE along a given path.
///
/// Forward: `X += Y h`, `Y += (X − X³) h + σ ΔW_k`. Backward legs use the
/// same expression with `h = −dt`, driven by the branch selected by
/// `cfg.backward_noise`.
pub fn integrate_stochastic_em<O: StepObserver + ?Sized>(
    sys: &SystemSpec,
    x0: &PhaseState,
    cfg: &IntegratorConfig,
    path: &WienerPath,
    observer: &mut O,
) -> Result<IntegrationResult> {
    check_start(sys, x0, cfg)?;
    if cfg.method != Method::EulerMaruyama {
        return Err(Error::Contract("integrate_stochastic_em needs Method::EulerMaruyama".into()));
    }
    let SystemSpec::Duffing { sigma } = *sys else {
        return Err(Error::Contract("Euler–Maruyama is defined for the Duffing system".into()));
    };
    if path.dt != cfg.dt {
        return Err(Error::Contract(format!(
            "path step {} differs from integrator step {}",
            path.dt, cfg.dt
        )));
    }
    let n = step_count(cfg.tau, cfg.dt);
    if n > 0 && step_size(n - 1, n, cfg.tau, cfg.dt) != cfg.dt {
        return Err(Error::Contract("Euler–Maruyama needs τ to be a multiple of dt".into()));
    }
    let (increments, flip) = match (cfg.direction, cfg.backward_noise) {
        (Direction::Forward, _) => (&path.increments_forward, false),
        (Direction::Backward, BackwardNoise::IndependentBranch) => (&path.increments_backward, false),
        (Direction::Backward, BackwardNoise::ReflectedForward) => (&path.increments_forward, true),
    };
    if increments.len() < n {
        return Err(Error::IncrementsExhausted {
            needed: n,
            available: increments.len(),
        });
    }
    let noise_sign = if flip { -1.0 } else { 1.0 };
    Ok(run_steps(
        sys,
        x0,
        cfg,
        observer,
        |k, x, h| {
            let mut next = euler_step(sys, x, h);
            next[1] += sigma * (noise_sign * increments[k]);
            next
        },
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::saddle_analytic_flow;
    use std::f64::consts::PI;

    fn run(sys: &SystemSpec, x0: PhaseState, cfg: &IntegratorConfig) -> IntegrationResult {
        integrate_deterministic(sys, &x0, cfg, &mut ()).unwrap()
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(step_count(35.0, 0.005), 7000);
        assert_eq!(step_count(1.0, 0.3), 4);
        assert_eq!(step_count(0.0, 0.1), 0);
        assert_eq!(step_count(2.0 * PI, 1e-3), 6284);
    }

    #[test]
    fn rk4_tracks_saddle_stable_manifold() {
        let sys = SystemSpec::Saddle { lambda: 1.0 };
        let cfg = IntegratorConfig::rk4(1e-3, 5.0, Direction::Forward);
        let r = run(&sys, PhaseState::planar(1.0, -1.0), &cfg);
        let exact = saddle_analytic_flow(1.0, 1.0, -1.0, 5.0);
        assert!((r.final_state.q()[0] - exact.q).abs() < 1e-9);
        assert!((r.final_state.p()[0] - exact.p).abs() < 1e-9);
        assert_eq!(r.elapsed, 5.0);
        assert!(!r.escaped);
        assert_eq!(r.final_state.t, 5.0);
    }

    #[test]
    fn harmonic_period() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let cfg = IntegratorConfig::rk4(1e-3, 2.0 * PI, Direction::Forward);
        let r = run(&sys, PhaseState::planar(1.0, 0.0), &cfg);
        assert!((r.final_state.q()[0] - 1.0).abs() < 1e-8);
        assert!(r.final_state.p()[0].abs() < 1e-8);
    }

    #[test]
    fn region_exit_stops_early() {
        let sys = SystemSpec::Saddle { lambda: 1.0 };
        let region = StopBox::square(8.0, 2);
        let cfg = IntegratorConfig::rk4(1e-3, 8.0, Direction::Forward).with_stop_region(region.clone());
        let r = run(&sys, PhaseState::planar(2.0, 2.0), &cfg);
        assert!(r.escaped);
        assert_eq!(r.stop, StopReason::RegionExit);
        assert!(r.elapsed < 8.0);
        // the last step is cut back to the boundary
        let overshoot = r.final_state.max_abs() - 8.0;
        assert!(overshoot > 0.0 && overshoot < 1e-12, "{overshoot}");
        // exit time of the exact flow: q = p = 2e^t reaches 8 at t = ln 4
        assert!((r.elapsed - 4f64.ln()).abs() < 1e-10, "{}", r.elapsed);
    }

    #[test]
    fn start_outside_region_stops_immediately() {
        let sys = SystemSpec::Saddle { lambda: 1.0 };
        let cfg = IntegratorConfig::rk4(1e-3, 1.0, Direction::Forward).with_stop_region(StopBox::square(1.0, 2));
        let r = run(&sys, PhaseState::planar(3.0, 0.0), &cfg);
        assert_eq!(r.elapsed, 0.0);
        assert_eq!(r.stop, StopReason::RegionExit);
    }

    #[test]
    fn blowup_is_flagged() {
        let sys = SystemSpec::Saddle { lambda: 1.0 };
        let cfg = IntegratorConfig::rk4(1e-2, 40.0, Direction::Forward);
        let r = run(&sys, PhaseState::planar(1.0, 1.0), &cfg);
        assert_eq!(r.stop, StopReason::Blowup);
        assert!(r.escaped);
        assert!(r.final_state.max_abs() <= ESCAPE_LIMIT);
        assert!(r.elapsed < 40.0);
    }

    #[test]
    fn rejects_bad_input() {
        let sys = SystemSpec::Saddle { lambda: 1.0 };
        let cfg = IntegratorConfig::rk4(1e-3, 1.0, Direction::Forward);
        assert!(integrate_deterministic(&sys, &PhaseState::spatial(0.0, 0.0, 0.0, 0.0), &cfg, &mut ()).is_err());
        let bad = IntegratorConfig::rk4(0.0, 1.0, Direction::Forward);
        assert!(integrate_deterministic(&sys, &PhaseState::planar(0.0, 0.0), &bad, &mut ()).is_err());
        let noisy = SystemSpec::Duffing { sigma: 0.1 };
        assert!(integrate_deterministic(&noisy, &PhaseState::planar(0.0, 0.0), &cfg, &mut ()).is_err());
    }

    #[test]
    fn backward_then_forward_returns() {
        let sys = SystemSpec::proton_transfer_default();
        let x0 = PhaseState::spatial(0.1, -0.3, 0.2, 0.25);
        let back = run(&sys, x0, &IntegratorConfig::rk4(1e-3, 5.0, Direction::Backward));
        assert_eq!(back.final_state.t, -5.0);
        let mut start = back.final_state;
        start.t = 0.0;
        let fwd = run(&sys, start, &IntegratorConfig::rk4(1e-3, 5.0, Direction::Forward));
        for (a, b) in fwd.final_state.coords().iter().zip(x0.coords()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_convergence_order() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let err = |dt: f64| {
            let r = run(&sys, PhaseState::planar(1.0, 0.0), &IntegratorConfig::rk4(dt, 10.0, Direction::Forward));
            let (q, p) = (r.final_state.q()[0], r.final_state.p()[0]);
            ((q - 10f64.cos()).powi(2) + (p + 10f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_energy_drift_long_horizon() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let x0 = PhaseState::planar(1.0, 0.0);
        let r = run(&sys, x0, &IntegratorConfig::rk4(1e-2, 750.0, Direction::Forward));
        let h0 = sys.total_energy(&x0).unwrap();
        let h1 = sys.total_energy(&r.final_state).unwrap();
        assert!(((h1 - h0) / h0).abs() < 1e-6);
    }

    #[test]
    fn proton_transfer_energy_conservation() {
        let sys = SystemSpec::proton_transfer_default();
        // (0, 0.3, p_x, 0.1) on H = 0.1
        let v = sys.potential_energy(&[0.0, 0.3]).unwrap();
        let px = (2.0 * (0.1 - v) - 0.01f64).sqrt();
        let x0 = PhaseState::spatial(0.0, 0.3, px, 0.1);
        let h0 = sys.total_energy(&x0).unwrap();
        assert!((h0 - 0.1).abs() < 1e-15);
        let r = run(&sys, x0, &IntegratorConfig::rk4(1e-3, 10.0, Direction::Forward));
        assert!((sys.total_energy(&r.final_state).unwrap() - h0).abs() <= 1e-9);
    }

    #[test]
    fn recorder_sees_every_step() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let mut rec = TrajectoryRecorder::default();
        let cfg = IntegratorConfig::rk4(0.1, 1.0, Direction::Backward);
        integrate_deterministic(&sys, &PhaseState::planar(1.0, 0.0), &cfg, &mut rec).unwrap();
        assert_eq!(rec.states.len(), 11);
        assert!((rec.states[10].t + 1.0).abs() < 1e-15);
    }

    #[test]
    fn uneven_last_step_lands_on_horizon() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let mut rec = TrajectoryRecorder::default();
        let cfg = IntegratorConfig::rk4(0.3, 1.0, Direction::Forward);
        let r = integrate_deterministic(&sys, &PhaseState::planar(1.0, 0.0), &cfg, &mut rec).unwrap();
        assert_eq!(rec.states.len(), 5);
        assert_eq!(r.elapsed, 1.0);
        assert!((r.final_state.q()[0] - 1f64.cos()).abs() < 1e-4);
    }

    fn em_cfg(dt: f64, tau: f64, direction: Direction) -> IntegratorConfig {
        IntegratorConfig {
            method: Method::EulerMaruyama,
            ..IntegratorConfig::rk4(dt, tau, direction)
        }
    }

    #[test]
    fn zero_noise_em_is_explicit_euler() {
        let noisy = SystemSpec::Duffing { sigma: 0.0 };
        let path = sample_wiener_path(7, 0.005, 5.0, 5.0).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let cfg = em_cfg(0.005, 5.0, dir);
            let mut a = TrajectoryRecorder::default();
            let mut b = TrajectoryRecorder::default();
            let x0 = PhaseState::planar(0.3, -0.2);
            integrate_stochastic_em(&noisy, &x0, &cfg, &path, &mut a).unwrap();
            integrate_deterministic(&noisy, &x0, &cfg, &mut b).unwrap();
            assert_eq!(a.states, b.states);
            // and step by step against a hand-written Euler update
            let h = dir.sign() * 0.005;
            let (mut x, mut y) = (0.3f64, -0.2f64);
            for s in &a.states[1..] {
                let (nx, ny) = (x + h * y, y + h * (x - x * x * x));
                x = nx;
                y = ny;
                assert_eq!(s.coords(), &[x, y]);
            }
        }
    }

    #[test]
    fn drift_fixed_points_stay_put() {
        let sys = SystemSpec::Duffing { sigma: 0.0 };
        let path = sample_wiener_path(1, 0.005, 2.0, 0.0).unwrap();
        for x in [0.0, 1.0, -1.0] {
            let r = integrate_stochastic_em(&sys, &PhaseState::planar(x, 0.0), &em_cfg(0.005, 2.0, Direction::Forward), &path, &mut ())
                .unwrap();
            assert_eq!(r.final_state.coords(), &[x, 0.0]);
        }
    }

    #[test]
    fn em_is_deterministic_per_seed() {
        let sys = SystemSpec::Duffing { sigma: 0.025 };
        let cfg = em_cfg(0.005, 10.0, Direction::Forward);
        let x0 = PhaseState::planar(0.5, 0.1);
        let traj = |seed| {
            let path = sample_wiener_path(seed, 0.005, 10.0, 10.0).unwrap();
            let mut rec = TrajectoryRecorder::default();
            integrate_stochastic_em(&sys, &x0, &cfg, &path, &mut rec).unwrap();
            rec.states
        };
        assert_eq!(traj(11), traj(11));
        assert_ne!(traj(11), traj(12));
    }

    #[test]
    fn em_reports_exhausted_path() {
        let sys = SystemSpec::Duffing { sigma: 0.1 };
        let path = sample_wiener_path(1, 0.01, 1.0, 0.5).unwrap();
        let err = integrate_stochastic_em(&sys, &PhaseState::planar(0.0, 0.0), &em_cfg(0.01, 1.0, Direction::Backward), &path, &mut ())
            .unwrap_err();
        assert_eq!(err, Error::IncrementsExhausted { needed: 100, available: 50 });
        let short = sample_wiener_path(1, 0.02, 1.0, 1.0).unwrap();
        assert!(integrate_stochastic_em(&sys, &PhaseState::planar(0.0, 0.0), &em_cfg(0.01, 1.0, Direction::Forward), &short, &mut ())
            .is_err());
    }

    #[test]
    fn reflected_backward_noise_uses_forward_branch() {
        let sys = SystemSpec::Duffing { sigma: 0.5 };
        let path = sample_wiener_path(3, 0.01, 1.0, 1.0).unwrap();
        let x0 = PhaseState::planar(0.2, 0.0);
        let mut cfg = em_cfg(0.01, 0.01, Direction::Backward);
        cfg.backward_noise = BackwardNoise::ReflectedForward;
        let r = integrate_stochastic_em(&sys, &x0, &cfg, &path, &mut ()).unwrap();
        let expected_y = 0.0 + (-0.01) * (0.2 - 0.008) + 0.5 * (-path.increments_forward[0]);
        assert_eq!(r.final_state.p()[0], expected_y);
    }

    #[test]
    fn wiener_increment_statistics() {
        let dt = 0.005;
        let n = 1_000_000;
        let path = sample_wiener_path(2024, dt, n as f64 * dt, 0.0).unwrap();
        assert_eq!(path.increments_forward.len(), n);
        assert!(path.increments_backward.is_empty());
        let mean = path.increments_forward.iter().sum::<f64>() / n as f64;
        let var = path.increments_forward.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * dt.sqrt() / (n as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn wiener_paths_differ_by_seed_and_branch() {
        let a = sample_wiener_path(1, 0.01, 1.0, 1.0).unwrap();
        let b = sample_wiener_path(2, 0.01, 1.0, 1.0).unwrap();
        assert!(a.increments_forward.iter().zip(&b.increments_forward).all(|(x, y)| x != y));
        assert_ne!(a.increments_forward, a.increments_backward);
        assert_eq!(a, sample_wiener_path(1, 0.01, 1.0, 1.0).unwrap());
    }

    #[test]
    fn stream_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..100u64 {
            for r in 0..25u64 {
                assert!(seen.insert(stream_seed(42, p, r)));
            }
        }
    }
}
