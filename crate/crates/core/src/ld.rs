//! The action-based Lagrangian descriptor `S = ∫ p·q̇ dt = ∫ 2T dt`, split
//! into forward and backward legs, over single states and whole grids.
//!
//! The integrand is accumulated with the trapezoidal rule on the integrator
//! nodes; backward legs are accumulated with `|dt|`, so every component is
//! non-negative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PhaseState, SystemSpec};
use crate::error::{invalid, Error, Result};
use crate::integrate::{
    integrate_deterministic, integrate_stochastic_em, sample_wiener_path, stream_seed, BackwardNoise, Direction,
    IntegratorConfig, Method, StepObserver, StopBox, StopReason, WienerPath,
};
use crate::sections::{Axis, InitialGrid};

/// Whether legs always run for their full horizon or stop on leaving a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdMode {
    #[default]
    Fixed,
    Variable,
}

/// How Wiener paths are assigned to grid points within one realisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Every grid point draws its own path, seeded from
    /// `(seed, point, realization)`.
    #[default]
    PerPoint,
    /// All grid points of a realisation are driven by one path, seeded from
    /// `(seed, 0, realization)`: the flow of a random dynamical system for a
    /// fixed noise sample, which is smooth across the grid.
    Shared,
}

/// Number of noise realisations averaged per grid point, and the global seed
/// from which every stream is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub n_realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub sharing: NoiseSharing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdParams {
    pub tau_f: f64,
    pub tau_b: f64,
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    #[serde(default)]
    pub mode: LdMode,
    #[serde(default)]
    pub stop_region: Option<StopBox>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub ensemble: Option<Ensemble>,
    #[serde(default)]
    pub backward_noise: BackwardNoise,
}

impl LdParams {
    /// Equal forward and backward horizons, RK4.
    pub fn fixed(tau: f64, dt: f64) -> Self {
        Self {
            tau_f: tau,
            tau_b: tau,
            t0: 0.0,
            dt,
            mode: LdMode::Fixed,
            stop_region: None,
            method: Method::Rk4,
            ensemble: None,
            backward_noise: BackwardNoise::default(),
        }
    }

    pub fn forward_only(tau: f64, dt: f64) -> Self {
        Self {
            tau_b: 0.0,
            ..Self::fixed(tau, dt)
        }
    }

    pub fn variable(tau: f64, dt: f64, region: StopBox) -> Self {
        Self {
            mode: LdMode::Variable,
            stop_region: Some(region),
            ..Self::fixed(tau, dt)
        }
    }

    /// Euler–Maruyama ensemble for the Duffing system.
    pub fn stochastic(tau: f64, dt: f64, n_realizations: usize, seed: u64) -> Self {
        Self {
            method: Method::EulerMaruyama,
            ensemble: Some(Ensemble {
                n_realizations,
                seed,
                sharing: NoiseSharing::PerPoint,
            }),
            ..Self::fixed(tau, dt)
        }
    }

    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        sys.validate()?;
        for (name, tau) in [("tau_f", self.tau_f), ("tau_b", self.tau_b)] {
            if !(tau >= 0.0) || !tau.is_finite() {
                return Err(invalid(name, format!("must be finite and >= 0, got {tau}")));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        match (self.mode, &self.stop_region) {
            (LdMode::Variable, None) => return Err(invalid("stop_region", "required in variable mode")),
            (LdMode::Fixed, Some(_)) => return Err(invalid("stop_region", "only used in variable mode")),
            (LdMode::Variable, Some(region)) => region.validate(2 * sys.dof())?,
            (LdMode::Fixed, None) => {}
        }
        if let Some(ens) = &self.ensemble {
            if !matches!(sys, SystemSpec::Duffing { .. }) {
                return Err(invalid("ensemble", "only valid for the stochastic Duffing system"));
            }
            if ens.n_realizations == 0 {
                return Err(invalid("ensemble", "n_realizations must be at least 1"));
            }
            if self.method != Method::EulerMaruyama {
                return Err(invalid("method", "ensembles are integrated with euler_maruyama"));
            }
        }
        if sys.is_stochastic() && self.ensemble.is_none() {
            return Err(invalid("ensemble", "a system with noise needs an ensemble"));
        }
        Ok(())
    }

    fn leg_config(&self, direction: Direction) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            method: self.method,
            direction,
            t0: self.t0,
            tau: match direction {
                Direction::Forward => self.tau_f,
                Direction::Backward => self.tau_b,
            },
            stop_region: match self.mode {
                LdMode::Fixed => None,
                LdMode::Variable => self.stop_region.clone(),
            },
            backward_noise: self.backward_noise,
        }
    }
}

/// Trapezoidal accumulation of `p·q̇` over the visited nodes.
#[derive(Debug, Default, Clone)]
pub struct ActionAccumulator {
    prev: f64,
    sum: f64,
}

impl StepObserver for ActionAccumulator {
    fn begin(&mut self, sys: &SystemSpec, state: &PhaseState) {
        self.prev = sys.action_rate(state.raw(), state.dof());
        self.sum = 0.0;
    }

    fn step(&mut self, sys: &SystemSpec, state: &PhaseState, dt: f64) {
        let cur = sys.action_rate(state.raw(), state.dof());
        self.sum += 0.5 * (self.prev + cur) * dt.abs();
        self.prev = cur;
    }

    fn accumulated(&self) -> f64 {
        self.sum
    }
}

/// One accumulated leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegValue {
    pub value: f64,
    pub elapsed: f64,
    pub stop: StopReason,
}

impl LegValue {
    fn empty() -> Self {
        Self {
            value: 0.0,
            elapsed: 0.0,
            stop: StopReason::Horizon,
        }
    }

    pub fn blew_up(&self) -> bool {
        self.stop == StopReason::Blowup
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdValue {
    pub forward: f64,
    pub backward: f64,
    pub total: f64,
    pub elapsed_f: f64,
    pub elapsed_b: f64,
    /// A leg blew up; the components hold the partial sums. Leaving the
    /// stop region in variable mode is the normal end of a leg, not an escape.
    pub escaped: bool,
}

impl LdValue {
    fn from_legs(f: LegValue, b: LegValue) -> Self {
        Self {
            forward: f.value,
            backward: b.value,
            total: f.value + b.value,
            elapsed_f: f.elapsed,
            elapsed_b: b.elapsed,
            escaped: f.blew_up() || b.blew_up(),
        }
    }
}

fn deterministic_leg(sys: &SystemSpec, x0: &PhaseState, params: &LdParams, direction: Direction) -> Result<LegValue> {
    let cfg = params.leg_config(direction);
    if cfg.tau == 0.0 {
        return Ok(LegValue::empty());
    }
    let mut acc = ActionAccumulator::default();
    let res = integrate_deterministic(sys, x0, &cfg, &mut acc)?;
    Ok(LegValue {
        value: res.accumulated,
        elapsed: res.elapsed,
        stop: res.stop,
    })
}

fn stochastic_leg(
    sys: &SystemSpec,
    x0: &PhaseState,
    params: &LdParams,
    path: &WienerPath,
    direction: Direction,
) -> Result<LegValue> {
    let cfg = params.leg_config(direction);
    if cfg.tau == 0.0 {
        return Ok(LegValue::empty());
    }
    let mut acc = ActionAccumulator::default();
    let res = integrate_stochastic_em(sys, x0, &cfg, path, &mut acc)?;
    Ok(LegValue {
        value: res.accumulated,
        elapsed: res.elapsed,
        stop: res.stop,
    })
}

fn check_deterministic(sys: &SystemSpec, params: &LdParams) -> Result<()> {
    params.validate(sys)?;
    if params.ensemble.is_some() {
        return Err(Error::Contract(
            "params carry an ensemble; use the stochastic descriptor functions".into(),
        ));
    }
    Ok(())
}

/// `S^(f)` over `[t₀, t₀ + τ_f]`.
pub fn ld_forward(sys: &SystemSpec, x0: &PhaseState, params: &LdParams) -> Result<LegValue> {
    check_deterministic(sys, params)?;
    deterministic_leg(sys, x0, params, Direction::Forward)
}

/// `S^(b)` over `[t₀ − τ_b, t₀]`, non-negative.
pub fn ld_backward(sys: &SystemSpec, x0: &PhaseState, params: &LdParams) -> Result<LegValue> {
    check_deterministic(sys, params)?;
    deterministic_leg(sys, x0, params, Direction::Backward)
}

pub fn ld_total(sys: &SystemSpec, x0: &PhaseState, params: &LdParams) -> Result<LdValue> {
    check_deterministic(sys, params)?;
    let f = deterministic_leg(sys, x0, params, Direction::Forward)?;
    let b = deterministic_leg(sys, x0, params, Direction::Backward)?;
    Ok(LdValue::from_legs(f, b))
}

fn averaging_horizon(params: &LdParams) -> Result<f64> {
    if params.mode != LdMode::Fixed {
        return Err(invalid("mode", "time averages need fixed integration times"));
    }
    let span = params.tau_f + params.tau_b;
    if !(span > 0.0) {
        return Err(invalid("tau_f", "time averages need a positive horizon"));
    }
    Ok(span)
}

/// `S / (τ_f + τ_b)`; with `τ_b = 0` this is `S^(f) / τ_f`.
pub fn ld_time_average(sys: &SystemSpec, x0: &PhaseState, params: &LdParams) -> Result<f64> {
    let span = averaging_horizon(params)?;
    Ok(ld_total(sys, x0, params)?.total / span)
}

/// One descriptor realisation of the stochastic system at grid index
/// `point`, driven by the Wiener path the ensemble's [`NoiseSharing`] assigns
/// to it.
pub fn stochastic_ld_value(
    sys: &SystemSpec,
    x0: &PhaseState,
    params: &LdParams,
    point: usize,
    realization: usize,
) -> Result<LdValue> {
    let ens = params
        .ensemble
        .ok_or_else(|| invalid("ensemble", "stochastic descriptors need an ensemble"))?;
    let point = match ens.sharing {
        NoiseSharing::PerPoint => point as u64,
        NoiseSharing::Shared => 0,
    };
    let seed = stream_seed(ens.seed, point, realization as u64);
    let path = sample_wiener_path(seed, params.dt, params.tau_f, params.tau_b)?;
    value_on_path(sys, x0, params, &path)
}

fn value_on_path(sys: &SystemSpec, x0: &PhaseState, params: &LdParams, path: &WienerPath) -> Result<LdValue> {
    let f = stochastic_leg(sys, x0, params, path, Direction::Forward)?;
    let b = stochastic_leg(sys, x0, params, path, Direction::Backward)?;
    Ok(LdValue::from_legs(f, b))
}

/// Per-realisation paths when they are shared by the whole grid.
fn shared_paths(ens: &Ensemble, params: &LdParams) -> Result<Option<Vec<WienerPath>>> {
    if ens.sharing != NoiseSharing::Shared {
        return Ok(None);
    }
    (0..ens.n_realizations)
        .map(|r| sample_wiener_path(stream_seed(ens.seed, 0, r as u64), params.dt, params.tau_f, params.tau_b))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn realization_value(
    sys: &SystemSpec,
    x0: &PhaseState,
    params: &LdParams,
    shared: &Option<Vec<WienerPath>>,
    point: usize,
    realization: usize,
) -> Result<LdValue> {
    match shared {
        Some(paths) => value_on_path(sys, x0, params, &paths[realization]),
        None => stochastic_ld_value(sys, x0, params, point, realization),
    }
}

/// Mean taken relative to the first value, so a constant sequence averages
/// to itself exactly.
pub(crate) fn pivot_mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut it = values.into_iter();
    let Some(pivot) = it.next() else {
        return f64::NAN;
    };
    let (mut acc, mut n) = (0.0, 1usize);
    for v in it {
        acc += v - pivot;
        n += 1;
    }
    pivot + acc / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldComponent {
    Forward,
    Backward,
    Total,
    TimeAverage,
    Normalized,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub component: FieldComponent,
    pub system: Option<SystemSpec>,
    pub params: Option<LdParams>,
}

impl FieldMetadata {
    pub fn bare(component: FieldComponent) -> Self {
        Self {
            component,
            system: None,
            params: None,
        }
    }
}

/// Values on a grid, row-major with `x` fastest: cell `(i, j)` is at
/// `j · nx + i`. Masked cells are excluded from statistics; infeasible cells
/// hold NaN, escaped cells keep their partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub metadata: FieldMetadata,
}

impl ScalarField {
    pub fn new(x_axis: Axis, y_axis: Axis, values: Vec<f64>, mask: Vec<bool>, metadata: FieldMetadata) -> Result<Self> {
        let n = x_axis.count * y_axis.count;
        if values.len() != n || mask.len() != n {
            return Err(Error::Contract(format!(
                "field holds {} values and {} mask cells for a {}x{} grid",
                values.len(),
                mask.len(),
                x_axis.count,
                y_axis.count
            )));
        }
        Ok(Self {
            values,
            mask,
            x_axis,
            y_axis,
            metadata,
        })
    }

    pub fn nx(&self) -> usize {
        self.x_axis.count
    }

    pub fn ny(&self) -> usize {
        self.y_axis.count
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.mask[self.index(i, j)]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_axis.value(i)
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_axis.value(j)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v)
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Smallest valid cell; ties go to the lowest index.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, (v, m)) in self.values.iter().zip(&self.mask).enumerate() {
            if *m && best.is_none_or(|(_, b)| *v < b) {
                best = Some((k, *v));
            }
        }
        best.map(|(k, _)| (k % self.nx(), k / self.nx()))
    }

    /// Bitwise equality, treating NaNs with equal payloads as equal.
    pub fn bits_eq(&self, other: &ScalarField) -> bool {
        self.x_axis == other.x_axis
            && self.y_axis == other.y_axis
            && self.mask == other.mask
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Forward, backward and total fields sharing one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTriplet {
    pub forward: ScalarField,
    pub backward: ScalarField,
    pub total: ScalarField,
}

impl FieldTriplet {
    fn assemble(grid: &InitialGrid, values: &[Option<LdValue>], sys: &SystemSpec, params: &LdParams) -> Result<Self> {
        let mask: Vec<bool> = values.iter().map(|v| v.is_some_and(|v| !v.escaped)).collect();
        let pick = |f: fn(&LdValue) -> f64| -> Vec<f64> { values.iter().map(|v| v.as_ref().map_or(f64::NAN, f)).collect() };
        let meta = |component| FieldMetadata {
            component,
            system: Some(*sys),
            params: Some(params.clone()),
        };
        Ok(Self {
            forward: ScalarField::new(grid.x_axis, grid.y_axis, pick(|v| v.forward), mask.clone(), meta(FieldComponent::Forward))?,
            backward: ScalarField::new(grid.x_axis, grid.y_axis, pick(|v| v.backward), mask.clone(), meta(FieldComponent::Backward))?,
            total: ScalarField::new(grid.x_axis, grid.y_axis, pick(|v| v.total), mask, meta(FieldComponent::Total))?,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.total.mask
    }
}

fn check_grid(grid: &InitialGrid) -> Result<()> {
    if grid.states.len() != grid.nx() * grid.ny() {
        return Err(Error::Contract("grid state count does not match its axes".into()));
    }
    if grid.feasible_count() == 0 {
        return Err(Error::EmptyGrid);
    }
    Ok(())
}

/// Descriptor triplet over every feasible grid node, evaluated in parallel.
/// The result does not depend on scheduling.
pub fn ld_field(sys: &SystemSpec, grid: &InitialGrid, params: &LdParams) -> Result<FieldTriplet> {
    check_deterministic(sys, params)?;
    check_grid(grid)?;
    let values = grid
        .states
        .par_iter()
        .map(|s| s.as_ref().map(|x| ld_total(sys, x, params)).transpose())
        .collect::<Result<Vec<_>>>()?;
    FieldTriplet::assemble(grid, &values, sys, params)
}

fn check_stochastic(sys: &SystemSpec, params: &LdParams) -> Result<Ensemble> {
    params.validate(sys)?;
    params
        .ensemble
        .ok_or_else(|| invalid("ensemble", "stochastic fields need an ensemble"))
}

/// The fields of a single noise realisation.
pub fn stochastic_ld_field_realization(
    sys: &SystemSpec,
    grid: &InitialGrid,
    params: &LdParams,
    realization: usize,
) -> Result<FieldTriplet> {
    let ens = check_stochastic(sys, params)?;
    check_grid(grid)?;
    if realization >= ens.n_realizations {
        return Err(invalid("realization", "index beyond the ensemble size"));
    }
    let shared = shared_paths(&ens, params)?;
    let values = grid
        .states
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            s.as_ref()
                .map(|x| realization_value(sys, x, params, &shared, k, realization))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    FieldTriplet::assemble(grid, &values, sys, params)
}

/// Ensemble mean of the per-realisation fields. A cell is masked when any
/// realisation escaped. Equal to averaging the output of
/// [`stochastic_ld_field_realization`] over all realisations, bit for bit.
pub fn stochastic_ld_field(sys: &SystemSpec, grid: &InitialGrid, params: &LdParams) -> Result<FieldTriplet> {
    let ens = check_stochastic(sys, params)?;
    check_grid(grid)?;
    let shared = shared_paths(&ens, params)?;
    let values = grid
        .states
        .par_iter()
        .enumerate()
        .map(|(k, s)| -> Result<Option<LdValue>> {
            let Some(x) = s else { return Ok(None) };
            let runs = (0..ens.n_realizations)
                .map(|r| realization_value(sys, x, params, &shared, k, r))
                .collect::<Result<Vec<_>>>()?;
            let forward = pivot_mean(runs.iter().map(|v| v.forward));
            let backward = pivot_mean(runs.iter().map(|v| v.backward));
            Ok(Some(LdValue {
                forward,
                backward,
                total: pivot_mean(runs.iter().map(|v| v.total)),
                elapsed_f: pivot_mean(runs.iter().map(|v| v.elapsed_f)),
                elapsed_b: pivot_mean(runs.iter().map(|v| v.elapsed_b)),
                escaped: runs.iter().any(|v| v.escaped),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    FieldTriplet::assemble(grid, &values, sys, params)
}

/// `total / (τ_f + τ_b)` cell by cell.
pub fn time_average_field(triplet: &FieldTriplet, params: &LdParams) -> Result<ScalarField> {
    let span = averaging_horizon(params)?;
    let total = &triplet.total;
    let mut out = total.clone();
    out.values = total.values.iter().map(|v| v / span).collect();
    out.metadata.component = FieldComponent::TimeAverage;
    Ok(out)
}
