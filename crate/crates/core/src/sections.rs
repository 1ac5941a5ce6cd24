//! Grids of initial conditions on phase-space slices, lifting onto energy
//! surfaces, and Poincaré return maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PhaseState, SystemSpec, MAX_DIM};
use crate::error::{invalid, Error, Result};
use crate::integrate::{rk4_step, ESCAPE_LIMIT};

/// Uniform axis with inclusive endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(invalid("count", format!("axis needs at least 2 nodes, got {}", self.count)));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(invalid("axis", format!("need finite min < max, got [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    /// Fractional node index of `v`, `None` outside the axis.
    pub fn locate(&self, v: f64) -> Option<f64> {
        if !(v >= self.min && v <= self.max) {
            return None;
        }
        Some((v - self.min) / self.spacing())
    }
}

/// A two-dimensional slice of phase space on which initial conditions live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SectionSpec {
    /// The whole `(q, p)` plane of a one degree-of-freedom system.
    FullPlane { x: Axis, y: Axis },
    /// `q_fixed = fixed_value` on the energy surface `H = energy`, plotted in
    /// the remaining pair `(q_free, p_free)`; `p_fixed ≥ 0` is solved from the
    /// energy.
    EnergySection {
        fixed_dof: usize,
        fixed_value: f64,
        energy: f64,
        x: Axis,
        y: Axis,
    },
}

impl SectionSpec {
    /// `x = 0, p_x ≥ 0`, plotted in `(y, p_y)`.
    pub fn saddle_section(energy: f64, y: Axis, py: Axis) -> Self {
        SectionSpec::EnergySection {
            fixed_dof: 0,
            fixed_value: 0.0,
            energy,
            x: y,
            y: py,
        }
    }

    /// `y = −y_w, p_y ≥ 0`, plotted in `(x, p_x)`.
    pub fn well_section(sys: &SystemSpec, energy: f64, x: Axis, px: Axis) -> Result<Self> {
        match *sys {
            SystemSpec::ProtonTransfer { well, .. } => Ok(SectionSpec::EnergySection {
                fixed_dof: 1,
                fixed_value: -well,
                energy,
                x,
                y: px,
            }),
            _ => Err(invalid("system", "the well section needs the proton-transfer model")),
        }
    }

    pub fn axes(&self) -> (Axis, Axis) {
        match self {
            SectionSpec::FullPlane { x, y } | SectionSpec::EnergySection { x, y, .. } => (*x, *y),
        }
    }

    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        let (x, y) = self.axes();
        x.validate()?;
        y.validate()?;
        match self {
            SectionSpec::FullPlane { .. } => {
                if sys.dof() != 1 {
                    return Err(invalid("section", "a full-plane grid needs a one degree-of-freedom system"));
                }
            }
            SectionSpec::EnergySection {
                fixed_dof,
                fixed_value,
                energy,
                ..
            } => {
                if sys.dof() != 2 {
                    return Err(invalid("section", "an energy section needs a two degree-of-freedom system"));
                }
                if *fixed_dof >= 2 {
                    return Err(invalid("fixed_dof", "must be 0 or 1"));
                }
                if !fixed_value.is_finite() || !energy.is_finite() {
                    return Err(invalid("section", "fixed value and energy must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// Row-major lattice: node `(i, j)` sits at index `j · nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub points: Vec<[f64; 2]>,
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.x_axis.count
    }

    pub fn ny(&self) -> usize {
        self.y_axis.count
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.nx(), index / self.nx())
    }
}

pub fn build_grid(spec: &SectionSpec) -> Result<Grid> {
    let (x_axis, y_axis) = spec.axes();
    x_axis.validate()?;
    y_axis.validate()?;
    let mut points = Vec::with_capacity(x_axis.count * y_axis.count);
    for j in 0..y_axis.count {
        let y = y_axis.value(j);
        for i in 0..x_axis.count {
            points.push([x_axis.value(i), y]);
        }
    }
    Ok(Grid { x_axis, y_axis, points })
}

/// Full phase-space state for a section point, or `None` where the point is
/// outside the energetically allowed region.
pub fn lift_to_energy_surface(sys: &SystemSpec, spec: &SectionSpec, point: [f64; 2]) -> Result<Option<PhaseState>> {
    match *spec {
        SectionSpec::FullPlane { .. } => {
            if sys.dof() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: sys.dof(),
                });
            }
            Ok(Some(PhaseState::planar(point[0], point[1])))
        }
        SectionSpec::EnergySection {
            fixed_dof,
            fixed_value,
            energy,
            ..
        } => {
            if sys.dof() != 2 || fixed_dof > 1 {
                return Err(invalid("section", "energy sections are defined for two degrees of freedom"));
            }
            let free = 1 - fixed_dof;
            let mut q = [0.0; 2];
            q[fixed_dof] = fixed_value;
            q[free] = point[0];
            let mut p = [0.0; 2];
            p[free] = point[1];
            let m = sys.mass();
            let remaining = energy - sys.potential_energy(&q)? - sys.kinetic_energy(&p)?;
            if !(remaining >= 0.0) {
                return Ok(None);
            }
            p[fixed_dof] = (2.0 * m * remaining).sqrt();
            Ok(Some(PhaseState::new(&q, &p, 0.0)?))
        }
    }
}

/// Lifted grid; `None` marks infeasible nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGrid {
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub states: Vec<Option<PhaseState>>,
}

impl InitialGrid {
    pub fn nx(&self) -> usize {
        self.x_axis.count
    }

    pub fn ny(&self) -> usize {
        self.y_axis.count
    }

    pub fn feasible_count(&self) -> usize {
        self.states.iter().filter(|s| s.is_some()).count()
    }

    /// Single-point grid, mostly for tests.
    pub fn single(state: PhaseState) -> Self {
        Self {
            x_axis: Axis::new(state.coords()[0], state.coords()[0] + 1.0, 1),
            y_axis: Axis::new(state.coords()[1], state.coords()[1] + 1.0, 1),
            states: vec![Some(state)],
        }
    }
}

pub fn initial_conditions(sys: &SystemSpec, spec: &SectionSpec) -> Result<InitialGrid> {
    spec.validate(sys)?;
    let grid = build_grid(spec)?;
    let states = grid
        .points
        .iter()
        .map(|pt| lift_to_energy_surface(sys, spec, *pt))
        .collect::<Result<Vec<_>>>()?;
    Ok(InitialGrid {
        x_axis: grid.x_axis,
        y_axis: grid.y_axis,
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDirection {
    Increasing,
    Decreasing,
    Both,
}

/// The hyperplane `coords[coord] = value`, crossed in `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingSurface {
    pub coord: usize,
    pub value: f64,
    pub direction: CrossingDirection,
    /// Coordinates recorded as the section point.
    pub plotted: (usize, usize),
}

impl CrossingSurface {
    pub fn from_section(spec: &SectionSpec) -> Result<Self> {
        match *spec {
            SectionSpec::EnergySection {
                fixed_dof,
                fixed_value,
                ..
            } => {
                let free = 1 - fixed_dof.min(1);
                Ok(Self {
                    coord: fixed_dof,
                    value: fixed_value,
                    // positive momentum ⇔ increasing coordinate
                    direction: CrossingDirection::Increasing,
                    plotted: (free, 2 + free),
                })
            }
            SectionSpec::FullPlane { .. } => Err(invalid(
                "section",
                "a full-plane grid has no crossing surface; use find_crossings",
            )),
        }
    }

    fn admits(&self, before: f64, after: f64) -> bool {
        match self.direction {
            CrossingDirection::Increasing => before < 0.0 && after >= 0.0,
            CrossingDirection::Decreasing => before > 0.0 && after <= 0.0,
            CrossingDirection::Both => (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0),
        }
    }

    fn rate_admitted(&self, rate: f64) -> bool {
        match self.direction {
            CrossingDirection::Increasing => rate >= 0.0,
            CrossingDirection::Decreasing => rate <= 0.0,
            CrossingDirection::Both => true,
        }
    }
}

/// Refined crossings of one trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossingSet {
    pub points: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub escaped: bool,
}

impl CrossingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn push(&mut self, state: PhaseState, plotted: (usize, usize)) {
        let c = state.coords();
        self.points.push([c[plotted.0], c[plotted.1]]);
        self.times.push(state.t);
        self.states.push(state);
    }
}

/// Crossing target for the refined offset.
pub const CROSSING_TOLERANCE: f64 = 1e-10;

fn hermite(g0: f64, g1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * g0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * g1
        + (s3 - s2) * h * d1
}

/// Locates the crossing inside the step `x → x + h`: bisection on the cubic
/// Hermite interpolant, then Newton polishing on the RK4 sub-step map.
fn refine(sys: &SystemSpec, surface: &CrossingSurface, x: &[f64; MAX_DIM], next: &[f64; MAX_DIM], h: f64) -> ([f64; MAX_DIM], f64) {
    let c = surface.coord;
    let g0 = x[c] - surface.value;
    let g1 = next[c] - surface.value;
    let d0 = sys.rates(x)[c];
    let d1 = sys.rates(next)[c];
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let lo_sign = g0.signum();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if hermite(g0, g1, d0, d1, h, mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut sub = 0.5 * (lo + hi) * h;
    let mut state = rk4_step(sys, x, sub);
    for _ in 0..8 {
        let g = state[c] - surface.value;
        if g.abs() < 0.01 * CROSSING_TOLERANCE {
            break;
        }
        let rate = sys.rates(&state)[c];
        if rate == 0.0 {
            break;
        }
        sub -= g / rate;
        state = rk4_step(sys, x, sub);
    }
    (state, sub)
}

/// Forward integration up to `t_max` collecting at most `max_crossings`
/// refined crossings of `surface`. The initial state counts as a crossing
/// when it already lies on the surface with an admissible rate.
pub fn find_crossings(
    sys: &SystemSpec,
    x0: &PhaseState,
    surface: &CrossingSurface,
    t_max: f64,
    max_crossings: usize,
    dt: f64,
) -> Result<CrossingSet> {
    if x0.dof() != sys.dof() {
        return Err(Error::DimensionMismatch {
            expected: sys.dof(),
            got: x0.dof(),
        });
    }
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(invalid("dt", "need dt > 0 and t_max >= 0"));
    }
    if surface.coord >= x0.dim() || surface.plotted.0 >= x0.dim() || surface.plotted.1 >= x0.dim() {
        return Err(invalid("surface", "coordinate index out of range"));
    }
    if sys.is_stochastic() {
        return Err(Error::Contract("Poincaré maps need a deterministic system".into()));
    }
    let dof = x0.dof();
    let dim = x0.dim();
    let mut out = CrossingSet::default();
    let mut x = *x0.raw();
    let t0 = x0.t;

    let g_start = x[surface.coord] - surface.value;
    if g_start.abs() <= CROSSING_TOLERANCE && surface.rate_admitted(sys.rates(&x)[surface.coord]) {
        out.push(*x0, surface.plotted);
    }

    let n = crate::integrate::step_count(t_max, dt);
    for k in 0..n {
        if out.len() >= max_crossings {
            break;
        }
        let next = rk4_step(sys, &x, dt);
        if next[..dim].iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_LIMIT) {
            out.escaped = true;
            break;
        }
        let before = x[surface.coord] - surface.value;
        let after = next[surface.coord] - surface.value;
        if surface.admits(before, after) {
            let (state, sub) = refine(sys, surface, &x, &next, dt);
            let t = t0 + k as f64 * dt + sub;
            out.push(PhaseState::from_raw(state, dof, t), surface.plotted);
        }
        x = next;
    }
    out.points.truncate(max_crossings);
    out.times.truncate(max_crossings);
    out.states.truncate(max_crossings);
    Ok(out)
}

/// Poincaré map on an energy section.
pub fn poincare_map(
    sys: &SystemSpec,
    x0: &PhaseState,
    spec: &SectionSpec,
    t_max: f64,
    max_crossings: usize,
    dt: f64,
) -> Result<CrossingSet> {
    let surface = CrossingSurface::from_section(spec)?;
    find_crossings(sys, x0, &surface, t_max, max_crossings, dt)
}

/// Poincaré maps of many initial conditions, ordered as the input.
pub fn poincare_ensemble(
    sys: &SystemSpec,
    starts: &[PhaseState],
    spec: &SectionSpec,
    t_max: f64,
    max_crossings: usize,
    dt: f64,
) -> Result<Vec<CrossingSet>> {
    starts
        .par_iter()
        .map(|x0| poincare_map(sys, x0, spec, t_max, max_crossings, dt))
        .collect()
}

/// `count` feasible nodes spread evenly through the grid's index order.
pub fn uniform_feasible_sample(grid: &InitialGrid, count: usize) -> Vec<PhaseState> {
    let feasible: Vec<PhaseState> = grid.states.iter().flatten().copied().collect();
    if count == 0 || feasible.is_empty() {
        return Vec::new();
    }
    let count = count.min(feasible.len());
    (0..count)
        .map(|k| feasible[(2 * k + 1) * feasible.len() / (2 * count)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn sigma1(energy: f64, n: usize) -> SectionSpec {
        SectionSpec::saddle_section(energy, Axis::new(-1.05, 1.05, n), Axis::new(-0.85, 0.85, n))
    }

    #[test]
    fn grid_layout() {
        let spec = SectionSpec::FullPlane {
            x: Axis::new(0.0, 1.0, 2),
            y: Axis::new(0.0, 1.0, 2),
        };
        let g = build_grid(&spec).unwrap();
        assert_eq!(g.points, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn large_grid_corner_and_size() {
        let spec = SectionSpec::FullPlane {
            x: Axis::new(-1.7, 1.7, 600),
            y: Axis::new(-0.9, 0.9, 600),
        };
        let g = build_grid(&spec).unwrap();
        assert_eq!(g.points.len(), 360_000);
        assert_eq!(g.points[0], [-1.7, -0.9]);
        assert_eq!(g.points[359_999], [1.7, 0.9]);
        for &(i, j) in &[(0, 0), (17, 3), (599, 599), (250, 411)] {
            let k = g.index(i, j);
            assert_eq!(g.ij(k), (i, j));
            assert_eq!(g.points[k], [g.x_axis.value(i), g.y_axis.value(j)]);
        }
    }

    #[test]
    fn axis_validation() {
        assert!(Axis::new(0.0, 1.0, 1).validate().is_err());
        assert!(Axis::new(1.0, 0.0, 5).validate().is_err());
        assert!(Axis::new(0.0, 1.0, 2).validate().is_ok());
    }

    #[test]
    fn lift_examples() {
        let sys = SystemSpec::proton_transfer_default();
        let spec = sigma1(0.1, 11);
        let s = lift_to_energy_surface(&sys, &spec, [0.0, 0.0]).unwrap().unwrap();
        assert!((s.p()[0] - 0.2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.q(), &[0.0, 0.0]);
        // far outside the Hill region
        assert!(lift_to_energy_surface(&sys, &spec, [2.0, 0.0]).unwrap().is_none());
        // boundary: H0 = V(q) exactly
        let v = sys.potential_energy(&[0.0, 0.5]).unwrap();
        let edge = SectionSpec::saddle_section(v, Axis::new(-1.0, 1.0, 3), Axis::new(-1.0, 1.0, 3));
        let s = lift_to_energy_surface(&sys, &edge, [0.5, 0.0]).unwrap().unwrap();
        assert_eq!(s.p()[0], 0.0);
    }

    #[test]
    fn lifted_states_lie_on_energy_surface() {
        let sys = SystemSpec::proton_transfer_default();
        for spec in [
            sigma1(0.1, 41),
            SectionSpec::well_section(&sys, 0.1, Axis::new(-0.6, 1.0, 41), Axis::new(-0.8, 0.8, 41)).unwrap(),
        ] {
            let grid = initial_conditions(&sys, &spec).unwrap();
            assert!(grid.feasible_count() > 0);
            for s in grid.states.iter().flatten() {
                assert!((sys.total_energy(s).unwrap() - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feasibility_mask_symmetric_without_coupling() {
        let sys = SystemSpec::ProtonTransfer {
            m: 1.0,
            barrier: 0.25,
            well: FRAC_1_SQRT_2,
            omega: 1.0,
            coupling: 0.0,
        };
        let grid = initial_conditions(&sys, &sigma1(0.1, 51)).unwrap();
        let n = grid.nx();
        for j in 0..n {
            for i in 0..n {
                let a = grid.states[j * n + i].is_some();
                let b = grid.states[(n - 1 - j) * n + (n - 1 - i)].is_some();
                assert_eq!(a, b, "({i}, {j})");
            }
        }
    }

    #[test]
    fn sections_reject_wrong_systems() {
        let saddle = SystemSpec::Saddle { lambda: 1.0 };
        assert!(initial_conditions(&saddle, &sigma1(0.1, 5)).is_err());
        let plane = SectionSpec::FullPlane {
            x: Axis::new(0.0, 1.0, 3),
            y: Axis::new(0.0, 1.0, 3),
        };
        assert!(initial_conditions(&SystemSpec::proton_transfer_default(), &plane).is_err());
        assert!(SectionSpec::well_section(&saddle, 0.1, Axis::new(0.0, 1.0, 3), Axis::new(0.0, 1.0, 3)).is_err());
    }

    #[test]
    fn centre_on_well_section_is_a_fixed_point() {
        let sys = SystemSpec::proton_transfer_default();
        let spec = SectionSpec::well_section(&sys, -0.25, Axis::new(-0.6, 1.0, 5), Axis::new(-0.8, 0.8, 5)).unwrap();
        let centre = PhaseState::spatial(0.25, -FRAC_1_SQRT_2, 0.0, 0.0);
        let set = poincare_map(&sys, &centre, &spec, 50.0, 100, 1e-2).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.points[0], [0.25, 0.0]);
    }

    #[test]
    fn harmonic_crossings_are_evenly_spaced() {
        let omega = 1.7;
        let sys = SystemSpec::Harmonic { m: 1.0, omega };
        let x0 = PhaseState::planar(1.0, 0.0);
        let both = CrossingSurface {
            coord: 0,
            value: 0.0,
            direction: CrossingDirection::Both,
            plotted: (0, 1),
        };
        let set = find_crossings(&sys, &x0, &both, 30.0, 1000, 1e-2).unwrap();
        assert!(set.len() >= 15);
        for w in set.times.windows(2) {
            assert!((w[1] - w[0] - PI / omega).abs() < 1e-8, "{:?}", w);
        }
        assert!((set.times[0] - PI / (2.0 * omega)).abs() < 1e-8);
        let up = CrossingSurface {
            direction: CrossingDirection::Increasing,
            ..both
        };
        let set = find_crossings(&sys, &x0, &up, 30.0, 1000, 1e-2).unwrap();
        for w in set.times.windows(2) {
            assert!((w[1] - w[0] - 2.0 * PI / omega).abs() < 1e-8);
        }
        for p in &set.points {
            assert!(p[1] > 0.0);
        }
    }

    #[test]
    fn crossings_are_refined_and_conserve_energy() {
        let sys = SystemSpec::proton_transfer_default();
        let spec = sigma1(0.025, 21);
        let x0 = lift_to_energy_surface(&sys, &spec, [0.3, 0.1]).unwrap().unwrap();
        let set = poincare_map(&sys, &x0, &spec, 300.0, 1000, 1e-2).unwrap();
        assert!(set.len() > 10);
        for s in &set.states {
            assert!(s.q()[0].abs() < CROSSING_TOLERANCE, "{}", s.q()[0]);
            assert!(s.p()[0] >= 0.0);
            assert!((sys.total_energy(s).unwrap() - 0.025).abs() < 1e-8);
        }
        assert!(set.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn max_crossings_caps_output() {
        let sys = SystemSpec::Harmonic { m: 1.0, omega: 1.0 };
        let surface = CrossingSurface {
            coord: 0,
            value: 0.0,
            direction: CrossingDirection::Both,
            plotted: (0, 1),
        };
        let set = find_crossings(&sys, &PhaseState::planar(1.0, 0.0), &surface, 100.0, 3, 1e-2).unwrap();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn ensemble_matches_individual_maps() {
        let sys = SystemSpec::proton_transfer_default();
        let spec = sigma1(0.025, 21);
        let grid = initial_conditions(&sys, &spec).unwrap();
        let starts = uniform_feasible_sample(&grid, 4);
        assert_eq!(starts.len(), 4);
        let all = poincare_ensemble(&sys, &starts, &spec, 60.0, 100, 1e-2).unwrap();
        for (x0, set) in starts.iter().zip(&all) {
            assert_eq!(*set, poincare_map(&sys, x0, &spec, 60.0, 100, 1e-2).unwrap());
        }
    }
}
