//! Post-processing of descriptor fields: normalisation, singular-feature
//! extraction, local minima, ensemble averages, torus consistency and
//! frequency recovery from descriptor time series.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PhaseState, SystemSpec};
use crate::error::{invalid, Error, Result};
use crate::integrate::{integrate_deterministic, Direction, IntegratorConfig};
use crate::ld::{pivot_mean, ActionAccumulator, FieldComponent, FieldMetadata, ScalarField};
use crate::sections::CrossingSet;

/// `(v − min)/(max − min)` over unmasked cells; masked cells are left as they
/// are. A constant field maps to zeros.
pub fn normalize_field(field: &ScalarField) -> Result<ScalarField> {
    let (lo, hi) = field
        .min_max()
        .ok_or_else(|| Error::Contract("cannot normalise a field without unmasked cells".into()))?;
    let span = hi - lo;
    let mut out = field.clone();
    for (v, m) in out.values.iter_mut().zip(&field.mask) {
        if *m {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    out.metadata.component = FieldComponent::Normalized;
    Ok(out)
}

/// Which invariant manifold a feature set is expected to trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// From a forward field.
    Stable,
    /// From a backward field.
    Unstable,
    /// From a total, averaged or unlabelled field.
    Mixed,
}

impl FeatureSource {
    fn of(component: FieldComponent) -> Self {
        match component {
            FieldComponent::Forward => FeatureSource::Stable,
            FieldComponent::Backward => FeatureSource::Unstable,
            _ => FeatureSource::Mixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSet {
    pub points: Vec<[f64; 2]>,
    /// Grid indices `(i, j)` of `points`.
    pub cells: Vec<(usize, usize)>,
    pub source: FeatureSource,
    pub measure: FeatureMeasure,
    /// Measure value of the weakest selected cell.
    pub threshold: f64,
    pub percentile: f64,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pointwise singularity measure used to rank cells in feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMeasure {
    /// Central-difference gradient magnitude.
    #[default]
    Gradient,
    /// `|∂xx v| + |∂yy v|` from three-point second differences. Picks out
    /// kinks (slope jumps) rather than steep but smooth regions, which matters
    /// when the field grows fast away from the structure of interest.
    Curvature,
}

fn interior_measure(field: &ScalarField, f: impl Fn(usize, usize, f64, f64) -> f64) -> Vec<Option<f64>> {
    let (nx, ny) = (field.nx(), field.ny());
    let mut out = vec![None; nx * ny];
    if nx < 3 || ny < 3 {
        return out;
    }
    let (hx, hy) = (field.x_axis.spacing(), field.y_axis.spacing());
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let stencil = [(i, j), (i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)];
            if stencil.iter().any(|&(a, b)| !field.is_valid(a, b)) {
                continue;
            }
            let g = f(i, j, hx, hy);
            if g.is_finite() {
                out[field.index(i, j)] = Some(g);
            }
        }
    }
    out
}

/// `|∂xx v| + |∂yy v|` on every interior cell whose four neighbours and itself
/// are unmasked.
pub fn curvature_magnitude(field: &ScalarField) -> Vec<Option<f64>> {
    interior_measure(field, |i, j, hx, hy| {
        let c = field.get(i, j);
        let dxx = (field.get(i + 1, j) - 2.0 * c + field.get(i - 1, j)) / (hx * hx);
        let dyy = (field.get(i, j + 1) - 2.0 * c + field.get(i, j - 1)) / (hy * hy);
        dxx.abs() + dyy.abs()
    })
}

/// Central-difference gradient magnitude, in axis units, on every interior
/// cell whose four neighbours and itself are unmasked.
pub fn gradient_magnitude(field: &ScalarField) -> Vec<Option<f64>> {
    interior_measure(field, |i, j, hx, hy| {
        let gx = (field.get(i + 1, j) - field.get(i - 1, j)) / (2.0 * hx);
        let gy = (field.get(i, j + 1) - field.get(i, j - 1)) / (2.0 * hy);
        gx.hypot(gy)
    })
}

/// Default percentile for [`extract_singular_features`].
pub const DEFAULT_FEATURE_PERCENTILE: f64 = 95.0;

/// Cells whose gradient magnitude lies in the top `100 − percentile` percent
/// of all interior gradient magnitudes. Selection is by rank, so exactly
/// `⌈(1 − percentile/100) · N⌉` of the `N` candidate cells are returned
/// (ties broken by grid index).
pub fn extract_singular_features(field: &ScalarField, percentile: f64) -> Result<FeatureSet> {
    extract_features(field, percentile, FeatureMeasure::Gradient)
}

/// Like [`extract_singular_features`] but ranking cells by `measure`.
pub fn extract_features(field: &ScalarField, percentile: f64, measure: FeatureMeasure) -> Result<FeatureSet> {
    if field.nx() < 3 || field.ny() < 3 {
        return Err(invalid("field", "feature extraction needs at least 3x3 cells"));
    }
    if !(0.0..100.0).contains(&percentile) {
        return Err(invalid("percentile", format!("must lie in [0, 100), got {percentile}")));
    }
    let scores = match measure {
        FeatureMeasure::Gradient => gradient_magnitude(field),
        FeatureMeasure::Curvature => curvature_magnitude(field),
    };
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter_map(|(k, g)| g.map(|g| (k, g)))
        .collect();
    let source = FeatureSource::of(field.metadata.component);
    let keep = ((1.0 - percentile / 100.0) * ranked.len() as f64).ceil() as usize;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(keep);
    let threshold = ranked.last().map_or(f64::INFINITY, |r| r.1);
    let cells: Vec<(usize, usize)> = ranked.iter().map(|(k, _)| (k % field.nx(), k / field.nx())).collect();
    Ok(FeatureSet {
        points: cells.iter().map(|&(i, j)| [field.x(i), field.y(j)]).collect(),
        cells,
        source,
        measure,
        threshold,
        percentile,
    })
}

/// A grid node with its coordinates and value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

fn local_extrema(field: &ScalarField, radius: usize, better: impl Fn(f64, f64) -> bool) -> Vec<GridPoint> {
    let (nx, ny) = (field.nx(), field.ny());
    let r = radius.max(1);
    let mut out = Vec::new();
    if nx < 2 * r + 1 || ny < 2 * r + 1 {
        return out;
    }
    for j in r..ny - r {
        for i in r..nx - r {
            if !field.is_valid(i, j) {
                continue;
            }
            let v = field.get(i, j);
            let mut extreme = true;
            'scan: for b in j - r..=j + r {
                for a in i - r..=i + r {
                    if (a, b) != (i, j) && field.is_valid(a, b) && !better(v, field.get(a, b)) {
                        extreme = false;
                        break 'scan;
                    }
                }
            }
            if extreme {
                out.push(GridPoint {
                    i,
                    j,
                    x: field.x(i),
                    y: field.y(j),
                    value: v,
                });
            }
        }
    }
    out
}

/// Unmasked cells strictly below every unmasked neighbour within Chebyshev
/// distance `radius`. Only cells whose full neighbourhood lies on the grid
/// are candidates.
pub fn find_local_minima(field: &ScalarField, radius: usize) -> Vec<GridPoint> {
    local_extrema(field, radius, |v, w| v < w)
}

pub fn find_local_maxima(field: &ScalarField, radius: usize) -> Vec<GridPoint> {
    local_extrema(field, radius, |v, w| v > w)
}

/// Cells of `a` that have a cell of `b` within Chebyshev distance `radius`.
pub fn feature_intersections(a: &FeatureSet, b: &FeatureSet, radius: usize) -> Vec<(usize, usize)> {
    let near = |x: usize, y: usize| x.abs_diff(y) <= radius;
    a.cells
        .iter()
        .copied()
        .filter(|&(i, j)| b.cells.iter().any(|&(k, l)| near(i, k) && near(j, l)))
        .collect()
}

/// Per-cell mean; the mask is the intersection of the input masks. The mean
/// is taken in input order relative to the first field, so averaging
/// identical fields reproduces them exactly.
pub fn average_fields(fields: &[ScalarField]) -> Result<ScalarField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Contract("nothing to average".into()))?;
    for f in &fields[1..] {
        if f.x_axis != first.x_axis || f.y_axis != first.y_axis {
            return Err(Error::Contract("fields must share their axes".into()));
        }
    }
    let n = first.values.len();
    let values = (0..n).map(|k| pivot_mean(fields.iter().map(|f| f.values[k]))).collect();
    let mask = (0..n).map(|k| fields.iter().all(|f| f.mask[k])).collect();
    ScalarField::new(first.x_axis, first.y_axis, values, mask, first.metadata.clone())
}

/// Bilinear interpolation; `None` outside the grid or when a corner of the
/// surrounding cell is masked.
pub fn bilinear_sample(field: &ScalarField, x: f64, y: f64) -> Option<f64> {
    let fx = field.x_axis.locate(x)?;
    let fy = field.y_axis.locate(y)?;
    let i = (fx.floor() as usize).min(field.nx() - 2);
    let j = (fy.floor() as usize).min(field.ny() - 2);
    let (sx, sy) = (fx - i as f64, fy - j as f64);
    let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
    if corners.iter().any(|&(a, b)| !field.is_valid(a, b)) {
        return None;
    }
    let (v00, v10, v01, v11) = (field.get(i, j), field.get(i + 1, j), field.get(i, j + 1), field.get(i + 1, j + 1));
    Some((1.0 - sy) * ((1.0 - sx) * v00 + sx * v10) + sy * ((1.0 - sx) * v01 + sx * v11))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSpread {
    /// Crossings that could be sampled.
    pub samples: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// `(max − min) / mean`.
    pub relative_spread: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusReport {
    pub tolerance: f64,
    pub orbits: Vec<OrbitSpread>,
}

impl TorusReport {
    pub fn all_pass(&self) -> bool {
        !self.orbits.is_empty() && self.orbits.iter().all(|o| o.passes)
    }
}

/// Samples the averaged field at every crossing of every orbit and reports
/// the relative spread along each orbit.
pub fn torus_consistency(avg_field: &ScalarField, orbits: &[CrossingSet], tolerance: f64) -> Result<TorusReport> {
    if !(tolerance > 0.0) {
        return Err(invalid("tolerance", "must be positive"));
    }
    let orbits = orbits
        .iter()
        .map(|orbit| {
            let samples: Vec<f64> = orbit
                .points
                .iter()
                .filter_map(|p| bilinear_sample(avg_field, p[0], p[1]))
                .collect();
            if samples.is_empty() {
                return OrbitSpread {
                    samples: 0,
                    mean: f64::NAN,
                    min: f64::NAN,
                    max: f64::NAN,
                    relative_spread: f64::INFINITY,
                    passes: false,
                };
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let relative_spread = (max - min) / mean.abs();
            OrbitSpread {
                samples: samples.len(),
                mean,
                min,
                max,
                relative_spread,
                passes: relative_spread < tolerance,
            }
        })
        .collect();
    Ok(TorusReport { tolerance, orbits })
}

/// `g(τ) = S^(f)(τ) − S_∞ τ` at the requested horizons, which must be
/// non-decreasing. The action is integrated once, segment by segment.
///
/// With `s_inf = None` the limit is estimated as the mean of `S^(f)(τ)/τ`
/// over the trailing tenth of the samples.
pub fn g_series(
    sys: &SystemSpec,
    x0: &PhaseState,
    taus: &[f64],
    dt: f64,
    s_inf: Option<f64>,
) -> Result<Vec<(f64, f64)>> {
    if taus.is_empty() {
        return Err(invalid("taus", "need at least one horizon"));
    }
    if taus[0] < 0.0 || taus.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(invalid("taus", "horizons must be non-negative and non-decreasing"));
    }
    let mut actions = Vec::with_capacity(taus.len());
    let mut state = *x0;
    let (mut t, mut action) = (0.0, 0.0);
    for &tau in taus {
        let span = tau - t;
        if span > 0.0 {
            let cfg = IntegratorConfig {
                t0: t,
                dt: dt.min(span),
                ..IntegratorConfig::rk4(dt, span, Direction::Forward)
            };
            let mut acc = ActionAccumulator::default();
            let res = integrate_deterministic(sys, &state, &cfg, &mut acc)?;
            if res.escaped {
                return Err(Error::Contract(format!("trajectory escaped before τ = {tau}")));
            }
            action += res.accumulated;
            state = res.final_state;
            t = tau;
        }
        actions.push(action);
    }
    let limit = match s_inf {
        Some(v) => v,
        None => {
            let tail = (taus.len() / 10).max(1);
            let start = taus.len() - tail;
            let rates: Vec<f64> = (start..taus.len())
                .filter(|&k| taus[k] > 0.0)
                .map(|k| actions[k] / taus[k])
                .collect();
            if rates.is_empty() {
                return Err(invalid("taus", "cannot estimate the limit from zero horizons"));
            }
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    };
    Ok(taus.iter().zip(&actions).map(|(&tau, &s)| (tau, s - limit * tau)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyEstimate {
    /// Angular frequency of the dominant peak.
    pub omega: f64,
    pub magnitude: f64,
    /// Angular bin width `2π / (N Δτ)`.
    pub resolution: f64,
}

/// `|X_k|²` for all `N` bins of the unnormalised DFT.
pub fn power_spectrum(values: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Dominant positive angular frequency of a uniformly sampled series, with
/// parabolic interpolation between bins.
pub fn frequency_from_series(series: &[(f64, f64)]) -> Result<FrequencyEstimate> {
    let n = series.len();
    if n < 64 {
        return Err(invalid("series", format!("need at least 64 samples, got {n}")));
    }
    let step = series[1].0 - series[0].0;
    if !(step > 0.0) || series.windows(2).any(|w| ((w[1].0 - w[0].0) - step).abs() > 1e-9 * step.max(1.0)) {
        return Err(invalid("series", "samples must be uniformly spaced and increasing"));
    }
    let values: Vec<f64> = series.iter().map(|s| s.1).collect();
    let mag: Vec<f64> = power_spectrum(&values).iter().map(|p| p.sqrt()).collect();
    let half = n / 2;
    let (k, peak) = (1..=half)
        .map(|k| (k, mag[k]))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let runner_up = (1..=half)
        .filter(|&j| j.abs_diff(k) > 1)
        .map(|j| mag[j])
        .fold(0.0_f64, f64::max);
    if !(peak > runner_up) || peak <= f64::EPSILON * values.iter().map(|v| v.abs()).sum::<f64>() {
        return Err(Error::NoPeak);
    }
    let offset = if k < half {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let resolution = 2.0 * std::f64::consts::PI / (n as f64 * step);
    Ok(FrequencyEstimate {
        omega: (k as f64 + offset) * resolution,
        magnitude: peak,
        resolution,
    })
}

/// Whether a point lies within max-norm distance `radius` of the noiseless
/// Duffing separatrix `y²/2 − x²/2 + x⁴/4 = 0`.
///
/// `H` is separable, so its range over the box is exact from the ranges of
/// the two one-dimensional terms; the box meets the level set iff that range
/// contains zero.
pub fn near_duffing_separatrix(x: f64, y: f64, radius: f64) -> bool {
    let v = |x: f64| -0.5 * x * x + 0.25 * x.powi(4);
    let (xl, xh) = (x - radius, x + radius);
    let mut v_candidates = vec![v(xl), v(xh)];
    for c in [-1.0, 0.0, 1.0] {
        if c > xl && c < xh {
            v_candidates.push(v(c));
        }
    }
    let v_min = v_candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = v_candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (yl, yh) = (y - radius, y + radius);
    let k_min = if yl <= 0.0 && yh >= 0.0 { 0.0 } else { 0.5 * yl.abs().min(yh.abs()).powi(2) };
    let k_max = 0.5 * yl.abs().max(yh.abs()).powi(2);
    v_min + k_min <= 0.0 && v_max + k_max >= 0.0
}

/// A field filled from a function of the axis values, for tests and demos.
pub fn field_from_fn(
    x_axis: crate::sections::Axis,
    y_axis: crate::sections::Axis,
    f: impl Fn(f64, f64) -> f64,
) -> Result<ScalarField> {
    let mut values = Vec::with_capacity(x_axis.count * y_axis.count);
    for j in 0..y_axis.count {
        for i in 0..x_axis.count {
            values.push(f(x_axis.value(i), y_axis.value(j)));
        }
    }
    let n = values.len();
    ScalarField::new(x_axis, y_axis, values, vec![true; n], FieldMetadata::bare(FieldComponent::Other))
}
