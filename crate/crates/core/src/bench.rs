//! Oracle comparison table: a handful of quick numerical runs checked against
//! analytic results.

use std::fmt;

use serde::Serialize;

use crate::analysis::{frequency_from_series, g_series};
use crate::dynamics::{
    harmonic_amplitude, harmonic_forward_ld_closed_form, linearised_eigenvalues, proton_transfer_saddle_eigenvalues,
    saddle_forward_ld_closed_form, saddle_g, saddle_total_ld_closed_form, PhaseState, SystemSpec,
};
use crate::error::Result;
use crate::ld::{ld_forward, ld_time_average, ld_total, LdParams};

/// One comparison. `error` is what gets compared with `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl BenchRow {
    fn absolute(name: &str, computed: f64, expected: f64, tolerance: f64) -> Self {
        let error = (computed - expected).abs();
        Self::with_error(name, computed, expected, error, tolerance)
    }

    fn relative(name: &str, computed: f64, expected: f64, tolerance: f64) -> Self {
        let error = (computed - expected).abs() / expected.abs();
        Self::with_error(name, computed, expected, error, tolerance)
    }

    fn with_error(name: &str, computed: f64, expected: f64, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            computed,
            expected,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

impl fmt::Display for BenchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<32} {:>22.15e} {:>22.15e} {:>11.3e} {:>9.1e}  {}",
            self.name,
            self.computed,
            self.expected,
            self.error,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Column titles aligned with the `Display` form of [`BenchRow`].
pub fn table_header() -> String {
    format!(
        "{:<32} {:>22} {:>22} {:>11} {:>9}  result",
        "row", "computed", "expected", "error", "tol"
    )
}

/// Runs every oracle row. Takes a few seconds on one core.
pub fn oracle_rows() -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();

    let tau = 9.21;
    rows.push(BenchRow::absolute("saddle G-limit", saddle_g(tau, 1.0)?, 1.0, 1e-6));

    let saddle = SystemSpec::Saddle { lambda: 1.0 };
    let x0 = PhaseState::planar(0.5, -0.3);
    let fwd = ld_forward(&saddle, &x0, &LdParams::forward_only(6.0, 1e-3))?;
    rows.push(BenchRow::relative(
        "saddle forward closed form",
        fwd.value,
        saddle_forward_ld_closed_form(1.0, 0.5, -0.3, 6.0),
        1e-6,
    ));
    let total = ld_total(&saddle, &x0, &LdParams::fixed(6.0, 1e-3))?;
    rows.push(BenchRow::relative(
        "saddle total closed form",
        total.total,
        saddle_total_ld_closed_form(1.0, 0.5, -0.3, 6.0),
        1e-6,
    ));

    let (m, omega, h0) = (1.0, 1.0, 0.5);
    let osc = SystemSpec::Harmonic { m, omega };
    let start = PhaseState::planar(harmonic_amplitude(m, omega, h0), 0.0);
    let fwd = ld_forward(&osc, &start, &LdParams::forward_only(10.0, 1e-3))?;
    rows.push(BenchRow::relative(
        "harmonic forward closed form",
        fwd.value,
        harmonic_forward_ld_closed_form(m, omega, h0, 10.0)?,
        1e-6,
    ));
    let avg = ld_time_average(&osc, &start, &LdParams::forward_only(750.0, 1e-2))?;
    rows.push(BenchRow::absolute("harmonic <S> limit", avg, h0, h0 / (2.0 * omega * 750.0)));

    let taus: Vec<f64> = (0..2048).map(|k| 100.0 * k as f64 / 2047.0).collect();
    let series = g_series(&osc, &start, &taus, 1e-3, Some(h0))?;
    let peak = frequency_from_series(&series)?;
    rows.push(BenchRow::absolute("harmonic g(tau) peak at 2w", peak.omega, 2.0 * omega, peak.resolution));

    let pt = SystemSpec::proton_transfer_default();
    let exact = proton_transfer_saddle_eigenvalues(&pt)?;
    let numeric = linearised_eigenvalues(&pt, &PhaseState::spatial(0.0, 0.0, 0.0, 0.0))?;
    let worst = exact
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    rows.push(BenchRow::with_error(
        "proton-transfer eigenvalues",
        numeric[3].re,
        exact[3].re,
        worst,
        1e-6,
    ));
    Ok(rows)
}

/// CSV rendering of [`oracle_rows`] output.
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("row,computed,expected,error,tolerance,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{}\n",
            r.name, r.computed, r.expected, r.error, r.tolerance, r.pass
        ));
    }
    out
}
