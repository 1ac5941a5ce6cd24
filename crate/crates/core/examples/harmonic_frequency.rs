//! Long-time average of the oscillator's forward descriptor converges to the
//! energy, and the oscillating remainder g(τ) carries twice the frequency.
//!
//! cargo run --release --example harmonic_frequency

use ldaction::analysis::{frequency_from_series, g_series};
use ldaction::dynamics::{harmonic_amplitude, PhaseState, SystemSpec};
use ldaction::ld::{ld_time_average, LdParams};

fn main() -> ldaction::Result<()> {
    let (m, omega, h0) = (1.0, 1.3, 0.5);
    let sys = SystemSpec::Harmonic { m, omega };
    let x0 = PhaseState::planar(harmonic_amplitude(m, omega, h0), 0.0);

    for tau in [10.0, 100.0, 750.0] {
        let avg = ld_time_average(&sys, &x0, &LdParams::forward_only(tau, 1e-3))?;
        println!("tau = {tau:>5}: <S> = {avg:.6}, |<S> - H0| = {:.2e}, bound {:.2e}", (avg - h0).abs(), h0 / (2.0 * omega * tau));
    }

    let taus: Vec<f64> = (0..2048).map(|k| 100.0 * k as f64 / 2047.0).collect();
    let series = g_series(&sys, &x0, &taus, 1e-3, Some(h0))?;
    let peak = frequency_from_series(&series)?;
    println!("dominant frequency {:.4} (2w = {:.4}, bin {:.4})", peak.omega, 2.0 * omega, peak.resolution);
    Ok(())
}
