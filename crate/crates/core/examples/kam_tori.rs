//! Time-averaged descriptors on x = 0 at H = 0.025 are constant along
//! quasiperiodic Poincaré orbits (KAM tori) and vary along chaotic ones.
//!
//! cargo run --release --example kam_tori

use ldaction::analysis::torus_consistency;
use ldaction::dynamics::SystemSpec;
use ldaction::ld::{ld_field, time_average_field, LdParams};
use ldaction::sections::{initial_conditions, poincare_ensemble, uniform_feasible_sample, Axis, SectionSpec};

fn main() -> ldaction::Result<()> {
    let sys = SystemSpec::proton_transfer_default();
    let spec = SectionSpec::saddle_section(0.025, Axis::new(-1.0, 1.0, 101), Axis::new(-0.75, 0.75, 101));
    let grid = initial_conditions(&sys, &spec)?;
    let params = LdParams::fixed(300.0, 0.05);
    let avg = time_average_field(&ld_field(&sys, &grid, &params)?, &params)?;

    let starts = uniform_feasible_sample(&grid, 8);
    let orbits = poincare_ensemble(&sys, &starts, &spec, 600.0, 10_000, 1e-2)?;
    let report = torus_consistency(&avg, &orbits, 0.02)?;
    for (o, s) in report.orbits.iter().zip(&starts) {
        println!(
            "start (y, py) = ({:+.3}, {:+.3}): {:4} crossings, mean {:.5}, spread/mean {:.2e} {}",
            s.q()[1],
            s.p()[1],
            o.samples,
            o.mean,
            o.relative_spread,
            if o.passes { "torus" } else { "" }
        );
    }
    Ok(())
}
