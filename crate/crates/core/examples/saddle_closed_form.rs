//! Numerical forward, backward and total descriptors of the linear saddle
//! against their closed forms, and the minimiser slope G(τ).
//!
//! cargo run --release --example saddle_closed_form

use ldaction::dynamics::{saddle_forward_ld_closed_form, saddle_g, saddle_total_ld_closed_form, PhaseState, SystemSpec};
use ldaction::ld::{ld_total, LdParams};

fn main() -> ldaction::Result<()> {
    let lambda = 1.0;
    let tau = 6.0;
    let sys = SystemSpec::Saddle { lambda };
    let params = LdParams::fixed(tau, 1e-3);

    println!("{:>6} {:>6} {:>14} {:>14} {:>14} {:>14}", "q0", "p0", "forward", "closed", "total", "closed");
    for (q, p) in [(0.5, -0.5), (0.5, 0.3), (-1.0, 0.2), (0.0, 1.0)] {
        let v = ld_total(&sys, &PhaseState::planar(q, p), &params)?;
        println!(
            "{q:>6} {p:>6} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
            v.forward,
            saddle_forward_ld_closed_form(lambda, q, p, tau),
            v.total,
            saddle_total_ld_closed_form(lambda, q, p, tau)
        );
    }

    // the forward descriptor is minimised on q0 = −G(τ) p0, and G → 1 recovers
    // the stable manifold q = −p
    for t in [1.0, 3.0, 6.0, 9.21] {
        println!("G({t}) = {:.12}", saddle_g(t, lambda)?);
    }
    Ok(())
}
