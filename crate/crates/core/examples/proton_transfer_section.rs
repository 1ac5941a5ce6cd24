//! Descriptor field on the dividing surface x = 0 of the proton-transfer
//! model at H = 0.1: the local minimum marks the unstable periodic orbit,
//! which returns to the section after one period.
//!
//! cargo run --release --example proton_transfer_section

use ldaction::analysis::{extract_singular_features, feature_intersections, find_local_minima};
use ldaction::dynamics::SystemSpec;
use ldaction::ld::{ld_field, LdParams};
use ldaction::sections::{initial_conditions, lift_to_energy_surface, poincare_map, Axis, SectionSpec};

fn main() -> ldaction::Result<()> {
    let n = 151;
    let sys = SystemSpec::proton_transfer_default();
    let spec = SectionSpec::saddle_section(0.1, Axis::new(-1.05, 1.05, n), Axis::new(-0.85, 0.85, n));
    let grid = initial_conditions(&sys, &spec)?;
    println!("{} of {} section points are energetically feasible", grid.feasible_count(), n * n);
    let field = ld_field(&sys, &grid, &LdParams::fixed(10.0, 1e-2))?;

    let minimum = find_local_minima(&field.total, 1)
        .into_iter()
        .min_by(|a, b| a.x.hypot(a.y).total_cmp(&b.x.hypot(b.y)))
        .expect("the field has a minimum");
    println!("local minimum nearest the origin: y = {:.4}, py = {:.4}", minimum.x, minimum.y);

    let pct = 100.0 * (1.0 - 2.0 / n as f64);
    let stable = extract_singular_features(&field.forward, pct)?;
    let unstable = extract_singular_features(&field.backward, pct)?;
    let crossings = feature_intersections(&stable, &unstable, 1);
    println!("{} stable/unstable feature intersections", crossings.len());

    let x0 = lift_to_energy_surface(&sys, &spec, [minimum.x, minimum.y])?.expect("feasible");
    let returns = poincare_map(&sys, &x0, &spec, 50.0, 3, 1e-3)?;
    for (p, t) in returns.points.iter().zip(&returns.times) {
        println!("t = {t:8.4}: (y, py) = ({:+.6}, {:+.6})", p[0], p[1]);
    }
    Ok(())
}
