//! Variable-time descriptor field of the saddle and the stable/unstable
//! manifolds extracted from its forward and backward components.
//!
//! cargo run --release --example saddle_manifolds

use ldaction::analysis::extract_singular_features;
use ldaction::dynamics::SystemSpec;
use ldaction::integrate::StopBox;
use ldaction::ld::{ld_field, LdParams};
use ldaction::sections::{initial_conditions, Axis, SectionSpec};

fn main() -> ldaction::Result<()> {
    let n = 161;
    let sys = SystemSpec::Saddle { lambda: 1.0 };
    let axis = Axis::new(-4.0, 4.0, n);
    let grid = initial_conditions(&sys, &SectionSpec::FullPlane { x: axis, y: axis })?;
    // stop each leg at τ = 8 or on leaving [−8, 8]², whichever comes first
    let params = LdParams::variable(8.0, 1e-3, StopBox::square(8.0, 2));
    let field = ld_field(&sys, &grid, &params)?;

    let pct = 100.0 * (1.0 - 2.0 / n as f64);
    let stable = extract_singular_features(&field.forward, pct)?;
    let unstable = extract_singular_features(&field.backward, pct)?;
    let near = |d: f64| d.abs() <= 2.0 * axis.spacing();
    let on_stable = stable.points.iter().filter(|p| near(p[0] + p[1])).count();
    let on_unstable = unstable.points.iter().filter(|p| near(p[0] - p[1])).count();
    println!("stable features:   {on_stable}/{} on q = -p", stable.len());
    println!("unstable features: {on_unstable}/{} on q = p", unstable.len());
    let (lo, hi) = field.total.min_max().unwrap_or((f64::NAN, f64::NAN));
    println!("total field range [{lo:.3}, {hi:.3}]");
    Ok(())
}
