//! Equilibria of the proton-transfer model and their linearised spectra.
//!
//! cargo run --release --example proton_transfer_equilibria

use ldaction::dynamics::{proton_transfer_equilibria, proton_transfer_saddle_eigenvalues, SystemSpec};

fn main() -> ldaction::Result<()> {
    let sys = SystemSpec::proton_transfer_default();
    for eq in proton_transfer_equilibria(&sys)? {
        let q = eq.state.q();
        let eig: Vec<String> = eq.eigenvalues.iter().map(|z| format!("{:+.6}{:+.6}i", z.re, z.im)).collect();
        println!("({:+.4}, {:+.4}) {:?}: {}", q[0], q[1], eq.kind, eig.join("  "));
    }
    let exact = proton_transfer_saddle_eigenvalues(&sys)?;
    println!("closed-form saddle eigenvalues: {exact:?}");
    Ok(())
}
