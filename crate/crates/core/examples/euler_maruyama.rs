//! A seeded two-sided Wiener path driving forward and backward
//! Euler–Maruyama legs of the Duffing SDE; the same seed reproduces the run.
//!
//! cargo run --release --example euler_maruyama

use ldaction::dynamics::{PhaseState, SystemSpec};
use ldaction::integrate::{
    integrate_stochastic_em, sample_wiener_path, stream_seed, Direction, IntegratorConfig, Method, TrajectoryRecorder,
};

fn main() -> ldaction::Result<()> {
    let sys = SystemSpec::Duffing { sigma: 0.025 };
    let (dt, tau) = (0.005, 10.0);
    let x0 = PhaseState::planar(0.5, 0.0);
    let path = sample_wiener_path(stream_seed(7, 0, 0), dt, tau, tau)?;

    for direction in [Direction::Forward, Direction::Backward] {
        let cfg = IntegratorConfig {
            method: Method::EulerMaruyama,
            ..IntegratorConfig::rk4(dt, tau, direction)
        };
        let mut rec = TrajectoryRecorder::default();
        let r = integrate_stochastic_em(&sys, &x0, &cfg, &path, &mut rec)?;
        let again = integrate_stochastic_em(&sys, &x0, &cfg, &path, &mut ())?;
        let h = |s: &PhaseState| sys.total_energy(s).unwrap();
        println!(
            "{direction:?}: {} states, end {:?}, H {:.5} -> {:.5}, reproducible: {}",
            rec.states.len(),
            r.final_state.coords(),
            h(&x0),
            h(&r.final_state),
            r == again
        );
    }
    Ok(())
}
