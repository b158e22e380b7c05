//! Reduce a viscous Burgers model and check the result two ways: verify the
//! claimed moment equalities, then compare time-domain outputs under an
//! exponentially decaying input.
//!
//! Run with `cargo run --release --example burgers_reduction`.

use num_complex::Complex64;
use qbmor::bench::build_burgers;
use qbmor::reduce::{reduce, verify_moments, InterpolationPlan, Method};
use qbmor::sim::{simulate_signal, InputSignal, SimOptions};

fn main() -> anyhow::Result<()> {
    // Semi-discretized Burgers equation: 300 interior nodes, viscosity 0.05,
    // Robin inflow condition v(0) = u(t).
    let full = build_burgers(300, 0.05, 1.0, 0.0)?;

    // Third-order regular-form reduction at two real points, matching mixed
    // kernel partials up to orders (P, Q, L) = (1, 1, 2).
    let points = vec![Complex64::new(0.1, 0.0), Complex64::new(10.0, 0.0)];
    let plan = InterpolationPlan::new(points, 1, 1, 2);
    let red = reduce(&full, Method::IgmmR3, &plan)?;
    println!("reduced n={} -> r={}", full.n(), red.r());

    let report = verify_moments(&full, &red, 1e-6)?;
    println!(
        "moment claims: {} checked, max rel err {:.3e}, all pass: {}",
        report.rows.len(),
        report.max_rel_err,
        report.all_pass
    );

    let opts = SimOptions::default();
    let full_traj = simulate_signal(&full, InputSignal::ExpDecay, &opts)?;
    let red_traj = simulate_signal(&red.system, InputSignal::ExpDecay, &opts)?;
    let e_max = full_traj
        .outputs
        .iter()
        .zip(&red_traj.outputs)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0_f64, f64::max);
    println!("worst output gap over {} steps: {e_max:.3e}", opts.t_end / opts.dt);
    Ok(())
}
