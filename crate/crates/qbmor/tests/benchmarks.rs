//! Lifting fidelity of the benchmark builders: the quadratic-bilinear
//! forms must reproduce the original nonlinear dynamics, not just have
//! plausible structure.

use qbmor::bench::{
    build_burgers, build_fhn, build_rc, burgers_reference_rhs, fhn_reference_rhs, integrate_rk4,
    random_system, rc_reference_rhs, FHN_SOURCE,
};
use qbmor::io::{load_system, save_system};
use qbmor::reduce::{load_reduced, load_reduced_model, reduce, save_reduced, InterpolationPlan, Method};
use qbmor::sim::{simulate_signal, InputSignal, Scheme, SimOptions, Trajectory};
use qbmor::QBSystem;
use num_complex::Complex64;

fn rk4_options(dt: f64, t_end: f64, store_states: bool) -> SimOptions {
    SimOptions {
        dt,
        t_end,
        scheme: Scheme::ExplicitRk4,
        store_states,
        ..SimOptions::default()
    }
}

fn max_output_diff(traj: &Trajectory, reference: &[Vec<f64>], pick: &[usize]) -> f64 {
    assert_eq!(traj.outputs.len(), reference.len(), "grid lengths differ");
    let mut worst = 0.0f64;
    for (ys, state) in traj.outputs.iter().zip(reference) {
        for (k, &idx) in pick.iter().enumerate() {
            worst = worst.max((ys[k] - state[idx]).abs());
        }
    }
    worst
}

#[test]
fn rc_ladder_lift_reproduces_the_nonlinear_ladder() {
    let nodes = 20;
    let sys = build_rc(nodes).unwrap();
    let (dt, t_end): (f64, f64) = (2.5e-4, 10.0);
    let steps = (t_end / dt).round() as usize;

    let traj = simulate_signal(&sys, InputSignal::ExpDecay, &rk4_options(dt, t_end, false)).unwrap();
    assert!(!traj.diverged);

    let reference = integrate_rk4(
        |t: f64, v: &[f64]| {
            let mut dv = vec![0.0; v.len()];
            rc_reference_rhs(v, (-t).exp(), &mut dv);
            dv
        },
        &vec![0.0; nodes],
        dt,
        steps,
    );
    // Output is the first node voltage.
    let worst = max_output_diff(&traj, &reference, &[0]);
    assert!(worst < 1e-6, "max output discrepancy {worst:.3e}");
}

#[test]
fn burgers_lift_reproduces_the_finite_difference_model() {
    let n = 50;
    let (nu, alpha, beta) = (0.05, 1.0, 0.0);
    let sys = build_burgers(n, nu, alpha, beta).unwrap();
    let (dt, t_end): (f64, f64) = (1e-3, 10.0);
    let steps = (t_end / dt).round() as usize;

    let traj = simulate_signal(&sys, InputSignal::Cosine, &rk4_options(dt, t_end, false)).unwrap();
    assert!(!traj.diverged);

    let boundary = |t: f64| (2.0 * std::f64::consts::PI * t / 10.0 + 1.0).cos() / 2.0;
    let reference = integrate_rk4(
        |t: f64, v: &[f64]| {
            let mut dv = vec![0.0; v.len()];
            burgers_reference_rhs(v, nu, alpha, beta, boundary(t), &mut dv);
            dv
        },
        &vec![0.0; n],
        dt,
        steps,
    );
    // Output is the spatial mean of v.
    let mut worst = 0.0f64;
    for (ys, v) in traj.outputs.iter().zip(&reference) {
        let mean = v.iter().sum::<f64>() / n as f64;
        worst = worst.max((ys[0] - mean).abs());
    }
    assert!(worst < 1e-8, "max output discrepancy {worst:.3e}");
}

#[test]
fn fhn_lift_reproduces_the_neuron_model_and_keeps_z_consistent() {
    let nbar = 30;
    let sys = build_fhn(nbar).unwrap();
    let (dt, t_end): (f64, f64) = (1e-4, 5.0);
    let steps = (t_end / dt).round() as usize;

    let traj =
        simulate_signal(&sys, InputSignal::FhnStimulus, &rk4_options(dt, t_end, true)).unwrap();
    assert!(!traj.diverged);

    let stimulus = |t: f64| 5.0e4 * t * t * t * (-15.0 * t).exp();
    let reference = integrate_rk4(
        |t: f64, state: &[f64]| {
            let mut out = vec![0.0; state.len()];
            fhn_reference_rhs(state, stimulus(t), FHN_SOURCE, &mut out);
            out
        },
        &vec![0.0; 2 * nbar],
        dt,
        steps,
    );
    // Outputs are (v, w) at the left boundary: reference indices 0 and nbar.
    let worst = max_output_diff(&traj, &reference, &[0, nbar]);
    assert!(worst < 1e-5, "max output discrepancy {worst:.3e}");

    // The auxiliary states must track z_i = v_i^2 along the whole orbit.
    let states = traj.states.as_ref().unwrap();
    let mut worst_z = 0.0f64;
    for x in states {
        for i in 0..nbar {
            worst_z = worst_z.max((x[3 * i + 2] - x[3 * i] * x[3 * i]).abs());
        }
    }
    assert!(worst_z < 1e-6, "max |z - v^2| = {worst_z:.3e}");
}

#[test]
fn zero_input_keeps_every_benchmark_at_rest() {
    let systems = [
        build_rc(10).unwrap(),
        build_burgers(20, 0.05, 1.0, 0.0).unwrap(),
        build_fhn(8).unwrap(),
    ];
    for sys in &systems {
        let opts = SimOptions {
            t_end: 2.0,
            ..SimOptions::default()
        };
        let traj = simulate_signal(sys, InputSignal::Zero, &opts).unwrap();
        let worst = traj
            .outputs
            .iter()
            .flatten()
            .fold(0.0f64, |m, &y| m.max(y.abs()));
        assert!(worst <= 1e-14, "zero input produced output {worst:.3e}");
    }
}

#[test]
fn builders_are_deterministic() {
    assert_eq!(build_rc(12).unwrap(), build_rc(12).unwrap());
    assert_eq!(
        build_burgers(15, 0.05, 1.0, 0.0).unwrap(),
        build_burgers(15, 0.05, 1.0, 0.0).unwrap()
    );
    assert_eq!(build_fhn(9).unwrap(), build_fhn(9).unwrap());
    assert_eq!(random_system(6, 18, 0.2), random_system(6, 18, 0.2));
    assert_ne!(random_system(6, 18, 0.2), random_system(7, 18, 0.2));
}

#[test]
fn quadratic_tensor_size_grows_linearly_with_the_grid() {
    let pairs = [
        (build_rc(20).unwrap(), build_rc(40).unwrap()),
        (
            build_burgers(30, 0.05, 1.0, 0.0).unwrap(),
            build_burgers(60, 0.05, 1.0, 0.0).unwrap(),
        ),
        (build_fhn(10).unwrap(), build_fhn(20).unwrap()),
    ];
    for (small, large) in &pairs {
        let ratio = large.h.nnz() as f64 / small.h.nnz() as f64;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "nnz(H) {} -> {} (ratio {ratio:.2}) is not linear in n",
            small.h.nnz(),
            large.h.nnz()
        );
        assert!(large.h.nnz() <= 12 * large.n(), "tensor is denser than O(n)");
    }
}

#[test]
fn systems_round_trip_through_disk_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let systems: [(&str, QBSystem); 4] = [
        ("rc", build_rc(8).unwrap()),
        ("burgers", build_burgers(12, 0.05, 1.0, 0.0).unwrap()),
        ("fhn", build_fhn(6).unwrap()),
        ("random", random_system(4, 15, 0.2)),
    ];
    for (name, sys) in &systems {
        let path = dir.path().join(name);
        save_system(sys, &path).unwrap();
        let loaded = load_system(&path).unwrap();
        assert_eq!(&loaded, sys, "{name} changed across a save/load cycle");
    }
}

#[test]
fn reduced_models_round_trip_through_disk() {
    let sys = build_burgers(20, 0.05, 1.0, 0.0).unwrap();
    let plan = InterpolationPlan::new(vec![Complex64::new(0.8, 0.0)], 1, 1, 0);
    let red = reduce(&sys, Method::IgmmR2, &plan).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_reduced(&red, sys.n(), dir.path()).unwrap();

    let (loaded_sys, record) = load_reduced(dir.path()).unwrap();
    assert_eq!(loaded_sys, red.system);
    assert_eq!(record.method, red.method);
    assert_eq!(record.r, red.r());
    assert_eq!(record.parent_n, sys.n());
    assert_eq!(record.v.kept.len(), red.r());

    let model = load_reduced_model(dir.path()).unwrap();
    assert_eq!(model.r(), red.r());
    assert_eq!(model.system, red.system);
    assert_eq!(model.plan.points, red.plan.points);
}
