//! Benchmark system builders and seeded random test systems.
//!
//! Three physical benchmarks, each an exact algebraic lifting (or direct
//! quadratic representation) of a nonlinear ODE:
//!
//! - **RC ladder** (`build_rc`): a chain of `N` capacitor nodes joined by
//!   parallel resistor/diode branches with current `z + e^{40 z} - 1`
//!   across branch voltage `z`, driven by a current source at node 1.
//!   Lifting by shifted exponentials of the branch voltages doubles the
//!   state to `n = 2N`.
//! - **Burgers** (`build_burgers`): central finite differences for
//!   `v_t + v v_x = nu v_xx` on `(0, 1)` with a Robin-type controlled
//!   boundary at `x = 0` and homogeneous Neumann at `x = 1`. The advection
//!   term is quadratic, so no auxiliary state is needed.
//! - **FitzHugh-Nagumo** (`build_fhn`): coupled activator/inhibitor PDEs
//!   with cubic kinetics, lifted by `z_i = v_i^2` to `n = 3 n_bar`; two
//!   inputs (boundary stimulus and the constant source term as a channel)
//!   and two outputs (`v` and `w` at `x = 0`).
//!
//! Each builder has a companion `*_reference_rhs` evaluating the original
//! (unlifted) nonlinear vector field so simulations of the lifted system
//! can be validated against a direct integration.
//!
//! `random_system` builds seeded sparse systems with a diagonally dominant
//! stable drift term, used throughout the test suite; identical seeds give
//! bit-identical systems.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::system::QBSystem;
use crate::tensor::SparseTensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// Diode slope in the RC ladder branch current `z + e^{40 z} - 1`.
const RC_DIODE_SLOPE: f64 = 40.0;

/// FitzHugh-Nagumo time-scale separation.
pub const FHN_EPSILON: f64 = 0.015;
/// FitzHugh-Nagumo coupling of `v` into the recovery variable.
pub const FHN_H: f64 = 0.5;
/// FitzHugh-Nagumo recovery decay rate. With the benchmark's value 2 the
/// rest state is unstable and the neuron settles into sustained spiking
/// (the limit cycle the experiments examine); much smaller decay rates
/// steepen the recovery nullcline enough to stabilize the rest state and
/// the oscillation disappears.
pub const FHN_GAMMA: f64 = 2.0;
/// Constant source value carried on the second input channel.
pub const FHN_SOURCE: f64 = 0.05;

/// Sparse accumulating coefficient map over state indices.
type CoeffMap = BTreeMap<usize, f64>;

fn add_coeff(map: &mut CoeffMap, idx: usize, v: f64) {
    *map.entry(idx).or_insert(0.0) += v;
}

// ---------------------------------------------------------------------------
// RC ladder
// ---------------------------------------------------------------------------

/// Branch current of the resistor/diode pair across voltage `z`.
fn rc_branch_current(z: f64) -> f64 {
    z + (RC_DIODE_SLOPE * z).exp() - 1.0
}

/// Original nonlinear ladder vector field: `dv[k]` for `N = v.len()` node
/// voltages, with input current `u` into node 1.
pub fn rc_reference_rhs(v: &[f64], u: f64, dv: &mut [f64]) {
    let n = v.len();
    assert!(n >= 2 && dv.len() == n);
    dv[0] = -rc_branch_current(v[0]) - rc_branch_current(v[0] - v[1]) + u;
    for k in 1..n - 1 {
        dv[k] = rc_branch_current(v[k - 1] - v[k]) - rc_branch_current(v[k] - v[k + 1]);
    }
    dv[n - 1] = rc_branch_current(v[n - 2] - v[n - 1]);
}

/// Lifts ladder node voltages to the quadratic-bilinear state
/// (interleaved `v_k, w_k` with `w_k = e^{40 z_k} - 1` over the branch
/// voltages `z_0 = v_0`, `z_k = v_{k-1} - v_k`).
pub fn rc_lift_state(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut x = vec![0.0; 2 * n];
    for k in 0..n {
        let z = if k == 0 { v[0] } else { v[k - 1] - v[k] };
        x[2 * k] = v[k];
        x[2 * k + 1] = (RC_DIODE_SLOPE * z).exp() - 1.0;
    }
    x
}

/// Quadratic-bilinear ladder of `nodes` capacitor nodes (`n = 2 nodes`).
///
/// State ordering interleaves node voltages and shifted branch
/// exponentials, which keeps every operator narrowly banded. Input: source
/// current at node 1; output: voltage at node 1.
pub fn build_rc(nodes: usize) -> Result<QBSystem> {
    if nodes < 2 {
        return Err(Error::Invalid(format!(
            "RC ladder needs at least two nodes, got {nodes}"
        )));
    }
    let n = 2 * nodes;
    let idx_v = |k: usize| 2 * k;
    let idx_w = |k: usize| 2 * k + 1;

    // Linear coefficient maps of every node-voltage derivative over the
    // lifted state, plus the input coefficient.
    let mut vdot: Vec<CoeffMap> = vec![CoeffMap::new(); nodes];
    let mut vdot_u = vec![0.0; nodes];
    // Node 1: both branches pull current out, the source pushes in.
    add_coeff(&mut vdot[0], idx_v(0), -2.0);
    add_coeff(&mut vdot[0], idx_v(1), 1.0);
    add_coeff(&mut vdot[0], idx_w(0), -1.0);
    add_coeff(&mut vdot[0], idx_w(1), -1.0);
    vdot_u[0] = 1.0;
    for k in 1..nodes - 1 {
        add_coeff(&mut vdot[k], idx_v(k - 1), 1.0);
        add_coeff(&mut vdot[k], idx_v(k), -2.0);
        add_coeff(&mut vdot[k], idx_v(k + 1), 1.0);
        add_coeff(&mut vdot[k], idx_w(k), 1.0);
        add_coeff(&mut vdot[k], idx_w(k + 1), -1.0);
    }
    let last = nodes - 1;
    add_coeff(&mut vdot[last], idx_v(last - 1), 1.0);
    add_coeff(&mut vdot[last], idx_v(last), -1.0);
    add_coeff(&mut vdot[last], idx_w(last), 1.0);

    let mut a_trip = Vec::new();
    let mut n_trip = Vec::new();
    let mut h_trip = Vec::new();
    let mut b_trip = Vec::new();

    for k in 0..nodes {
        for (&j, &cf) in &vdot[k] {
            a_trip.push((idx_v(k), j, cf));
        }
        if vdot_u[k] != 0.0 {
            b_trip.push((idx_v(k), 0, vdot_u[k]));
        }
        // Branch-voltage derivative: z_0' = v_0', z_k' = v_{k-1}' - v_k'.
        let mut zdot = CoeffMap::new();
        let zdot_u = if k == 0 {
            for (&j, &cf) in &vdot[0] {
                add_coeff(&mut zdot, j, cf);
            }
            vdot_u[0]
        } else {
            for (&j, &cf) in &vdot[k - 1] {
                add_coeff(&mut zdot, j, cf);
            }
            for (&j, &cf) in &vdot[k] {
                add_coeff(&mut zdot, j, -cf);
            }
            vdot_u[k - 1] - vdot_u[k]
        };
        // w_k' = 40 (w_k + 1) z_k': linear, input, quadratic, and bilinear
        // pieces of the product.
        let row = idx_w(k);
        for (&j, &cf) in &zdot {
            let scaled = RC_DIODE_SLOPE * cf;
            if scaled != 0.0 {
                a_trip.push((row, j, scaled));
                h_trip.push((row, idx_w(k), j, scaled));
            }
        }
        if zdot_u != 0.0 {
            b_trip.push((row, 0, RC_DIODE_SLOPE * zdot_u));
            n_trip.push((row, idx_w(k), RC_DIODE_SLOPE * zdot_u));
        }
    }

    QBSystem::new(
        SparseMatrix::identity(n),
        SparseMatrix::from_triplets(n, n, &a_trip)?,
        vec![SparseMatrix::from_triplets(n, n, &n_trip)?],
        SparseTensor3::from_entries(n, &h_trip)?,
        SparseMatrix::from_triplets(n, 1, &b_trip)?,
        SparseMatrix::from_triplets(1, n, &[(0, idx_v(0), 1.0)])?,
        vec!["source-current".into()],
        vec!["node-1-voltage".into()],
    )
}

// ---------------------------------------------------------------------------
// Burgers
// ---------------------------------------------------------------------------

/// Ghost-node coefficients for the controlled left boundary
/// `alpha v(0) + beta v_x(0) = u`, eliminating `v(0) = ga u + gb v_1`
/// with a one-sided difference for `v_x(0)`.
fn burgers_ghost(n: usize, alpha: f64, beta: f64) -> (f64, f64) {
    let dx = 1.0 / (n as f64 + 1.0);
    let denom = alpha - beta / dx;
    assert!(
        denom.abs() > 1e-14,
        "boundary coefficients alpha={alpha}, beta={beta} make the ghost node singular"
    );
    (1.0 / denom, -(beta / dx) / denom)
}

/// Original Burgers vector field on the `n` interior nodes.
pub fn burgers_reference_rhs(v: &[f64], nu: f64, alpha: f64, beta: f64, u: f64, dv: &mut [f64]) {
    let n = v.len();
    assert!(n >= 3 && dv.len() == n);
    let dx = 1.0 / (n as f64 + 1.0);
    let d = nu / (dx * dx);
    let c = 1.0 / (2.0 * dx);
    let (ga, gb) = burgers_ghost(n, alpha, beta);
    let left_ghost = ga * u + gb * v[0];
    for i in 0..n {
        let vm = if i == 0 { left_ghost } else { v[i - 1] };
        let vp = if i == n - 1 { v[n - 1] } else { v[i + 1] };
        dv[i] = d * (vm - 2.0 * v[i] + vp) + c * v[i] * (vm - vp);
    }
}

/// Finite-difference Burgers system on `n` interior nodes of `(0, 1)`
/// (spacing `1/(n+1)`), viscosity `nu`, left boundary control
/// `alpha v(0) + beta v_x(0) = u`, homogeneous Neumann on the right.
/// Output: spatial mean of `v`.
pub fn build_burgers(n: usize, nu: f64, alpha: f64, beta: f64) -> Result<QBSystem> {
    if n < 3 {
        return Err(Error::Invalid(format!(
            "Burgers grid needs at least three interior nodes, got {n}"
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::Invalid(format!("viscosity must be positive, got {nu}")));
    }
    if (alpha - beta * (n as f64 + 1.0)).abs() <= 1e-14 {
        return Err(Error::Invalid(format!(
            "boundary coefficients alpha={alpha}, beta={beta} make the ghost node singular"
        )));
    }
    let dx = 1.0 / (n as f64 + 1.0);
    let d = nu / (dx * dx);
    let c = 1.0 / (2.0 * dx);
    let (ga, gb) = burgers_ghost(n, alpha, beta);

    let mut a_trip = Vec::new();
    let mut n_trip = Vec::new();
    let mut h_trip = Vec::new();
    let mut b_trip = Vec::new();

    for i in 0..n {
        a_trip.push((i, i, -2.0 * d));
        if i > 0 {
            a_trip.push((i, i - 1, d));
            h_trip.push((i, i, i - 1, c));
        }
        if i < n - 1 {
            a_trip.push((i, i + 1, d));
            h_trip.push((i, i, i + 1, -c));
        }
    }
    // Left boundary: ghost v(0) = ga u + gb v_1 feeds both the diffusion
    // stencil and the quadratic advection term of row 0.
    a_trip.push((0, 0, d * gb));
    b_trip.push((0, 0, d * ga));
    h_trip.push((0, 0, 0, c * gb));
    n_trip.push((0, 0, c * ga));
    // Right boundary: one-sided Neumann ghost equals the last node.
    a_trip.push((n - 1, n - 1, d));
    h_trip.push((n - 1, n - 1, n - 1, -c));

    let mean = 1.0 / n as f64;
    let c_trip: Vec<(usize, usize, f64)> = (0..n).map(|j| (0, j, mean)).collect();

    QBSystem::new(
        SparseMatrix::identity(n),
        SparseMatrix::from_triplets(n, n, &a_trip)?,
        vec![SparseMatrix::from_triplets(n, n, &n_trip)?],
        SparseTensor3::from_entries(n, &h_trip)?,
        SparseMatrix::from_triplets(n, 1, &b_trip)?,
        SparseMatrix::from_triplets(1, n, &c_trip)?,
        vec!["boundary-control".into()],
        vec!["spatial-mean".into()],
    )
}

// ---------------------------------------------------------------------------
// FitzHugh-Nagumo
// ---------------------------------------------------------------------------

/// Cubic activator kinetics `f(v) = v (v - 0.1)(1 - v)`.
fn fhn_kinetics(v: f64) -> f64 {
    v * (v - 0.1) * (1.0 - v)
}

/// Original FitzHugh-Nagumo vector field over concatenated `[v; w]`
/// (length `2 nbar`), with stimulus `i0` and source value `g`.
pub fn fhn_reference_rhs(state: &[f64], i0: f64, g: f64, out: &mut [f64]) {
    let nbar = state.len() / 2;
    assert!(nbar >= 3 && state.len() == 2 * nbar && out.len() == 2 * nbar);
    let (v, w) = state.split_at(nbar);
    let hbar = 1.0 / (nbar as f64 - 1.0);
    let eps = FHN_EPSILON;
    for i in 0..nbar {
        // Central second difference with flux ghosts at both ends.
        let lap = if i == 0 {
            2.0 * (v[1] - v[0]) / (hbar * hbar)
        } else if i == nbar - 1 {
            2.0 * (v[nbar - 2] - v[nbar - 1]) / (hbar * hbar)
        } else {
            (v[i - 1] - 2.0 * v[i] + v[i + 1]) / (hbar * hbar)
        };
        let mut dv = (eps * eps * lap + fhn_kinetics(v[i]) - w[i] + g) / eps;
        if i == 0 {
            dv += 2.0 * eps / hbar * i0;
        }
        out[i] = dv;
        out[nbar + i] = FHN_H * v[i] - FHN_GAMMA * w[i] + g;
    }
}

/// Lifts `[v; w]` to the interleaved quadratic-bilinear state
/// `(v_i, w_i, z_i)` with `z_i = v_i^2`.
pub fn fhn_lift_state(state: &[f64]) -> Vec<f64> {
    let nbar = state.len() / 2;
    let (v, w) = state.split_at(nbar);
    let mut x = vec![0.0; 3 * nbar];
    for i in 0..nbar {
        x[3 * i] = v[i];
        x[3 * i + 1] = w[i];
        x[3 * i + 2] = v[i] * v[i];
    }
    x
}

/// FitzHugh-Nagumo system on `nbar` grid points of `[0, 1]`
/// (`n = 3 nbar`). The cubic kinetics are written quadratically via the
/// auxiliary states `z_i = v_i^2`. Inputs: boundary stimulus (channel 1)
/// and the constant source value as a signal (channel 2). Outputs: `v` and
/// `w` at `x = 0`. The mass matrix is `diag(eps, 1, 1, ...)`.
pub fn build_fhn(nbar: usize) -> Result<QBSystem> {
    if nbar < 3 {
        return Err(Error::Invalid(format!(
            "FitzHugh-Nagumo grid needs at least three points, got {nbar}"
        )));
    }
    let n = 3 * nbar;
    let hbar = 1.0 / (nbar as f64 - 1.0);
    let eps = FHN_EPSILON;
    let idx_v = |i: usize| 3 * i;
    let idx_w = |i: usize| 3 * i + 1;
    let idx_z = |i: usize| 3 * i + 2;

    let mut e_trip = Vec::new();
    let mut a_trip = Vec::new();
    let mut n1_trip = Vec::new();
    let mut n2_trip = Vec::new();
    let mut h_trip = Vec::new();
    let mut b_trip = Vec::new();

    let d2 = 1.0 / (hbar * hbar);
    for i in 0..nbar {
        e_trip.push((idx_v(i), idx_v(i), eps));
        e_trip.push((idx_w(i), idx_w(i), 1.0));
        e_trip.push((idx_z(i), idx_z(i), 1.0));

        // Second-difference coefficients of the activator Laplacian row.
        let mut lap = CoeffMap::new();
        if i == 0 {
            add_coeff(&mut lap, idx_v(0), -2.0 * d2);
            add_coeff(&mut lap, idx_v(1), 2.0 * d2);
        } else if i == nbar - 1 {
            add_coeff(&mut lap, idx_v(nbar - 1), -2.0 * d2);
            add_coeff(&mut lap, idx_v(nbar - 2), 2.0 * d2);
        } else {
            add_coeff(&mut lap, idx_v(i - 1), d2);
            add_coeff(&mut lap, idx_v(i), -2.0 * d2);
            add_coeff(&mut lap, idx_v(i + 1), d2);
        }

        // Activator row (times eps via the mass matrix):
        // eps v_i' = eps^2 lap + (1.1 z_i - 0.1 v_i - v_i z_i) - w_i
        //            + g [+ boundary stimulus at i = 0].
        for (&j, &cf) in &lap {
            a_trip.push((idx_v(i), j, eps * eps * cf));
        }
        a_trip.push((idx_v(i), idx_v(i), -0.1));
        a_trip.push((idx_v(i), idx_z(i), 1.1));
        a_trip.push((idx_v(i), idx_w(i), -1.0));
        h_trip.push((idx_v(i), idx_v(i), idx_z(i), -1.0));
        b_trip.push((idx_v(i), 1, 1.0));
        if i == 0 {
            b_trip.push((idx_v(0), 0, 2.0 * eps * eps / hbar));
        }

        // Recovery row: w_i' = h v_i - gamma w_i + g.
        a_trip.push((idx_w(i), idx_v(i), FHN_H));
        a_trip.push((idx_w(i), idx_w(i), -FHN_GAMMA));
        b_trip.push((idx_w(i), 1, 1.0));

        // Auxiliary row z_i' = 2 v_i v_i' = (2/eps) v_i (eps v_i'):
        // every activator-row term multiplied by v_i, with the quartic
        // collapsing onto z.
        for (&j, &cf) in &lap {
            h_trip.push((idx_z(i), idx_v(i), j, 2.0 * eps * cf));
        }
        a_trip.push((idx_z(i), idx_z(i), -0.2 / eps));
        h_trip.push((idx_z(i), idx_v(i), idx_z(i), 2.2 / eps));
        h_trip.push((idx_z(i), idx_z(i), idx_z(i), -2.0 / eps));
        h_trip.push((idx_z(i), idx_v(i), idx_w(i), -2.0 / eps));
        n2_trip.push((idx_z(i), idx_v(i), 2.0 / eps));
        if i == 0 {
            n1_trip.push((idx_z(0), idx_v(0), 4.0 * eps / hbar));
        }
    }

    QBSystem::new(
        SparseMatrix::from_triplets(n, n, &e_trip)?,
        SparseMatrix::from_triplets(n, n, &a_trip)?,
        vec![
            SparseMatrix::from_triplets(n, n, &n1_trip)?,
            SparseMatrix::from_triplets(n, n, &n2_trip)?,
        ],
        SparseTensor3::from_entries(n, &h_trip)?,
        SparseMatrix::from_triplets(n, 2, &b_trip)?,
        SparseMatrix::from_triplets(
            2,
            n,
            &[(0, idx_v(0), 1.0), (1, idx_w(0), 1.0)],
        )?,
        vec!["stimulus".into(), "source".into()],
        vec!["activator-left".into(), "recovery-left".into()],
    )
}

// ---------------------------------------------------------------------------
// Random systems
// ---------------------------------------------------------------------------

/// Seeded sparse single-input single-output system of order `n`.
///
/// `A` is diagonally dominant with a strictly negative diagonal (stable
/// pencil for every shift in the closed right half plane), `E` a random
/// positive diagonal, `N`/`H` sparse with entries scaled to keep
/// simulations contractive. `density` controls the expected off-diagonal
/// fill of `A`, `N`, and `H`. Identical arguments give bit-identical
/// systems.
pub fn random_system(seed: u64, n: usize, density: f64) -> QBSystem {
    assert!(n >= 2 && density > 0.0 && density <= 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draws = ((density * (n * n) as f64).ceil() as usize).max(1);

    let e_trip: Vec<(usize, usize, f64)> = (0..n)
        .map(|i| (i, i, 0.5 + rng.gen::<f64>()))
        .collect();

    let mut a_trip = Vec::new();
    let mut row_abs = vec![0.0f64; n];
    for _ in 0..draws {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let v: f64 = rng.gen_range(-0.5..0.5);
        row_abs[i] += v.abs();
        a_trip.push((i, j, v));
    }
    for (i, abs) in row_abs.iter().enumerate() {
        a_trip.push((i, i, -(1.0 + abs + rng.gen::<f64>())));
    }

    let mut n_trip = Vec::new();
    for _ in 0..draws {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        n_trip.push((i, j, rng.gen_range(-0.1..0.1)));
    }

    let mut h_trip = Vec::new();
    for _ in 0..draws {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        h_trip.push((i, j, k, rng.gen_range(-0.1..0.1)));
    }

    let b_trip: Vec<(usize, usize, f64)> =
        (0..n).map(|i| (i, 0, rng.gen_range(-1.0..1.0))).collect();
    let c_trip: Vec<(usize, usize, f64)> =
        (0..n).map(|j| (0, j, rng.gen_range(-1.0..1.0))).collect();

    QBSystem::new(
        SparseMatrix::from_triplets(n, n, &e_trip).unwrap(),
        SparseMatrix::from_triplets(n, n, &a_trip).unwrap(),
        vec![SparseMatrix::from_triplets(n, n, &n_trip).unwrap()],
        SparseTensor3::from_entries(n, &h_trip).unwrap(),
        SparseMatrix::from_triplets(n, 1, &b_trip).unwrap(),
        SparseMatrix::from_triplets(1, n, &c_trip).unwrap(),
        vec!["u".into()],
        vec!["y".into()],
    )
    .expect("random system dimensions are consistent by construction")
}

/// Fixed-step classical Runge-Kutta integration of a generic ODE
/// `x' = f(t, x)` from `x0`; returns the states after every step
/// (including the initial one).
pub fn integrate_rk4<F>(f: F, x0: &[f64], dt: f64, steps: usize) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = f(t, &x);
        let mut x2 = x.clone();
        for (xi, ki) in x2.iter_mut().zip(&k1) {
            *xi += 0.5 * dt * ki;
        }
        let k2 = f(t + 0.5 * dt, &x2);
        let mut x3 = x.clone();
        for (xi, ki) in x3.iter_mut().zip(&k2) {
            *xi += 0.5 * dt * ki;
        }
        let k3 = f(t + 0.5 * dt, &x3);
        let mut x4 = x.clone();
        for (xi, ki) in x4.iter_mut().zip(&k3) {
            *xi += dt * ki;
        }
        let k4 = f(t + dt, &x4);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(x.clone());
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rc_rhs_matches_lifted_reference() {
        // The lifted vector field must equal the chain rule applied to the
        // original one at any consistent state, not just along
        // trajectories.
        let nodes = 7;
        let v: Vec<f64> = (0..nodes).map(|k| 0.01 * (k as f64 + 1.0) * if k % 2 == 0 { 1.0 } else { -0.6 }).collect();
        let u = 0.8;
        let x = rc_lift_state(&v);
        let sys = build_rc(nodes).unwrap();
        let got = sys.rhs(&x, &[u]);

        let mut dv = vec![0.0; nodes];
        rc_reference_rhs(&v, u, &mut dv);
        let mut want = vec![0.0; 2 * nodes];
        for k in 0..nodes {
            want[2 * k] = dv[k];
            let zdot = if k == 0 { dv[0] } else { dv[k - 1] - dv[k] };
            want[2 * k + 1] = RC_DIODE_SLOPE * (x[2 * k + 1] + 1.0) * zdot;
        }
        // Relative comparison: the auxiliary rows carry exponential factors
        // of magnitude ~1e3, so only relative agreement is meaningful.
        let scale = want.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        assert!(
            max_abs_diff(&got, &want) < 1e-12 * scale,
            "lifted RC vector field disagrees: {:e} (scale {:e})",
            max_abs_diff(&got, &want),
            scale
        );
    }

    #[test]
    fn rc_zero_state_is_equilibrium() {
        let sys = build_rc(5).unwrap();
        let f = sys.rhs(&vec![0.0; 10], &[0.0]);
        assert!(f.iter().all(|&v| v == 0.0));
        assert_eq!(sys.n(), 10);
        assert_eq!(sys.output(&rc_lift_state(&[0.25, 0.0, 0.0, 0.0, 0.0]))[0], 0.25);
    }

    #[test]
    fn burgers_rhs_matches_reference() {
        let n = 23;
        let (nu, alpha, beta) = (0.05, 1.0, 0.0);
        let sys = build_burgers(n, nu, alpha, beta).unwrap();
        let v: Vec<f64> = (0..n).map(|i| (0.3 * i as f64).sin() * 0.4).collect();
        let u = -0.7;
        let got = sys.rhs(&v, &[u]);
        let mut want = vec![0.0; n];
        burgers_reference_rhs(&v, nu, alpha, beta, u, &mut want);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn burgers_robin_boundary_matches_reference() {
        // Nonzero beta exercises the ghost-node elimination.
        let n = 11;
        let (nu, alpha, beta) = (0.1, 2.0, 0.3);
        let sys = build_burgers(n, nu, alpha, beta).unwrap();
        let v: Vec<f64> = (0..n).map(|i| 0.1 * (i as f64 + 1.0).cos()).collect();
        let u = 1.3;
        let got = sys.rhs(&v, &[u]);
        let mut want = vec![0.0; n];
        burgers_reference_rhs(&v, nu, alpha, beta, u, &mut want);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn fhn_rhs_matches_lifted_reference() {
        let nbar = 9;
        let mut state = vec![0.0; 2 * nbar];
        for i in 0..nbar {
            state[i] = 0.2 * ((i as f64) * 0.7).sin();
            state[nbar + i] = 0.05 * ((i as f64) * 0.3).cos();
        }
        let (i0, g) = (0.6, FHN_SOURCE);
        let sys = build_fhn(nbar).unwrap();
        let x = fhn_lift_state(&state);
        let got = sys.rhs(&x, &[i0, g]);

        let mut ref_rhs = vec![0.0; 2 * nbar];
        fhn_reference_rhs(&state, i0, g, &mut ref_rhs);
        // The builder's rows are the right-hand side of E x' = f, so the
        // activator rows carry eps v' and the auxiliary rows 2 v v'.
        let mut want = vec![0.0; 3 * nbar];
        for i in 0..nbar {
            want[3 * i] = FHN_EPSILON * ref_rhs[i];
            want[3 * i + 1] = ref_rhs[nbar + i];
            want[3 * i + 2] = 2.0 * state[i] * ref_rhs[i];
        }
        assert!(
            max_abs_diff(&got, &want) < 1e-10,
            "lifted FHN vector field disagrees: {:e}",
            max_abs_diff(&got, &want)
        );
    }

    #[test]
    fn fhn_shapes_and_mass_matrix() {
        let sys = build_fhn(4).unwrap();
        assert_eq!(sys.n(), 12);
        assert_eq!(sys.m_in(), 2);
        assert_eq!(sys.p_out(), 2);
        assert_eq!(sys.e.get(0, 0), FHN_EPSILON);
        assert_eq!(sys.e.get(1, 1), 1.0);
        assert_eq!(sys.e.get(2, 2), 1.0);
    }

    #[test]
    fn builders_are_deterministic() {
        assert_eq!(build_rc(6).unwrap(), build_rc(6).unwrap());
        assert_eq!(
            build_burgers(15, 0.05, 1.0, 0.0).unwrap(),
            build_burgers(15, 0.05, 1.0, 0.0).unwrap()
        );
        assert_eq!(build_fhn(5).unwrap(), build_fhn(5).unwrap());
        assert_eq!(random_system(42, 30, 0.05), random_system(42, 30, 0.05));
    }

    #[test]
    fn quadratic_term_counts_grow_linearly() {
        for (small, large, builder) in [
            (build_rc(10).unwrap(), build_rc(20).unwrap(), "rc"),
            (
                build_burgers(50, 0.05, 1.0, 0.0).unwrap(),
                build_burgers(100, 0.05, 1.0, 0.0).unwrap(),
                "burgers",
            ),
            (build_fhn(10).unwrap(), build_fhn(20).unwrap(), "fhn"),
        ] {
            let (a, b) = (small.h.nnz(), large.h.nnz());
            assert!(
                b <= 2 * a + 8,
                "{builder}: H entries {a} -> {b} grow faster than linearly"
            );
        }
    }

    #[test]
    fn random_system_is_stable_and_sparse() {
        let sys = random_system(3, 30, 0.05);
        assert_eq!(sys.n(), 30);
        // Diagonal dominance of -A against off-diagonal row sums.
        for i in 0..30 {
            let diag = sys.a.get(i, i);
            let off: f64 = sys
                .a
                .iter()
                .filter(|(r, c, _)| *r == i && *c != i)
                .map(|(_, _, v)| v.abs())
                .sum();
            assert!(diag < 0.0 && diag.abs() > off, "row {i} not dominant");
        }
        assert!(sys.a.nnz() < 30 + 2 * 45);
    }
}
