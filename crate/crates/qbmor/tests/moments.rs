//! End-to-end checks that reduced models reproduce the moment equalities
//! their construction claims, across methods, orders, and system sizes.

use num_complex::Complex64;
use qbmor::bench::random_system;
use qbmor::reduce::{
    build_basis, orthonormalize, reduce, verify_moments, ColumnTag, InterpolationPlan, Method,
    MomentReport, ProjectionBasis, RankDecisions, ReducedModel,
};
use qbmor::solve::ShiftedSolver;
use qbmor::sparse::{dot, norm2, DenseMat};
use qbmor::transfer::TransferOracle;
use qbmor::{project, QBSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const METHODS: [Method; 4] = [Method::ImmS, Method::IgmmS, Method::IgmmR2, Method::IgmmR3];

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn points() -> Vec<Complex64> {
    vec![c(0.6), c(1.7)]
}

fn failing_rows(report: &MomentReport) -> String {
    report
        .rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} rel_err={:.3e}", r.label, r.rel_err))
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn all_methods_match_their_claimed_moments() {
    for &(n, seed) in &[(20usize, 11u64), (30, 12)] {
        let sys = random_system(seed, n, 0.2);
        for &(p, q, l) in &[(1usize, 1usize, 1usize), (3, 2, 0)] {
            for method in METHODS {
                let plan = InterpolationPlan::new(points(), p, q, l);
                let red = reduce(&sys, method, &plan).unwrap();
                let tol = if method == Method::ImmS { 1e-6 } else { 1e-7 };
                let report = verify_moments(&sys, &red, tol).unwrap();
                assert!(
                    report.all_pass,
                    "{} on n={n} orders ({p},{q},{l}): {}",
                    method.name(),
                    failing_rows(&report)
                );
            }
        }
    }
}

#[test]
fn first_order_plans_verify_to_eight_digits() {
    let sys = random_system(7, 30, 0.2);
    for method in [Method::IgmmR2, Method::IgmmS] {
        let plan = InterpolationPlan::new(points(), 1, 1, 0);
        let red = reduce(&sys, method, &plan).unwrap();
        let report = verify_moments(&sys, &red, 1e-8).unwrap();
        assert!(
            report.all_pass && report.max_rel_err < 1e-8,
            "{}: max_rel_err={:.3e} ({})",
            method.name(),
            report.max_rel_err,
            failing_rows(&report)
        );
    }
}

/// A full-rank "reduction" with V = W = I. The projected system is the
/// original one, so every claimed equality must hold to roundoff.
fn identity_reduction(sys: &QBSystem, method: Method, plan: InterpolationPlan) -> ReducedModel {
    let n = sys.n();
    let tags: Vec<ColumnTag> = (0..n)
        .map(|i| ColumnTag {
            point: 0,
            formula: "identity".into(),
            order: [i, 0, 0],
            part: "re".into(),
        })
        .collect();
    ReducedModel {
        system: project(sys, &DenseMat::identity(n), &DenseMat::identity(n)).unwrap(),
        method,
        plan,
        basis: ProjectionBasis {
            v: DenseMat::identity(n),
            w: None,
            v_tags: tags,
            w_tags: Vec::new(),
            v_rank: RankDecisions {
                candidates: n,
                kept: n,
                dropped: Vec::new(),
            },
            w_rank: None,
        },
    }
}

#[test]
fn identity_projection_leaves_no_moment_mismatch() {
    let sys = random_system(19, 20, 0.25);
    let plan = InterpolationPlan::new(points(), 1, 1, 1);
    let red = identity_reduction(&sys, Method::IgmmR3, plan);
    let report = verify_moments(&sys, &red, 1e-10).unwrap();
    assert!(
        report.all_pass && report.max_rel_err < 1e-10,
        "max_rel_err={:.3e} ({})",
        report.max_rel_err,
        failing_rows(&report)
    );
}

#[test]
fn compact_spans_are_contained_in_default_spans() {
    let sys = random_system(21, 24, 0.25);
    for method in METHODS {
        let mut plan = InterpolationPlan::new(points(), 1, 1, 1);
        let default = build_basis(&sys, method, &plan).unwrap();
        plan.compact_spans = true;
        let compact = build_basis(&sys, method, &plan).unwrap();

        // The default trial basis is orthonormal to machine precision.
        let vd = &default.v;
        for i in 0..vd.ncols() {
            for j in 0..vd.ncols() {
                let g = dot(vd.col(i), vd.col(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-12, "{}: gram[{i}][{j}]={g}", method.name());
            }
        }

        // Every compact column projects onto the default span with a
        // negligible residual, so the smaller construction spans a subset.
        for jc in 0..compact.v.ncols() {
            let col = compact.v.col(jc);
            let mut residual = col.to_vec();
            for jd in 0..vd.ncols() {
                let coeff = dot(vd.col(jd), col);
                for (ri, vi) in residual.iter_mut().zip(vd.col(jd)) {
                    *ri -= coeff * vi;
                }
            }
            assert!(
                norm2(&residual) < 1e-10 * norm2(col),
                "{}: compact column {jc} ({}) leaves residual {:.3e}",
                method.name(),
                compact.v_tags[jc].formula,
                norm2(&residual)
            );
        }
    }
}

#[test]
fn scaling_the_input_matrix_scales_kernels_homogeneously() {
    // Homogeneity degrees are per-kernel only when the bilinear term is
    // absent: each second-order term then carries two copies of B and each
    // third-order term three. (With N != 0 the kernels mix degrees, since
    // the N-terms carry a single copy of B.)
    let mut sys = random_system(33, 20, 0.25);
    for nk in &mut sys.n_mats {
        nk.scale(0.0);
    }
    let mut scaled = sys.clone();
    scaled.b.scale(2.0);

    let d = vec![1.0];
    let e = vec![1.0];
    let view = sys.siso_view(&d, &e);
    let view2 = scaled.siso_view(&d, &e);
    let solver = ShiftedSolver::new(&sys.e, &sys.a);
    let solver2 = ShiftedSolver::new(&scaled.e, &scaled.a);
    let oracle = TransferOracle::new(&view, &solver);
    let oracle2 = TransferOracle::new(&view2, &solver2);

    let (s1, s2, s3) = (c(0.8), c(1.9), c(3.1));
    let pairs = [
        (oracle.h1(s1, 1).unwrap(), oracle2.h1(s1, 1).unwrap(), 2.0),
        (
            oracle.h2_reg(s1, s2, 1, 0).unwrap(),
            oracle2.h2_reg(s1, s2, 1, 0).unwrap(),
            4.0,
        ),
        (
            oracle.h2_sym(s1, s2, 0, 1).unwrap(),
            oracle2.h2_sym(s1, s2, 0, 1).unwrap(),
            4.0,
        ),
        (
            oracle.h3_reg(s1, s2, s3, 0, 1, 0).unwrap(),
            oracle2.h3_reg(s1, s2, s3, 0, 1, 0).unwrap(),
            8.0,
        ),
    ];
    for (base, big, factor) in pairs {
        assert!(
            (big - base * c(factor)).norm() <= 1e-13 * big.norm(),
            "expected factor {factor}: base={base}, scaled={big}"
        );
    }
}

#[test]
fn scaling_the_input_matrix_leaves_mismatches_unchanged() {
    // Every candidate column is homogeneous in B of some degree, so the
    // basis span — and with it every relative mismatch — is unchanged by
    // rescaling B, even with bilinear terms present. A power-of-two factor
    // keeps the floating-point spans bitwise comparable.
    let sys = random_system(33, 20, 0.25);
    let mut scaled = sys.clone();
    scaled.b.scale(2.0);

    let plan = InterpolationPlan::new(points(), 1, 1, 0);
    let red = reduce(&sys, Method::IgmmR2, &plan).unwrap();
    let red2 = reduce(&scaled, Method::IgmmR2, &plan).unwrap();
    let report = verify_moments(&sys, &red, 1e-7).unwrap();
    let report2 = verify_moments(&scaled, &red2, 1e-7).unwrap();
    assert_eq!(report.rows.len(), report2.rows.len());
    for (a, b) in report.rows.iter().zip(&report2.rows) {
        assert!(
            (a.rel_err - b.rel_err).abs() < 1e-12,
            "{}: rel_err {:.3e} vs {:.3e}",
            a.label,
            a.rel_err,
            b.rel_err
        );
    }
}

#[test]
fn basis_column_counts_follow_the_order_parameters() {
    let sys = random_system(8, 20, 0.25);
    let count = |basis: &ProjectionBasis, formula: &str| {
        basis
            .v_tags
            .iter()
            .filter(|t| t.formula == formula)
            .count()
    };

    // One point, first derivatives on both variables: trial chain depth
    // max(p, q) = 1 and test chain depth p + q = 2.
    let plan = InterpolationPlan::new(vec![c(0.9)], 1, 1, 0);
    let basis = build_basis(&sys, Method::IgmmS, &plan).unwrap();
    assert_eq!(count(&basis, "input-chain"), 2);
    assert_eq!(count(&basis, "output-chain"), 3);
    assert_eq!(basis.v_rank.candidates, 5);
    assert_eq!(basis.v_rank.kept, 5);

    // Zeroth-order interpolation keeps exactly one column per side.
    let plan = InterpolationPlan::new(vec![c(0.9)], 0, 0, 0);
    let basis = build_basis(&sys, Method::IgmmR2, &plan).unwrap();
    assert_eq!(basis.v_rank.candidates, 2);
    assert_eq!(basis.v_rank.kept, 2);
    assert_eq!(count(&basis, "input-chain"), 1);
    assert_eq!(count(&basis, "output-chain"), 1);
}

/// Strips the bilinear and quadratic operators from a random system.
fn linearized(seed: u64, n: usize) -> QBSystem {
    let mut sys = random_system(seed, n, 0.25);
    for nk in &mut sys.n_mats {
        nk.scale(0.0);
    }
    sys.h.scale(0.0);
    sys
}

#[test]
fn linear_systems_collapse_the_excitation_candidates() {
    let sys = linearized(5, 20);

    // With N = 0 and H = 0 every excitation response is the zero vector;
    // the builder keeps the plain chains and drops the rest.
    let plan = InterpolationPlan::new(vec![c(1.2)], 1, 1, 0);
    let basis = build_basis(&sys, Method::ImmS, &plan).unwrap();
    assert_eq!(basis.v_rank.candidates, 6);
    assert_eq!(basis.v_rank.kept, 2);
    let kept: Vec<&str> = basis.v_tags.iter().map(|t| t.formula.as_str()).collect();
    assert_eq!(kept, ["state-chain", "output-chain"]);

    // The third-order construction degenerates to plain rational Krylov
    // chains: no combination column survives.
    let plan = InterpolationPlan::new(points(), 1, 1, 1);
    let basis = build_basis(&sys, Method::IgmmR3, &plan).unwrap();
    assert!(
        basis.v_tags.iter().all(|t| !t.formula.contains("combo")),
        "kept formulas: {:?}",
        basis.v_tags.iter().map(|t| &t.formula).collect::<Vec<_>>()
    );
    assert!(basis.v_rank.kept > 0);

    // A linear reduction still matches its first-order claims.
    let red = reduce(&sys, Method::IgmmR3, &plan).unwrap();
    let report = verify_moments(&sys, &red, 1e-7).unwrap();
    assert!(report.all_pass, "{}", failing_rows(&report));
}

#[test]
fn two_exact_dependencies_among_ten_columns_keep_eight() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let n = 20;
    let mut cols: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    // Insert two exact linear combinations of earlier columns.
    let dep1: Vec<f64> = (0..n).map(|i| cols[0][i] - 2.0 * cols[3][i]).collect();
    let dep2: Vec<f64> = (0..n).map(|i| 0.5 * cols[1][i] + cols[6][i]).collect();
    cols.insert(4, dep1);
    cols.push(dep2);

    let cands: Vec<(ColumnTag, Vec<f64>)> = cols
        .into_iter()
        .enumerate()
        .map(|(i, col)| {
            (
                ColumnTag {
                    point: 0,
                    formula: "input-chain".into(),
                    order: [i, 0, 0],
                    part: "re".into(),
                },
                col,
            )
        })
        .collect();
    let (basis, tags, rank) = orthonormalize(&cands, 1e-10).unwrap();
    assert_eq!(rank.candidates, 10);
    assert_eq!(basis.ncols(), 8);
    assert_eq!(tags.len(), 8);
    assert_eq!(rank.dropped.len(), 2);
    let dropped: Vec<usize> = rank.dropped.iter().map(|d| d.index).collect();
    assert_eq!(dropped, [4, 9]);
}
