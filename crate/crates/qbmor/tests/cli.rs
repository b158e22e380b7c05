//! End-to-end runs of the command-line binary: exit codes, artifact
//! layout, and determinism of the written files.

use std::path::Path;
use std::process::{Command, Output};

fn qbmor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbmor"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary launches")
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_generates_reduces_verifies_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = qbmor(root, &["generate", "--out", "sys", "burgers", "--n", "40"]);
    assert_exit(&out, 0, "generate");
    assert!(root.join("sys/system.json").is_file());
    assert!(root.join("sys/a.mtx").is_file());

    let out = qbmor(
        root,
        &[
            "reduce", "--system", "sys", "--method", "igmm-r2", "--points", "0.5,2.0", "--orders",
            "1,1", "--out", "red",
        ],
    );
    assert_exit(&out, 0, "reduce");
    assert!(root.join("red/reduction.json").is_file());
    assert!(root.join("red/model/system.json").is_file());

    let out = qbmor(root, &["verify", "--system", "sys", "--reduced", "red"]);
    assert_exit(&out, 0, "verify");
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("[PASS]"), "no PASS rows in:\n{stdout}");
    assert!(root.join("red/moments_report.json").is_file());

    // An unreachable tolerance turns the same verification into exit 2.
    let out = qbmor(
        root,
        &["verify", "--tol", "1e-15", "--system", "sys", "--reduced", "red"],
    );
    assert_exit(&out, 2, "verify at 1e-15");
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL]"));

    let out = qbmor(
        root,
        &[
            "simulate", "--system", "sys", "--input", "exp-decay", "--t-end", "2.0", "--out",
            "traj.csv",
        ],
    );
    assert_exit(&out, 0, "simulate");
    let csv = std::fs::read_to_string(root.join("traj.csv")).unwrap();
    assert!(csv.starts_with("t,y_1"), "unexpected header: {}", &csv[..20.min(csv.len())]);

    let out = qbmor(
        root,
        &[
            "compare", "--system", "sys", "--reduced", "red", "--inputs", "exp-decay", "--t-end",
            "2.0", "--out", "cmp",
        ],
    );
    assert_exit(&out, 0, "compare");
    assert!(root.join("cmp/summary.json").is_file());
    assert!(root.join("cmp/full-exp-decay.csv").is_file());
    assert!(root.join("cmp/red-exp-decay.csv").is_file());
    let summary = std::fs::read_to_string(root.join("cmp/summary.json")).unwrap();
    assert!(summary.contains("\"e_max_abs\""));
}

#[test]
fn operational_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Too few nodes for the ladder topology.
    let out = qbmor(root, &["generate", "rc-ladder", "--nodes", "1"]);
    assert_exit(&out, 1, "generate with nodes=1");
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Missing system directory.
    let out = qbmor(
        root,
        &["reduce", "--system", "missing", "--method", "igmm-r2", "--points", "1.0"],
    );
    assert_exit(&out, 1, "reduce on missing path");

    // Unknown method name.
    let out = qbmor(root, &["generate", "--out", "sys", "fhn", "--nbar", "5"]);
    assert_exit(&out, 0, "generate fhn");
    let out = qbmor(
        root,
        &["reduce", "--system", "sys", "--method", "nosuch", "--points", "1.0"],
    );
    assert_exit(&out, 1, "reduce with unknown method");
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch"));
}

#[test]
fn plan_flags_are_recorded_in_the_reduction_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = qbmor(
        root,
        &["generate", "--out", "sys", "--seed", "7", "random", "--n", "24", "--density", "0.1"],
    );
    assert_exit(&out, 0, "generate random");

    let out = qbmor(
        root,
        &[
            "reduce", "--system", "sys", "--method", "igmm-r3", "--points", "0.5,2.0", "--orders",
            "2,1", "--out", "red",
        ],
    );
    assert_exit(&out, 0, "reduce");

    let (_, record) = qbmor::reduce::load_reduced(&root.join("red")).unwrap();
    assert_eq!(record.plan.points.len(), 2);
    assert_eq!(record.plan.p, 2);
    assert_eq!(record.plan.q, 1);
    assert_eq!(record.plan.l, 0);
    assert!(!record.plan.compact_spans);
}

#[test]
fn same_seed_yields_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    for name in ["a", "b"] {
        let out = qbmor(
            root,
            &["generate", "--out", name, "--seed", "11", "random", "--n", "20", "--density", "0.2"],
        );
        assert_exit(&out, 0, "generate");
    }
    assert_eq!(
        std::fs::read(root.join("a/a.mtx")).unwrap(),
        std::fs::read(root.join("b/a.mtx")).unwrap()
    );

    let out = qbmor(
        root,
        &["reduce", "--system", "a", "--method", "igmm-r2", "--points", "0.7,1.9", "--out", "red"],
    );
    assert_exit(&out, 0, "reduce");

    // Re-running compare must reproduce summary.json byte for byte, even
    // with a different thread cap.
    for (name, threads) in [("c1", "1"), ("c2", "4")] {
        let out = Command::new(env!("CARGO_BIN_EXE_qbmor"))
            .current_dir(root)
            .env("QBMOR_THREADS", threads)
            .args([
                "compare", "--system", "a", "--reduced", "red", "--inputs", "exp-decay,cosine",
                "--t-end", "1.0", "--out", name,
            ])
            .output()
            .expect("binary launches");
        assert_exit(&out, 0, "compare");
    }
    assert_eq!(
        std::fs::read(root.join("c1/summary.json")).unwrap(),
        std::fs::read(root.join("c2/summary.json")).unwrap()
    );
}
