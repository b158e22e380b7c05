//! Command-line interface: generate benchmark systems, reduce them, verify
//! the moment-matching claims, and run time-domain comparisons.
//!
//! Exit codes: 0 when everything requested passed, 2 when a verification
//! reported failing rows, 1 on any operational error (bad flags, missing
//! files, singular operators). `QBMOR_THREADS` caps the worker pool used for
//! basis construction and for concurrent (model, input) simulation runs.

use crate::bench;
use crate::error::{Error, Result};
use crate::io;
use crate::reduce::{
    self, InterpolationPlan, Method, ProjectionStyle, ReductionRecord, TangentialPair,
};
use crate::sim::{self, InputSignal, SimOptions, Trajectory};
use crate::system::QBSystem;
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "qbmor",
    version,
    about = "Interpolatory multi-moment matching reduction of quadratic-bilinear systems"
)]
pub struct Cli {
    /// Relative tolerance for moment verification.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,

    /// Rank-truncation tolerance for basis orthonormalization.
    #[arg(long, global = true)]
    rank_tol: Option<f64>,

    /// Time step for simulation commands.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Simulation horizon for simulation commands.
    #[arg(long, global = true)]
    t_end: Option<f64>,

    /// Time-stepping scheme: implicit-trapezoidal | implicit-euler | explicit-rk4.
    #[arg(long, global = true)]
    scheme: Option<String>,

    /// Output directory or file (per-command default otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized generators.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a benchmark (or random test) system to disk.
    Generate {
        #[command(subcommand)]
        model: GenerateModel,
    },

    /// Build a reduced model by interpolatory projection.
    Reduce {
        /// Full-model manifest (directory or system.json path).
        #[arg(long)]
        system: PathBuf,

        /// Reduction method: imm-s | igmm-s | igmm-r2 | igmm-r3.
        #[arg(long)]
        method: String,

        /// Interpolation points, comma separated; complex entries as a+bi.
        #[arg(long)]
        points: String,

        /// Derivative orders P,Q,L (two entries mean L=0).
        #[arg(long, default_value = "1,1,1")]
        orders: String,

        /// Use a Petrov-Galerkin two-sided projection instead of the
        /// one-sided union basis.
        #[arg(long)]
        two_sided: bool,

        /// Span only the minimal classic construction for each method
        /// instead of the widened default spaces.
        #[arg(long)]
        compact_spans: bool,

        /// Tangential directions "d_1,..,d_m/e_1,..,e_p" applied at every
        /// point (multi-input/multi-output systems).
        #[arg(long)]
        tangential: Option<String>,
    },

    /// Check the moment-matching claims of a reduced model.
    Verify {
        /// Full-model manifest.
        #[arg(long)]
        system: PathBuf,

        /// Directory produced by `reduce`.
        #[arg(long)]
        reduced: PathBuf,

        /// Where to write the JSON report (default: <reduced>/moments_report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Integrate one model and write its output trajectory as CSV.
    Simulate {
        /// Model manifest (full model, or the model/ directory of a reduction).
        #[arg(long)]
        system: PathBuf,

        /// Input signal: exp-decay | cosine | fhn-stimulus | zero.
        #[arg(long, default_value = "exp-decay")]
        input: String,
    },

    /// Run full and reduced models on shared inputs and tabulate errors.
    Compare {
        /// Full-model manifest.
        #[arg(long)]
        system: PathBuf,

        /// Reduced-model directories (repeatable).
        #[arg(long, required = true)]
        reduced: Vec<PathBuf>,

        /// Input signals to drive, comma separated.
        #[arg(long, default_value = "exp-decay")]
        inputs: String,
    },
}

#[derive(Debug, Subcommand)]
enum GenerateModel {
    /// Nonlinear RC ladder with diode conductances (state dimension 2*nodes).
    RcLadder {
        /// Number of capacitor nodes in the ladder.
        #[arg(long)]
        nodes: usize,
    },
    /// Viscous Burgers equation with Robin inflow control (state dimension n).
    Burgers {
        /// Number of interior grid nodes.
        #[arg(long)]
        n: usize,
        /// Viscosity.
        #[arg(long, default_value_t = 0.05)]
        nu: f64,
        /// Robin coefficient on v(0) in the inflow condition.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Robin coefficient on v_x(0) in the inflow condition.
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
    },
    /// FitzHugh-Nagumo nerve membrane model (state dimension 3*nbar).
    Fhn {
        /// Number of spatial grid points.
        #[arg(long)]
        nbar: usize,
    },
    /// Random sparse stable test system.
    Random {
        /// State dimension.
        #[arg(long)]
        n: usize,
        /// Fraction of nonzero entries in each sparse operator.
        #[arg(long, default_value_t = 0.05)]
        density: f64,
    },
}

/// Parses arguments, runs the requested command, and maps the outcome to the
/// documented exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_thread_pool();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn init_thread_pool() {
    if let Ok(raw) = std::env::var("QBMOR_THREADS") {
        if let Ok(threads) = raw.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let Cli {
        tol,
        rank_tol,
        dt,
        t_end,
        scheme,
        out,
        seed,
        command,
    } = cli;
    let sim_opts = build_sim_options(dt, t_end, scheme.as_deref())?;
    match command {
        Command::Generate { model } => cmd_generate(model, out, seed),
        Command::Reduce {
            system,
            method,
            points,
            orders,
            two_sided,
            compact_spans,
            tangential,
        } => cmd_reduce(
            system, &method, &points, &orders, two_sided, compact_spans,
            tangential.as_deref(), rank_tol, out,
        ),
        Command::Verify {
            system,
            reduced,
            report,
        } => cmd_verify(system, reduced, report, tol),
        Command::Simulate { system, input } => cmd_simulate(system, &input, &sim_opts, out),
        Command::Compare {
            system,
            reduced,
            inputs,
        } => cmd_compare(system, reduced, &inputs, &sim_opts, out),
    }
}

fn build_sim_options(dt: Option<f64>, t_end: Option<f64>, scheme: Option<&str>) -> Result<SimOptions> {
    let mut opts = SimOptions::default();
    if let Some(dt) = dt {
        opts.dt = dt;
    }
    if let Some(t_end) = t_end {
        opts.t_end = t_end;
    }
    if let Some(scheme) = scheme {
        opts.scheme = scheme.parse()?;
    }
    Ok(opts)
}

/// Parses "0.5,2.0" or "0.5+1i,2-0.5i" into complex interpolation points.
fn parse_complex_points(s: &str) -> Result<Vec<Complex64>> {
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<Complex64>().map_err(|_| {
                Error::Invalid(format!(
                    "cannot parse interpolation point '{tok}' (expected a real like 0.5 \
                     or a complex like 0.5+1i)"
                ))
            })
        })
        .collect()
}

/// Parses "P,Q" or "P,Q,L" derivative orders.
fn parse_orders(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| {
                Error::Invalid(format!("cannot parse derivative order '{}'", tok.trim()))
            })
        })
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [p, q] => Ok((*p, *q, 0)),
        [p, q, l] => Ok((*p, *q, *l)),
        _ => Err(Error::Invalid(format!(
            "orders must be P,Q or P,Q,L, got '{s}'"
        ))),
    }
}

/// Parses tangential directions "d_1,..,d_m/e_1,..,e_p".
fn parse_tangential(s: &str) -> Result<TangentialPair> {
    let (din, dout) = s.split_once('/').ok_or_else(|| {
        Error::Invalid(format!(
            "tangential directions must be 'inputs/outputs', got '{s}'"
        ))
    })?;
    let parse_list = |part: &str| -> Result<Vec<f64>> {
        part.split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Invalid(format!("cannot parse direction entry '{}'", tok.trim()))
                })
            })
            .collect()
    };
    Ok(TangentialPair {
        input: parse_list(din)?,
        output: parse_list(dout)?,
    })
}

fn cmd_generate(model: GenerateModel, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool> {
    let (name, sys) = match model {
        GenerateModel::RcLadder { nodes } => ("rc-ladder", bench::build_rc(nodes)?),
        GenerateModel::Burgers { n, nu, alpha, beta } => {
            ("burgers", bench::build_burgers(n, nu, alpha, beta)?)
        }
        GenerateModel::Fhn { nbar } => ("fhn", bench::build_fhn(nbar)?),
        GenerateModel::Random { n, density } => {
            if n < 2 {
                return Err(Error::Invalid(format!(
                    "random system needs n >= 2, got {n}"
                )));
            }
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::Invalid(format!(
                    "density must lie in (0, 1], got {density}"
                )));
            }
            ("random", bench::random_system(seed.unwrap_or(0), n, density))
        }
    };
    let dir = out.unwrap_or_else(|| PathBuf::from(name));
    io::save_system(&sys, &dir)?;
    println!(
        "{name}: n={}, inputs={}, outputs={}",
        sys.n(),
        sys.m_in(),
        sys.p_out()
    );
    println!(
        "nnz: E={} A={} N={} H={}",
        sys.e.nnz(),
        sys.a.nnz(),
        sys.n_mats.iter().map(|nk| nk.nnz()).sum::<usize>(),
        sys.h.nnz()
    );
    println!("wrote {}", dir.join("system.json").display());
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn cmd_reduce(
    system: PathBuf,
    method: &str,
    points: &str,
    orders: &str,
    two_sided: bool,
    compact_spans: bool,
    tangential: Option<&str>,
    rank_tol: Option<f64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let sys = io::load_system(&system)?;
    let method = Method::parse(method)?;
    let points = parse_complex_points(points)?;
    let (p, q, l) = parse_orders(orders)?;

    let mut plan = InterpolationPlan::new(points, p, q, l);
    if two_sided {
        plan.style = ProjectionStyle::TwoSided;
    }
    plan.compact_spans = compact_spans;
    if let Some(rt) = rank_tol {
        plan.rank_tol = rt;
    }
    if let Some(spec) = tangential {
        let pair = parse_tangential(spec)?;
        plan.tangential = Some(vec![pair; plan.points.len()]);
    }

    let red = reduce::reduce(&sys, method, &plan)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("reduced-{}", method.name())));
    reduce::save_reduced(&red, sys.n(), &dir)?;

    let record = red.record(sys.n());
    println!("{}: n={} -> r={}", method.name(), sys.n(), red.r());
    println!(
        "trial basis: {} candidates, {} kept, {} dropped",
        record.v.candidates,
        record.v.kept.len(),
        record.v.dropped.len()
    );
    if let Some(w) = &record.w {
        println!(
            "test basis: {} candidates, {} kept, {} dropped",
            w.candidates,
            w.kept.len(),
            w.dropped.len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(true)
}

fn cmd_verify(
    system: PathBuf,
    reduced: PathBuf,
    report: Option<PathBuf>,
    tol: f64,
) -> Result<bool> {
    let full = io::load_system(&system)?;
    let red = reduce::load_reduced_model(&reduced)?;
    let rep = reduce::verify_moments(&full, &red, tol)?;
    for row in &rep.rows {
        println!(
            "[{}] {} (point {}) rel_err={:.3e}",
            if row.pass { "PASS" } else { "FAIL" },
            row.label,
            row.point_index,
            row.rel_err
        );
    }
    println!(
        "{}: {} claims, max rel err {:.3e} -> {}",
        rep.method,
        rep.rows.len(),
        rep.max_rel_err,
        if rep.all_pass { "PASS" } else { "FAIL" }
    );
    let report_path = report.unwrap_or_else(|| reduced.join("moments_report.json"));
    io::write_json(&report_path, &rep)?;
    println!("wrote {}", report_path.display());
    Ok(rep.all_pass)
}

fn cmd_simulate(
    system: PathBuf,
    input: &str,
    opts: &SimOptions,
    out: Option<PathBuf>,
) -> Result<bool> {
    let sys = io::load_system(&system)?;
    let signal: InputSignal = input.parse()?;
    let traj = sim::simulate_signal(&sys, signal, opts)?;
    let path = out.unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    sim::write_trajectory_csv(&path, &traj)?;
    if traj.diverged {
        println!(
            "divergence flagged at t={}",
            traj.diverged_at.unwrap_or(f64::NAN)
        );
    }
    println!(
        "{} grid points, final t={}, newton iterations={} (max {} in one step)",
        traj.times.len(),
        traj.times.last().copied().unwrap_or(0.0),
        traj.newton_iterations,
        traj.newton_max_step
    );
    println!("wrote {}", path.display());
    Ok(true)
}

/// One row of `summary.json`: a (model, input) simulation outcome.
#[derive(Debug, Serialize)]
struct RunSummary {
    input: String,
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    diverged_at: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_max_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_max_rel: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    name: String,
    method: String,
    r: usize,
    runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    system: String,
    n: usize,
    scheme: String,
    dt: f64,
    t_end: f64,
    full_diverged: bool,
    inputs: Vec<String>,
    models: Vec<ModelSummary>,
}

fn cmd_compare(
    system: PathBuf,
    reduced: Vec<PathBuf>,
    inputs: &str,
    opts: &SimOptions,
    out: Option<PathBuf>,
) -> Result<bool> {
    let full = io::load_system(&system)?;
    let mut models: Vec<(String, QBSystem, ReductionRecord)> = Vec::new();
    for dir in &reduced {
        let (rsys, record) = reduce::load_reduced(dir)?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        models.push((name, rsys, record));
    }
    let signals: Vec<InputSignal> = inputs
        .split(',')
        .map(|tok| tok.trim().parse())
        .collect::<Result<_>>()?;
    if signals.is_empty() {
        return Err(Error::Invalid("no input signals requested".into()));
    }

    let dir = out.unwrap_or_else(|| PathBuf::from("comparison"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    // Worker pool keyed by (model, input); index 0 is the full model.
    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for si in 0..signals.len() {
        tasks.push((0, si));
        for mi in 0..models.len() {
            tasks.push((mi + 1, si));
        }
    }
    let results: Vec<Result<Trajectory>> = tasks
        .par_iter()
        .map(|&(model_idx, sig_idx)| {
            let sys = if model_idx == 0 {
                &full
            } else {
                &models[model_idx - 1].1
            };
            sim::simulate_signal(sys, signals[sig_idx], opts)
        })
        .collect();
    let mut by_key = std::collections::BTreeMap::new();
    for (key, res) in tasks.into_iter().zip(results) {
        by_key.insert(key, res?);
    }

    let mut full_diverged = false;
    let mut model_runs: Vec<Vec<RunSummary>> = (0..models.len()).map(|_| Vec::new()).collect();
    for (si, signal) in signals.iter().enumerate() {
        let full_traj = &by_key[&(0, si)];
        sim::write_trajectory_csv(&dir.join(format!("full-{signal}.csv")), full_traj)?;
        if full_traj.diverged {
            full_diverged = true;
            println!(
                "full + {signal}: diverged at t={}",
                full_traj.diverged_at.unwrap_or(f64::NAN)
            );
        }
        for (mi, (name, _, _)) in models.iter().enumerate() {
            let red_traj = &by_key[&(mi + 1, si)];
            let run = if red_traj.diverged || full_traj.diverged {
                // No comparison on a truncated grid; record the divergence
                // and keep the partial trajectory for inspection.
                sim::write_trajectory_csv(
                    &dir.join(format!("{name}-{signal}-partial.csv")),
                    red_traj,
                )?;
                let at = red_traj.diverged_at.or(full_traj.diverged_at);
                println!(
                    "{name} + {signal}: diverged at t={}",
                    at.unwrap_or(f64::NAN)
                );
                RunSummary {
                    input: signal.name().into(),
                    diverged: red_traj.diverged,
                    diverged_at: red_traj.diverged_at,
                    e_max_abs: None,
                    e_max_rel: None,
                }
            } else {
                let metrics = sim::error_metrics(full_traj, red_traj)?;
                sim::write_comparison_csv(
                    &dir.join(format!("{name}-{signal}.csv")),
                    full_traj,
                    red_traj,
                )?;
                println!(
                    "{name} + {signal}: e_max_rel={:.3e} e_max_abs={:.3e}",
                    metrics.e_max_rel, metrics.e_max_abs
                );
                RunSummary {
                    input: signal.name().into(),
                    diverged: false,
                    diverged_at: None,
                    e_max_abs: Some(metrics.e_max_abs),
                    e_max_rel: Some(metrics.e_max_rel),
                }
            };
            model_runs[mi].push(run);
        }
    }

    let summary = CompareSummary {
        system: system.display().to_string(),
        n: full.n(),
        scheme: opts.scheme.name().into(),
        dt: opts.dt,
        t_end: opts.t_end,
        full_diverged,
        inputs: signals.iter().map(|s| s.name().into()).collect(),
        models: models
            .iter()
            .zip(model_runs)
            .map(|((name, _, record), runs)| ModelSummary {
                name: name.clone(),
                method: record.method.name().into(),
                r: record.r,
                runs,
            })
            .collect(),
    };
    let summary_path = dir.join("summary.json");
    io::write_json(&summary_path, &summary)?;
    println!("wrote {}", summary_path.display());
    Ok(true)
}
