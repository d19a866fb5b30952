mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use rmpc::baseline::BaselineController;
use rmpc::controller::{lyapunov_residual, Controller, ControllerError};
use rmpc::geometry::GeometryError;
use rmpc::problem::{Problem, DEFAULT_PROBLEM_JSON};
use rmpc::simulator::{
    benchmark, estimate_roa, MIN_BENCH_REPS, estimate_roa_baseline, simulate_closed_loop, simulate_rollout, RoaEstimate, SimulationOptions,
    SimulationTrace,
};
use rmpc::svg::SetPlot;
use rmpc::system::{sample_realization, SamplingMode};

use manifest::RunManifest;

const EXIT_VALIDATION: u8 = 2;
const EXIT_SYNTHESIS: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "rmpc", version, about = "Adaptive-horizon robust MPC: terminal sets, simulation, ROA and benchmarks")]
struct Cli {
    /// Problem description (JSON). Uses the bundled two-state example when omitted.
    #[arg(long, global = true)]
    problem: Option<PathBuf>,
    /// Worker threads for grid and Monte-Carlo work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Fixed timestamp (SOURCE_DATE_EPOCH or 0) and zeroed timings, so that
    /// repeated runs produce identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the terminal set and terminal cost.
    TerminalSet(TerminalArgs),
    /// Closed-loop simulation under sampled uncertainty; writes a CSV trace.
    Simulate(SimArgs),
    /// Grid estimate of the region of attraction.
    Roa(RoaArgs),
    /// Solve once at x0 and run the resulting policy without re-solving.
    Rollout(SimArgs),
    /// Build-and-solve timings per horizon.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct TerminalArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also synthesize the lumped terminal set of the baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Defaults to the problem's rng seed, or 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Model error at a vertex and disturbances at vertices of W.
    #[arg(long)]
    adversarial: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RoaArgs {
    /// Points per axis.
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also evaluate the lumped baseline and compare masks.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Inclusive range `a..b` or a single horizon.
    #[arg(long, default_value = "1..5")]
    horizons: String,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    /// State to solve at; defaults to a quarter of the way from the centre of
    /// X towards its upper corner.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn controller_failure(e: ControllerError) -> Failure {
    let code = match &e {
        ControllerError::VertexUnstable { .. }
        | ControllerError::EmptyTerminalSet
        | ControllerError::LyapunovDivergence(_)
        | ControllerError::InvarianceCheckFailed(_)
        | ControllerError::Geometry(GeometryError::NoConvergence(_)) => EXIT_SYNTHESIS,
        ControllerError::InvalidConfig(_) | ControllerError::System(_) | ControllerError::Prediction(_) => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    };
    fail(code, format!("synthesis failed: {e}"))
}

struct Context {
    problem: Problem,
    problem_label: String,
    problem_text: String,
    reproducible: bool,
}

impl Context {
    fn load(path: Option<&Path>, reproducible: bool) -> Result<Self, Failure> {
        let (label, text) = match path {
            Some(p) => (
                p.display().to_string(),
                std::fs::read_to_string(p).map_err(|e| fail(EXIT_VALIDATION, format!("cannot read {}: {e}", p.display())))?,
            ),
            None => ("<built-in example>".to_string(), DEFAULT_PROBLEM_JSON.to_string()),
        };
        let problem = Problem::from_json_str(&text).map_err(|e| fail(EXIT_VALIDATION, format!("invalid problem: {e}")))?;
        Ok(Self {
            problem,
            problem_label: label,
            problem_text: text,
            reproducible,
        })
    }

    /// `options` lists the settings that affect results; output paths are
    /// left out so the hash identifies the computation.
    fn manifest(&self, command: &str, options: &str, seed: u64) -> RunManifest {
        RunManifest::new(command, &self.problem_label, &self.problem_text, options, seed, self.reproducible)
    }

    fn controller(&self) -> Result<Controller, Failure> {
        Controller::from_problem(&self.problem).map_err(controller_failure)
    }

    fn default_seed(&self) -> u64 {
        self.problem.seed.unwrap_or(0)
    }
}

fn parse_vector(text: &str, dim: usize, what: &str) -> Result<DVector<f64>, Failure> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| fail(EXIT_VALIDATION, format!("--{what}: {e}")))?;
    if values.len() != dim {
        return Err(fail(
            EXIT_VALIDATION,
            format!("--{what}: expected {dim} values, got {}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail(EXIT_VALIDATION, format!("--{what}: values must be finite")));
    }
    Ok(DVector::from_vec(values))
}

fn parse_horizons(text: &str, max: usize) -> Result<Vec<usize>, Failure> {
    let bad = || fail(EXIT_VALIDATION, format!("--horizons: expected `a..b` or `n`, got `{text}`"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse::<usize>().map_err(|_| bad())?, b.trim().parse::<usize>().map_err(|_| bad())?),
        None => {
            let n = text.trim().parse::<usize>().map_err(|_| bad())?;
            (n, n)
        }
    };
    if a == 0 || a > b || b > max {
        return Err(fail(EXIT_VALIDATION, format!("--horizons: range must lie within 1..{max}")));
    }
    Ok((a..=b).collect())
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| fail(EXIT_VALIDATION, format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vertices(set: &rmpc::geometry::Polytope) -> Option<Vec<[f64; 2]>> {
    (set.dim() == 2).then(|| set.vertices_2d().ok()).flatten()
}

fn cmd_terminal_set(ctx: &Context, args: &TerminalArgs) -> Result<(), Failure> {
    let manifest = ctx.manifest("terminal-set", &format!("baseline={}", args.baseline), ctx.default_seed());
    let ctrl = ctx.controller()?;
    let sys = &ctrl.system;
    let term = &ctrl.config.terminal;
    let residual = lyapunov_residual(sys, &term.k, &ctrl.config.p, &ctrl.config.r, &term.p_n);
    if !term.screen.hull_passed() {
        eprintln!(
            "warning: {} of {} sampled model errors give an unstable closed loop (max spectral radius {:.6})",
            term.screen.hull_violations, term.screen.hull_samples, term.screen.max_hull_radius
        );
    }
    let baseline = if args.baseline {
        Some(BaselineController::from_problem(&ctx.problem, term).map_err(controller_failure)?)
    } else {
        None
    };
    let report = json!({
        "manifest": manifest,
        "K": matrix_rows(&term.k),
        "terminal_set": term.set.to_file(),
        "terminal_set_vertices": vertices(&term.set),
        "iterations": term.iterations,
        "P_N": matrix_rows(&term.p_n),
        "lyapunov_residual": residual,
        "stability_screen": term.screen,
        "bound": ctrl.config.bound,
        "baseline_terminal_set": baseline.as_ref().map(|b| b.config.lumped_set.to_file()),
        "baseline_subset_of_terminal_set": baseline.as_ref().map(|b| b.config.lumped_set.is_subset(&term.set).unwrap_or(false)),
    });
    write_output(args.out.as_deref(), &to_json(&report))?;
    if let Some(svg) = &args.svg {
        if sys.state_dim() != 2 {
            eprintln!("warning: pictures need a two-dimensional state; no SVG written");
        } else {
            let mut plot = SetPlot::new("Terminal set")
                .metadata(manifest.lines())
                .polygon("state constraints X", "#7f7f7f", vertices(sys.x()).unwrap_or_default())
                .polygon("terminal set", "#1f77b4", vertices(&term.set).unwrap_or_default());
            if let Some(b) = &baseline {
                plot = plot.polygon("lumped terminal set", "#d62728", vertices(&b.config.lumped_set).unwrap_or_default());
            }
            write_output(Some(svg), &plot.render())?;
        }
    }
    Ok(())
}

fn trace_summary(trace: &SimulationTrace) {
    eprintln!(
        "steps: {}, infeasible: {}, constraint violations: {}, cost-descent violations: {}",
        trace.inputs.len(),
        trace.infeasible_steps(),
        trace.constraint_violations(),
        trace.descent_violations()
    );
}

fn cmd_simulate(ctx: &Context, args: &SimArgs, rollout: bool) -> Result<(), Failure> {
    let seed = args.seed.unwrap_or_else(|| ctx.default_seed());
    let name = if rollout { "rollout" } else { "simulate" };
    let manifest = ctx.manifest(
        name,
        &format!("x0={};steps={};adversarial={}", args.x0, args.steps, args.adversarial),
        seed,
    );
    let ctrl = ctx.controller()?;
    let x0 = parse_vector(&args.x0, ctrl.system.state_dim(), "x0")?;
    let mode = if args.adversarial {
        SamplingMode::Adversarial
    } else {
        SamplingMode::Uniform
    };
    let realization = sample_realization(&ctrl.system, args.steps, seed, mode);
    let opts = SimulationOptions {
        zero_times: ctx.reproducible,
    };
    let trace = if rollout {
        simulate_rollout(&ctrl, &x0, args.steps, &realization, opts)
    } else {
        simulate_closed_loop(&ctrl, &x0, args.steps, &realization, opts)
    };
    let mut header = manifest.lines();
    for v in &trace.violations {
        header.push(format!("violation: {v:?}"));
    }
    write_output(args.out.as_deref(), &trace.to_csv(&header))?;
    trace_summary(&trace);
    Ok(())
}

fn roa_points(roa: &RoaEstimate, feasible: bool) -> Vec<[f64; 2]> {
    roa.points
        .iter()
        .filter(|p| p.feasible == feasible && p.state.len() == 2)
        .map(|p| [p.state[0], p.state[1]])
        .collect()
}

fn cmd_roa(ctx: &Context, args: &RoaArgs) -> Result<(), Failure> {
    if args.grid == 0 {
        return Err(fail(EXIT_VALIDATION, "--grid must be at least 1"));
    }
    let manifest = ctx.manifest("roa", &format!("grid={};baseline={}", args.grid, args.baseline), ctx.default_seed());
    let ctrl = ctx.controller()?;
    let roa = estimate_roa(&ctrl, args.grid);
    let baseline = if args.baseline {
        let b = BaselineController::from_problem(&ctx.problem, &ctrl.config.terminal).map_err(controller_failure)?;
        let est = estimate_roa_baseline(&ctrl, &b, args.grid);
        Some((b, est))
    } else {
        None
    };
    let dominance = baseline.as_ref().map(|(_, b)| {
        b.points
            .iter()
            .zip(&roa.points)
            .all(|(bp, pp)| !bp.feasible || pp.feasible)
    });
    if ctrl.system.state_dim() != 2 {
        eprintln!("warning: hull and area need a two-dimensional state; reporting the feasibility mask only");
    }
    let report = json!({
        "manifest": manifest,
        "grid_n": args.grid,
        "evaluations": roa.points.len(),
        "feasible": roa.num_feasible(),
        "area": roa.area,
        "hull": roa.hull.as_ref().map(|h| &h.hull),
        "points": roa.points,
        "baseline": baseline.as_ref().map(|(_, b)| json!({
            "feasible": b.num_feasible(),
            "area": b.area,
            "hull": b.hull.as_ref().map(|h| &h.hull),
            "mask": b.feasible_mask(),
        })),
        "baseline_subset_of_proposed": dominance,
    });
    write_output(args.out.as_deref(), &to_json(&report))?;
    eprintln!("feasible: {}/{}", roa.num_feasible(), roa.points.len());
    if let Some(svg) = &args.svg {
        if ctrl.system.state_dim() != 2 {
            eprintln!("warning: pictures need a two-dimensional state; no SVG written");
        } else {
            let mut plot = SetPlot::new("Region of attraction estimate")
                .metadata(manifest.lines())
                .polygon("state constraints X", "#7f7f7f", vertices(ctrl.system.x()).unwrap_or_default())
                .polygon("proposed: hull of feasible points", "#1f77b4", roa.hull.as_ref().map(|h| h.hull.clone()).unwrap_or_default());
            if let Some((_, b)) = &baseline {
                plot = plot.polygon("baseline: hull of feasible points", "#d62728", b.hull.as_ref().map(|h| h.hull.clone()).unwrap_or_default());
            }
            plot = plot
                .points("feasible", "#2ca02c", roa_points(&roa, true))
                .points("infeasible", "#000000", roa_points(&roa, false));
            write_output(Some(svg), &plot.render())?;
        }
    }
    Ok(())
}

fn cmd_bench(ctx: &Context, args: &BenchArgs) -> Result<(), Failure> {
    if args.reps < MIN_BENCH_REPS {
        return Err(fail(EXIT_VALIDATION, format!("--reps must be at least {MIN_BENCH_REPS}")));
    }
    let manifest = ctx.manifest(
        "bench",
        &format!("horizons={};reps={};x0={:?}", args.horizons, args.reps, args.x0),
        ctx.default_seed(),
    );
    let ctrl = ctx.controller()?;
    let horizons = parse_horizons(&args.horizons, ctrl.config.horizon)?;
    let x0 = match &args.x0 {
        Some(s) => parse_vector(s, ctrl.system.state_dim(), "x0")?,
        None => {
            let (lo, hi) = ctrl.system.x().bounding_box().map_err(|e| fail(EXIT_NUMERICAL, e.to_string()))?;
            (&lo + &hi) * 0.5 + (&hi - &lo) * 0.125
        }
    };
    let rows = benchmark(&ctrl, &horizons, args.reps, &[x0.clone()]).map_err(controller_failure)?;
    let report = json!({
        "manifest": manifest,
        "note": "seconds per horizon problem; includes problem construction and solve, excludes problem-file parsing",
        "state": x0.iter().copied().collect::<Vec<_>>(),
        "rows": rows,
    });
    write_output(args.out.as_deref(), &to_json(&report))?;
    eprintln!("{:>3} {:>12} {:>12} {:>10}", "N_t", "mean [s]", "median [s]", "status");
    for r in &rows {
        eprintln!("{:>3} {:>12.6} {:>12.6} {:>10?}", r.horizon, r.mean, r.median, r.status);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(fail(EXIT_VALIDATION, "--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| fail(EXIT_NUMERICAL, format!("cannot start worker pool: {e}")))?;
    }
    let ctx = Context::load(cli.problem.as_deref(), cli.reproducible)?;
    match &cli.command {
        Command::TerminalSet(a) => cmd_terminal_set(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a, false),
        Command::Rollout(a) => cmd_simulate(&ctx, a, true),
        Command::Roa(a) => cmd_roa(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
