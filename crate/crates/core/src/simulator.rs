//! Closed-loop simulation with runtime monitors, region-of-attraction
//! sampling and timing benchmarks.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::BaselineController;
use crate::controller::{
    case1_template, lumped_template, solve_horizon, Controller, ControllerError, RolloutPolicy, ISS_TOL,
};
use crate::geometry::{hull_2d, PointCloudHull2D};
use crate::qp::SolveStatus;
use crate::system::UncertaintyRealization;

/// Constraint margins below `-MARGIN_TOL` count as violations.
pub const MARGIN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// Chosen horizon; `None` for rollout steps that do not solve.
    pub n_star: Option<usize>,
    pub j_star: Option<f64>,
    /// Seconds spent computing the input.
    pub solve_time: f64,
    /// `min` of the state and input constraint margins at this step.
    pub margin: f64,
    /// `q + tol - J*(x_{t+1})` for the transition out of this step; negative
    /// means the cost-descent check failed.
    pub iss_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    Infeasible { t: usize },
    NumericalFailure { t: usize },
    StateConstraint { t: usize, margin: f64 },
    InputConstraint { t: usize, margin: f64 },
    CostDescent { t: usize, slack: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `x_0 .. x_T`; one longer than `inputs` unless the run aborted.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `x_{t+1} - A x_t - B u_t`.
    pub w_tilde: Vec<DVector<f64>>,
    pub records: Vec<StepRecord>,
    pub violations: Vec<Violation>,
}

impl SimulationTrace {
    fn new(x0: &DVector<f64>) -> Self {
        Self {
            states: vec![x0.clone()],
            inputs: Vec::new(),
            w_tilde: Vec::new(),
            records: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn infeasible_steps(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::Infeasible { .. } | Violation::NumericalFailure { .. }))
            .count()
    }

    pub fn constraint_violations(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::StateConstraint { .. } | Violation::InputConstraint { .. }))
            .count()
    }

    pub fn descent_violations(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::CostDescent { .. }))
            .count()
    }

    /// One row per applied step, then a row holding only the final state.
    /// `header` lines are written first, each prefixed with `# `.
    pub fn to_csv(&self, header: &[String]) -> String {
        let d = self.states[0].len();
        let m = self.inputs.first().map(|u| u.len()).unwrap_or(0);
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        let mut cols = vec!["t".to_string()];
        cols.extend((0..d).map(|i| format!("x{i}")));
        cols.extend((0..m).map(|i| format!("u{i}")));
        cols.extend((0..d).map(|i| format!("w{i}")));
        cols.extend(["N_star", "J_star", "margin", "time"].map(String::from));
        let _ = writeln!(out, "{}", cols.join(","));
        let fmt = |v: f64| format!("{v:e}");
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|&v| fmt(v)));
            match (self.inputs.get(t), self.w_tilde.get(t), self.records.get(t)) {
                (Some(u), Some(w), Some(r)) => {
                    row.extend(u.iter().map(|&v| fmt(v)));
                    row.extend(w.iter().map(|&v| fmt(v)));
                    row.push(r.n_star.map(|n| n.to_string()).unwrap_or_default());
                    row.push(r.j_star.map(fmt).unwrap_or_default());
                    row.push(fmt(r.margin));
                    row.push(fmt(r.solve_time));
                }
                _ => row.extend(std::iter::repeat(String::new()).take(m + d + 4)),
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Options for [`simulate_closed_loop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Report wall-clock solve times as zero so that traces are
    /// byte-for-byte reproducible.
    pub zero_times: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { zero_times: false }
    }
}

fn check_state(trace: &mut SimulationTrace, ctrl: &Controller, t: usize, x: &DVector<f64>) -> f64 {
    let margin = ctrl.system.x().margin(x);
    if margin < -MARGIN_TOL {
        trace.violations.push(Violation::StateConstraint { t, margin });
    }
    margin
}

fn check_input(trace: &mut SimulationTrace, ctrl: &Controller, t: usize, u: &DVector<f64>) -> f64 {
    let margin = ctrl.system.u().margin(u);
    if margin < -MARGIN_TOL {
        trace.violations.push(Violation::InputConstraint { t, margin });
    }
    margin
}

fn solve_failure(e: &ControllerError, t: usize) -> Violation {
    match e {
        ControllerError::AllHorizonsInfeasible { .. } => Violation::Infeasible { t },
        _ => Violation::NumericalFailure { t },
    }
}

/// Receding-horizon loop against the true plant in `realization`. Stops at
/// the first infeasible step; never panics on infeasibility.
pub fn simulate_closed_loop(
    ctrl: &Controller,
    x0: &DVector<f64>,
    steps: usize,
    realization: &UncertaintyRealization,
    opts: SimulationOptions,
) -> SimulationTrace {
    assert!(realization.w_sequence.len() >= steps, "realization shorter than the simulation");
    let sys = &ctrl.system;
    let mut trace = SimulationTrace::new(x0);
    // Candidate cost for the state just reached, from the previous step.
    let mut pending: Option<f64> = None;
    let mut x = x0.clone();
    for t in 0..=steps {
        let state_margin = check_state(&mut trace, ctrl, t, &x);
        if t == steps && pending.is_none() {
            break;
        }
        let start = Instant::now();
        let sol = match ctrl.adaptive_solve(&x) {
            Ok(sol) => sol,
            Err(e) => {
                trace.violations.push(solve_failure(&e, t));
                break;
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        if let Some(q) = pending.take() {
            let slack = q + ISS_TOL * (1.0 + sol.j_star.abs()) - sol.j_star;
            trace.records[t - 1].iss_slack = Some(slack);
            if slack < 0.0 {
                trace.violations.push(Violation::CostDescent { t: t - 1, slack });
            }
        }
        if t == steps {
            break;
        }
        let u = sol.applied_input();
        let input_margin = check_input(&mut trace, ctrl, t, &u);
        let x_next = realization.step(sys, t, &x, &u);
        pending = Some(ctrl.candidate_cost(&sol, &x, &u, &x_next));
        trace.records.push(StepRecord {
            t,
            n_star: Some(sol.n_star),
            j_star: Some(sol.j_star),
            solve_time: if opts.zero_times { 0.0 } else { elapsed },
            margin: state_margin.min(input_margin),
            iss_slack: None,
        });
        trace.w_tilde.push(ctrl.net_disturbance(&x, &u, &x_next));
        trace.inputs.push(u);
        trace.states.push(x_next.clone());
        x = x_next;
    }
    trace
}

/// Solves once at `x0`, then runs the resulting policy open loop followed by
/// the terminal controller.
pub fn simulate_rollout(
    ctrl: &Controller,
    x0: &DVector<f64>,
    steps: usize,
    realization: &UncertaintyRealization,
    opts: SimulationOptions,
) -> SimulationTrace {
    assert!(realization.w_sequence.len() >= steps, "realization shorter than the simulation");
    let sys = &ctrl.system;
    let mut trace = SimulationTrace::new(x0);
    let start = Instant::now();
    let sol = match ctrl.adaptive_solve(x0) {
        Ok(sol) => sol,
        Err(e) => {
            check_state(&mut trace, ctrl, 0, x0);
            trace.violations.push(solve_failure(&e, 0));
            return trace;
        }
    };
    let mut first_time = Some(start.elapsed().as_secs_f64());
    let (n_star, j_star) = (sol.n_star, sol.j_star);
    let policy = RolloutPolicy::new(ctrl, sol);
    for t in 0..steps {
        let x = trace.states[t].clone();
        let state_margin = check_state(&mut trace, ctrl, t, &x);
        let start = Instant::now();
        let u = policy
            .input(&trace.states, &trace.inputs)
            .expect("history is kept consistent");
        let elapsed = first_time.take().unwrap_or(0.0) + start.elapsed().as_secs_f64();
        let input_margin = check_input(&mut trace, ctrl, t, &u);
        let x_next = realization.step(sys, t, &x, &u);
        trace.records.push(StepRecord {
            t,
            n_star: (t == 0).then_some(n_star),
            j_star: (t == 0).then_some(j_star),
            solve_time: if opts.zero_times { 0.0 } else { elapsed },
            margin: state_margin.min(input_margin),
            iss_slack: None,
        });
        trace.w_tilde.push(ctrl.net_disturbance(&x, &u, &x_next));
        trace.inputs.push(u);
        trace.states.push(x_next);
    }
    let last = trace.states.len() - 1;
    let x_last = trace.states[last].clone();
    check_state(&mut trace, ctrl, last, &x_last);
    trace
}

/// `grid_n` points per axis over the bounding box of `X`, endpoints
/// included, keeping those inside `X`.
pub fn state_grid(ctrl: &Controller, grid_n: usize) -> Vec<DVector<f64>> {
    let (lo, hi) = ctrl.system.x().bounding_box().expect("X is compact");
    let d = lo.len();
    let axis = |i: usize, k: usize| {
        if grid_n == 1 {
            0.5 * (lo[i] + hi[i])
        } else {
            lo[i] + (hi[i] - lo[i]) * k as f64 / (grid_n - 1) as f64
        }
    };
    let total = grid_n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(d, |i, _| {
                let k = idx % grid_n;
                idx /= grid_n;
                axis(i, k)
            })
        })
        .filter(|x| ctrl.system.x().contains(x, 1e-9))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub state: Vec<f64>,
    pub feasible: bool,
    pub n_star: Option<usize>,
    pub j_star: Option<f64>,
    /// No horizon was infeasible with a certificate nor solved; counted as
    /// not feasible.
    pub numerical_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaEstimate {
    pub grid_n: usize,
    pub points: Vec<PointResult>,
    /// Convex hull of the feasible points (two-dimensional systems only).
    pub hull: Option<PointCloudHull2D>,
    pub area: Option<f64>,
}

impl RoaEstimate {
    pub fn feasible_mask(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.feasible).collect()
    }

    pub fn num_feasible(&self) -> usize {
        self.points.iter().filter(|p| p.feasible).count()
    }
}

fn roa_from<F>(grid: Vec<DVector<f64>>, grid_n: usize, solve: F) -> RoaEstimate
where
    F: Fn(&DVector<f64>) -> Result<(usize, f64), ControllerError> + Sync,
{
    let points: Vec<PointResult> = grid
        .par_iter()
        .map(|x| {
            let r = solve(x);
            PointResult {
                state: x.iter().copied().collect(),
                feasible: r.is_ok(),
                n_star: r.as_ref().ok().map(|s| s.0),
                j_star: r.as_ref().ok().map(|s| s.1),
                numerical_failure: matches!(r, Err(ControllerError::NumericalFailure { .. })),
            }
        })
        .collect();
    let (hull, area) = if grid.first().map(|x| x.len()) == Some(2) {
        let feasible: Vec<[f64; 2]> = points.iter().filter(|p| p.feasible).map(|p| [p.state[0], p.state[1]]).collect();
        let hull = hull_2d(&feasible);
        let area = hull.area;
        (Some(hull), Some(area))
    } else {
        (None, None)
    };
    RoaEstimate {
        grid_n,
        points,
        hull,
        area,
    }
}

/// Feasibility of the adaptive controller on a uniform grid.
pub fn estimate_roa(ctrl: &Controller, grid_n: usize) -> RoaEstimate {
    roa_from(state_grid(ctrl, grid_n), grid_n, |x| ctrl.adaptive_solve(x).map(|s| (s.n_star, s.j_star)))
}

/// Same grid as [`estimate_roa`], solved by the baseline.
pub fn estimate_roa_baseline(ctrl: &Controller, baseline: &BaselineController, grid_n: usize) -> RoaEstimate {
    roa_from(state_grid(ctrl, grid_n), grid_n, |x| baseline.solve(x).map(|s| (s.n_star, s.j_star)))
}

pub const MIN_BENCH_REPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub horizon: usize,
    pub reps: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Status of the last repetition.
    pub status: SolveStatus,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Wall-clock seconds to build and solve each horizon problem from scratch
/// at the given states (cycled), after one untimed warm-up solve.
pub fn benchmark(ctrl: &Controller, horizons: &[usize], reps: usize, states: &[DVector<f64>]) -> Result<Vec<BenchmarkRow>, ControllerError> {
    let sys = &ctrl.system;
    let cfg = &ctrl.config;
    if reps < MIN_BENCH_REPS || states.is_empty() {
        return Err(ControllerError::InvalidConfig(format!(
            "benchmark needs at least {MIN_BENCH_REPS} repetitions and one state"
        )));
    }
    let mut rows = Vec::new();
    for &n in horizons {
        if n == 0 || n > cfg.horizon {
            return Err(ControllerError::InvalidConfig(format!("horizon {n} outside 1..={}", cfg.horizon)));
        }
        let run = |x: &DVector<f64>| -> Result<(f64, SolveStatus), ControllerError> {
            let start = Instant::now();
            let template = if n == 1 {
                case1_template(sys, cfg)?
            } else {
                lumped_template(sys, &cfg.p, &cfg.r, &cfg.terminal.p_n, &cfg.terminal.set, cfg.bound.w_tilde_max, n)?
            };
            let solved = solve_horizon(&template, x);
            Ok((start.elapsed().as_secs_f64(), solved.record.status))
        };
        run(&states[0])?;
        let mut times = Vec::with_capacity(reps);
        let mut status = SolveStatus::Optimal;
        for i in 0..reps {
            let (t, s) = run(&states[i % states.len()])?;
            times.push(t);
            status = s;
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchmarkRow {
            horizon: n,
            reps,
            mean: times.iter().sum::<f64>() / reps.max(1) as f64,
            median: median(&times),
            min: times.first().copied().unwrap_or(0.0),
            max: times.last().copied().unwrap_or(0.0),
            status,
        });
    }
    Ok(rows)
}
