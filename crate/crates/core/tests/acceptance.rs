//! Acceptance checks for the controller library. Runs without the libtest
//! harness so the timing criteria see an otherwise idle machine; prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rmpc::baseline::BaselineController;
use rmpc::controller::{
    build_case1, lumped_template, lyapunov_residual, synthesize_terminal, Controller, MpcConfig, StabilityScreen,
    TerminalComponents,
};
use rmpc::geometry::{max_robust_invariant, InvariantOutcome, Polytope, DEFAULT_MAX_ITER};
use rmpc::prediction::{FeedbackGainStack, StackedDynamics};
use rmpc::problem::Problem;
use rmpc::qp::QuadraticProgram;
use rmpc::simulator::{benchmark, estimate_roa, estimate_roa_baseline, simulate_closed_loop, simulate_rollout, SimulationOptions};
use rmpc::system::{sample_realization, SamplingMode, UncertainSystem};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn boxed(lo: &[f64], hi: &[f64]) -> Polytope {
    Polytope::from_box(&DVector::from_column_slice(lo), &DVector::from_column_slice(hi)).unwrap()
}

fn corners(lo: &[f64], hi: &[f64]) -> Vec<DVector<f64>> {
    let d = lo.len();
    (0..1usize << d)
        .map(|mask| DVector::from_fn(d, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

fn screen() -> StabilityScreen {
    StabilityScreen {
        vertex_radii: Vec::new(),
        nominal_radius: 0.0,
        hull_samples: 0,
        max_hull_radius: 0.0,
        hull_violations: 0,
    }
}

fn default_controller() -> Controller {
    Controller::from_problem(&Problem::default_example()).expect("default example synthesizes")
}

/// Initial states for the closed-loop campaigns, spread over the feasible
/// region of the default example.
const START_STATES: [[f64; 2]; 5] = [[1.0, -1.0], [-3.0, 4.0], [4.5, -2.5], [-6.0, 6.0], [2.0, 5.0]];

struct Campaign {
    runs: usize,
    steps: usize,
    infeasible: usize,
    numerical: usize,
    constraint: usize,
    descent: usize,
    checked_descent: usize,
    elapsed: Duration,
}

fn closed_loop_campaign(ctrl: &Controller) -> Result<Campaign, String> {
    for x in START_STATES {
        let x = DVector::from_column_slice(&x);
        ensure!(ctrl.adaptive_solve(&x).is_ok(), "start state {:?} is not feasible", x.as_slice());
    }
    let start = Instant::now();
    let jobs: Vec<(usize, u64)> = (0..START_STATES.len()).flat_map(|i| (0..100u64).map(move |s| (i, s))).collect();
    let traces: Vec<_> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mode = if seed % 2 == 0 { SamplingMode::Uniform } else { SamplingMode::Adversarial };
            let real = sample_realization(&ctrl.system, 50, seed, mode);
            let x0 = DVector::from_column_slice(&START_STATES[i]);
            simulate_closed_loop(ctrl, &x0, 50, &real, SimulationOptions::default())
        })
        .collect();
    let elapsed = start.elapsed();
    let mut c = Campaign {
        runs: traces.len(),
        steps: 0,
        infeasible: 0,
        numerical: 0,
        constraint: 0,
        descent: 0,
        checked_descent: 0,
        elapsed,
    };
    for t in &traces {
        c.steps += t.inputs.len();
        c.infeasible += t.infeasible_steps();
        c.numerical += t
            .violations
            .iter()
            .filter(|v| matches!(v, rmpc::simulator::Violation::NumericalFailure { .. }))
            .count();
        c.constraint += t.constraint_violations();
        c.descent += t.descent_violations();
        c.checked_descent += t.records.iter().filter(|r| r.iss_slack.is_some()).count();
    }
    Ok(c)
}

fn criterion_1(ctrl: &Controller) -> Outcome {
    let x = DVector::from_column_slice(&[1.0, -1.0]);
    let rows = benchmark(ctrl, &[1, 2, 3, 4, 5], 30, &[x]).map_err(|e| e.to_string())?;
    let medians: Vec<f64> = rows.iter().map(|r| r.median).collect();
    ensure!(medians.iter().all(|t| t.is_finite() && *t > 0.0), "non-positive timing {medians:?}");
    ensure!(medians[1..].iter().all(|&t| t > medians[0]), "horizon 1 is not the cheapest: {medians:?}");
    ensure!(medians.windows(2).all(|w| w[1] >= w[0]), "medians not increasing in the horizon: {medians:?}");
    Ok(format!(
        "median build+solve seconds for horizons 1..5: {}",
        medians.iter().map(|t| format!("{t:.2e}")).collect::<Vec<_>>().join(", ")
    ))
}

fn criterion_2(c: &Campaign) -> Outcome {
    ensure!(c.infeasible == 0, "{} infeasible steps", c.infeasible);
    ensure!(c.numerical == 0, "{} numerical failures", c.numerical);
    ensure!(c.constraint == 0, "{} constraint violations", c.constraint);
    ensure!(c.steps == c.runs * 50, "only {} of {} steps completed", c.steps, c.runs * 50);
    ensure!(c.elapsed < Duration::from_secs(300), "took {:.1?}", c.elapsed);
    Ok(format!("{} runs, {} steps, 0 failures, {:.1?}", c.runs, c.steps, c.elapsed))
}

fn criterion_3(c: &Campaign) -> Outcome {
    ensure!(c.checked_descent == c.steps, "descent checked on {} of {} steps", c.checked_descent, c.steps);
    ensure!(c.descent == 0, "{} cost-descent violations", c.descent);
    Ok(format!("{} descent checks, 0 violations", c.checked_descent))
}

fn criterion_4(ctrl: &Controller) -> Outcome {
    let sys = &ctrl.system;
    let term = &ctrl.config.terminal;
    let set = &term.set;
    let (lo, hi) = set.bounding_box().map_err(|e| e.to_string())?;
    let (wlo, whi) = sys.w().bounding_box().map_err(|e| e.to_string())?;
    ensure!(sys.w().as_box().is_some(), "W of the default example is expected to be a box");
    let w_vertices = corners(wlo.as_slice(), whi.as_slice());
    let closed_loop = sys.closed_loop_vertices(&term.k);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut samples = Vec::new();
    while samples.len() < 1000 {
        let x = DVector::from_fn(2, |i, _| rng.gen_range(lo[i]..=hi[i]));
        if set.contains(&x, 0.0) {
            samples.push(x);
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for x in &samples {
        for a in &closed_loop {
            for w in &w_vertices {
                let next = a * x + w;
                worst = worst.max(-set.margin(&next));
            }
        }
    }
    ensure!(worst <= 1e-7, "successor leaves the terminal set by {worst:e}");
    let template = ctrl.template(1);
    let mut worst_row = f64::NEG_INFINITY;
    let mut unsolved = 0;
    for x in &samples {
        let prob = template.instantiate(x);
        let u = &term.k * x;
        let (g, h) = prob.qp.inequalities();
        worst_row = worst_row.max((g * &u - h).max());
        if rmpc::controller::solve_horizon(template, x).solution.is_none() {
            unsolved += 1;
        }
    }
    ensure!(worst_row <= 1e-7, "u = Kx violates a horizon-1 row by {worst_row:e}");
    ensure!(unsolved == 0, "{unsolved} sampled terminal states not solved at horizon 1");
    Ok(format!(
        "1000 states x {} models x {} disturbances, worst facet excess {worst:.1e}; Kx feasible everywhere",
        closed_loop.len(),
        w_vertices.len()
    ))
}

/// Convex polygon `{u : a u <= b}` clipped from a large square.
fn clip(rows: &[([f64; 2], f64)]) -> Vec<[f64; 2]> {
    let mut poly = vec![[-1e3, -1e3], [1e3, -1e3], [1e3, 1e3], [-1e3, 1e3]];
    for &(a, b) in rows {
        let val = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
        let mut next = Vec::new();
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let (vp, vq) = (val(&p), val(&q));
            if vp <= 0.0 {
                next.push(p);
            }
            if (vp < 0.0 && vq > 0.0) || (vp > 0.0 && vq < 0.0) {
                let t = vp / (vp - vq);
                next.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        poly = next;
        if poly.is_empty() {
            break;
        }
    }
    poly
}

fn point_polygon_distance(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let inside = (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
    });
    if inside {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let one = |x: &[[f64; 2]], y: &[[f64; 2]]| x.iter().map(|&p| point_polygon_distance(p, y)).fold(0.0, f64::max);
    one(a, b).max(one(b, a))
}

fn interval_of(prog: &QuadraticProgram) -> Option<(f64, f64)> {
    let (g, h) = prog.inequalities();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..g.nrows() {
        let c = g[(i, 0)];
        if c > 0.0 {
            hi = hi.min(h[i] / c);
        } else if c < 0.0 {
            lo = lo.max(h[i] / c);
        } else if h[i] < 0.0 {
            return None;
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Random instance: system, terminal set, state, and the brute-force rows
/// `f (A_j x + B_k u + w) <= h_f` over vertex pairs and disturbance corners.
fn case1_instance(rng: &mut ChaCha8Rng, d: usize) -> (UncertainSystem, MpcConfig, DVector<f64>, Vec<(Vec<f64>, f64)>) {
    let m = d;
    loop {
        let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let a_bar = DMatrix::from_fn(d, d, |i, j| if i == j { r(0.5, 1.3) } else { r(-0.4, 0.4) });
        let b_bar = DMatrix::from_fn(d, m, |i, j| if i == j { r(0.6, 1.4) } else { r(-0.3, 0.3) });
        let na = 2 + (r(0.0, 2.0) as usize);
        let da: Vec<_> = (0..na).map(|_| DMatrix::from_fn(d, d, |_, _| r(-0.15, 0.15))).collect();
        let db: Vec<_> = (0..2).map(|_| DMatrix::from_fn(d, m, |_, _| r(-0.1, 0.1))).collect();
        let wlo: Vec<f64> = (0..d).map(|_| -r(0.02, 0.15)).collect();
        let whi: Vec<f64> = (0..d).map(|_| r(0.02, 0.15)).collect();
        let ulim = r(1.0, 3.0);
        let sys = UncertainSystem::new(
            a_bar,
            b_bar,
            da,
            db,
            boxed(&wlo, &whi),
            boxed(&vec![-4.0; d], &vec![4.0; d]),
            boxed(&vec![-ulim; m], &vec![ulim; m]),
        )
        .unwrap();
        let set = if d == 1 {
            boxed(&[-r(0.5, 2.0)], &[r(0.5, 2.0)])
        } else {
            let cuts = 3 + (r(0.0, 4.0) as usize);
            let mut hmat = DMatrix::zeros(4 + cuts, 2);
            let mut h = DVector::zeros(4 + cuts);
            for i in 0..2 {
                hmat[(2 * i, i)] = 1.0;
                hmat[(2 * i + 1, i)] = -1.0;
                h[2 * i] = 2.0;
                h[2 * i + 1] = 2.0;
            }
            for c in 0..cuts {
                let angle = r(0.0, std::f64::consts::TAU);
                hmat[(4 + c, 0)] = angle.cos();
                hmat[(4 + c, 1)] = angle.sin();
                h[4 + c] = r(0.6, 1.8);
            }
            Polytope::new(hmat, h).unwrap()
        };
        let x = DVector::from_fn(d, |_, _| r(-0.6, 0.6));
        let terminal = TerminalComponents {
            k: DMatrix::zeros(m, d),
            set: set.clone(),
            p_n: DMatrix::identity(d, d),
            iterations: 0,
            screen: screen(),
        };
        let cfg = MpcConfig::new(&sys, DMatrix::identity(d, d), DMatrix::identity(m, m), 1, terminal).unwrap();

        let mut rows = Vec::new();
        for (a, b) in sys.vertex_pairs() {
            for w in corners(&wlo, &whi) {
                for (f, &fh) in set.hmat().row_iter().zip(set.h().iter()) {
                    let fb = f * &b;
                    let rhs = fh - (f * (&a * &x + &w))[(0, 0)];
                    rows.push((fb.iter().copied().collect(), rhs));
                }
            }
        }
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            rows.push((e.clone(), ulim));
            e[i] = -1.0;
            rows.push((e, ulim));
        }
        // Keep instances whose feasible input set is non-degenerate.
        let nonempty = if d == 1 {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (g, h) in &rows {
                if g[0] > 0.0 {
                    hi = hi.min(h / g[0]);
                } else if g[0] < 0.0 {
                    lo = lo.max(h / g[0]);
                }
            }
            hi - lo > 1e-3
        } else {
            let rows2: Vec<([f64; 2], f64)> = rows.iter().map(|(g, h)| ([g[0], g[1]], *h)).collect();
            clip(&rows2).len() >= 3
        };
        if nonempty {
            return (sys, cfg, x, rows);
        }
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for i in 0..20 {
        let d = if i < 10 { 1 } else { 2 };
        let (sys, cfg, x, rows) = case1_instance(&mut rng, d);
        let prob = build_case1(&sys, &cfg, &x).map_err(|e| e.to_string())?;
        let dist = if d == 1 {
            let (lo, hi) = interval_of(&prob.qp).ok_or("case-1 interval empty")?;
            let (mut olo, mut ohi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (g, h) in &rows {
                if g[0] > 0.0 {
                    ohi = ohi.min(h / g[0]);
                } else if g[0] < 0.0 {
                    olo = olo.max(h / g[0]);
                }
            }
            (lo - olo).abs().max((hi - ohi).abs())
        } else {
            let (g, h) = prob.qp.inequalities();
            let qp_rows: Vec<([f64; 2], f64)> = (0..g.nrows()).map(|r| ([g[(r, 0)], g[(r, 1)]], h[r])).collect();
            let oracle_rows: Vec<([f64; 2], f64)> = rows.iter().map(|(g, h)| ([g[0], g[1]], *h)).collect();
            let (p, q) = (clip(&qp_rows), clip(&oracle_rows));
            ensure!(p.len() >= 3, "instance {i}: case-1 polygon degenerate");
            hausdorff(&p, &q)
        };
        worst = worst.max(dist);
    }
    ensure!(worst <= 1e-6, "Hausdorff distance {worst:e}");
    Ok(format!("10 interval + 10 polygon instances, worst Hausdorff distance {worst:.1e}"))
}

fn criterion_6(ctrl: &Controller) -> Outcome {
    let sys = &ctrl.system;
    let cfg = &ctrl.config;
    let wmax = cfg.bound.w_tilde_max;
    let (d, m) = (sys.state_dim(), sys.input_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gap = 0.0_f64;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut rows_checked = 0;
    for inst in 0..50 {
        let n = 2 + inst % 4;
        let template = lumped_template(sys, &cfg.p, &cfg.r, &cfg.terminal.p_n, &cfg.terminal.set, wmax, n).map_err(|e| e.to_string())?;
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-6.0..6.0));
        let u_bar = DVector::from_fn(m * n, |_, _| rng.gen_range(-3.0..3.0));
        let mut gains = FeedbackGainStack::zeros(n, m, d);
        for k in 1..n {
            for l in 0..k {
                let block = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-0.8..0.8));
                gains.set_block(k, l, &block).map_err(|e| e.to_string())?;
            }
        }
        let prob = template.instantiate(&x);
        let z = prob.layout.encode(&prob.qp, &u_bar, &gains);
        let (g, h) = prob.qp.inequalities();
        let stack = StackedDynamics::new(sys.a_bar(), sys.b_bar(), n).map_err(|e| e.to_string())?;
        let response = &stack.c * gains.matrix() + &stack.g;
        let nominal = &stack.a_stack * &x + &stack.c * &u_bar;
        let samples: Vec<DVector<f64>> = (0..10_000).map(|_| DVector::from_fn(d * n, |_, _| rng.gen_range(-wmax..=wmax))).collect();

        let mut check = |row: usize, f: DVector<f64>, offset: f64, nominal_value: f64, map: &DMatrix<f64>| -> Result<(), String> {
            let weights = map.transpose() * &f;
            let analytic = nominal_value + wmax * weights.abs().sum();
            let value = (g.row(row) * &z)[(0, 0)] - h[row] + offset;
            let gap = (value - analytic).abs() / (1.0 + analytic.abs());
            worst_gap = worst_gap.max(gap);
            let extreme = weights.map(|v| wmax * v.signum());
            ensure!(
                (nominal_value + weights.dot(&extreme) - analytic).abs() <= 1e-9 * (1.0 + analytic.abs()),
                "sign-pattern point misses the analytic bound"
            );
            for w in &samples {
                worst_excess = worst_excess.max(nominal_value + weights.dot(w) - value);
            }
            rows_checked += 1;
            Ok(())
        };
        for &(stage, facet, row) in &prob.layout.state_rows {
            let set = if stage + 1 == n { &cfg.terminal.set } else { sys.x() };
            let fr = set.hmat().row(facet);
            let mut f = DVector::zeros(d * n);
            f.rows_mut(stage * d, d).copy_from(&fr.transpose());
            let nominal_value = f.dot(&nominal);
            check(row, f, set.h()[facet], nominal_value, &response)?;
        }
        let input_map = gains.matrix().clone();
        for &(stage, facet, row) in &prob.layout.input_rows {
            let fr = sys.u().hmat().row(facet);
            let mut f = DVector::zeros(m * n);
            f.rows_mut(stage * m, m).copy_from(&fr.transpose());
            let nominal_value = f.dot(&u_bar);
            check(row, f, sys.u().h()[facet], nominal_value, &input_map)?;
        }
    }
    ensure!(worst_gap <= 1e-9, "tightened row differs from the analytic worst case by {worst_gap:e}");
    ensure!(worst_excess <= 1e-9, "a sampled disturbance exceeds the tightened row by {worst_excess:e}");
    Ok(format!("{rows_checked} rows, worst relative gap {worst_gap:.1e}, sampled rows never exceed the bound"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=2);
        let scale = 1.0 / d as f64;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0) * scale);
        let b = DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        for n in 1..=5 {
            let stack = StackedDynamics::new(&a, &b, n).map_err(|e| e.to_string())?;
            let u = DVector::from_fn(m * n, |_, _| rng.gen_range(-1.0..1.0));
            let w = DVector::from_fn(d * n, |_, _| rng.gen_range(-0.2..0.2));
            let stacked = stack.predict(&x0, &u, Some(&w));
            let mut x = x0.clone();
            for k in 0..n {
                x = &a * &x + &b * u.rows(k * m, m) + w.rows(k * d, d);
                worst = worst.max((stacked.rows(k * d, d) - &x).amax());
            }
        }
    }
    ensure!(worst <= 1e-12, "stacked prediction deviates by {worst:e}");
    Ok(format!("100 systems x horizons 1..5, worst deviation {worst:.1e}"))
}

fn criterion_8(ctrl: &Controller) -> Outcome {
    let problem = Problem::default_example();
    let term = &ctrl.config.terminal;
    let default_res = lyapunov_residual(&ctrl.system, &term.k, &problem.p, &problem.r, &term.p_n);
    ensure!(default_res <= 1e-8, "default example residual {default_res:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let d = 2;
        // Target closed loop: random rotation-scaling with radius < 0.9.
        let (rho, theta) = (rng.gen_range(0.1..0.9), rng.gen_range(0.0..std::f64::consts::PI));
        let acl = DMatrix::from_row_slice(2, 2, &[rho * theta.cos(), -rho * theta.sin(), rho * theta.sin(), rho * theta.cos()]);
        let a_bar = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let k = &acl - &a_bar;
        let sys = UncertainSystem::new(
            a_bar,
            DMatrix::identity(d, d),
            vec![DMatrix::zeros(d, d)],
            vec![DMatrix::zeros(d, d)],
            boxed(&[-0.01, -0.01], &[0.01, 0.01]),
            boxed(&[-5.0, -5.0], &[5.0, 5.0]),
            boxed(&[-20.0, -20.0], &[20.0, 20.0]),
        )
        .map_err(|e| e.to_string())?;
        let l = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let p = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
        let r = DMatrix::identity(d, d) * rng.gen_range(0.1..3.0);
        let t = synthesize_terminal(&sys, &k, &p, &r).map_err(|e| e.to_string())?;
        worst = worst.max(lyapunov_residual(&sys, &k, &p, &r, &t.p_n));
    }
    ensure!(worst <= 1e-8, "random fixture residual {worst:e}");

    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let scalar = UncertainSystem::new(one(1.0), one(1.0), vec![one(0.0)], vec![one(0.0)], boxed(&[-0.1], &[0.1]), boxed(&[-1.0], &[1.0]), boxed(&[-1.0], &[1.0]))
        .map_err(|e| e.to_string())?;
    let t = synthesize_terminal(&scalar, &one(-0.5), &one(1.0), &one(1.0)).map_err(|e| e.to_string())?;
    let p_n = t.p_n[(0, 0)];
    ensure!((p_n - 5.0 / 3.0).abs() <= 1e-10, "scalar terminal cost {p_n}");
    Ok(format!("default residual {default_res:.1e}, worst random residual {worst:.1e}, scalar p_N = {p_n:.12}"))
}

fn criterion_9() -> Outcome {
    let s = boxed(&[-1.0], &[1.0]);
    let acl = [DMatrix::from_element(1, 1, 0.5)];
    let fixed = match max_robust_invariant(&s, &acl, &boxed(&[-0.25], &[0.25]), DEFAULT_MAX_ITER).map_err(|e| e.to_string())? {
        InvariantOutcome::Converged { set, .. } => set,
        InvariantOutcome::Empty { .. } => return Err("fixed-point case reported empty".into()),
    };
    let (lo, hi) = fixed.bounding_box().map_err(|e| e.to_string())?;
    ensure!((lo[0] + 1.0).abs() <= 1e-12 && (hi[0] - 1.0).abs() <= 1e-12, "fixed point [{}, {}]", lo[0], hi[0]);
    let empty = max_robust_invariant(&s, &acl, &boxed(&[-0.6], &[0.6]), DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    ensure!(matches!(empty, InvariantOutcome::Empty { .. }), "disturbance 0.6 should leave nothing invariant");
    Ok("[-1, 1] reproduced; disturbance bound 0.6 gives the empty set".into())
}

fn criterion_10(ctrl: &Controller) -> Outcome {
    let start = Instant::now();
    let problem = Problem::default_example();
    let baseline = BaselineController::from_problem(&problem, &ctrl.config.terminal).map_err(|e| e.to_string())?;
    let proposed = estimate_roa(ctrl, 10);
    let base = estimate_roa_baseline(ctrl, &baseline, 10);
    ensure!(proposed.points.len() == 100, "grid has {} points", proposed.points.len());
    let dominated = base.points.iter().zip(&proposed.points).all(|(b, p)| !b.feasible || p.feasible);
    ensure!(dominated, "a baseline-feasible grid point is infeasible for the adaptive controller");

    let feasible: Vec<DVector<f64>> = proposed
        .points
        .iter()
        .filter(|p| p.feasible)
        .map(|p| DVector::from_column_slice(&p.state))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..feasible.len()).flat_map(|i| (0..20u64).map(move |s| (i, s))).collect();
    let failures: usize = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mode = if seed % 2 == 0 { SamplingMode::Uniform } else { SamplingMode::Adversarial };
            let real = sample_realization(&ctrl.system, 50, 1000 + seed, mode);
            let trace = simulate_rollout(ctrl, &feasible[i], 50, &real, SimulationOptions::default());
            usize::from(!trace.is_clean() || trace.inputs.len() != 50)
        })
        .sum();
    ensure!(failures == 0, "{failures} roll-outs violated a constraint");

    let rows = benchmark(ctrl, &[1, 2, 3, 4, 5], 30, &[DVector::from_column_slice(&[1.0, -1.0])]).map_err(|e| e.to_string())?;
    let medians: Vec<f64> = rows.iter().map(|r| r.median).collect();
    ensure!(medians.windows(2).all(|w| w[1] >= w[0]), "medians not monotone: {medians:?}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:.1?}");
    Ok(format!(
        "feasible {}/100 vs baseline {}/100, area {:.1} vs {:.1}; {} roll-outs clean; {elapsed:.1?}",
        proposed.num_feasible(),
        base.num_feasible(),
        proposed.area.unwrap_or(0.0),
        base.area.unwrap_or(0.0),
        jobs.len()
    ))
}

fn main() {
    let ctrl = default_controller();
    let campaign = closed_loop_campaign(&ctrl);
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "horizon cost ordering", criterion_1(&ctrl)),
        (2, "recursive feasibility", campaign.as_ref().map_err(Clone::clone).and_then(criterion_2)),
        (3, "cost descent", campaign.as_ref().map_err(Clone::clone).and_then(criterion_3)),
        (4, "terminal set soundness", criterion_4(&ctrl)),
        (5, "horizon-1 exactness", criterion_5()),
        (6, "lumped robust counterpart", criterion_6(&ctrl)),
        (7, "stacked dynamics", criterion_7()),
        (8, "terminal cost", criterion_8(&ctrl)),
        (9, "invariant-set oracles", criterion_9()),
        (10, "comparative properties", criterion_10(&ctrl)),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
