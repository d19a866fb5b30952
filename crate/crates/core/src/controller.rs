//! Adaptive-horizon robust MPC.
//!
//! At every state the controller solves one problem per horizon `1..=N` and
//! applies the first input of the cheapest feasible one:
//!
//! * horizon 1 propagates the model error exactly: the successor must lie in
//!   the terminal set for every vertex pair `(dA_j, dB_k)` and every `w`;
//! * horizons `n >= 2` lump model error and disturbance into `w~` with
//!   `|w~|_inf <= w~max` and use the causal policy
//!   `u_k = u_bar_k + sum_{l<k} M_{k,l} w~_l`. The worst case of a row `f` of
//!   the stacked constraint over the box is `w~max |(C M + G)' f|_1`, which is
//!   encoded with one auxiliary variable per entry.
//!
//! Constraint matrices do not depend on the measured state, so every horizon
//! is compiled once into a [`HorizonTemplate`]; a solve only refreshes the
//! offsets and the linear cost.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{max_robust_invariant, GeometryError, InvariantOutcome, Polytope, DEFAULT_MAX_ITER, SET_TOL};
use crate::prediction::{policy_input, FeedbackGainStack, PredictionError, StackedDynamics};
use crate::problem::Problem;
use crate::qp::{solve_qp, QuadraticProgram, SolveOutcome, SolveStatus};
use crate::system::{dirichlet_ones, net_additive_bound, NetAdditiveBound, SystemError, UncertainSystem};

/// Relative cost difference below which two horizons count as tied; the
/// shorter one wins.
pub const TIE_TOL: f64 = 1e-9;

/// Allowed slack in the cost-descent check, relative to `1 + |J*|`.
pub const ISS_TOL: f64 = 1e-6;

const HULL_SAMPLES: usize = 1000;
const HULL_SEED: u64 = 0x5eed;
const LYAPUNOV_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone)]
pub enum ControllerError {
    #[error("closed loop at vertex pair (deltaA #{a_vertex}, deltaB #{b_vertex}) has spectral radius {radius:.6} >= 1")]
    VertexUnstable {
        a_vertex: usize,
        b_vertex: usize,
        radius: f64,
    },
    #[error("terminal set is empty")]
    EmptyTerminalSet,
    #[error("terminal cost series does not converge (nominal closed-loop spectral radius {0:.6})")]
    LyapunovDivergence(f64),
    #[error("terminal set fails the invariance re-check by {0:e}")]
    InvarianceCheckFailed(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every horizon is infeasible")]
    AllHorizonsInfeasible { per_horizon: Vec<HorizonRecord> },
    #[error("no horizon could be solved reliably")]
    NumericalFailure { per_horizon: Vec<HorizonRecord> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

/// Assumption screens run during terminal synthesis.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityScreen {
    /// `(a_vertex, b_vertex, spectral radius)` of every vertex closed loop.
    pub vertex_radii: Vec<(usize, usize, f64)>,
    pub nominal_radius: f64,
    pub hull_samples: usize,
    pub max_hull_radius: f64,
    /// Sampled interior combinations with spectral radius >= 1. Vertex
    /// stability does not imply stability on the hull.
    pub hull_violations: usize,
}

impl StabilityScreen {
    pub fn hull_passed(&self) -> bool {
        self.hull_violations == 0
    }
}

#[derive(Debug, Clone)]
pub struct TerminalComponents {
    pub k: DMatrix<f64>,
    /// Maximal robust positive invariant set of the terminal controller.
    pub set: Polytope,
    /// Solution of `P_N = Q + Acl' P_N Acl`, `Q = P + K'RK`.
    pub p_n: DMatrix<f64>,
    pub iterations: usize,
    pub screen: StabilityScreen,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of `-P_N + P + K'RK + Acl' P_N Acl`.
pub fn lyapunov_residual(sys: &UncertainSystem, k: &DMatrix<f64>, p: &DMatrix<f64>, r: &DMatrix<f64>, p_n: &DMatrix<f64>) -> f64 {
    let acl = sys.nominal_closed_loop(k);
    let m = -p_n + p + k.transpose() * r * k + acl.transpose() * p_n * &acl;
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Sums `sum_k (Acl')^k Q Acl^k` by squaring: after step `i` the partial sum
/// covers `2^i` terms.
fn lyapunov_series(acl: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut sum = q.clone();
    let mut power = acl.clone();
    for _ in 0..64 {
        let term = power.transpose() * &sum * &power;
        sum += &term;
        power = &power * &power;
        if !sum.iter().all(|v| v.is_finite()) {
            return None;
        }
        if term.amax() <= 1e-17 * sum.amax() {
            return Some((&sum + sum.transpose()) * 0.5);
        }
    }
    None
}

fn screen_stability(sys: &UncertainSystem, k: &DMatrix<f64>) -> Result<StabilityScreen, ControllerError> {
    let mut vertex_radii = Vec::new();
    for (ia, da) in sys.delta_a().iter().enumerate() {
        for (ib, db) in sys.delta_b().iter().enumerate() {
            let acl = sys.a_bar() + da + (sys.b_bar() + db) * k;
            let radius = spectral_radius(&acl);
            if !(radius < 1.0) {
                return Err(ControllerError::VertexUnstable {
                    a_vertex: ia,
                    b_vertex: ib,
                    radius,
                });
            }
            vertex_radii.push((ia, ib, radius));
        }
    }
    let (na, nb) = (sys.delta_a().len(), sys.delta_b().len());
    let mut max_hull_radius = 0.0_f64;
    let mut hull_violations = 0;
    let hull_samples = if na * nb > 1 { HULL_SAMPLES } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(HULL_SEED);
    for _ in 0..hull_samples {
        let wa = dirichlet_ones(&mut rng, na);
        let wb = dirichlet_ones(&mut rng, nb);
        let da = sys.delta_a().iter().zip(&wa).fold(DMatrix::zeros(sys.state_dim(), sys.state_dim()), |acc, (v, c)| acc + v * *c);
        let db = sys.delta_b().iter().zip(&wb).fold(DMatrix::zeros(sys.state_dim(), sys.input_dim()), |acc, (v, c)| acc + v * *c);
        let radius = spectral_radius(&(sys.a_bar() + da + (sys.b_bar() + db) * k));
        max_hull_radius = max_hull_radius.max(radius);
        if !(radius < 1.0) {
            hull_violations += 1;
        }
    }
    Ok(StabilityScreen {
        vertex_radii,
        nominal_radius: spectral_radius(&sys.nominal_closed_loop(k)),
        hull_samples,
        max_hull_radius,
        hull_violations,
    })
}

/// `X ∩ {x : H_u K x <= h_u}`.
pub fn admissible_states(sys: &UncertainSystem, k: &DMatrix<f64>) -> Result<Polytope, ControllerError> {
    let input_rows = Polytope::new(sys.u().hmat() * k, sys.u().h().clone())?;
    Ok(sys.x().intersect(&input_rows)?)
}

/// Largest violation of the one-step robust invariance condition
/// `support_S(f A) + support_W(f) <= h_f` over rows `f` of `set` and the given
/// closed-loop matrices.
pub fn invariance_violation(set: &Polytope, closed_loop: &[DMatrix<f64>], w: &Polytope) -> Result<f64, GeometryError> {
    let mut worst = f64::NEG_INFINITY;
    for (row, &offset) in set.hmat().row_iter().zip(set.h().iter()) {
        let f = row.transpose();
        let sw = w.support(&f)?;
        for a in closed_loop {
            let s = set.support(&(a.transpose() * &f))?;
            worst = worst.max(s + sw - offset);
        }
    }
    Ok(worst)
}

fn check_cost_weights(sys: &UncertainSystem, k: &DMatrix<f64>, p: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), ControllerError> {
    let (d, m) = (sys.state_dim(), sys.input_dim());
    if k.shape() != (m, d) {
        return Err(ControllerError::InvalidConfig(format!("K must be {m}x{d}")));
    }
    for (name, mat, n) in [("P", p, d), ("R", r, m)] {
        if mat.shape() != (n, n) || (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) || mat.clone().cholesky().is_none() {
            return Err(ControllerError::InvalidConfig(format!("{name} must be a symmetric positive definite {n}x{n} matrix")));
        }
    }
    Ok(())
}

/// Terminal set and cost for the terminal controller `u = Kx`.
pub fn synthesize_terminal(sys: &UncertainSystem, k: &DMatrix<f64>, p: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<TerminalComponents, ControllerError> {
    check_cost_weights(sys, k, p, r)?;
    let screen = screen_stability(sys, k)?;
    let closed_loop = sys.closed_loop_vertices(k);
    let omega0 = admissible_states(sys, k)?;
    let (set, iterations) = match max_robust_invariant(&omega0, &closed_loop, sys.w(), DEFAULT_MAX_ITER)? {
        InvariantOutcome::Converged { set, iterations } => (set, iterations),
        InvariantOutcome::Empty { .. } => return Err(ControllerError::EmptyTerminalSet),
    };
    let violation = invariance_violation(&set, &closed_loop, sys.w())?;
    if violation > SET_TOL {
        return Err(ControllerError::InvarianceCheckFailed(violation));
    }
    let acl = sys.nominal_closed_loop(k);
    let q = p + k.transpose() * r * k;
    let p_n = lyapunov_series(&acl, &q).ok_or(ControllerError::LyapunovDivergence(screen.nominal_radius))?;
    if lyapunov_residual(sys, k, p, r, &p_n) > LYAPUNOV_TOL * p_n.amax().max(1.0) || p_n.clone().cholesky().is_none() {
        return Err(ControllerError::LyapunovDivergence(screen.nominal_radius));
    }
    Ok(TerminalComponents {
        k: k.clone(),
        set,
        p_n,
        iterations,
        screen,
    })
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Longest horizon in the adaptive bank.
    pub horizon: usize,
    pub terminal: TerminalComponents,
    pub bound: NetAdditiveBound,
}

impl MpcConfig {
    pub fn new(sys: &UncertainSystem, p: DMatrix<f64>, r: DMatrix<f64>, horizon: usize, terminal: TerminalComponents) -> Result<Self, ControllerError> {
        if horizon == 0 {
            return Err(ControllerError::InvalidConfig("horizon must be at least 1".into()));
        }
        check_cost_weights(sys, &terminal.k, &p, &r)?;
        Ok(Self {
            p,
            r,
            horizon,
            terminal,
            bound: net_additive_bound(sys)?,
        })
    }

    /// Synthesizes the terminal components and the disturbance bound.
    pub fn synthesize(sys: &UncertainSystem, k: &DMatrix<f64>, p: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Result<Self, ControllerError> {
        let terminal = synthesize_terminal(sys, k, p, r)?;
        Self::new(sys, p.clone(), r.clone(), horizon, terminal)
    }

    pub fn from_problem(problem: &Problem) -> Result<Self, ControllerError> {
        Self::synthesize(&problem.system, &problem.k, &problem.p, &problem.r, problem.horizon)
    }
}

/// Which variables of a horizon problem mean what.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub horizon: usize,
    pub m: usize,
    pub d: usize,
    /// `(k, l, row, col)` of the gain entry carried by variable
    /// `num_inputs + i`.
    pub gain_entries: Vec<(usize, usize, usize, usize)>,
    /// Auxiliary magnitude variables occupy `aux_start..aux_start + num_aux`.
    pub aux_start: usize,
    pub num_aux: usize,
    /// `(stage, facet, qp row)` of every robust state row. For horizon 1
    /// with exact propagation several rows share a facet.
    pub state_rows: Vec<(usize, usize, usize)>,
    /// `(stage, facet, qp row)` of every input row.
    pub input_rows: Vec<(usize, usize, usize)>,
}

impl VariableLayout {
    pub fn num_inputs(&self) -> usize {
        self.m * self.horizon
    }

    pub fn num_vars(&self) -> usize {
        self.aux_start + self.num_aux
    }

    /// Nominal inputs and gains encoded in a primal solution.
    pub fn decode(&self, z: &DVector<f64>) -> (DVector<f64>, FeedbackGainStack) {
        let u_bar = z.rows(0, self.num_inputs()).into_owned();
        let mut gains = DMatrix::zeros(self.m * self.horizon, self.d * self.horizon);
        for (i, &(k, l, r, c)) in self.gain_entries.iter().enumerate() {
            gains[(k * self.m + r, l * self.d + c)] = z[self.num_inputs() + i];
        }
        let gains = FeedbackGainStack::from_matrix(self.horizon, self.m, self.d, gains)
            .expect("layout only places strictly causal entries");
        (u_bar, gains)
    }

    /// Variable vector for given `(u_bar, M)` with every auxiliary variable
    /// at its smallest feasible value for `prog`.
    pub fn encode(&self, prog: &QuadraticProgram, u_bar: &DVector<f64>, gains: &FeedbackGainStack) -> DVector<f64> {
        let mut z = DVector::zeros(self.num_vars());
        z.rows_mut(0, self.num_inputs()).copy_from(u_bar);
        for (i, &(k, l, r, c)) in self.gain_entries.iter().enumerate() {
            z[self.num_inputs() + i] = gains.matrix()[(k * self.m + r, l * self.d + c)];
        }
        let (g, h) = prog.inequalities();
        for a in self.aux_start..self.num_vars() {
            let mut value = 0.0_f64;
            for row in 0..g.nrows() {
                if g[(row, a)] == -1.0 && self.is_aux_row(row) {
                    value = value.max(g.row(row).transpose().dot(&z) - h[row]);
                }
            }
            z[a] = value;
        }
        z
    }

    fn is_aux_row(&self, row: usize) -> bool {
        !self.state_rows.iter().any(|r| r.2 == row) && !self.input_rows.iter().any(|r| r.2 == row)
    }
}

/// Horizon problem with the measured state left symbolic:
/// offsets `h0 - Hx x`, linear cost `Qx x` and constant `x' O x`.
#[derive(Debug, Clone)]
pub struct HorizonTemplate {
    pub layout: VariableLayout,
    /// Program at `x = 0`; instances share its matrices.
    base: QuadraticProgram,
    h0: DVector<f64>,
    h_x: DMatrix<f64>,
    q_x: DMatrix<f64>,
    offset: DMatrix<f64>,
    /// `C` and `A_stack` for the nominal cost of candidate policies.
    stack: StackedDynamics,
}

/// A horizon problem instantiated at a state.
#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub qp: QuadraticProgram,
    /// Cost terms independent of the decision variables; the horizon cost is
    /// `qp.objective(z) + cost_offset`.
    pub cost_offset: f64,
    pub layout: VariableLayout,
}

impl HorizonTemplate {
    pub fn instantiate(&self, x: &DVector<f64>) -> HorizonProblem {
        let h = &self.h0 - &self.h_x * x;
        let q = &self.q_x * x;
        let qp = self
            .base
            .with_vectors(q, h, DVector::zeros(0))
            .expect("template data is consistent and finite");
        HorizonProblem {
            qp,
            cost_offset: x.dot(&(&self.offset * x)),
            layout: self.layout.clone(),
        }
    }

    /// `x'Px + sum_{k<n-1} x_k'P x_k + x_n' P_N x_n + sum u_k'R u_k` along the
    /// nominal prediction driven by `u_bar`.
    pub fn nominal_cost(&self, x: &DVector<f64>, u_bar: &DVector<f64>) -> f64 {
        let n = self.layout.num_inputs();
        let q_block = self.base.cost_matrix().view((0, 0), (n, n));
        let q_lin = self.q_x.rows(0, n) * x;
        0.5 * u_bar.dot(&(q_block * u_bar)) + q_lin.dot(u_bar) + x.dot(&(&self.offset * x))
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    pub fn stack(&self) -> &StackedDynamics {
        &self.stack
    }
}

fn base_program(q_mat: DMatrix<f64>, g: DMatrix<f64>, h0: &DVector<f64>) -> Result<QuadraticProgram, ControllerError> {
    let n = q_mat.nrows();
    QuadraticProgram::with_inequalities(q_mat, DVector::zeros(n), g, h0.clone())
        .map_err(|e| ControllerError::InvalidConfig(format!("horizon problem data: {e}")))
}

/// Cost blocks shared by both problem classes.
fn cost_template(
    stack: &StackedDynamics,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_n: &DMatrix<f64>,
    num_vars: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = stack.horizon;
    let d = stack.state_dim();
    let m = stack.input_dim();
    let mut qx = DMatrix::zeros(d * n, d * n);
    for i in 0..n {
        let block = if i + 1 == n { p_n } else { p };
        qx.view_mut((i * d, i * d), (d, d)).copy_from(block);
    }
    let mut r_bar = DMatrix::zeros(m * n, m * n);
    for i in 0..n {
        r_bar.view_mut((i * m, i * m), (m, m)).copy_from(r);
    }
    let ct_qx = stack.c.transpose() * &qx;
    let hess = (&ct_qx * &stack.c + &r_bar) * 2.0;
    let hess = (&hess + hess.transpose()) * 0.5;
    let mut q_mat = DMatrix::zeros(num_vars, num_vars);
    q_mat.view_mut((0, 0), (m * n, m * n)).copy_from(&hess);
    let mut q_x = DMatrix::zeros(num_vars, d);
    q_x.rows_mut(0, m * n).copy_from(&(&ct_qx * &stack.a_stack * 2.0));
    let offset = p + stack.a_stack.transpose() * &qx * &stack.a_stack;
    let offset = (&offset + offset.transpose()) * 0.5;
    (q_mat, q_x, offset)
}

/// Exact one-step problem: `u` must steer every vertex model into the
/// terminal set against every disturbance.
pub fn case1_template(sys: &UncertainSystem, cfg: &MpcConfig) -> Result<HorizonTemplate, ControllerError> {
    let (d, m) = (sys.state_dim(), sys.input_dim());
    let set = &cfg.terminal.set;
    let pairs = sys.vertex_pairs();
    let tightened: Vec<f64> = set
        .hmat()
        .row_iter()
        .zip(set.h().iter())
        .map(|(f, &h)| sys.w().support(&f.transpose()).map(|s| h - s))
        .collect::<Result<_, _>>()?;
    let nf = set.num_constraints();
    let nu = sys.u().num_constraints();
    let rows = pairs.len() * nf + nu;
    let mut g = DMatrix::zeros(rows, m);
    let mut h0 = DVector::zeros(rows);
    let mut h_x = DMatrix::zeros(rows, d);
    let mut state_rows = Vec::new();
    let mut input_rows = Vec::new();
    let mut row = 0;
    for (a, b) in &pairs {
        let fa = set.hmat() * a;
        let fb = set.hmat() * b;
        for i in 0..nf {
            g.row_mut(row).copy_from(&fb.row(i));
            h_x.row_mut(row).copy_from(&fa.row(i));
            h0[row] = tightened[i];
            state_rows.push((0, i, row));
            row += 1;
        }
    }
    for i in 0..nu {
        g.row_mut(row).copy_from(&sys.u().hmat().row(i));
        h0[row] = sys.u().h()[i];
        input_rows.push((0, i, row));
        row += 1;
    }
    let stack = StackedDynamics::new(sys.a_bar(), sys.b_bar(), 1)?;
    let (q_mat, q_x, offset) = cost_template(&stack, &cfg.p, &cfg.r, &cfg.terminal.p_n, m);
    Ok(HorizonTemplate {
        layout: VariableLayout {
            horizon: 1,
            m,
            d,
            gain_entries: Vec::new(),
            aux_start: m,
            state_rows,
            input_rows,
            num_aux: 0,
        },
        base: base_program(q_mat, g, &h0)?,
        h0,
        h_x,
        q_x,
        offset,
        stack,
    })
}

struct RowBuilder {
    coeffs: Vec<Vec<(usize, f64)>>,
    h0: Vec<f64>,
    h_x: Vec<DVector<f64>>,
}

impl RowBuilder {
    fn push(&mut self, coeffs: Vec<(usize, f64)>, h0: f64, h_x: DVector<f64>) -> usize {
        self.coeffs.push(coeffs);
        self.h0.push(h0);
        self.h_x.push(h_x);
        self.h0.len() - 1
    }
}

/// Lumped problem over `n` steps with terminal set `terminal_set` and
/// disturbance box radius `w_tilde_max`. Valid for every `n >= 1`.
pub fn lumped_template(
    sys: &UncertainSystem,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_n: &DMatrix<f64>,
    terminal_set: &Polytope,
    w_tilde_max: f64,
    n: usize,
) -> Result<HorizonTemplate, ControllerError> {
    let (d, m) = (sys.state_dim(), sys.input_dim());
    let stack = StackedDynamics::new(sys.a_bar(), sys.b_bar(), n)?;
    let nu = m * n;

    let mut gain_entries = Vec::new();
    let mut gain_index = vec![vec![Vec::new(); n]; n];
    for k in 1..n {
        for l in 0..k {
            let mut idx = vec![0; m * d];
            for rr in 0..m {
                for c in 0..d {
                    idx[rr * d + c] = nu + gain_entries.len();
                    gain_entries.push((k, l, rr, c));
                }
            }
            gain_index[k][l] = idx;
        }
    }
    let aux_start = nu + gain_entries.len();
    let mut num_aux = 0;
    let mut rows = RowBuilder {
        coeffs: Vec::new(),
        h0: Vec::new(),
        h_x: Vec::new(),
    };
    let mut aux_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut state_rows = Vec::new();
    let mut input_rows = Vec::new();
    let coef_tol = 0.0;

    // Adds a magnitude variable `a >= |lin . z + constant|` and returns it.
    let mut add_aux = |lin: &[(usize, f64)], constant: f64, aux_rows: &mut Vec<(Vec<(usize, f64)>, f64)>| {
        let a = aux_start + num_aux;
        num_aux += 1;
        let mut plus = lin.to_vec();
        plus.push((a, -1.0));
        aux_rows.push((plus, -constant));
        let mut minus: Vec<(usize, f64)> = lin.iter().map(|&(i, v)| (i, -v)).collect();
        minus.push((a, -1.0));
        aux_rows.push((minus, constant));
        a
    };

    for i in 0..n {
        let facets = if i + 1 == n { terminal_set } else { sys.x() };
        // Row vectors f A^(i-l) B for l <= i.
        for (fi, (f, &fh)) in facets.hmat().row_iter().zip(facets.h().iter()).enumerate() {
            let f = f.into_owned();
            let beta: Vec<RowDVector<f64>> = (0..=i).map(|l| &f * stack.power(i - l) * sys.b_bar()).collect();
            let mut coeffs = Vec::new();
            for l in 0..=i {
                for rr in 0..m {
                    let v = beta[l][(0, rr)];
                    if v != 0.0 {
                        coeffs.push((l * m + rr, v));
                    }
                }
            }
            let mut rhs = fh - w_tilde_max * f.iter().map(|v| v.abs()).sum::<f64>();
            for j in 0..i {
                let const_row = &f * stack.power(i - j);
                for c in 0..d {
                    let mut lin = Vec::new();
                    for l in (j + 1)..=i {
                        for rr in 0..m {
                            let v = beta[l][(0, rr)];
                            if v.abs() > coef_tol {
                                lin.push((gain_index[l][j][rr * d + c], v));
                            }
                        }
                    }
                    let constant = const_row[(0, c)];
                    if lin.is_empty() {
                        rhs -= w_tilde_max * constant.abs();
                    } else {
                        let a = add_aux(&lin, constant, &mut aux_rows);
                        coeffs.push((a, w_tilde_max));
                    }
                }
            }
            let h_x = (&f * stack.power(i + 1)).transpose();
            let row = rows.push(coeffs, rhs, h_x);
            state_rows.push((i, fi, row));
        }
    }
    for k in 0..n {
        for (gi, (gu, &hu)) in sys.u().hmat().row_iter().zip(sys.u().h().iter()).enumerate() {
            let mut coeffs: Vec<(usize, f64)> = (0..m).filter(|&rr| gu[rr] != 0.0).map(|rr| (k * m + rr, gu[rr])).collect();
            for j in 0..k {
                for c in 0..d {
                    let lin: Vec<(usize, f64)> = (0..m)
                        .filter(|&rr| gu[rr].abs() > coef_tol)
                        .map(|rr| (gain_index[k][j][rr * d + c], gu[rr]))
                        .collect();
                    if !lin.is_empty() {
                        let a = add_aux(&lin, 0.0, &mut aux_rows);
                        coeffs.push((a, w_tilde_max));
                    }
                }
            }
            let row = rows.push(coeffs, hu, DVector::zeros(d));
            input_rows.push((k, gi, row));
        }
    }
    for (coeffs, h) in aux_rows {
        rows.push(coeffs, h, DVector::zeros(d));
    }

    let num_vars = aux_start + num_aux;
    let num_rows = rows.h0.len();
    let mut g = DMatrix::zeros(num_rows, num_vars);
    let mut h_x = DMatrix::zeros(num_rows, d);
    for (row, coeffs) in rows.coeffs.iter().enumerate() {
        for &(col, v) in coeffs {
            g[(row, col)] += v;
        }
        h_x.row_mut(row).copy_from(&rows.h_x[row].transpose());
    }
    let (q_mat, q_x, offset) = cost_template(&stack, p, r, p_n, num_vars);
    let h0 = DVector::from_vec(rows.h0);
    Ok(HorizonTemplate {
        layout: VariableLayout {
            horizon: n,
            m,
            d,
            gain_entries,
            aux_start,
            state_rows,
            input_rows,
            num_aux,
        },
        base: base_program(q_mat, g, &h0)?,
        h0,
        h_x,
        q_x,
        offset,
        stack,
    })
}

/// Horizon-1 problem at `x`.
pub fn build_case1(sys: &UncertainSystem, cfg: &MpcConfig, x: &DVector<f64>) -> Result<HorizonProblem, ControllerError> {
    Ok(case1_template(sys, cfg)?.instantiate(x))
}

/// Horizon-`n` lumped problem at `x`, `2 <= n <= N`.
#[allow(non_snake_case)]
pub fn build_caseN(sys: &UncertainSystem, cfg: &MpcConfig, x: &DVector<f64>, n: usize) -> Result<HorizonProblem, ControllerError> {
    if n < 2 || n > cfg.horizon {
        return Err(ControllerError::InvalidConfig(format!("horizon {n} outside 2..={}", cfg.horizon)));
    }
    let t = lumped_template(sys, &cfg.p, &cfg.r, &cfg.terminal.p_n, &cfg.terminal.set, cfg.bound.w_tilde_max, n)?;
    Ok(t.instantiate(x))
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonRecord {
    pub horizon: usize,
    pub status: SolveStatus,
    /// Optimal cost, `+inf` when not solved.
    pub cost: f64,
    /// Problem instantiation plus solve, in seconds.
    pub solve_time: f64,
    /// Whether an infeasibility verdict came with a verified certificate.
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub status: SolveStatus,
    pub n_star: usize,
    pub u_bar: DVector<f64>,
    pub gains: FeedbackGainStack,
    pub j_star: f64,
    pub per_horizon: Vec<HorizonRecord>,
}

impl MpcSolution {
    /// First nominal input; the applied input at the measured state.
    pub fn applied_input(&self) -> DVector<f64> {
        let m = self.u_bar.len() / self.n_star;
        self.u_bar.rows(0, m).into_owned()
    }
}

/// One solved horizon.
#[derive(Debug, Clone)]
pub struct HorizonSolve {
    pub record: HorizonRecord,
    pub outcome: SolveOutcome,
    pub solution: Option<(DVector<f64>, FeedbackGainStack, f64)>,
}

pub fn solve_horizon(template: &HorizonTemplate, x: &DVector<f64>) -> HorizonSolve {
    let start = Instant::now();
    let problem = template.instantiate(x);
    let outcome = solve_qp(&problem.qp);
    let elapsed = start.elapsed();
    let solution = outcome.x.as_ref().map(|z| {
        let (u, gains) = problem.layout.decode(z);
        (u, gains, outcome.objective + problem.cost_offset)
    });
    let cost = solution.as_ref().map(|s| s.2).unwrap_or(f64::INFINITY);
    let certified = outcome.certificate.as_ref().map(|c| c.verify(&problem.qp)).unwrap_or(false);
    HorizonSolve {
        record: HorizonRecord {
            horizon: template.horizon(),
            status: outcome.status,
            cost,
            solve_time: elapsed.as_secs_f64(),
            certified,
        },
        outcome,
        solution,
    }
}

/// Minimum cost; ties within [`TIE_TOL`] go to the shorter horizon.
fn select(solves: &[HorizonSolve]) -> Option<usize> {
    let best = solves
        .iter()
        .filter_map(|s| s.solution.as_ref().map(|x| x.2))
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    solves.iter().position(|s| {
        s.solution
            .as_ref()
            .map(|x| x.2 <= best + TIE_TOL * (1.0 + best.abs()))
            .unwrap_or(false)
    })
}

/// The adaptive-horizon controller for one system and configuration.
#[derive(Debug, Clone)]
pub struct Controller {
    pub system: UncertainSystem,
    pub config: MpcConfig,
    templates: Vec<HorizonTemplate>,
}

impl Controller {
    pub fn new(system: UncertainSystem, config: MpcConfig) -> Result<Self, ControllerError> {
        let mut templates = vec![case1_template(&system, &config)?];
        for n in 2..=config.horizon {
            templates.push(lumped_template(
                &system,
                &config.p,
                &config.r,
                &config.terminal.p_n,
                &config.terminal.set,
                config.bound.w_tilde_max,
                n,
            )?);
        }
        Ok(Self { system, config, templates })
    }

    pub fn from_problem(problem: &Problem) -> Result<Self, ControllerError> {
        Self::new(problem.system.clone(), MpcConfig::from_problem(problem)?)
    }

    /// Template for horizon `n` (`1..=N`).
    pub fn template(&self, n: usize) -> &HorizonTemplate {
        &self.templates[n - 1]
    }

    pub fn solve_all(&self, x: &DVector<f64>) -> Vec<HorizonSolve> {
        self.templates.iter().map(|t| solve_horizon(t, x)).collect()
    }

    pub fn adaptive_solve(&self, x: &DVector<f64>) -> Result<MpcSolution, ControllerError> {
        let solves = self.solve_all(x);
        let per_horizon: Vec<HorizonRecord> = solves.iter().map(|s| s.record.clone()).collect();
        match select(&solves) {
            Some(i) => {
                let (u_bar, gains, j_star) = solves[i].solution.clone().expect("selected horizon is solved");
                Ok(MpcSolution {
                    status: SolveStatus::Optimal,
                    n_star: i + 1,
                    u_bar,
                    gains,
                    j_star,
                    per_horizon,
                })
            }
            None if per_horizon.iter().all(|r| r.status == SolveStatus::Infeasible) => {
                Err(ControllerError::AllHorizonsInfeasible { per_horizon })
            }
            None => Err(ControllerError::NumericalFailure { per_horizon }),
        }
    }

    /// Applied input and the full solution.
    pub fn step(&self, x: &DVector<f64>) -> Result<(DVector<f64>, MpcSolution), ControllerError> {
        let sol = self.adaptive_solve(x)?;
        Ok((sol.applied_input(), sol))
    }

    /// `x+ - A x - B u`.
    pub fn net_disturbance(&self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
        x_next - self.system.nominal_step(x, u)
    }

    /// Cost at `x_next` of the candidate built from `sol` (solved at `x`,
    /// applied `u`): the terminal controller if `sol` used one step, else the
    /// shifted policy with the realized `w~` folded into its inputs.
    pub fn candidate_cost(&self, sol: &MpcSolution, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> f64 {
        let (u_next, n) = self.candidate_inputs(sol, x, u, x_next);
        self.template(n).nominal_cost(x_next, &u_next)
    }

    /// Nominal input stack of the candidate and its horizon.
    pub fn candidate_inputs(&self, sol: &MpcSolution, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> (DVector<f64>, usize) {
        let m = self.system.input_dim();
        if sol.n_star == 1 {
            return (&self.config.terminal.k * x_next, 1);
        }
        let w = self.net_disturbance(x, u, x_next);
        let n = sol.n_star - 1;
        let mut u_next = DVector::zeros(m * n);
        for k in 0..n {
            let shifted = sol.u_bar.rows((k + 1) * m, m) + sol.gains.block(k + 1, 0) * &w;
            u_next.rows_mut(k * m, m).copy_from(&shifted);
        }
        (u_next, n)
    }

    /// Gains of the shifted policy: `M'_{k,l} = M_{k+1,l+1}`.
    pub fn shifted_gains(&self, sol: &MpcSolution) -> FeedbackGainStack {
        let (m, d) = (self.system.input_dim(), self.system.state_dim());
        let n = sol.n_star.saturating_sub(1).max(1);
        let mut g = FeedbackGainStack::zeros(n, m, d);
        for k in 1..n {
            for l in 0..k {
                g.set_block(k, l, &sol.gains.block(k + 1, l + 1)).expect("causal by construction");
            }
        }
        g
    }
}

/// Adaptive solve without keeping a controller around.
pub fn adaptive_solve(sys: &UncertainSystem, cfg: &MpcConfig, x: &DVector<f64>) -> Result<MpcSolution, ControllerError> {
    Controller::new(sys.clone(), cfg.clone())?.adaptive_solve(x)
}

pub fn mpc_step(sys: &UncertainSystem, cfg: &MpcConfig, x: &DVector<f64>) -> Result<(DVector<f64>, MpcSolution), ControllerError> {
    Controller::new(sys.clone(), cfg.clone())?.step(x)
}

/// Executes a solution computed at time 0 without re-solving: the
/// disturbance-feedback policy for its horizon, then `u = Kx`.
#[derive(Debug, Clone)]
pub struct RolloutPolicy {
    pub solution: MpcSolution,
    pub k: DMatrix<f64>,
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
}

impl RolloutPolicy {
    pub fn new(ctrl: &Controller, solution: MpcSolution) -> Self {
        Self {
            solution,
            k: ctrl.config.terminal.k.clone(),
            a_bar: ctrl.system.a_bar().clone(),
            b_bar: ctrl.system.b_bar().clone(),
        }
    }

    /// Input at time `t = inputs.len()` given `states = x_0 .. x_t`.
    pub fn input(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<DVector<f64>, PredictionError> {
        let t = inputs.len();
        if states.len() != t + 1 {
            return Err(PredictionError::HistoryLengthMismatch {
                expected: t + 1,
                got: states.len(),
            });
        }
        if t >= self.solution.n_star {
            return Ok(&self.k * &states[t]);
        }
        let history: Vec<DVector<f64>> = (0..t)
            .map(|l| &states[l + 1] - &self.a_bar * &states[l] - &self.b_bar * &inputs[l])
            .collect();
        policy_input(&self.solution.gains, &self.solution.u_bar, t, &history)
    }
}

/// Largest violation of `x in X` and `u in U` as a signed margin.
pub fn constraint_margin(sys: &UncertainSystem, x: &DVector<f64>, u: Option<&DVector<f64>>) -> f64 {
    let mx = sys.x().margin(x);
    match u {
        Some(u) => mx.min(sys.u().margin(u)),
        None => mx,
    }
}
