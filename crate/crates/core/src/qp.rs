//! Convex quadratic programs.
//!
//! Every problem is stated as
//!
//! ```text
//!     minimize     1/2 x' Q x + q' x
//!     subject to   G x <= h
//!                  A x  = b
//! ```
//!
//! and solved by an interior-point method (Clarabel). The wrapper adds what
//! the rest of the crate relies on: an independent check of the returned
//! point, a verified Farkas certificate for every `Infeasible` verdict and a
//! verified recession direction for every `Unbounded` verdict. A verdict that
//! cannot be verified is retried with different settings and, failing that,
//! reported as `NumericalFailure`.

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT,
    SolverStatus, SupportedConeT, ZeroConeT,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Absolute tolerance on primal residuals, stationarity and certificates.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

/// Matrices are shared between programs that differ only in `q`, `h` and
/// `b`, so re-instantiating a program at a new point skips validation and
/// the sparse conversion.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    q_mat: Arc<DMatrix<f64>>,
    q: DVector<f64>,
    g: Arc<DMatrix<f64>>,
    h: DVector<f64>,
    a_eq: Arc<DMatrix<f64>>,
    b_eq: DVector<f64>,
    sparse: Arc<OnceLock<SparseParts>>,
}

#[derive(Debug)]
struct SparseParts {
    p: CscMatrix<f64>,
    a: CscMatrix<f64>,
}

impl QuadraticProgram {
    pub fn new(
        q_mat: DMatrix<f64>,
        q: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if q_mat.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "Q is {}x{}, expected {n}x{n}",
                q_mat.nrows(),
                q_mat.ncols()
            )));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G is {}x{} with {} offsets, expected {n} columns",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(QpError::Dimension(format!(
                "A_eq is {}x{} with {} offsets, expected {n} columns",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        for (name, finite) in [
            ("Q", q_mat.iter().all(|v| v.is_finite())),
            ("q", q.iter().all(|v| v.is_finite())),
            ("G", g.iter().all(|v| v.is_finite())),
            ("h", h.iter().all(|v| v.is_finite())),
            ("A_eq", a_eq.iter().all(|v| v.is_finite())),
            ("b_eq", b_eq.iter().all(|v| v.is_finite())),
        ] {
            if !finite {
                return Err(QpError::NonFinite(name));
            }
        }
        check_psd(&q_mat)?;
        Ok(Self {
            q_mat: Arc::new(q_mat),
            q,
            g: Arc::new(g),
            h,
            a_eq: Arc::new(a_eq),
            b_eq,
            sparse: Arc::default(),
        })
    }

    /// Same matrices with new vectors `q`, `h` and `b`.
    pub fn with_vectors(&self, q: DVector<f64>, h: DVector<f64>, b_eq: DVector<f64>) -> Result<Self, QpError> {
        if q.len() != self.q.len() || h.len() != self.h.len() || b_eq.len() != self.b_eq.len() {
            return Err(QpError::Dimension(format!(
                "vectors of length {}/{}/{}, expected {}/{}/{}",
                q.len(),
                h.len(),
                b_eq.len(),
                self.q.len(),
                self.h.len(),
                self.b_eq.len()
            )));
        }
        for (name, v) in [("q", &q), ("h", &h), ("b_eq", &b_eq)] {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(QpError::NonFinite(name));
            }
        }
        Ok(Self {
            q,
            h,
            b_eq,
            ..self.clone()
        })
    }

    /// Inequality-only program.
    pub fn with_inequalities(
        q_mat: DMatrix<f64>,
        q: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        Self::new(q_mat, q, g, h, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    /// Linear program `min c'x s.t. Gx <= h`.
    pub fn linear(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        Self::with_inequalities(DMatrix::zeros(n, n), c, g, h)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.h.len()
    }

    pub fn cost_matrix(&self) -> &DMatrix<f64> {
        &*self.q_mat
    }

    pub fn linear_cost(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn inequalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&*self.g, &self.h)
    }

    pub fn equalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&*self.a_eq, &self.b_eq)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&*self.q_mat * x)) + self.q.dot(x)
    }

    /// Largest violation of `Gx <= h` and `Ax = b`.
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let ineq = (&*self.g * x - &self.h).iter().fold(0.0_f64, |m, &v| m.max(v));
        let eq = (&*self.a_eq * x - &self.b_eq).amax();
        ineq.max(eq)
    }
}

/// PSD test by Cholesky on the rows that carry cost. A PSD matrix with a zero
/// diagonal entry has a zero row, so those rows can be dropped first.
fn check_psd(q_mat: &DMatrix<f64>) -> Result<(), QpError> {
    let n = q_mat.nrows();
    let mut asym = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((q_mat[(i, j)] - q_mat[(j, i)]).abs());
        }
    }
    let scale = q_mat.amax().max(1.0);
    if asym > 1e-9 * scale {
        return Err(QpError::NotSymmetric(asym));
    }
    let mut active = Vec::new();
    for i in 0..n {
        let diag = q_mat[(i, i)];
        if diag < 0.0 {
            return Err(QpError::NotPositiveSemidefinite);
        }
        if diag == 0.0 {
            if q_mat.row(i).iter().any(|&v| v != 0.0) {
                return Err(QpError::NotPositiveSemidefinite);
            }
        } else {
            active.push(i);
        }
    }
    if active.is_empty() {
        return Ok(());
    }
    let k = active.len();
    let shift = 1e-10 * scale;
    let sub = DMatrix::from_fn(k, k, |r, c| {
        let v = 0.5 * (q_mat[(active[r], active[c])] + q_mat[(active[c], active[r])]);
        if r == c {
            v + shift
        } else {
            v
        }
    });
    match sub.cholesky() {
        Some(_) => Ok(()),
        None => Err(QpError::NotPositiveSemidefinite),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Proof of infeasibility: `y >= 0`, `G'y + A'mu = 0` and `h'y + b'mu < 0`,
/// normalized so that `|y|_1 + |mu|_1 = 1`.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub y_ineq: DVector<f64>,
    pub y_eq: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CertificateCheck {
    pub min_multiplier: f64,
    pub stationarity: f64,
    pub offset_value: f64,
}

impl CertificateCheck {
    pub fn is_valid(&self) -> bool {
        self.min_multiplier >= -KKT_TOL
            && self.stationarity <= KKT_TOL
            && self.offset_value < -CERTIFICATE_MARGIN
    }
}

const CERTIFICATE_MARGIN: f64 = 1e-10;

impl FarkasCertificate {
    fn normalized(y_ineq: DVector<f64>, y_eq: DVector<f64>) -> Option<Self> {
        let y_ineq = y_ineq.map(|v| v.max(0.0));
        let norm = y_ineq.lp_norm(1) + y_eq.lp_norm(1);
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        Some(Self {
            y_ineq: y_ineq / norm,
            y_eq: y_eq / norm,
        })
    }

    pub fn check(&self, prog: &QuadraticProgram) -> CertificateCheck {
        let stat = prog.g.tr_mul(&self.y_ineq) + prog.a_eq.tr_mul(&self.y_eq);
        CertificateCheck {
            min_multiplier: self.y_ineq.iter().copied().fold(f64::INFINITY, f64::min),
            stationarity: stat.amax(),
            offset_value: prog.h.dot(&self.y_ineq) + prog.b_eq.dot(&self.y_eq),
        }
    }

    pub fn verify(&self, prog: &QuadraticProgram) -> bool {
        self.check(prog).is_valid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Minimizer, present iff `status == Optimal`.
    pub x: Option<DVector<f64>>,
    /// `1/2 x'Qx + q'x` at `x`; `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
    pub solve_time: Duration,
    pub kkt: Option<KktResiduals>,
    pub certificate: Option<FarkasCertificate>,
    /// Direction of unbounded descent, present iff `status == Unbounded`.
    pub ray: Option<DVector<f64>>,
    pub attempts: u32,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

struct Csc {
    p: CscMatrix<f64>,
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn dense_to_csc(rows: &[&DMatrix<f64>], upper_only: bool) -> CscMatrix<f64> {
    let n = rows.first().map(|m| m.ncols()).unwrap_or(0);
    let m: usize = rows.iter().map(|b| b.nrows()).sum();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..n {
        let mut offset = 0;
        for block in rows {
            let col = block.column(j);
            for (i, &v) in col.iter().enumerate() {
                if upper_only && offset + i > j {
                    break;
                }
                if v != 0.0 {
                    rowval.push(offset + i);
                    nzval.push(v);
                }
            }
            offset += block.nrows();
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn to_clarabel(prog: &QuadraticProgram) -> Csc {
    let parts = prog.sparse.get_or_init(|| SparseParts {
        p: dense_to_csc(&[&prog.q_mat], true),
        a: dense_to_csc(&[&prog.a_eq, &prog.g], false),
    });
    let (p, a) = (parts.p.clone(), parts.a.clone());
    let mut b = Vec::with_capacity(prog.b_eq.len() + prog.h.len());
    b.extend(prog.b_eq.iter());
    b.extend(prog.h.iter());
    let mut cones = Vec::new();
    if !prog.b_eq.is_empty() {
        cones.push(ZeroConeT(prog.b_eq.len()));
    }
    if !prog.h.is_empty() {
        cones.push(NonnegativeConeT(prog.h.len()));
    }
    Csc { p, a, b, cones }
}

fn settings_for_attempt(attempt: u32) -> DefaultSettings<f64> {
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .presolve_enable(false);
    match attempt {
        0 => {
            builder.equilibrate_enable(false);
        }
        1 => {
            builder.max_iter(400);
        }
        _ => {
            builder
                .max_iter(800)
                .tol_gap_abs(1e-9)
                .tol_gap_rel(1e-9)
                .tol_feas(1e-9)
                .static_regularization_constant(1e-7)
                .iterative_refinement_max_iter(20);
        }
    }
    builder.build().expect("static solver settings are valid")
}

const MAX_ATTEMPTS: u32 = 3;

struct RawSolution {
    status: SolverStatus,
    x: Vec<f64>,
    z: Vec<f64>,
}

fn run_clarabel(data: &Csc, q: &[f64], settings: DefaultSettings<f64>) -> Option<RawSolution> {
    let mut solver = DefaultSolver::new(&data.p, q, &data.a, &data.b, &data.cones, settings).ok()?;
    solver.solve();
    Some(RawSolution {
        status: solver.solution.status,
        x: solver.solution.x.clone(),
        z: solver.solution.z.clone(),
    })
}

/// Solves `prog`. Deterministic for a fixed input.
pub fn solve_qp(prog: &QuadraticProgram) -> SolveOutcome {
    let start = Instant::now();
    let n = prog.num_vars();
    let n_eq = prog.b_eq.len();

    // Trivial program: no variables.
    if n == 0 {
        let feasible = prog.h.iter().all(|&v| v >= 0.0) && prog.b_eq.iter().all(|&v| v == 0.0);
        return if feasible {
            SolveOutcome {
                status: SolveStatus::Optimal,
                x: Some(DVector::zeros(0)),
                objective: 0.0,
                solve_time: start.elapsed(),
                kkt: Some(KktResiduals {
                    primal: 0.0,
                    dual: 0.0,
                    complementarity: 0.0,
                }),
                certificate: None,
                ray: None,
                attempts: 0,
            }
        } else {
            // A single violated row is its own certificate.
            let mut y_ineq = DVector::zeros(prog.h.len());
            let mut y_eq = DVector::zeros(n_eq);
            if let Some(i) = prog.h.iter().position(|&v| v < 0.0) {
                y_ineq[i] = 1.0;
            } else if let Some(i) = prog.b_eq.iter().position(|&v| v != 0.0) {
                y_eq[i] = -prog.b_eq[i].signum();
            }
            infeasible(start, FarkasCertificate { y_ineq, y_eq }, 0)
        };
    }

    let data = to_clarabel(prog);
    let q: Vec<f64> = prog.q.iter().copied().collect();

    for attempt in 0..MAX_ATTEMPTS {
        let Some(raw) = run_clarabel(&data, &q, settings_for_attempt(attempt)) else {
            continue;
        };
        match raw.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let x = DVector::from_vec(raw.x);
                let kkt = kkt_residuals(prog, &x, &raw.z);
                if kkt.primal <= KKT_TOL {
                    return SolveOutcome {
                        status: SolveStatus::Optimal,
                        objective: prog.objective(&x),
                        x: Some(x),
                        solve_time: start.elapsed(),
                        kkt: Some(kkt),
                        certificate: None,
                        ray: None,
                        attempts: attempt + 1,
                    };
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                let y_eq = DVector::from_column_slice(&raw.z[..n_eq]);
                let y_ineq = DVector::from_column_slice(&raw.z[n_eq..]);
                let direct =
                    FarkasCertificate::normalized(y_ineq, y_eq).filter(|c| c.verify(prog));
                if let Some(cert) = direct.or_else(|| certificate_from_lp(prog)) {
                    return infeasible(start, cert, attempt + 1);
                }
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                let d = DVector::from_vec(raw.x);
                if let Some(ray) = verify_ray(prog, d) {
                    return SolveOutcome {
                        status: SolveStatus::Unbounded,
                        x: None,
                        objective: f64::NEG_INFINITY,
                        solve_time: start.elapsed(),
                        kkt: None,
                        certificate: None,
                        ray: Some(ray),
                        attempts: attempt + 1,
                    };
                }
            }
            _ => {}
        }
    }

    SolveOutcome {
        status: SolveStatus::NumericalFailure,
        x: None,
        objective: f64::NAN,
        solve_time: start.elapsed(),
        kkt: None,
        certificate: None,
        ray: None,
        attempts: MAX_ATTEMPTS,
    }
}

/// Solves the linear program `min c'x s.t. Gx <= h`.
pub fn solve_lp(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Result<SolveOutcome, QpError> {
    let prog = QuadraticProgram::linear(c.clone(), g.clone(), h.clone())?;
    Ok(solve_qp(&prog))
}

fn infeasible(start: Instant, cert: FarkasCertificate, attempts: u32) -> SolveOutcome {
    SolveOutcome {
        status: SolveStatus::Infeasible,
        x: None,
        objective: f64::INFINITY,
        solve_time: start.elapsed(),
        kkt: None,
        certificate: Some(cert),
        ray: None,
        attempts,
    }
}

fn kkt_residuals(prog: &QuadraticProgram, x: &DVector<f64>, z: &[f64]) -> KktResiduals {
    let n_eq = prog.b_eq.len();
    let y_eq = DVector::from_column_slice(&z[..n_eq]);
    let y_ineq = DVector::from_column_slice(&z[n_eq..]);
    let grad = &*prog.q_mat * x + &prog.q + prog.g.tr_mul(&y_ineq) + prog.a_eq.tr_mul(&y_eq);
    let slack = &prog.h - &*prog.g * x;
    let complementarity = slack
        .iter()
        .zip(y_ineq.iter())
        .fold(0.0_f64, |m, (s, y)| m.max((s * y).abs()));
    KktResiduals {
        primal: prog.primal_residual(x),
        dual: grad.amax(),
        complementarity,
    }
}

/// Recovers a certificate by solving the alternative system
/// `min h'y + b'mu  s.t.  G'y + A'mu = 0, sum(y) + |mu|_1 = 1, y >= 0`,
/// which has negative value exactly when the original program is infeasible.
fn certificate_from_lp(prog: &QuadraticProgram) -> Option<FarkasCertificate> {
    let n = prog.num_vars();
    let p = prog.h.len();
    let e = prog.b_eq.len();
    // Variables: y (p), mu_plus (e), mu_minus (e).
    let nv = p + 2 * e;
    let mut eq = DMatrix::zeros(n + 1, nv);
    for j in 0..p {
        for i in 0..n {
            eq[(i, j)] = prog.g[(j, i)];
        }
        eq[(n, j)] = 1.0;
    }
    for j in 0..e {
        for i in 0..n {
            eq[(i, p + j)] = prog.a_eq[(j, i)];
            eq[(i, p + e + j)] = -prog.a_eq[(j, i)];
        }
        eq[(n, p + j)] = 1.0;
        eq[(n, p + e + j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let neg_identity = -DMatrix::<f64>::identity(nv, nv);
    let mut c = DVector::zeros(nv);
    c.rows_mut(0, p).copy_from(&prog.h);
    c.rows_mut(p, e).copy_from(&prog.b_eq);
    c.rows_mut(p + e, e).copy_from(&(-&prog.b_eq));

    let alt = QuadraticProgram {
        q_mat: Arc::new(DMatrix::zeros(nv, nv)),
        q: c,
        g: Arc::new(neg_identity),
        h: DVector::zeros(nv),
        a_eq: Arc::new(eq),
        b_eq: rhs,
        sparse: Arc::default(),
    };
    let data = to_clarabel(&alt);
    let q: Vec<f64> = alt.q.iter().copied().collect();
    let raw = run_clarabel(&data, &q, settings_for_attempt(0))?;
    if !matches!(raw.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return None;
    }
    let v = DVector::from_vec(raw.x);
    let y_ineq = v.rows(0, p).into_owned();
    let y_eq = v.rows(p, e).into_owned() - v.rows(p + e, e);
    FarkasCertificate::normalized(y_ineq, y_eq).filter(|c| c.verify(prog))
}

fn verify_ray(prog: &QuadraticProgram, d: DVector<f64>) -> Option<DVector<f64>> {
    let scale = d.amax();
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let d = d / scale;
    let descent = prog.q.dot(&d);
    let curvature = (&*prog.q_mat * &d).amax();
    let ineq = (&*prog.g * &d).iter().fold(0.0_f64, |m, &v| m.max(v));
    let eq = (&*prog.a_eq * &d).amax();
    (descent < -CERTIFICATE_MARGIN && curvature <= KKT_TOL && ineq <= KKT_TOL && eq <= KKT_TOL)
        .then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn scalar_qp_with_lower_bound() {
        // min x^2 s.t. x >= 1, written as 1/2 * 2 * x^2.
        let prog = QuadraticProgram::with_inequalities(
            DMatrix::from_element(1, 1, 2.0),
            dv(&[0.0]),
            DMatrix::from_element(1, 1, -1.0),
            dv(&[-1.0]),
        )
        .unwrap();
        let out = solve_qp(&prog);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(out.x.unwrap()[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.objective, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn contradictory_bounds_are_infeasible_with_certificate() {
        let prog = QuadraticProgram::linear(
            dv(&[0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            dv(&[0.0, -1.0]),
        )
        .unwrap();
        let out = solve_qp(&prog);
        assert_eq!(out.status, SolveStatus::Infeasible);
        let cert = out.certificate.unwrap();
        assert!(cert.verify(&prog), "{:?}", cert.check(&prog));
    }

    #[test]
    fn lp_over_interval_and_simplex() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let out = solve_lp(&dv(&[-1.0]), &g, &dv(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(-out.objective, 1.0, epsilon = 1e-8);

        // max (2,1).x over {x1 + x2 <= 1, x >= 0}; vertices (0,0), (1,0), (0,1).
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let h = dv(&[1.0, 0.0, 0.0]);
        let best = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
            .iter()
            .map(|v| 2.0 * v[0] + v[1])
            .fold(f64::MIN, f64::max);
        let out = solve_lp(&dv(&[-2.0, -1.0]), &g, &h).unwrap();
        assert_abs_diff_eq!(-out.objective, best, epsilon = 1e-8);
    }

    #[test]
    fn unbounded_lp_is_not_reported_infeasible() {
        let g = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let out = solve_lp(&dv(&[-1.0]), &g, &dv(&[0.0])).unwrap();
        assert_eq!(out.status, SolveStatus::Unbounded);
        let ray = out.ray.unwrap();
        assert!(ray[0] > 0.0);
    }

    #[test]
    fn equality_constrained_qp() {
        // min 1/2 |x|^2 s.t. x1 + x2 = 2 -> (1, 1).
        let prog = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            dv(&[0.0, 0.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dv(&[2.0]),
        )
        .unwrap();
        let out = solve_qp(&prog);
        let x = out.x.unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let prog = QuadraticProgram::new(
            DMatrix::zeros(1, 1),
            dv(&[0.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            dv(&[0.0, 1.0]),
        )
        .unwrap();
        let out = solve_qp(&prog);
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(out.certificate.unwrap().verify(&prog));
    }

    #[test]
    fn rejects_indefinite_and_asymmetric_costs() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = QuadraticProgram::linear(dv(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0))
            .and_then(|_| QuadraticProgram::with_inequalities(bad, dv(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0)));
        assert_eq!(err.unwrap_err(), QpError::NotPositiveSemidefinite);

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let err = QuadraticProgram::with_inequalities(asym, dv(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0));
        assert!(matches!(err, Err(QpError::NotSymmetric(_))));

        let zero_diag = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let err = QuadraticProgram::with_inequalities(zero_diag, dv(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0));
        assert_eq!(err.unwrap_err(), QpError::NotPositiveSemidefinite);
    }

    #[test]
    fn zero_variable_program() {
        let prog = QuadraticProgram::linear(DVector::zeros(0), DMatrix::zeros(1, 0), dv(&[-1.0])).unwrap();
        let out = solve_qp(&prog);
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(out.certificate.unwrap().verify(&prog));
    }
}
