//! Uncertain linear systems `x+ = (A + dA) x + (B + dB) u + w`, the
//! net-additive disturbance bound and Monte-Carlo sampling of uncertainty.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, Polytope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },
    #[error("{0} must contain at least one vertex matrix")]
    NoVertices(&'static str),
    #[error("constraint set {0} is unbounded")]
    UnboundedConstraintSet(&'static str),
    #[error("constraint set {0} is empty")]
    EmptyConstraintSet(&'static str),
    #[error("constraint set {0} does not contain the origin")]
    OriginOutside(&'static str),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// Nominal dynamics, polytopic model error given by its vertices, additive
/// disturbance set and state/input constraint sets.
#[derive(Debug, Clone)]
pub struct UncertainSystem {
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    delta_a: Vec<DMatrix<f64>>,
    delta_b: Vec<DMatrix<f64>>,
    w: Polytope,
    x: Polytope,
    u: Polytope,
}

impl UncertainSystem {
    /// Checks dimensions, boundedness of `X`, `U`, `W` and that each contains
    /// the origin. `W = {0}` is accepted here; problem files additionally
    /// require the origin to be interior (see [`UncertainSystem::check_interior`]).
    pub fn new(
        a_bar: DMatrix<f64>,
        b_bar: DMatrix<f64>,
        delta_a: Vec<DMatrix<f64>>,
        delta_b: Vec<DMatrix<f64>>,
        w: Polytope,
        x: Polytope,
        u: Polytope,
    ) -> Result<Self, SystemError> {
        let d = a_bar.nrows();
        let m = b_bar.ncols();
        let dim_err = |what: &str, expected: String, got: String| SystemError::Dimension {
            what: what.to_string(),
            expected,
            got,
        };
        if d == 0 || a_bar.ncols() != d {
            return Err(dim_err("A_bar", "square, nonempty".into(), shape(&a_bar)));
        }
        if m == 0 || b_bar.nrows() != d {
            return Err(dim_err("B_bar", format!("{d}xm with m >= 1"), shape(&b_bar)));
        }
        if delta_a.is_empty() {
            return Err(SystemError::NoVertices("deltaA_vertices"));
        }
        if delta_b.is_empty() {
            return Err(SystemError::NoVertices("deltaB_vertices"));
        }
        for (i, v) in delta_a.iter().enumerate() {
            if v.shape() != (d, d) {
                return Err(dim_err(&format!("deltaA_vertices[{i}]"), format!("{d}x{d}"), shape(v)));
            }
        }
        for (i, v) in delta_b.iter().enumerate() {
            if v.shape() != (d, m) {
                return Err(dim_err(&format!("deltaB_vertices[{i}]"), format!("{d}x{m}"), shape(v)));
            }
        }
        let finite = |ms: &[&DMatrix<f64>]| ms.iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !finite(&[&a_bar]) {
            return Err(SystemError::NonFinite("A_bar"));
        }
        if !finite(&[&b_bar]) {
            return Err(SystemError::NonFinite("B_bar"));
        }
        if !finite(&delta_a.iter().collect::<Vec<_>>()) {
            return Err(SystemError::NonFinite("deltaA_vertices"));
        }
        if !finite(&delta_b.iter().collect::<Vec<_>>()) {
            return Err(SystemError::NonFinite("deltaB_vertices"));
        }
        for (name, set, dim) in [("W", &w, d), ("X", &x, d), ("U", &u, m)] {
            if set.dim() != dim {
                return Err(dim_err(name, format!("dimension {dim}"), format!("dimension {}", set.dim())));
            }
            check_compact(name, set)?;
            if !set.contains(&DVector::zeros(dim), 0.0) {
                return Err(SystemError::OriginOutside(name));
            }
        }
        Ok(Self {
            a_bar,
            b_bar,
            delta_a,
            delta_b,
            w,
            x,
            u,
        })
    }

    /// Strict interior check on `X`, `U` and `W`: every facet offset positive.
    pub fn check_interior(&self) -> Result<(), SystemError> {
        for (name, set) in [("W", &self.w), ("X", &self.x), ("U", &self.u)] {
            let zero_rows_ok = set
                .hmat()
                .row_iter()
                .zip(set.h().iter())
                .all(|(r, &h)| h > 0.0 || (r.amax() == 0.0 && h >= 0.0));
            if !zero_rows_ok {
                return Err(SystemError::OriginOutside(name));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn a_bar(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &DMatrix<f64> {
        &self.b_bar
    }

    pub fn delta_a(&self) -> &[DMatrix<f64>] {
        &self.delta_a
    }

    pub fn delta_b(&self) -> &[DMatrix<f64>] {
        &self.delta_b
    }

    pub fn w(&self) -> &Polytope {
        &self.w
    }

    pub fn x(&self) -> &Polytope {
        &self.x
    }

    pub fn u(&self) -> &Polytope {
        &self.u
    }

    /// `(A + dA_j, B + dB_k)` for every vertex pair, `j` major.
    pub fn vertex_pairs(&self) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let mut out = Vec::with_capacity(self.delta_a.len() * self.delta_b.len());
        for da in &self.delta_a {
            for db in &self.delta_b {
                out.push((&self.a_bar + da, &self.b_bar + db));
            }
        }
        out
    }

    /// `(A + dA_j) + (B + dB_k) K` for every vertex pair, `j` major.
    pub fn closed_loop_vertices(&self, k: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.vertex_pairs().into_iter().map(|(a, b)| a + b * k).collect()
    }

    pub fn nominal_closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a_bar + &self.b_bar * k
    }

    /// Nominal successor `A x + B u`.
    pub fn nominal_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_bar * x + &self.b_bar * u
    }

    /// Copy with the disturbance set replaced.
    pub fn with_disturbance(&self, w: Polytope) -> Result<Self, SystemError> {
        Self::new(
            self.a_bar.clone(),
            self.b_bar.clone(),
            self.delta_a.clone(),
            self.delta_b.clone(),
            w,
            self.x.clone(),
            self.u.clone(),
        )
    }
}

fn check_compact(name: &'static str, set: &Polytope) -> Result<(), SystemError> {
    match set.bounding_box() {
        Ok(_) => Ok(()),
        Err(GeometryError::Unbounded) => Err(SystemError::UnboundedConstraintSet(name)),
        Err(GeometryError::EmptyPolytope) => Err(SystemError::EmptyConstraintSet(name)),
        Err(e) => Err(e.into()),
    }
}

/// Induced infinity norm: largest absolute row sum.
pub fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `max_{x in P} |x|_inf`.
pub fn inf_norm_radius(set: &Polytope) -> Result<f64, GeometryError> {
    let (lo, hi) = set.bounding_box()?;
    Ok(lo.iter().chain(hi.iter()).fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Bound on `|dA x + dB u + w|_inf` over the model-error hulls, `X`, `U`, `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetAdditiveBound {
    pub w_tilde_max: f64,
    pub x_max: f64,
    pub u_max: f64,
    pub w_max: f64,
    pub da_norm: f64,
    pub db_norm: f64,
}

impl NetAdditiveBound {
    pub fn compose(x_max: f64, u_max: f64, w_max: f64, da_norm: f64, db_norm: f64) -> Self {
        Self {
            w_tilde_max: da_norm * x_max + db_norm * u_max + w_max,
            x_max,
            u_max,
            w_max,
            da_norm,
            db_norm,
        }
    }
}

/// The induced infinity norm is convex, so its maximum over a hull of
/// matrices is attained at a vertex.
pub fn net_additive_bound(sys: &UncertainSystem) -> Result<NetAdditiveBound, SystemError> {
    let radius = |name: &'static str, set: &Polytope| {
        inf_norm_radius(set).map_err(|e| match e {
            GeometryError::Unbounded => SystemError::UnboundedConstraintSet(name),
            GeometryError::EmptyPolytope => SystemError::EmptyConstraintSet(name),
            other => other.into(),
        })
    };
    let da_norm = sys.delta_a.iter().map(induced_inf_norm).fold(0.0, f64::max);
    let db_norm = sys.delta_b.iter().map(induced_inf_norm).fold(0.0, f64::max);
    Ok(NetAdditiveBound::compose(
        radius("X", &sys.x)?,
        radius("U", &sys.u)?,
        radius("W", &sys.w)?,
        da_norm,
        db_norm,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Model error uniform on the simplex of vertex weights, disturbances
    /// spread over `W`.
    Uniform,
    /// Model error at a vertex, disturbances at vertices of `W`.
    Adversarial,
}

/// A fixed model error and a disturbance sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRealization {
    pub delta_a: DMatrix<f64>,
    pub delta_b: DMatrix<f64>,
    pub weights_a: Vec<f64>,
    pub weights_b: Vec<f64>,
    pub w_sequence: Vec<DVector<f64>>,
}

impl UncertaintyRealization {
    /// No model error and no disturbance.
    pub fn nominal(sys: &UncertainSystem, horizon: usize) -> Self {
        let mut weights_a = vec![0.0; sys.delta_a.len()];
        let mut weights_b = vec![0.0; sys.delta_b.len()];
        weights_a[0] = 1.0;
        weights_b[0] = 1.0;
        Self {
            delta_a: DMatrix::zeros(sys.state_dim(), sys.state_dim()),
            delta_b: DMatrix::zeros(sys.state_dim(), sys.input_dim()),
            weights_a,
            weights_b,
            w_sequence: vec![DVector::zeros(sys.state_dim()); horizon],
        }
    }

    pub fn true_a(&self, sys: &UncertainSystem) -> DMatrix<f64> {
        sys.a_bar() + &self.delta_a
    }

    pub fn true_b(&self, sys: &UncertainSystem) -> DMatrix<f64> {
        sys.b_bar() + &self.delta_b
    }

    /// True plant step `(A + dA) x + (B + dB) u + w_t`.
    pub fn step(&self, sys: &UncertainSystem, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (sys.a_bar() + &self.delta_a) * x + (sys.b_bar() + &self.delta_b) * u + &self.w_sequence[t]
    }

    /// Weights are a probability vector reproducing the model error, and
    /// every disturbance lies in `W`.
    pub fn is_consistent(&self, sys: &UncertainSystem, tol: f64) -> bool {
        let simplex = |w: &[f64], n: usize| {
            w.len() == n && w.iter().all(|&v| v >= -tol) && (w.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        if !simplex(&self.weights_a, sys.delta_a.len()) || !simplex(&self.weights_b, sys.delta_b.len()) {
            return false;
        }
        let combo = |w: &[f64], vs: &[DMatrix<f64>]| {
            vs.iter()
                .zip(w)
                .fold(DMatrix::zeros(vs[0].nrows(), vs[0].ncols()), |acc, (v, &c)| acc + v * c)
        };
        (combo(&self.weights_a, &sys.delta_a) - &self.delta_a).amax() <= tol
            && (combo(&self.weights_b, &sys.delta_b) - &self.delta_b).amax() <= tol
            && self.w_sequence.iter().all(|w| sys.w.contains(w, tol))
    }
}

pub(crate) fn dirichlet_ones(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Normalized exponentials are uniform on the simplex.
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[i] = 1.0;
    w
}

const MAX_CORNER_DIM: usize = 10;
const REJECTION_TRIES: usize = 1000;

fn sample_disturbance(sys: &UncertainSystem, rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let d = lo.len();
    for _ in 0..REJECTION_TRIES {
        let p = if d <= MAX_CORNER_DIM {
            let weights = dirichlet_ones(rng, 1 << d);
            let mut p = DVector::zeros(d);
            for (corner, w) in weights.iter().enumerate() {
                for i in 0..d {
                    p[i] += w * if corner >> i & 1 == 1 { hi[i] } else { lo[i] };
                }
            }
            p
        } else {
            DVector::from_fn(d, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>())
        };
        if sys.w.contains(&p, 0.0) {
            return p;
        }
    }
    // Pull a box sample towards the origin (which lies in W) until it fits.
    let p = DVector::from_fn(d, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>());
    let (mut inside, mut outside) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (inside + outside);
        if sys.w.contains(&(&p * mid), 0.0) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    p * inside
}

fn adversarial_disturbance(sys: &UncertainSystem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = sys.state_dim();
    let normal = Uniform::new_inclusive(-1.0, 1.0);
    let dir = DVector::from_fn(d, |_, _| normal.sample(rng));
    match sys.w.support_point(&dir) {
        Ok((_, p)) if sys.w.contains(&p, 0.0) => p,
        Ok((_, p)) => {
            // Round-off of the LP maximizer: shrink onto W.
            let excess = sys.w.margin(&p).min(0.0);
            let scale = 1.0 / (1.0 + excess.abs() * 1e3);
            if sys.w.contains(&(&p * scale), 0.0) {
                p * scale
            } else {
                DVector::zeros(d)
            }
        }
        Err(_) => DVector::zeros(d),
    }
}

/// Deterministic in `seed`. The model error is drawn once and held for the
/// whole sequence of `horizon` disturbances.
pub fn sample_realization(sys: &UncertainSystem, horizon: usize, seed: u64, mode: SamplingMode) -> UncertaintyRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (na, nb) = (sys.delta_a.len(), sys.delta_b.len());
    let (weights_a, weights_b) = match mode {
        SamplingMode::Uniform => (dirichlet_ones(&mut rng, na), dirichlet_ones(&mut rng, nb)),
        SamplingMode::Adversarial => (
            one_hot(na, rng.gen_range(0..na)),
            one_hot(nb, rng.gen_range(0..nb)),
        ),
    };
    let combo = |w: &[f64], vs: &[DMatrix<f64>]| {
        vs.iter()
            .zip(w)
            .fold(DMatrix::zeros(vs[0].nrows(), vs[0].ncols()), |acc, (v, &c)| acc + v * c)
    };
    let delta_a = combo(&weights_a, &sys.delta_a);
    let delta_b = combo(&weights_b, &sys.delta_b);
    let (lo, hi) = sys.w.bounding_box().expect("W is compact and nonempty");
    let w_sequence = (0..horizon)
        .map(|_| match mode {
            SamplingMode::Uniform => sample_disturbance(sys, &mut rng, &lo, &hi),
            SamplingMode::Adversarial => adversarial_disturbance(sys, &mut rng),
        })
        .collect();
    UncertaintyRealization {
        delta_a,
        delta_b,
        weights_a,
        weights_b,
        w_sequence,
    }
}
