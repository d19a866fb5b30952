//! H-representation polytopes and the LP-backed set operations built on them:
//! support functions, inclusion tests, redundancy removal, robust
//! predecessor sets and the maximal robust positive invariant set.
//!
//! Nothing here enumerates vertices (except for 2-D plotting helpers); every
//! robustification goes through support functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{solve_lp, SolveStatus};

/// Absolute tolerance on facet offsets for inclusion and fixed-point tests.
pub const SET_TOL: f64 = 1e-7;

/// Default iteration cap for [`max_robust_invariant`].
pub const DEFAULT_MAX_ITER: usize = 500;

const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("polytope is unbounded in the requested direction")]
    Unbounded,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid polytope: {0}")]
    Invalid(String),
    #[error("linear program failed: {0}")]
    Numerical(String),
    #[error("invariant-set recursion did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// The convex set `{x : Hx <= h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    hmat: DMatrix<f64>,
    h: DVector<f64>,
    /// Set when every row is axis-aligned and the rows describe exactly the
    /// box `[lo, hi]`; enables closed-form support functions.
    bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl Polytope {
    pub fn new(hmat: DMatrix<f64>, h: DVector<f64>) -> Result<Self, GeometryError> {
        if hmat.ncols() == 0 {
            return Err(GeometryError::Invalid("polytope must have dimension >= 1".into()));
        }
        if hmat.nrows() != h.len() {
            return Err(GeometryError::Invalid(format!(
                "H has {} rows but h has {} entries",
                hmat.nrows(),
                h.len()
            )));
        }
        if hmat.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::Invalid("non-finite entry".into()));
        }
        let bounds = detect_box(&hmat, &h);
        Ok(Self { hmat, h, bounds })
    }

    /// The axis-aligned box `[lo, hi]` as `[I; -I] x <= [hi; -lo]`.
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self, GeometryError> {
        let d = lo.len();
        if hi.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, u)| l > u) {
            return Err(GeometryError::Invalid("box lower bound exceeds upper bound".into()));
        }
        let mut hmat = DMatrix::zeros(2 * d, d);
        let mut h = DVector::zeros(2 * d);
        for i in 0..d {
            hmat[(i, i)] = 1.0;
            h[i] = hi[i];
            hmat[(d + i, i)] = -1.0;
            h[d + i] = -lo[i];
        }
        Self::new(hmat, h)
    }

    /// `[-r, r]^d`.
    pub fn inf_ball(dim: usize, radius: f64) -> Result<Self, GeometryError> {
        Self::from_box(&DVector::from_element(dim, -radius), &DVector::from_element(dim, radius))
    }

    pub fn dim(&self) -> usize {
        self.hmat.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn hmat(&self) -> &DMatrix<f64> {
        &self.hmat
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn as_box(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        self.bounds.as_ref().map(|(lo, hi)| (lo, hi))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.margin(x) >= -tol
    }

    /// `min_i (h_i - H_i x)`; negative when `x` lies outside.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        (&self.h - &self.hmat * x).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `{x : Hx <= scale * h}`; for sets containing the origin this is the
    /// set scaled by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self::new(self.hmat.clone(), &self.h * scale).expect("scaling keeps the shape valid")
    }

    /// `{x : H(Ax) <= h}` for square `a`.
    pub fn preimage(&self, a: &DMatrix<f64>) -> Result<Self, GeometryError> {
        if a.nrows() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: a.nrows(),
            });
        }
        Self::new(&self.hmat * a, self.h.clone())
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Self, GeometryError> {
        self.check_dim(other.dim())?;
        let rows = self.num_constraints() + other.num_constraints();
        let mut hmat = DMatrix::zeros(rows, self.dim());
        hmat.rows_mut(0, self.num_constraints()).copy_from(&self.hmat);
        hmat.rows_mut(self.num_constraints(), other.num_constraints())
            .copy_from(&other.hmat);
        let h = DVector::from_iterator(rows, self.h.iter().chain(other.h.iter()).copied());
        Self::new(hmat, h)
    }

    fn check_dim(&self, got: usize) -> Result<(), GeometryError> {
        if got != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// `max { c'x : x in P }`.
    pub fn support(&self, c: &DVector<f64>) -> Result<f64, GeometryError> {
        self.support_point(c).map(|(value, _)| value)
    }

    /// Support value together with a maximizer.
    pub fn support_point(&self, c: &DVector<f64>) -> Result<(f64, DVector<f64>), GeometryError> {
        self.check_dim(c.len())?;
        if let Some((lo, hi)) = &self.bounds {
            let x = DVector::from_fn(c.len(), |i, _| if c[i] >= 0.0 { hi[i] } else { lo[i] });
            return Ok((c.dot(&x), x));
        }
        let out = solve_lp(&(-c), &self.hmat, &self.h)
            .map_err(|e| GeometryError::Numerical(e.to_string()))?;
        match out.status {
            SolveStatus::Optimal => {
                let x = out.x.expect("optimal outcome carries x");
                Ok((c.dot(&x), x))
            }
            SolveStatus::Infeasible => Err(GeometryError::EmptyPolytope),
            SolveStatus::Unbounded => Err(GeometryError::Unbounded),
            SolveStatus::NumericalFailure => Err(GeometryError::Numerical(
                "support LP could not be solved".into(),
            )),
        }
    }

    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        if self.bounds.is_some() {
            return Ok(false);
        }
        let zero = DVector::zeros(self.dim());
        let out = solve_lp(&zero, &self.hmat, &self.h)
            .map_err(|e| GeometryError::Numerical(e.to_string()))?;
        match out.status {
            SolveStatus::Optimal => Ok(false),
            SolveStatus::Infeasible => Ok(true),
            SolveStatus::Unbounded => Ok(false),
            SolveStatus::NumericalFailure => Err(GeometryError::Numerical(
                "feasibility LP could not be solved".into(),
            )),
        }
    }

    /// `self ⊆ other`, tested facet by facet of `other` with tolerance
    /// [`SET_TOL`]. An empty `self` is a subset of everything.
    pub fn is_subset(&self, other: &Polytope) -> Result<bool, GeometryError> {
        self.check_dim(other.dim())?;
        for (row, offset) in other.hmat.row_iter().zip(other.h.iter()) {
            match self.support(&row.transpose()) {
                Ok(v) if v > offset + SET_TOL => return Ok(false),
                Ok(_) => {}
                Err(GeometryError::EmptyPolytope) => return Ok(true),
                Err(GeometryError::Unbounded) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    /// Componentwise bounds `(lo, hi)` of the set.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        if let Some((lo, hi)) = &self.bounds {
            return Ok((lo.clone(), hi.clone()));
        }
        let d = self.dim();
        let mut lo = DVector::zeros(d);
        let mut hi = DVector::zeros(d);
        for i in 0..d {
            let e = DVector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 });
            hi[i] = self.support(&e)?;
            lo[i] = -self.support(&(-e))?;
        }
        Ok((lo, hi))
    }

    /// Drops every row implied by the others. Survivors keep their relative
    /// order; of two identical rows the later one is kept.
    pub fn remove_redundant(&self) -> Result<Polytope, GeometryError> {
        if self.is_empty()? {
            return Err(GeometryError::EmptyPolytope);
        }
        let n = self.num_constraints();
        let d = self.dim();
        let mut keep = vec![true; n];

        let norms: Vec<f64> = self.hmat.row_iter().map(|r| r.norm()).collect();
        for i in 0..n {
            if norms[i] <= 1e-14 {
                // 0 <= h_i with h_i >= 0, since the set is nonempty.
                keep[i] = false;
            }
        }
        // Parallel duplicates: row i is implied by a later row j with the
        // same normal and a tighter or equal normalized offset.
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            let ri = self.hmat.row(i) / norms[i];
            let hi = self.h[i] / norms[i];
            for j in (i + 1)..n {
                if !keep[j] {
                    continue;
                }
                let rj = self.hmat.row(j) / norms[j];
                if (&ri - &rj).amax() <= 1e-12 && self.h[j] / norms[j] <= hi + 1e-12 {
                    keep[i] = false;
                    break;
                }
            }
        }

        for i in 0..n {
            if !keep[i] {
                continue;
            }
            let others: Vec<usize> = (0..n).filter(|&j| j != i && keep[j]).collect();
            let mut hmat = DMatrix::zeros(others.len() + 1, d);
            let mut h = DVector::zeros(others.len() + 1);
            for (r, &j) in others.iter().enumerate() {
                hmat.row_mut(r).copy_from(&self.hmat.row(j));
                h[r] = self.h[j];
            }
            // Keeps the LP bounded in the tested direction.
            hmat.row_mut(others.len()).copy_from(&self.hmat.row(i));
            h[others.len()] = self.h[i] + 1.0;
            let c = -self.hmat.row(i).transpose();
            let out = solve_lp(&c, &hmat, &h).map_err(|e| GeometryError::Numerical(e.to_string()))?;
            match out.status {
                SolveStatus::Optimal => {
                    if -out.objective <= self.h[i] + REDUNDANCY_TOL * (1.0 + self.h[i].abs()) {
                        keep[i] = false;
                    }
                }
                SolveStatus::Infeasible => return Err(GeometryError::EmptyPolytope),
                SolveStatus::Unbounded => {
                    return Err(GeometryError::Numerical("bounded redundancy LP reported unbounded".into()))
                }
                SolveStatus::NumericalFailure => {
                    return Err(GeometryError::Numerical("redundancy LP could not be solved".into()))
                }
            }
        }

        let survivors: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        if survivors.is_empty() {
            return Err(GeometryError::Invalid(
                "every row is redundant: the set is the whole space".into(),
            ));
        }
        let mut hmat = DMatrix::zeros(survivors.len(), d);
        let mut h = DVector::zeros(survivors.len());
        for (r, &i) in survivors.iter().enumerate() {
            hmat.row_mut(r).copy_from(&self.hmat.row(i));
            h[r] = self.h[i];
        }
        Polytope::new(hmat, h)
    }

    /// Vertices of a bounded 2-D polytope in counter-clockwise order.
    pub fn vertices_2d(&self) -> Result<Vec<[f64; 2]>, GeometryError> {
        self.check_dim(2)?;
        let mut pts = Vec::new();
        let n = self.num_constraints();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (self.hmat.row(i), self.hmat.row(j));
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (self.h[i] * b[1] - a[1] * self.h[j]) / det;
                let y = (a[0] * self.h[j] - self.h[i] * b[0]) / det;
                let p = DVector::from_column_slice(&[x, y]);
                if self.contains(&p, 1e-9 * (1.0 + self.h.amax())) {
                    pts.push([x, y]);
                }
            }
        }
        Ok(hull_2d(&pts).hull)
    }

    pub fn to_file(&self) -> PolytopeFile {
        PolytopeFile::HRep {
            hmat: self
                .hmat
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            h: self.h.iter().copied().collect(),
        }
    }
}

fn detect_box(hmat: &DMatrix<f64>, h: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = hmat.ncols();
    let mut lo = DVector::from_element(d, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(d, f64::INFINITY);
    for (row, &offset) in hmat.row_iter().zip(h.iter()) {
        let mut nz = row.iter().enumerate().filter(|(_, v)| **v != 0.0);
        let (axis, &coef) = nz.next()?;
        if nz.next().is_some() {
            return None;
        }
        let bound = offset / coef;
        if coef > 0.0 {
            hi[axis] = hi[axis].min(bound);
        } else {
            lo[axis] = lo[axis].max(bound);
        }
    }
    let finite = lo.iter().chain(hi.iter()).all(|v| v.is_finite());
    let proper = lo.iter().zip(hi.iter()).all(|(l, u)| l <= u);
    (finite && proper).then_some((lo, hi))
}

/// Serialized form of a polytope in problem and report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolytopeFile {
    Box {
        #[serde(rename = "box")]
        bounds: BoxBounds,
    },
    HRep {
        #[serde(rename = "H")]
        hmat: Vec<Vec<f64>>,
        h: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PolytopeFile {
    pub fn to_polytope(&self) -> Result<Polytope, GeometryError> {
        match self {
            PolytopeFile::Box { bounds } => Polytope::from_box(
                &DVector::from_column_slice(&bounds.lo),
                &DVector::from_column_slice(&bounds.hi),
            ),
            PolytopeFile::HRep { hmat, h } => {
                let rows = hmat.len();
                let cols = hmat.first().map(Vec::len).unwrap_or(0);
                if let Some((i, r)) = hmat.iter().enumerate().find(|(_, r)| r.len() != cols) {
                    return Err(GeometryError::Invalid(format!(
                        "H row {i} has {} entries, expected {cols}",
                        r.len()
                    )));
                }
                let flat: Vec<f64> = hmat.iter().flatten().copied().collect();
                Polytope::new(
                    DMatrix::from_row_slice(rows, cols, &flat),
                    DVector::from_column_slice(h),
                )
            }
        }
    }
}

/// `{x in X : H_S(A x) <= h_S - support_W(H_S) for every A}`: the states that
/// every vertex closed-loop map sends into `target` despite any `w in W`,
/// intersected with `constraints`, with redundant rows removed. `Ok(None)`
/// signals an empty result.
pub fn pre_set(
    target: &Polytope,
    closed_loop_vertices: &[DMatrix<f64>],
    disturbance: &Polytope,
    constraints: &Polytope,
) -> Result<Option<Polytope>, GeometryError> {
    let d = target.dim();
    constraints.check_dim(d)?;
    disturbance.check_dim(d)?;
    for a in closed_loop_vertices {
        if a.shape() != (d, d) {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                got: a.nrows().max(a.ncols()),
            });
        }
    }
    let tightened: Vec<f64> = target
        .hmat
        .row_iter()
        .zip(target.h.iter())
        .map(|(row, &offset)| disturbance.support(&row.transpose()).map(|s| offset - s))
        .collect::<Result<_, _>>()?;

    let s = target.num_constraints();
    let rows = constraints.num_constraints() + s * closed_loop_vertices.len();
    let mut hmat = DMatrix::zeros(rows, d);
    let mut h = DVector::zeros(rows);
    let nc = constraints.num_constraints();
    hmat.rows_mut(0, nc).copy_from(&constraints.hmat);
    h.rows_mut(0, nc).copy_from(&constraints.h);
    for (v, a) in closed_loop_vertices.iter().enumerate() {
        let block = &target.hmat * a;
        let start = nc + v * s;
        hmat.rows_mut(start, s).copy_from(&block);
        for (k, t) in tightened.iter().enumerate() {
            h[start + k] = *t;
        }
    }
    let candidate = Polytope::new(hmat, h)?;
    if candidate.is_empty()? {
        return Ok(None);
    }
    match candidate.remove_redundant() {
        Ok(p) => Ok(Some(p)),
        Err(GeometryError::EmptyPolytope) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub enum InvariantOutcome {
    Converged { set: Polytope, iterations: usize },
    Empty { iterations: usize },
}

impl InvariantOutcome {
    pub fn set(&self) -> Option<&Polytope> {
        match self {
            InvariantOutcome::Converged { set, .. } => Some(set),
            InvariantOutcome::Empty { .. } => None,
        }
    }
}

/// Maximal robust positive invariant set of `x+ = A x + w` inside
/// `constraints`, for every `A` in `closed_loop_vertices` and `w` in
/// `disturbance`, via the outer recursion `Ω <- pre(Ω) ∩ Ω`.
pub fn max_robust_invariant(
    constraints: &Polytope,
    closed_loop_vertices: &[DMatrix<f64>],
    disturbance: &Polytope,
    max_iter: usize,
) -> Result<InvariantOutcome, GeometryError> {
    let mut omega = match constraints.remove_redundant() {
        Ok(p) => p,
        Err(GeometryError::EmptyPolytope) => return Ok(InvariantOutcome::Empty { iterations: 0 }),
        Err(e) => return Err(e),
    };
    for iteration in 1..=max_iter {
        let Some(next) = pre_set(&omega, closed_loop_vertices, disturbance, &omega)? else {
            return Ok(InvariantOutcome::Empty { iterations: iteration });
        };
        if omega.is_subset(&next)? && next.is_subset(&omega)? {
            return Ok(InvariantOutcome::Converged {
                set: next,
                iterations: iteration,
            });
        }
        omega = next;
    }
    Err(GeometryError::NoConvergence(max_iter))
}

/// Convex hull of a planar point cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCloudHull2D {
    pub points: Vec<[f64; 2]>,
    /// Counter-clockwise, no repeated or collinear vertices.
    pub hull: Vec<[f64; 2]>,
    pub area: f64,
}

impl PointCloudHull2D {
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        match self.hull.len() {
            0 => false,
            1 => (p[0] - self.hull[0][0]).hypot(p[1] - self.hull[0][1]) <= tol,
            2 => on_segment(self.hull[0], self.hull[1], p, tol),
            n => (0..n).all(|i| {
                let a = self.hull[i];
                let b = self.hull[(i + 1) % n];
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                cross(a, b, p) >= -tol * len
            }),
        }
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2], tol: f64) -> bool {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if len == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]) <= tol;
    }
    let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
    cross(a, b, p).abs() <= tol * len && (-tol..=1.0 + tol).contains(&t)
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Andrew's monotone chain.
pub fn hull_2d(points: &[[f64; 2]]) -> PointCloudHull2D {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let hull = if pts.len() < 3 {
        pts.clone()
    } else {
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    };
    PointCloudHull2D {
        points: points.to_vec(),
        area: polygon_area(&hull),
        hull,
    }
}
