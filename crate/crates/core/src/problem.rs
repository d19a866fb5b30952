//! Problem-description files.
//!
//! ```json
//! {
//!   "A_bar": [[1.0, 0.15], [0.1, 1.0]],
//!   "B_bar": [[0.1], [1.1]],
//!   "deltaA_vertices": [[[0.0, 0.0], [0.0, 0.0]]],
//!   "deltaB_vertices": [[[0.0], [0.0]]],
//!   "W": {"box": {"lo": [-0.1, -0.1], "hi": [0.1, 0.1]}},
//!   "X": {"H": [[1, 0], [-1, 0], [0, 1], [0, -1]], "h": [8, 8, 8, 8]},
//!   "U": {"box": {"lo": [-4], "hi": [4]}},
//!   "cost": {"P": [[1, 0], [0, 1]], "R": [[1]]},
//!   "K": [[-0.4866, -0.4374]],
//!   "N": 5,
//!   "rng": {"seed": 1}
//! }
//! ```
//!
//! Matrices are row-major. An optional `reference` object is carried through
//! untouched.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::geometry::PolytopeFile;
use crate::system::{SystemError, UncertainSystem};

pub const DEFAULT_PROBLEM_JSON: &str = include_str!("../data/default_problem.json");

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemError {
    /// Location of the offending value, e.g. `cost.P` or `deltaA_vertices[1]`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ProblemError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ProblemError {
    ProblemError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(rename = "A_bar")]
    a_bar: Vec<Vec<f64>>,
    #[serde(rename = "B_bar")]
    b_bar: Vec<Vec<f64>>,
    #[serde(rename = "deltaA_vertices")]
    delta_a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "deltaB_vertices")]
    delta_b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "W")]
    w: PolytopeFile,
    #[serde(rename = "X")]
    x: PolytopeFile,
    #[serde(rename = "U")]
    u: PolytopeFile,
    cost: CostFile,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(default)]
    rng: Option<RngFile>,
    #[serde(default)]
    reference: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngFile {
    seed: u64,
}

/// A validated problem: the uncertain system plus controller data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: UncertainSystem,
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub horizon: usize,
    pub seed: Option<u64>,
    pub reference: Option<serde_json::Value>,
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ProblemError> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(err(path, "matrix must be nonempty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(err(
                format!("{path}[{i}]"),
                format!("row has {} entries, expected {cols}", r.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn positive_definite(path: &str, m: &DMatrix<f64>, dim: usize) -> Result<(), ProblemError> {
    if m.shape() != (dim, dim) {
        return Err(err(path, format!("expected {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(err(path, "matrix must be symmetric"));
    }
    if m.clone().cholesky().is_none() {
        return Err(err(path, "matrix must be positive definite"));
    }
    Ok(())
}

fn system_error_path(e: &SystemError) -> String {
    match e {
        SystemError::Dimension { what, .. } => what.clone(),
        SystemError::NoVertices(what) | SystemError::NonFinite(what) => what.to_string(),
        SystemError::UnboundedConstraintSet(what)
        | SystemError::EmptyConstraintSet(what)
        | SystemError::OriginOutside(what) => what.to_string(),
        SystemError::Geometry(_) => String::new(),
    }
}

impl Problem {
    pub fn from_json_str(text: &str) -> Result<Self, ProblemError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(if path == "." { String::new() } else { path }, e.inner().to_string())
        })?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// The two-state example shipped with the crate.
    pub fn default_example() -> Self {
        Self::from_json_str(DEFAULT_PROBLEM_JSON).expect("bundled example is valid")
    }

    fn from_file(f: ProblemFile) -> Result<Self, ProblemError> {
        let a_bar = matrix("A_bar", &f.a_bar)?;
        let b_bar = matrix("B_bar", &f.b_bar)?;
        let delta_a = f
            .delta_a
            .iter()
            .enumerate()
            .map(|(i, m)| matrix(&format!("deltaA_vertices[{i}]"), m))
            .collect::<Result<Vec<_>, _>>()?;
        let delta_b = f
            .delta_b
            .iter()
            .enumerate()
            .map(|(i, m)| matrix(&format!("deltaB_vertices[{i}]"), m))
            .collect::<Result<Vec<_>, _>>()?;
        let w = f.w.to_polytope().map_err(|e| err("W", e.to_string()))?;
        let x = f.x.to_polytope().map_err(|e| err("X", e.to_string()))?;
        let u = f.u.to_polytope().map_err(|e| err("U", e.to_string()))?;
        let system = UncertainSystem::new(a_bar, b_bar, delta_a, delta_b, w, x, u)
            .map_err(|e| err(system_error_path(&e), e.to_string()))?;
        system
            .check_interior()
            .map_err(|e| err(system_error_path(&e), format!("{e} in its interior")))?;

        let (d, m) = (system.state_dim(), system.input_dim());
        let p = matrix("cost.P", &f.cost.p)?;
        positive_definite("cost.P", &p, d)?;
        let r = matrix("cost.R", &f.cost.r)?;
        positive_definite("cost.R", &r, m)?;
        let k = matrix("K", &f.k)?;
        if k.shape() != (m, d) {
            return Err(err("K", format!("expected {m}x{d}, got {}x{}", k.nrows(), k.ncols())));
        }
        if f.n == 0 {
            return Err(err("N", "horizon must be at least 1"));
        }
        Ok(Self {
            system,
            p,
            r,
            k,
            horizon: f.n,
            seed: f.rng.map(|r| r.seed),
            reference: f.reference,
        })
    }
}
