//! Horizon-stacked nominal predictions and causal disturbance-feedback gains.
//!
//! For a horizon `n`, the predicted states `x_1 .. x_n` satisfy
//!
//! ```text
//!     [x_1; ..; x_n] = A_stack x_0 + C [u_0; ..; u_{n-1}] + G [w_0; ..; w_{n-1}]
//! ```
//!
//! with `A_stack = [A; A^2; ..; A^n]`, `G` block lower triangular with
//! blocks `A^(i-j)` and `C = G (I_n ⊗ B)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("expected {expected} past disturbances, got {got}")]
    HistoryLengthMismatch { expected: usize, got: usize },
    #[error("gain block ({k}, {l}) violates causality")]
    NonCausal { k: usize, l: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedDynamics {
    pub horizon: usize,
    pub a_stack: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `A^0 .. A^horizon`.
    powers: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
}

impl StackedDynamics {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Result<Self, PredictionError> {
        if horizon == 0 {
            return Err(PredictionError::ZeroHorizon);
        }
        let d = a.nrows();
        let m = b.ncols();
        if a.ncols() != d || b.nrows() != d {
            return Err(PredictionError::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let mut powers = vec![DMatrix::identity(d, d)];
        for k in 1..=horizon {
            powers.push(a * &powers[k - 1]);
        }
        let mut a_stack = DMatrix::zeros(d * horizon, d);
        let mut g = DMatrix::zeros(d * horizon, d * horizon);
        let mut c = DMatrix::zeros(d * horizon, m * horizon);
        for i in 0..horizon {
            a_stack.view_mut((i * d, 0), (d, d)).copy_from(&powers[i + 1]);
            for j in 0..=i {
                g.view_mut((i * d, j * d), (d, d)).copy_from(&powers[i - j]);
                c.view_mut((i * d, j * m), (d, m)).copy_from(&(&powers[i - j] * b));
            }
        }
        Ok(Self {
            horizon,
            a_stack,
            c,
            g,
            powers,
            b: b.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A^k` for `0 <= k <= horizon`.
    pub fn power(&self, k: usize) -> &DMatrix<f64> {
        &self.powers[k]
    }

    /// Block `(i, j)` of `G`.
    pub fn g_block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        (j <= i && i < self.horizon).then(|| &self.powers[i - j])
    }

    /// `[x_1; ..; x_n]` for inputs `u` and disturbances `w` (both stacked).
    pub fn predict(&self, x0: &DVector<f64>, u: &DVector<f64>, w: Option<&DVector<f64>>) -> DVector<f64> {
        let mut out = &self.a_stack * x0 + &self.c * u;
        if let Some(w) = w {
            out += &self.g * w;
        }
        out
    }
}

/// Strictly block lower triangular gains `M_{k,l}` (`m x d`, `l < k`) of the
/// policy `u_k = u_bar_k + sum_{l<k} M_{k,l} w_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGainStack {
    horizon: usize,
    m: usize,
    d: usize,
    matrix: DMatrix<f64>,
}

impl FeedbackGainStack {
    pub fn zeros(horizon: usize, m: usize, d: usize) -> Self {
        Self {
            horizon,
            m,
            d,
            matrix: DMatrix::zeros(m * horizon, d * horizon),
        }
    }

    /// Rejects nonzero entries on or above the block diagonal.
    pub fn from_matrix(horizon: usize, m: usize, d: usize, matrix: DMatrix<f64>) -> Result<Self, PredictionError> {
        if matrix.shape() != (m * horizon, d * horizon) {
            return Err(PredictionError::Dimension(format!(
                "gain matrix is {}x{}, expected {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                m * horizon,
                d * horizon
            )));
        }
        for k in 0..horizon {
            for l in k..horizon {
                if matrix.view((k * m, l * d), (m, d)).iter().any(|&v| v != 0.0) {
                    return Err(PredictionError::NonCausal { k, l });
                }
            }
        }
        Ok(Self { horizon, m, d, matrix })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block(&self, k: usize, l: usize) -> DMatrix<f64> {
        self.matrix.view((k * self.m, l * self.d), (self.m, self.d)).into_owned()
    }

    pub fn set_block(&mut self, k: usize, l: usize, block: &DMatrix<f64>) -> Result<(), PredictionError> {
        if l >= k || k >= self.horizon {
            return Err(PredictionError::NonCausal { k, l });
        }
        if block.shape() != (self.m, self.d) {
            return Err(PredictionError::Dimension(format!(
                "block is {}x{}, expected {}x{}",
                block.nrows(),
                block.ncols(),
                self.m,
                self.d
            )));
        }
        self.matrix.view_mut((k * self.m, l * self.d), (self.m, self.d)).copy_from(block);
        Ok(())
    }
}

/// `u_k = u_bar_k + sum_{l<k} M_{k,l} w_l`, where `history` holds exactly
/// `w_0 .. w_{k-1}`.
pub fn policy_input(
    gains: &FeedbackGainStack,
    u_bar: &DVector<f64>,
    k: usize,
    history: &[DVector<f64>],
) -> Result<DVector<f64>, PredictionError> {
    if history.len() != k {
        return Err(PredictionError::HistoryLengthMismatch {
            expected: k,
            got: history.len(),
        });
    }
    let (m, d) = (gains.m, gains.d);
    if k >= gains.horizon || u_bar.len() != m * gains.horizon {
        return Err(PredictionError::Dimension(format!(
            "step {k} with horizon {} and {} stacked inputs",
            gains.horizon,
            u_bar.len()
        )));
    }
    let mut u = u_bar.rows(k * m, m).into_owned();
    for (l, w) in history.iter().enumerate() {
        if w.len() != d {
            return Err(PredictionError::Dimension(format!("w_{l} has length {}", w.len())));
        }
        u += gains.matrix.view((k * m, l * d), (m, d)) * w;
    }
    Ok(u)
}
