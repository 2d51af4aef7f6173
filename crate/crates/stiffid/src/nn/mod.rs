//! Minimal dense-math kernel for the two learning estimators: fully
//! connected layers with tanh hidden activations, the bounded output
//! activation `Z = Z_mean (1 + Z_range tanh(X))` with its analytic gradient,
//! a bidirectional LSTM layer for the sequence baseline, reverse-mode
//! gradient propagation, and the Adam optimizer with hyperbolic
//! learning-rate decay.
//!
//! Everything is dense `f64`, single-threaded, and deterministic: weight
//! initialization is Glorot-uniform from a seeded ChaCha stream, and no
//! operation depends on iteration order beyond the stated layout.

mod adam;
mod bounded;
mod dense;
mod lstm;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use bounded::BoundedOutput;
pub use dense::DenseLayer;
pub use lstm::{
    bilstm_backward, bilstm_forward, bilstm_forward_with_tape, BiLstmGrads, BiLstmLayer,
    BiLstmTape, LstmCell,
};
pub use mlp::Mlp;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    ShapeMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    /// Backward was called without a cached forward pass.
    BackwardBeforeForward,
    InvalidConfig(String),
    /// A loss or gradient turned non-finite.
    NonFinite { where_: &'static str },
}

impl std::fmt::Display for NnError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NnError::ShapeMismatch { what, expected, got } => write!(
                f,
                "shape mismatch in {what}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            NnError::BackwardBeforeForward => {
                write!(f, "backward called before forward (no cached activations)")
            }
            NnError::InvalidConfig(why) => write!(f, "invalid network config: {why}"),
            NnError::NonFinite { where_ } => write!(f, "non-finite value in {where_}"),
        }
    }
}

impl std::error::Error for NnError {}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Glorot-uniform initialization in
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]` where the
    /// matrix maps `cols` inputs to `rows` outputs.
    pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { rows, cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `C = A * B^T` where A is [n x k] and B is [m x k]; result [n x m].
/// This is the layout used by layer forward passes (inputs row-major,
/// weights [out x in]).
pub(crate) fn matmul_bt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols);
    let mut c = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut s = 0.0;
            for k in 0..a.cols {
                s += arow[k] * brow[k];
            }
            *c.at_mut(i, j) = s;
        }
    }
    c
}

/// `C = A^T * B` where A is [n x m] and B is [n x k]; result [m x k].
/// Used for weight gradients (`upstream^T * input`).
pub(crate) fn matmul_at(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows);
    let mut c = Matrix::zeros(a.cols, b.cols);
    for n in 0..a.rows {
        let arow = a.row(n);
        let brow = b.row(n);
        for i in 0..a.cols {
            let ai = arow[i];
            if ai == 0.0 {
                continue;
            }
            let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (ck, bk) in crow.iter_mut().zip(brow) {
                *ck += ai * bk;
            }
        }
    }
    c
}

/// `C = A * B` where A is [n x m] and B is [m x k]; result [n x k].
pub(crate) fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows);
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aik * bj;
            }
        }
    }
    c
}
