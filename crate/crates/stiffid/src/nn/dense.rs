//! Fully connected layer with cached input for the backward pass.

use super::{matmul, matmul_at, matmul_bt, Matrix, NnError};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// [out x in].
    pub weights: Matrix,
    /// [out].
    pub biases: Vec<f64>,
    /// Gradients from the most recent backward pass, same shapes.
    pub grad_weights: Matrix,
    pub grad_biases: Vec<f64>,
    cache: Option<Matrix>,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weights: Matrix::glorot(output, input, rng),
            biases: vec![0.0; output],
            grad_weights: Matrix::zeros(output, input),
            grad_biases: vec![0.0; output],
            cache: None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.cols
    }

    pub fn output_size(&self) -> usize {
        self.weights.rows
    }

    /// `x W^T + b` for a batch `x` of shape [N x in]; caches `x`.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols != self.input_size() {
            return Err(NnError::ShapeMismatch {
                what: "dense forward input",
                expected: (x.rows, self.input_size()),
                got: x.shape(),
            });
        }
        let mut out = matmul_bt(x, &self.weights);
        for i in 0..out.rows {
            let row = &mut out.data[i * out.cols..(i + 1) * out.cols];
            for (o, b) in row.iter_mut().zip(&self.biases) {
                *o += b;
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    /// Consumes the cached input, stores parameter gradients, and returns
    /// the gradient with respect to the input.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix, NnError> {
        let x = self.cache.take().ok_or(NnError::BackwardBeforeForward)?;
        if upstream.shape() != (x.rows, self.output_size()) {
            return Err(NnError::ShapeMismatch {
                what: "dense backward upstream",
                expected: (x.rows, self.output_size()),
                got: upstream.shape(),
            });
        }
        self.grad_weights = matmul_at(upstream, &x);
        for j in 0..self.output_size() {
            let mut s = 0.0;
            for i in 0..upstream.rows {
                s += upstream.at(i, j);
            }
            self.grad_biases[j] = s;
        }
        Ok(matmul(upstream, &self.weights))
    }

    pub fn param_count(&self) -> usize {
        self.weights.data.len() + self.biases.len()
    }
}
