//! Bounded output activation `Z = Z_mean (1 + Z_range tanh(X))`.
//!
//! Maps any pre-activation into the open interval
//! `(Z_mean (1 - Z_range), Z_mean (1 + Z_range))`, confining estimates to the
//! physically plausible range. The gradient for back-propagation is
//! `dL/dX = Z_mean Z_range dL/dZ (1 - tanh(X)^2)`.

use super::{Matrix, NnError};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundedOutput {
    /// Per-output scale; the interval midpoint.
    pub z_mean: Vec<f64>,
    /// Fraction of the midpoint covered on each side, in (0, 1).
    pub z_range: f64,
}

impl BoundedOutput {
    /// Uniform `z_mean` across `outputs` outputs.
    pub fn uniform(outputs: usize, z_mean: f64, z_range: f64) -> Result<Self, NnError> {
        Self::new(vec![z_mean; outputs], z_range)
    }

    pub fn new(z_mean: Vec<f64>, z_range: f64) -> Result<Self, NnError> {
        if !(z_range > 0.0 && z_range < 1.0) {
            return Err(NnError::InvalidConfig(format!(
                "z_range must lie in (0,1), got {z_range}"
            )));
        }
        if z_mean.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(NnError::InvalidConfig(format!("z_mean must be positive, got {z_mean:?}")));
        }
        Ok(Self { z_mean, z_range })
    }

    pub fn outputs(&self) -> usize {
        self.z_mean.len()
    }

    /// Lower and upper asymptote for output column `j`.
    pub fn interval(&self, j: usize) -> (f64, f64) {
        (self.z_mean[j] * (1.0 - self.z_range), self.z_mean[j] * (1.0 + self.z_range))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols != self.outputs() {
            return Err(NnError::ShapeMismatch {
                what: "bounded forward input",
                expected: (x.rows, self.outputs()),
                got: x.shape(),
            });
        }
        // tanh rounds to exactly +-1.0 for |x| > ~19 in f64 and the decimal
        // endpoints themselves are not reached exactly by the float
        // expression; clamping tanh a saturation margin inside +-1 keeps the
        // output strictly interior for any input. The margin only engages
        // for |x| > ~9.4, far past any useful gradient.
        const TANH_SAT: f64 = 1.0 - 1.0 / (1u64 << 26) as f64;
        let mut z = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                let th = x.at(i, j).tanh().clamp(-TANH_SAT, TANH_SAT);
                *z.at_mut(i, j) = self.z_mean[j] * (1.0 + self.z_range * th);
            }
        }
        Ok(z)
    }

    /// `dL/dX` given the pre-activations `x` and `dL/dZ`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<Matrix, NnError> {
        if upstream.shape() != x.shape() || x.cols != self.outputs() {
            return Err(NnError::ShapeMismatch {
                what: "bounded backward",
                expected: x.shape(),
                got: upstream.shape(),
            });
        }
        let mut dx = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                let th = x.at(i, j).tanh();
                *dx.at_mut(i, j) =
                    self.z_mean[j] * self.z_range * upstream.at(i, j) * (1.0 - th * th);
            }
        }
        Ok(dx)
    }
}
