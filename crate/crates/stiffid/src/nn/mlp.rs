//! Dense stack with tanh hidden activations and an optional bounded output
//! head; reverse-mode gradients chain through every stage.

use super::{BoundedOutput, DenseLayer, Matrix, NnError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub bounded: Option<BoundedOutput>,
    pub seed: u64,
    /// tanh outputs of each hidden stage, cached by forward.
    hidden_acts: Vec<Matrix>,
    /// Pre-activations feeding the bounded head.
    head_pre: Option<Matrix>,
}

impl Mlp {
    /// Builds the stack from `dims` (e.g. `[7, 20, 20, 20, 2]`); weights are
    /// Glorot-uniform from a ChaCha stream seeded with `seed`, so identical
    /// seeds give bitwise-identical networks.
    pub fn new(dims: &[usize], bounded: Option<BoundedOutput>, seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::InvalidConfig("need at least input and output dims".into()));
        }
        if let Some(b) = &bounded {
            if b.outputs() != *dims.last().unwrap() {
                return Err(NnError::InvalidConfig(format!(
                    "bounded head expects {} outputs, network has {}",
                    b.outputs(),
                    dims.last().unwrap()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::new(w[0], w[1], &mut rng))
            .collect();
        Ok(Self { layers, bounded, seed, hidden_acts: Vec::new(), head_pre: None })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().output_size()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Whole-batch forward pass; caches activations for [`Mlp::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        self.hidden_acts.clear();
        self.head_pre = None;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let z = layer.forward(&h)?;
            if i < last {
                let mut act = z;
                act.data.iter_mut().for_each(|v| *v = v.tanh());
                self.hidden_acts.push(act.clone());
                h = act;
            } else {
                h = z;
            }
        }
        if let Some(b) = &self.bounded {
            let out = b.forward(&h)?;
            self.head_pre = Some(h);
            Ok(out)
        } else {
            Ok(h)
        }
    }

    /// Backpropagates `dL/d(output)`, filling each layer's gradients;
    /// returns `dL/d(input)`.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix, NnError> {
        let mut d = if let Some(b) = &self.bounded {
            let pre = self.head_pre.take().ok_or(NnError::BackwardBeforeForward)?;
            b.backward(&pre, upstream)?
        } else {
            upstream.clone()
        };
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            d = layer.backward(&d)?;
            if i > 0 {
                let act = &self.hidden_acts[i - 1];
                for (dv, av) in d.data.iter_mut().zip(&act.data) {
                    *dv *= 1.0 - av * av;
                }
            }
        }
        self.hidden_acts.clear();
        Ok(d)
    }

    /// Applies `f` to each (params, grads) block in a fixed order; used to
    /// drive the optimizer.
    pub fn visit_params(&mut self, mut f: impl FnMut(&mut [f64], &[f64])) {
        for layer in &mut self.layers {
            f(&mut layer.weights.data, &layer.grad_weights.data);
            f(&mut layer.biases, &layer.grad_biases);
        }
    }

    /// Flat copy of all parameters (layer weights then biases, in order).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights.data);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Loads parameters from a flat slice in the [`Mlp::flat_params`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ShapeMismatch {
                what: "flat params",
                expected: (self.param_count(), 1),
                got: (flat.len(), 1),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.data.len();
            layer.weights.data.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Flat copy of all gradients, aligned with [`Mlp::flat_params`].
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.grad_weights.data);
            out.extend_from_slice(&layer.grad_biases);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pidl_like() -> Mlp {
        let bounded = BoundedOutput::uniform(2, 10.0, 0.9).unwrap();
        Mlp::new(&[7, 20, 20, 20, 2], Some(bounded), 42).unwrap()
    }

    #[test]
    fn construction_is_seed_deterministic() {
        let a = pidl_like();
        let b = pidl_like();
        assert_eq!(a.flat_params(), b.flat_params());
        let c = Mlp::new(&[7, 20, 20, 20, 2], None, 43).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn bounded_head_confines_outputs() {
        let mut net = pidl_like();
        let x = Matrix::from_vec(4, 7, (0..28).map(|i| (i as f64) * 7.0 - 90.0).collect());
        let y = net.forward(&x).unwrap();
        for v in &y.data {
            assert!(*v > 1.0 && *v < 19.0);
        }
    }

    #[test]
    fn backward_before_forward_rejected() {
        let mut net = pidl_like();
        let up = Matrix::zeros(4, 2);
        assert!(matches!(net.backward(&up), Err(NnError::BackwardBeforeForward)));
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        // Loss = sum(outputs); spot-check 100 random parameters.
        use rand::{Rng, SeedableRng};
        let mut net = pidl_like();
        let x = Matrix::from_vec(
            5,
            7,
            {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                (0..35).map(|_| rng.gen_range(-2.0..2.0)).collect()
            },
        );
        let out = net.forward(&x).unwrap();
        let ones = Matrix::from_vec(out.rows, out.cols, vec![1.0; out.data.len()]);
        net.backward(&ones).unwrap();
        let grads = net.flat_grads();
        let params = net.flat_params();

        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let h = 1e-6;
        for _ in 0..100 {
            let idx = rng.gen_range(0..params.len());
            let mut pp = params.clone();
            pp[idx] += h;
            let mut pm = params.clone();
            pm[idx] -= h;
            let mut np = net.clone();
            np.set_flat_params(&pp).unwrap();
            let mut nm = net.clone();
            nm.set_flat_params(&pm).unwrap();
            let fp: f64 = np.forward(&x).unwrap().data.iter().sum();
            let fm: f64 = nm.forward(&x).unwrap().data.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grads[idx]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "param {idx}: fd {fd} vs analytic {} ({rel})", grads[idx]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut net = Mlp::new(&[3, 8, 2], None, 5).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.2, -0.4, 0.9, 1.1, 0.0, -0.6]);
        let out = net.forward(&x).unwrap();
        let ones = Matrix::from_vec(out.rows, out.cols, vec![1.0; out.data.len()]);
        let dx = net.backward(&ones).unwrap();
        let h = 1e-6;
        for idx in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fp: f64 = net.forward(&xp).unwrap().data.iter().sum();
            let fm: f64 = net.forward(&xm).unwrap().data.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - dx.data[idx]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5);
        }
    }
}
