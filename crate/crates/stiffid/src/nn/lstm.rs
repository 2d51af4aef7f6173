//! Bidirectional LSTM layer with full backpropagation through time.
//!
//! Each direction is a standard LSTM cell (gate order i, f, g, o):
//!
//! ```text
//! z = W_in x_t + W_rec h_{t-1} + b          (z in R^{4H})
//! i = sigmoid(z_i)  f = sigmoid(z_f)  g = tanh(z_g)  o = sigmoid(z_o)
//! c_t = f . c_{t-1} + i . g
//! h_t = o . tanh(c_t)
//! ```
//!
//! The layer output at step `t` concatenates the forward cell's `h_t` with
//! the backward cell's `h_t` (run over the reversed sequence), giving
//! `[N x 2H]` for an `[N x F]` input.

use super::{Matrix, NnError};
use rand_chacha::ChaCha8Rng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// [4H x F].
    pub w_input: Matrix,
    /// [4H x H].
    pub w_recur: Matrix,
    /// [4H].
    pub bias: Vec<f64>,
}

impl LstmCell {
    fn new(features: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_input: Matrix::glorot(4 * hidden, features, rng),
            w_recur: Matrix::glorot(4 * hidden, hidden, rng),
            bias: vec![0.0; 4 * hidden],
        }
    }

    fn hidden(&self) -> usize {
        self.bias.len() / 4
    }
}

/// Per-step values saved by a forward pass, consumed by backprop.
struct StepRecord {
    /// Gate activations i, f, g, o (each [H]).
    gates: [Vec<f64>; 4],
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct DirectionTape {
    steps: Vec<StepRecord>,
    /// Sequence indices in processing order.
    order: Vec<usize>,
}

/// Cached activations of a bidirectional forward pass.
pub struct BiLstmTape {
    forward: DirectionTape,
    backward: DirectionTape,
    input: Matrix,
}

/// Parameter gradients for both directions, shapes matching [`BiLstmLayer`].
#[derive(Debug, Clone)]
pub struct BiLstmGrads {
    pub fwd_w_input: Matrix,
    pub fwd_w_recur: Matrix,
    pub fwd_bias: Vec<f64>,
    pub bwd_w_input: Matrix,
    pub bwd_w_recur: Matrix,
    pub bwd_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
    pub hidden_size: usize,
}

impl BiLstmLayer {
    pub fn new(features: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forward_cell: LstmCell::new(features, hidden, rng),
            backward_cell: LstmCell::new(features, hidden, rng),
            hidden_size: hidden,
        }
    }

    pub fn features(&self) -> usize {
        self.forward_cell.w_input.cols
    }

    pub fn param_count(&self) -> usize {
        let c = |cell: &LstmCell| cell.w_input.data.len() + cell.w_recur.data.len() + cell.bias.len();
        c(&self.forward_cell) + c(&self.backward_cell)
    }
}

fn run_direction(
    cell: &LstmCell,
    seq: &Matrix,
    order: Vec<usize>,
) -> (Vec<Vec<f64>>, DirectionTape) {
    let h_size = cell.hidden();
    let mut h = vec![0.0; h_size];
    let mut c = vec![0.0; h_size];
    let mut outputs = vec![Vec::new(); seq.rows];
    let mut steps = Vec::with_capacity(seq.rows);

    for &t in &order {
        let x = seq.row(t);
        let mut z = cell.bias.clone();
        for k in 0..4 * h_size {
            let wi = cell.w_input.row(k);
            let wr = cell.w_recur.row(k);
            let mut s = 0.0;
            for (a, b) in wi.iter().zip(x) {
                s += a * b;
            }
            for (a, b) in wr.iter().zip(&h) {
                s += a * b;
            }
            z[k] += s;
        }
        let gate_i: Vec<f64> = (0..h_size).map(|j| sigmoid(z[j])).collect();
        let gate_f: Vec<f64> = (0..h_size).map(|j| sigmoid(z[h_size + j])).collect();
        let gate_g: Vec<f64> = (0..h_size).map(|j| z[2 * h_size + j].tanh()).collect();
        let gate_o: Vec<f64> = (0..h_size).map(|j| sigmoid(z[3 * h_size + j])).collect();

        let c_prev = c.clone();
        let h_prev = h.clone();
        for j in 0..h_size {
            c[j] = gate_f[j] * c_prev[j] + gate_i[j] * gate_g[j];
        }
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        for j in 0..h_size {
            h[j] = gate_o[j] * tanh_c[j];
        }
        outputs[t] = h.clone();
        steps.push(StepRecord {
            gates: [gate_i, gate_f, gate_g, gate_o],
            c_prev,
            h_prev,
            tanh_c,
        });
    }
    (outputs, DirectionTape { steps, order })
}

/// Backprop one direction; `d_out[t]` is the loss gradient w.r.t. that
/// direction's hidden output at sequence index `t`. Returns `dx` summed into
/// the provided matrix and fills the gradient buffers.
#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    cell: &LstmCell,
    tape: &DirectionTape,
    seq: &Matrix,
    d_out: &[Vec<f64>],
    gw_input: &mut Matrix,
    gw_recur: &mut Matrix,
    gb: &mut [f64],
    dx: &mut Matrix,
) {
    let h_size = cell.hidden();
    let mut dh_next = vec![0.0; h_size];
    let mut dc_next = vec![0.0; h_size];
    let mut dz = vec![0.0; 4 * h_size];

    for (step_idx, &t) in tape.order.iter().enumerate().rev() {
        let rec = &tape.steps[step_idx];
        let [gi, gf, gg, go] = &rec.gates;
        for j in 0..h_size {
            let dh = d_out[t][j] + dh_next[j];
            let tc = rec.tanh_c[j];
            let d_o = dh * tc;
            let dc = dh * go[j] * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * gg[j];
            let d_f = dc * rec.c_prev[j];
            let d_g = dc * gi[j];
            dz[j] = d_i * gi[j] * (1.0 - gi[j]);
            dz[h_size + j] = d_f * gf[j] * (1.0 - gf[j]);
            dz[2 * h_size + j] = d_g * (1.0 - gg[j] * gg[j]);
            dz[3 * h_size + j] = d_o * go[j] * (1.0 - go[j]);
            dc_next[j] = dc * gf[j];
        }
        let x = seq.row(t);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..4 * h_size {
            let d = dz[k];
            if d == 0.0 {
                continue;
            }
            gb[k] += d;
            let gwi = &mut gw_input.data[k * seq.cols..(k + 1) * seq.cols];
            for (g, xv) in gwi.iter_mut().zip(x) {
                *g += d * xv;
            }
            let gwr = &mut gw_recur.data[k * h_size..(k + 1) * h_size];
            for (g, hv) in gwr.iter_mut().zip(&rec.h_prev) {
                *g += d * hv;
            }
            let dxrow = &mut dx.data[t * seq.cols..(t + 1) * seq.cols];
            let wi = cell.w_input.row(k);
            for (o, wv) in dxrow.iter_mut().zip(wi) {
                *o += d * wv;
            }
            let wr = cell.w_recur.row(k);
            for (o, wv) in dh_next.iter_mut().zip(wr) {
                *o += d * wv;
            }
        }
    }
}

/// Runs both directions and concatenates per-step outputs: `[N x 2H]`.
pub fn bilstm_forward(layer: &BiLstmLayer, seq: &Matrix) -> Result<Matrix, NnError> {
    Ok(bilstm_forward_with_tape(layer, seq)?.0)
}

/// Forward pass that also returns the tape needed for [`bilstm_backward`].
pub fn bilstm_forward_with_tape(
    layer: &BiLstmLayer,
    seq: &Matrix,
) -> Result<(Matrix, BiLstmTape), NnError> {
    if seq.rows == 0 {
        return Err(NnError::InvalidConfig("empty sequence".into()));
    }
    if seq.cols != layer.features() {
        return Err(NnError::ShapeMismatch {
            what: "bilstm input",
            expected: (seq.rows, layer.features()),
            got: seq.shape(),
        });
    }
    let n = seq.rows;
    let h = layer.hidden_size;
    let (out_f, tape_f) = run_direction(&layer.forward_cell, seq, (0..n).collect());
    let (out_b, tape_b) = run_direction(&layer.backward_cell, seq, (0..n).rev().collect());
    let mut out = Matrix::zeros(n, 2 * h);
    for t in 0..n {
        out.data[t * 2 * h..t * 2 * h + h].copy_from_slice(&out_f[t]);
        out.data[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&out_b[t]);
    }
    Ok((out, BiLstmTape { forward: tape_f, backward: tape_b, input: seq.clone() }))
}

/// Backpropagation through time for both directions. `d_out` is `[N x 2H]`
/// (forward half first). Returns parameter gradients and `dL/d(input)`.
pub fn bilstm_backward(
    layer: &BiLstmLayer,
    tape: &BiLstmTape,
    d_out: &Matrix,
) -> Result<(BiLstmGrads, Matrix), NnError> {
    let n = tape.input.rows;
    let h = layer.hidden_size;
    if d_out.shape() != (n, 2 * h) {
        return Err(NnError::ShapeMismatch {
            what: "bilstm backward upstream",
            expected: (n, 2 * h),
            got: d_out.shape(),
        });
    }
    let features = layer.features();
    let mut grads = BiLstmGrads {
        fwd_w_input: Matrix::zeros(4 * h, features),
        fwd_w_recur: Matrix::zeros(4 * h, h),
        fwd_bias: vec![0.0; 4 * h],
        bwd_w_input: Matrix::zeros(4 * h, features),
        bwd_w_recur: Matrix::zeros(4 * h, h),
        bwd_bias: vec![0.0; 4 * h],
    };
    let mut dx = Matrix::zeros(n, features);

    let d_fwd: Vec<Vec<f64>> = (0..n).map(|t| d_out.row(t)[..h].to_vec()).collect();
    let d_bwd: Vec<Vec<f64>> = (0..n).map(|t| d_out.row(t)[h..].to_vec()).collect();

    backprop_direction(
        &layer.forward_cell,
        &tape.forward,
        &tape.input,
        &d_fwd,
        &mut grads.fwd_w_input,
        &mut grads.fwd_w_recur,
        &mut grads.fwd_bias,
        &mut dx,
    );
    backprop_direction(
        &layer.backward_cell,
        &tape.backward,
        &tape.input,
        &d_bwd,
        &mut grads.bwd_w_input,
        &mut grads.bwd_w_recur,
        &mut grads.bwd_bias,
        &mut dx,
    );
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = BiLstmLayer::new(3, 4, &mut rng);
        layer.forward_cell.w_input = Matrix::zeros(16, 3);
        layer.forward_cell.w_recur = Matrix::zeros(16, 4);
        layer.backward_cell.w_input = Matrix::zeros(16, 3);
        layer.backward_cell.w_recur = Matrix::zeros(16, 4);
        let seq = Matrix::from_vec(5, 3, (0..15).map(|i| i as f64).collect());
        let out = bilstm_forward(&layer, &seq).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_halves_match_with_mirrored_weights() {
        // With one time step the two directions see the same input, so equal
        // weights give equal halves.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = BiLstmLayer::new(3, 2, &mut rng);
        layer.backward_cell = layer.forward_cell.clone();
        let seq = Matrix::from_vec(1, 3, vec![0.4, -0.2, 0.9]);
        let out = bilstm_forward(&layer, &seq).unwrap();
        assert_eq!(out.cols, 4);
        assert_eq!(out.row(0)[..2], out.row(0)[2..]);
    }

    /// Independent step-by-step oracle: the same recurrences written as
    /// scalar loops with explicit gate slices.
    fn oracle_direction(cell: &LstmCell, seq: &Matrix, reversed: bool) -> Vec<Vec<f64>> {
        let hs = cell.hidden();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut out = vec![vec![]; seq.rows];
        let idx: Vec<usize> = if reversed {
            (0..seq.rows).rev().collect()
        } else {
            (0..seq.rows).collect()
        };
        for t in idx {
            let mut z = vec![0.0; 4 * hs];
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = cell.bias[k];
                for f in 0..seq.cols {
                    *zk += cell.w_input.at(k, f) * seq.at(t, f);
                }
                for j in 0..hs {
                    *zk += cell.w_recur.at(k, j) * h[j];
                }
            }
            let mut c_new = vec![0.0; hs];
            let mut h_new = vec![0.0; hs];
            for j in 0..hs {
                let i_g = sig(z[j]);
                let f_g = sig(z[hs + j]);
                let g_g = z[2 * hs + j].tanh();
                let o_g = sig(z[3 * hs + j]);
                c_new[j] = f_g * c[j] + i_g * g_g;
                h_new[j] = o_g * c_new[j].tanh();
            }
            c = c_new;
            h = h_new;
            out[t] = h.clone();
        }
        out
    }

    #[test]
    fn random_small_case_matches_recurrence_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = BiLstmLayer::new(2, 2, &mut rng);
        let seq = Matrix::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let out = bilstm_forward(&layer, &seq).unwrap();
        let of = oracle_direction(&layer.forward_cell, &seq, false);
        let ob = oracle_direction(&layer.backward_cell, &seq, true);
        for t in 0..3 {
            for j in 0..2 {
                assert!((out.at(t, j) - of[t][j]).abs() < 1e-14);
                assert!((out.at(t, 2 + j) - ob[t][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        // Loss = sum of outputs; gradient of every parameter checked by
        // central differences on a small random instance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = BiLstmLayer::new(2, 2, &mut rng);
        let seq =
            Matrix::from_vec(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let loss = |l: &BiLstmLayer| -> f64 {
            bilstm_forward(l, &seq).unwrap().data.iter().sum()
        };

        let (out, tape) = bilstm_forward_with_tape(&layer, &seq).unwrap();
        let ones = Matrix::from_vec(out.rows, out.cols, vec![1.0; out.data.len()]);
        let (grads, _dx) = bilstm_backward(&layer, &tape, &ones).unwrap();

        let h = 1e-6;
        let mut check = |get: &dyn Fn(&mut BiLstmLayer) -> &mut f64, analytic: f64| {
            let mut lp = layer.clone();
            *get(&mut lp) += h;
            let mut lm = layer.clone();
            *get(&mut lm) -= h;
            let fd = (loss(&lp) - loss(&lm)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "fd {fd} vs analytic {analytic} (rel {rel})");
        };

        for k in 0..8 {
            let idx = k % grads.fwd_w_input.data.len();
            let g = grads.fwd_w_input.data[idx];
            check(&|l: &mut BiLstmLayer| &mut l.forward_cell.w_input.data[idx], g);
            let idxr = k % grads.fwd_w_recur.data.len();
            let gr = grads.fwd_w_recur.data[idxr];
            check(&|l: &mut BiLstmLayer| &mut l.forward_cell.w_recur.data[idxr], gr);
            let gb = grads.bwd_bias[k];
            check(&|l: &mut BiLstmLayer| &mut l.backward_cell.bias[k], gb);
        }
    }

    #[test]
    fn bptt_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layer = BiLstmLayer::new(2, 3, &mut rng);
        let seq =
            Matrix::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (out, tape) = bilstm_forward_with_tape(&layer, &seq).unwrap();
        let ones = Matrix::from_vec(out.rows, out.cols, vec![1.0; out.data.len()]);
        let (_grads, dx) = bilstm_backward(&layer, &tape, &ones).unwrap();
        let h = 1e-6;
        for idx in 0..seq.data.len() {
            let mut sp = seq.clone();
            sp.data[idx] += h;
            let mut sm = seq.clone();
            sm.data[idx] -= h;
            let fp: f64 = bilstm_forward(&layer, &sp).unwrap().data.iter().sum();
            let fm: f64 = bilstm_forward(&layer, &sm).unwrap().data.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - dx.data[idx]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "input grad {idx}: fd {fd} vs {}", dx.data[idx]);
        }
    }
}
