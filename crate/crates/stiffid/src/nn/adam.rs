//! Adam with bias correction and hyperbolic learning-rate decay
//! `lr_t = lr / (1 + decay * step_count)`.

use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state for `n` parameters with the given base learning rate and
    /// decay; beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(n: usize, lr: f64, decay: f64) -> Self {
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// The learning rate the next [`adam_step`] call will use.
    pub fn effective_lr(&self) -> f64 {
        self.lr / (1.0 + self.decay * self.step_count as f64)
    }
}

/// One Adam update in place. The effective rate is evaluated at the current
/// `step_count`, bias correction uses `step_count + 1`, and the counter is
/// incremented afterwards.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != st.first_moment.len() {
        return Err(NnError::ShapeMismatch {
            what: "adam step",
            expected: (st.first_moment.len(), 1),
            got: (params.len(), 1),
        });
    }
    let lr_t = st.effective_lr();
    let t = (st.step_count + 1) as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        st.first_moment[i] = st.beta1 * st.first_moment[i] + (1.0 - st.beta1) * g;
        st.second_moment[i] = st.beta2 * st.second_moment[i] + (1.0 - st.beta2) * g * g;
        let m_hat = st.first_moment[i] / bc1;
        let v_hat = st.second_moment[i] / bc2;
        params[i] -= lr_t * m_hat / (v_hat.sqrt() + st.epsilon);
    }
    st.step_count += 1;
    Ok(())
}
