use crate::error::{Error, Result};

/// Moment estimates and hyperparameters for one Adam-optimized parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(len: usize, learning_rate: f64) -> Result<Self> {
        Self::with_betas(len, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        // lr = 0 is allowed: it freezes parameters, which training tests rely on
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("Adam learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Adam betas ({beta1}, {beta2}) / epsilon {epsilon}"
            )));
        }
        Ok(AdamState {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// One bias-corrected Adam descent step applied to `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!("{n} params"),
            format!(
                "{} grads, {}/{} moments",
                grads.len(),
                state.first_moment.len(),
                state.second_moment.len()
            ),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i} = {}", grads[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
