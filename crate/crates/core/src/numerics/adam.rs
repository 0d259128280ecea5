use super::{check_len, Grads, NumericsError, Parameters};

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Bias-corrected Adam update of `params` in place. Fails without touching
    /// anything if a gradient element is not finite.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        learning_rate: f64,
    ) -> Result<(), NumericsError> {
        check_len("adam parameters", self.first_moment.len(), params.len())?;
        check_len("adam gradients", self.first_moment.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NumericsError::NonFinite {
                context: "adam gradient",
            });
        }
        self.apply(params, grads, learning_rate);
        Ok(())
    }

    fn apply(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One [`AdamState`] per tensor of a [`Parameters`] implementor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<M: Parameters + ?Sized>(model: &M) -> Self {
        Self {
            states: model
                .params()
                .iter()
                .map(|t| AdamState::new(t.len()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step_count)
    }

    pub fn step<M: Parameters + ?Sized>(
        &mut self,
        model: &mut M,
        grads: &Grads,
        learning_rate: f64,
    ) -> Result<(), NumericsError> {
        check_len("adam tensor count", self.states.len(), grads.tensors.len())?;
        if !grads.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "adam gradient",
            });
        }
        for ((state, p), g) in self.states.iter().zip(model.params()).zip(&grads.tensors) {
            check_len("adam parameters", state.first_moment.len(), p.len())?;
            check_len("adam gradients", state.first_moment.len(), g.len())?;
        }
        for ((state, p), g) in self
            .states
            .iter_mut()
            .zip(model.params_mut())
            .zip(&grads.tensors)
        {
            state.apply(p.data_mut(), g.data(), learning_rate);
        }
        Ok(())
    }
}
