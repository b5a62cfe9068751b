use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in f64 regardless of the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Scalar>(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = |id| vec![0.0; store.value(id).numel()];
        Self {
            config,
            step: 0,
            first: store.ids().map(zeros).collect(),
            second: store.ids().map(zeros).collect(),
        }
    }

    /// Rebuilds optimizer state from saved moments.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one update from the accumulated gradients and zeroes them.
    /// Refuses to touch any parameter if a gradient is not finite.
    pub fn step<F: Scalar>(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        for id in store.ids() {
            if !store.grad(id).all_finite() {
                return Err(TensorError::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        let (values, grads) = store.values_and_grads_mut();
        for (k, (value, grad)) in values.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (w, g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = g.as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *w = F::from_f64_lossy(w.as_f64() - update);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
