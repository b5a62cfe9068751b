//! Parameterised layers recorded onto a [`Tape`].

use callstack_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Uniform init with standard deviation `1 / sqrt(fan_in)`.
pub fn init_weight<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let a = (3.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::from_f64_lossy(rng.gen_range(-a..a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).unwrap()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_weight(rng, d_in, d_out));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    /// Same as [`Linear::new`] with zero weights.
    pub fn zeroed<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    /// `x[r×d_in] -> [r×d_out]`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                Ok(tape.add_bias(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [d_in, hidden.., d_out]`.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }
}
