//! Fully connected network with a flat parameter vector and explicit backprop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Hidden layers use `activation`; the output layer is always linear.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weights are
/// stored row-major (`out x in`) followed by its biases, and all layers are
/// concatenated into a single parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer inputs recorded by a forward pass; `acts[0]` is the network input.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

pub(crate) fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("MLP layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.uniform(-bound, bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("MLP layer sizes {sizes:?}")));
        }
        if params.len() != param_count(sizes) {
            return Err(Error::shape("Mlp::from_params", param_count(sizes), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("MLP weights".into()));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight block and bias block of layer `l`.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + i * o];
        (w, &self.params[off + i * o..off + i * o + o])
    }

    /// Mutable views of the final layer's weights and biases.
    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let l = self.sizes.len() - 2;
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let off = param_count(&self.sizes[..=l]);
        let (w, b) = self.params[off..off + i * o + o].split_at_mut(i * o);
        (w, b)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("Mlp input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = MlpCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.output)
    }

    /// Forward pass retaining what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, input: &[f64], cache: &mut MlpCache) -> Result<()> {
        self.check_input(input)?;
        let n_layers = self.sizes.len() - 1;
        cache.acts.resize(n_layers, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..n_layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            off += i * o + o;
            let last = l + 1 == n_layers;
            let mut out = if last {
                std::mem::take(&mut cache.output)
            } else {
                std::mem::take(&mut cache.acts[l + 1])
            };
            out.clear();
            let x = &cache.acts[l];
            out.extend((0..o).map(|r| dot(&w[r * i..(r + 1) * i], x) + b[r]));
            if !last && self.activation == Activation::Tanh {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            if last {
                cache.output = out;
            } else {
                cache.acts[l + 1] = out;
            }
        }
        Ok(())
    }

    /// Backpropagates `grad_output` (dLoss/dOutput) through the cached pass.
    ///
    /// Parameter gradients are accumulated into `grad_params` when given; the
    /// input gradient is returned.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64], grad_params: Option<&mut [f64]>) -> Vec<f64> {
        self.backward_impl(cache, grad_output, grad_params, true)
    }

    /// Accumulates parameter gradients only, skipping the input gradient.
    pub fn accumulate_param_grads(&self, cache: &MlpCache, grad_output: &[f64], grad_params: &mut [f64]) {
        self.backward_impl(cache, grad_output, Some(grad_params), false);
    }

    fn backward_impl(
        &self,
        cache: &MlpCache,
        grad_output: &[f64],
        mut grad_params: Option<&mut [f64]>,
        want_input: bool,
    ) -> Vec<f64> {
        assert_eq!(grad_output.len(), self.output_dim(), "Mlp::backward grad length");
        if let Some(g) = grad_params.as_deref() {
            assert_eq!(g.len(), self.params.len(), "Mlp::backward param grad length");
        }
        let n_layers = self.sizes.len() - 1;
        let mut delta = grad_output.to_vec();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            off -= i * o + o;
            let w = &self.params[off..off + i * o];
            let x = &cache.acts[l];
            if let Some(g) = grad_params.as_deref_mut() {
                let (gw, gb) = g[off..off + i * o + o].split_at_mut(i * o);
                for r in 0..o {
                    if delta[r] != 0.0 {
                        axpy(delta[r], x, &mut gw[r * i..(r + 1) * i]);
                    }
                    gb[r] += delta[r];
                }
            }
            if l == 0 && !want_input {
                return Vec::new();
            }
            let mut prev = vec![0.0; i];
            for r in 0..o {
                if delta[r] != 0.0 {
                    axpy(delta[r], &w[r * i..(r + 1) * i], &mut prev);
                }
            }
            if l > 0 && self.activation == Activation::Tanh {
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Weight matrix of layer `l` (`out x in`, row-major).
    pub fn weights(&self, l: usize) -> &[f64] {
        self.layer(l).0
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        self.layer(l).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = Rng::new(0);
        assert!(Mlp::new(&[3], Activation::Tanh, &mut rng).is_err());
        assert!(Mlp::new(&[3, 0, 2], Activation::Tanh, &mut rng).is_err());
        let m = Mlp::new(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(m.params().len(), 3 * 4 + 4 + 4 * 2 + 2);
        assert!(m.forward(&[1.0, 2.0]).is_err());
        assert!(Mlp::from_params(&[3, 2], Activation::Identity, vec![0.0; 7]).is_err());
    }

    #[test]
    fn linear_layer_by_hand() {
        let m = Mlp::from_params(&[2, 2], Activation::Identity, vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        assert_eq!(m.forward(&[1.0, -1.0]).unwrap(), vec![-0.5, -1.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        let m = Mlp::new(&[5, 7, 6, 3], Activation::Tanh, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let up: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |m: &Mlp, x: &[f64]| dot(&m.forward(x).unwrap(), &up);

        let mut cache = MlpCache::default();
        m.forward_cached(&x, &mut cache).unwrap();
        let mut gp = vec![0.0; m.params().len()];
        let gx = m.backward(&cache, &up, Some(&mut gp));

        let err = finite_diff_check(|xx| loss(&m, xx), &x, &gx, 1e-4).unwrap();
        assert!(err < 1e-6, "input grad {err}");
        let err = finite_diff_check(
            |p| loss(&Mlp::from_params(m.sizes(), m.activation(), p.to_vec()).unwrap(), &x),
            m.params(),
            &gp,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "param grad {err}");
    }
}
