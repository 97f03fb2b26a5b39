//! Parameter containers shared by the encoder and decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything holding named trainable tensors.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grads(&self) {
        self.visit_params("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Square-kernel convolution weights and bias.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    /// Uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init(c_out: usize, c_in: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = c_out * c_in * kernel * kernel;
        let weight = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self {
            weight: Tensor::param(vec![c_out, c_in, kernel, kernel], weight)?,
            bias: Tensor::param(vec![c_out], vec![0.0; c_out])?,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::param(
                vec![c_out, c_in, kernel, kernel],
                vec![0.0; c_out * c_in * kernel * kernel],
            )?,
            bias: Tensor::param(vec![c_out], vec![0.0; c_out])?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Stride 1, "same" padding.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, &self.bias, 1, self.kernel_size() / 2)
    }
}

impl Parameterized for ConvParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
