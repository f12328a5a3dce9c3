//! Parameter initialization and the small layer vocabulary shared by the
//! encoder, aggregator and decoder.

use ndtensor::{Bindings, ParameterStore, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Fills a [`ParameterStore`] in a fixed order from one seeded stream.
pub struct Initializer<'a> {
    pub store: &'a mut ParameterStore<f32>,
    pub rng: &'a mut ChaCha8Rng,
}

impl Initializer<'_> {
    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::rand_uniform(shape.to_vec(), -bound, bound, self.rng);
        Ok(self.store.insert(name, t)?)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f32) -> Result<()> {
        Ok(self.store.insert(name, Tensor::full(shape.to_vec(), value))?)
    }

    pub fn tensor(&mut self, name: String, value: Tensor<f32>) -> Result<()> {
        Ok(self.store.insert(name, value)?)
    }

    /// `{prefix}.w` as `[c_out, c_in/groups, k...]` plus a zero `{prefix}.b`.
    pub fn conv(&mut self, prefix: &str, c_out: usize, c_in_per_group: usize, kernel: [usize; 3]) -> Result<()> {
        let fan_in = c_in_per_group * kernel.iter().product::<usize>();
        self.uniform(format!("{prefix}.w"), &[c_out, c_in_per_group, kernel[0], kernel[1], kernel[2]], fan_in)?;
        self.constant(format!("{prefix}.b"), &[c_out], 0.0)
    }

    /// `{prefix}.w` as `[c_in, c_out]`, plus a zero `{prefix}.b` when `bias`.
    pub fn linear(&mut self, prefix: &str, c_in: usize, c_out: usize, bias: bool) -> Result<()> {
        self.uniform(format!("{prefix}.w"), &[c_in, c_out], c_in)?;
        if bias {
            self.constant(format!("{prefix}.b"), &[c_out], 0.0)?;
        }
        Ok(())
    }

    pub fn norm(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.constant(format!("{prefix}.g"), &[c], 1.0)?;
        self.constant(format!("{prefix}.b"), &[c], 0.0)
    }
}

pub fn conv<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var, stride: [usize; 3], padding: [usize; 3]) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    Ok(tape.conv3d(x, w, Some(bias), stride, padding)?)
}

pub fn pointwise<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    conv(tape, b, prefix, x, [1, 1, 1], [0, 0, 0])
}

pub fn depthwise<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    Ok(tape.depthwise_conv3d(x, w, Some(bias))?)
}

/// `x·W (+ b)` over the last axis.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let y = tape.matmul(x, w)?;
    if bias {
        let bv = b.get(&format!("{prefix}.b"))?;
        Ok(tape.add_bias(y, bv)?)
    } else {
        Ok(y)
    }
}

/// Layer normalization over the channel axis of `[N, C, D, H, W]`.
pub fn channel_norm<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var, eps: f64) -> Result<Var> {
    let c = tape.shape(x)[1];
    let g = b.get(&format!("{prefix}.g"))?;
    let beta = b.get(&format!("{prefix}.b"))?;
    let last = tape.permute(x, &[0, 2, 3, 4, 1])?;
    let y = tape.layer_norm(last, c, g, beta, T::of(eps))?;
    Ok(tape.permute(y, &[0, 4, 1, 2, 3])?)
}
