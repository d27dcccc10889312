//! Layer descriptors.
//!
//! A layer only knows its parameter names and dimensions. `init` writes
//! fresh values into a [`ParameterSet`]; `bind` attaches those parameters to
//! a [`Graph`] once per forward pass and returns a bound handle that can be
//! applied repeatedly (e.g. across the timesteps of a recurrence).

use rand::Rng;

use crate::error::Result;
use crate::graph::{Conv2dSpec, Graph, Var};
use crate::params::ParameterSet;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
}

/// Fan-in scaled uniform whose variance is `2 / fan_in`.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Multiplies the He bound; small values give near-zero initial outputs.
    pub gain: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self { weight: format!("{prefix}.w"), bias: format!("{prefix}.b"), in_dim, out_dim, gain: 1.0 }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParameterSet<T>, rng: &mut R) -> Result<()> {
        let bound = self.gain * (6.0 / self.in_dim as f64).sqrt();
        ps.insert(&self.weight, uniform(&[self.in_dim, self.out_dim], bound, rng))?;
        ps.insert(&self.bias, Tensor::zeros(&[self.out_dim]))
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundLinear> {
        Ok(BoundLinear { w: g.param(ps, &self.weight)?, b: g.param(ps, &self.bias)? })
    }

    pub fn names(&self) -> Vec<String> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

impl BoundLinear {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        g.add_row_bias(y, self.b)
    }
}

/// 3x3 convolution followed by per-sample normalization and a per-channel
/// affine transform.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub weight: String,
    pub gamma: String,
    pub beta: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundConvNorm {
    w: Var,
    gamma: Var,
    beta: Var,
    spec: Conv2dSpec,
}

impl ConvNorm {
    pub const KERNEL: usize = 3;

    pub fn new(prefix: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            in_ch,
            out_ch,
            stride,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * Self::KERNEL * Self::KERNEL
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParameterSet<T>, rng: &mut R) -> Result<()> {
        let k = Self::KERNEL;
        ps.insert(&self.weight, he_uniform(&[self.out_ch, self.in_ch, k, k], self.fan_in(), rng))?;
        ps.insert(&self.gamma, Tensor::full(&[self.out_ch], T::one()))?;
        ps.insert(&self.beta, Tensor::zeros(&[self.out_ch]))
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundConvNorm> {
        Ok(BoundConvNorm {
            w: g.param(ps, &self.weight)?,
            gamma: g.param(ps, &self.gamma)?,
            beta: g.param(ps, &self.beta)?,
            spec: Conv2dSpec { stride: self.stride, pad: 1 },
        })
    }

    pub fn names(&self) -> Vec<String> {
        vec![self.weight.clone(), self.gamma.clone(), self.beta.clone()]
    }
}

impl BoundConvNorm {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = g.conv2d(x, self.w, None, self.spec)?;
        let y = g.layer_norm(y)?;
        g.channel_affine(y, self.gamma, self.beta)
    }
}

/// `relu(x + norm(conv(relu(norm(conv(x))))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub first: ConvNorm,
    pub second: ConvNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundResidual {
    first: BoundConvNorm,
    second: BoundConvNorm,
}

impl ResidualBlock {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            first: ConvNorm::new(&format!("{prefix}.a"), channels, channels, 1),
            second: ConvNorm::new(&format!("{prefix}.b"), channels, channels, 1),
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParameterSet<T>, rng: &mut R) -> Result<()> {
        self.first.init(ps, rng)?;
        self.second.init(ps, rng)
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundResidual> {
        Ok(BoundResidual { first: self.first.bind(g, ps)?, second: self.second.bind(g, ps)? })
    }
}

impl BoundResidual {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.first.forward(g, x)?;
        let y = g.relu(y);
        let y = self.second.forward(g, y)?;
        let y = g.add(y, x)?;
        Ok(g.relu(y))
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate).
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ih: String,
    pub w_hh: String,
    pub b_ih: String,
    pub b_hh: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    hidden: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: format!("{prefix}.w_ih"),
            w_hh: format!("{prefix}.w_hh"),
            b_ih: format!("{prefix}.b_ih"),
            b_hh: format!("{prefix}.b_hh"),
            input,
            hidden,
        }
    }

    /// Weights uniform in `±1/sqrt(hidden)`, biases zero.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, ps: &mut ParameterSet<T>, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        let h3 = 3 * self.hidden;
        ps.insert(&self.w_ih, uniform(&[self.input, h3], bound, rng))?;
        ps.insert(&self.w_hh, uniform(&[self.hidden, h3], bound, rng))?;
        ps.insert(&self.b_ih, Tensor::zeros(&[h3]))?;
        ps.insert(&self.b_hh, Tensor::zeros(&[h3]))
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundGru> {
        Ok(BoundGru {
            w_ih: g.param(ps, &self.w_ih)?,
            w_hh: g.param(ps, &self.w_hh)?,
            b_ih: g.param(ps, &self.b_ih)?,
            b_hh: g.param(ps, &self.b_hh)?,
            hidden: self.hidden,
        })
    }

    pub fn names(&self) -> Vec<String> {
        vec![self.w_ih.clone(), self.w_hh.clone(), self.b_ih.clone(), self.b_hh.clone()]
    }
}

impl BoundGru {
    /// One step for a batch: `x: [B, input]`, `h: [B, hidden]`.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let gi = g.matmul(x, self.w_ih)?;
        let gi = g.add_row_bias(gi, self.b_ih)?;
        let gh = g.matmul(h, self.w_hh)?;
        let gh = g.add_row_bias(gh, self.b_hh)?;
        let (ir, iz, inn) = (g.slice(gi, 1, 0, hs)?, g.slice(gi, 1, hs, hs)?, g.slice(gi, 1, 2 * hs, hs)?);
        let (hr, hz, hn) = (g.slice(gh, 1, 0, hs)?, g.slice(gh, 1, hs, hs)?, g.slice(gh, 1, 2 * hs, hs)?);
        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(iz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(inn, rn)?;
        let n = g.tanh(n);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}
