//! Reconstructor (U-Net-like generator) and Wasserstein critic.
//!
//! Models own their parameters as plain tensors. A forward pass binds them to
//! graph leaves with [`ParamSet::bind`], so the same model can run with or
//! without gradient tracking.

mod checkpoint;
mod critic;
mod generator;

use autodiff::{Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

pub use checkpoint::Checkpoint;
pub use critic::{BoundCritic, CriticConfig, CriticNet};
pub use generator::{stacks_to_tensor, tensor_to_stacks, Generator, GeneratorConfig};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const KERNEL: usize = 4;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Graph leaves for a forward pass.
    pub fn bind(&self, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| Var::leaf(t.clone(), requires_grad))
            .collect()
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        Self { names, tensors }
    }
}

fn normal_tensor(shape: &[usize], mean: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(mean, INIT_STD).expect("valid init distribution");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
fn fan_in_tensor(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BnState {
    fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
        }
    }

    fn update(&mut self, batch: &BatchStats) {
        let blend = |running: &mut Tensor, observed: &Tensor| {
            for (r, o) in running.data_mut().iter_mut().zip(observed.data()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o;
            }
        };
        blend(&mut self.mean, &batch.mean);
        blend(&mut self.var, &batch.var);
    }
}

/// Per-channel statistics observed in one training-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance.
    pub var: Tensor,
}

/// Batch normalization over `[N, C, H, W]` with learned scale and shift.
fn batch_norm(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running: &BnState,
    mode: Mode,
) -> (Var, Option<BatchStats>) {
    let shape = x.shape().to_vec();
    let count = (shape[0] * shape[2] * shape[3]) as f64;
    let (normalized, stats) = match mode {
        Mode::Train => {
            let mean = x.sum_channels().scale(1.0 / count);
            let centered = x.sub(&mean.broadcast_channels(&shape));
            let var = centered.square().sum_channels().scale(1.0 / count);
            let inv_std = var.add_scalar(BN_EPSILON).sqrt().recip();
            let stats = BatchStats {
                mean: mean.value().clone(),
                var: var.value().map(|v| {
                    if count > 1.0 {
                        v * count / (count - 1.0)
                    } else {
                        v
                    }
                }),
            };
            (
                centered.mul(&inv_std.broadcast_channels(&shape)),
                Some(stats),
            )
        }
        Mode::Eval => {
            let mean = Var::constant(running.mean.clone()).broadcast_channels(&shape);
            let inv_std = running.var.map(|v| 1.0 / (v + BN_EPSILON).sqrt());
            let inv_std = Var::constant(inv_std).broadcast_channels(&shape);
            (x.sub(&mean).mul_const(inv_std.value()), None)
        }
    };
    let y = normalized
        .mul(&gamma.broadcast_channels(&shape))
        .add(&beta.broadcast_channels(&shape));
    (y, stats)
}

fn add_bias(x: &Var, bias: &Var) -> Var {
    x.add(&bias.broadcast_channels(x.shape()))
}
