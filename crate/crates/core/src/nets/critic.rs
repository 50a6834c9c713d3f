use autodiff::{ConvGeom, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_bias, normal_tensor, ParamSet, KERNEL, LEAKY_SLOPE};
use crate::losses::Critic;
use crate::windowing::STACK_DEPTH;
use crate::{Error, Result};

const DOWN: ConvGeom = ConvGeom::new(2, 1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Score `input ⊕ candidate` (6 channels) rather than the candidate alone.
    pub conditional: bool,
    pub n_blocks: usize,
    pub base_filters: usize,
    pub input_size: (usize, usize),
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            conditional: true,
            n_blocks: 3,
            base_filters: 64,
            input_size: (176, 256),
        }
    }
}

impl CriticConfig {
    pub fn in_channels(&self) -> usize {
        if self.conditional {
            2 * STACK_DEPTH
        } else {
            STACK_DEPTH
        }
    }

    pub fn validate(&self) -> Result<()> {
        let factor = 1usize << self.n_blocks;
        let (h, w) = self.input_size;
        if self.n_blocks == 0 || self.base_filters == 0 {
            return Err(Error::Config(
                "critic needs at least one block and filter".into(),
            ));
        }
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Config(format!(
                "critic input {h}x{w} must be divisible by {factor}"
            )));
        }
        Ok(())
    }
}

/// Wasserstein critic: stride-2 conv + leaky rectifier blocks and a linear
/// head producing one unbounded score per sample. No cross-sample layers.
#[derive(Clone, Debug)]
pub struct CriticNet {
    config: CriticConfig,
    params: ParamSet,
}

impl CriticNet {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let mut channels = config.in_channels();
        for b in 0..config.n_blocks {
            let out = config.base_filters << b;
            params.push(
                format!("block{b}.weight"),
                normal_tensor(&[out, channels, KERNEL, KERNEL], 0.0, &mut rng),
            );
            params.push(format!("block{b}.bias"), Tensor::zeros([out]));
            channels = out;
        }
        let factor = 1usize << config.n_blocks;
        let features = channels * (config.input_size.0 / factor) * (config.input_size.1 / factor);
        params.push("head.weight", normal_tensor(&[features, 1], 0.0, &mut rng));
        params.push("head.bias", Tensor::zeros([1]));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn restore(&mut self, params: ParamSet) -> Result<()> {
        let shapes = |p: &ParamSet| {
            p.tensors()
                .iter()
                .map(|t| t.shape().to_vec())
                .collect::<Vec<_>>()
        };
        if params.names() != self.params.names() || shapes(&params) != shapes(&self.params) {
            return Err(Error::Format(
                "critic parameters do not match its config".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Scores `[N]` for `[N, 3, H, W]` condition and candidate batches.
    pub fn forward(&self, params: &[Var], condition: &Var, candidate: &Var) -> Result<Var> {
        let (h, w) = self.config.input_size;
        let expected = [candidate.shape()[0], STACK_DEPTH, h, w];
        if candidate.shape() != expected || candidate.shape()[0] == 0 {
            return Err(Error::Shape(format!(
                "critic expects candidates [N, {STACK_DEPTH}, {h}, {w}], got {:?}",
                candidate.shape()
            )));
        }
        let mut x = if self.config.conditional {
            if condition.shape() != candidate.shape() {
                return Err(Error::Shape(format!(
                    "condition {:?} does not match candidate {:?}",
                    condition.shape(),
                    candidate.shape()
                )));
            }
            condition.concat_channels(candidate)
        } else {
            candidate.clone()
        };
        for b in 0..self.config.n_blocks {
            let y = x.conv2d(&params[2 * b], DOWN);
            x = add_bias(&y, &params[2 * b + 1]).leaky_relu(LEAKY_SLOPE);
        }
        let n = x.shape()[0];
        let features = x.value().sample_len();
        let head = 2 * self.config.n_blocks;
        let scores = x
            .reshape(&[n, features])
            .matmul(&params[head])
            .reshape(&[n])
            .add(&params[head + 1].expand(&[n]));
        Ok(scores)
    }

    pub fn bind<'a>(&'a self, params: &'a [Var]) -> BoundCritic<'a> {
        BoundCritic { net: self, params }
    }
}

/// A critic with parameters attached to a particular graph.
pub struct BoundCritic<'a> {
    net: &'a CriticNet,
    params: &'a [Var],
}

impl Critic for BoundCritic<'_> {
    fn score(&self, condition: &Var, candidate: &Var) -> Var {
        self.net
            .forward(self.params, condition, candidate)
            .expect("critic input shapes are validated by the trainer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn config(conditional: bool) -> CriticConfig {
        CriticConfig {
            conditional,
            base_filters: 4,
            input_size: (16, 16),
            ..CriticConfig::default()
        }
    }

    fn random(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![n, 3, 16, 16],
            (0..n * 768).map(|_| rng.gen()).collect(),
        )
    }

    #[test]
    fn scores_are_per_sample() {
        for conditional in [true, false] {
            let c = CriticNet::new(config(conditional), 1).unwrap();
            let params = c.params().bind(false);
            let cond = random(3, 2);
            let cand = random(3, 3);
            let s = c
                .forward(
                    &params,
                    &Var::constant(cond.clone()),
                    &Var::constant(cand.clone()),
                )
                .unwrap();
            assert_eq!(s.shape(), &[3]);
            for i in 0..3 {
                let one = c
                    .forward(
                        &params,
                        &Var::constant(cond.sample(i)),
                        &Var::constant(cand.sample(i)),
                    )
                    .unwrap();
                assert!((one.item() - s.value().data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_matters_only_when_conditional() {
        let cand = Var::constant(random(1, 4));
        let (c1, c2) = (Var::constant(random(1, 5)), Var::constant(random(1, 6)));
        let cond_net = CriticNet::new(config(true), 0).unwrap();
        let p = cond_net.params().bind(false);
        assert_ne!(
            cond_net.forward(&p, &c1, &cand).unwrap().item(),
            cond_net.forward(&p, &c2, &cand).unwrap().item()
        );
        let plain = CriticNet::new(config(false), 0).unwrap();
        let p = plain.params().bind(false);
        assert_eq!(
            plain.forward(&p, &c1, &cand).unwrap().item(),
            plain.forward(&p, &c2, &cand).unwrap().item()
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = CriticNet::new(config(true), 0).unwrap();
        let p = c.params().bind(false);
        let bad = Var::constant(Tensor::zeros([1, 3, 8, 8]));
        assert!(matches!(c.forward(&p, &bad, &bad), Err(Error::Shape(_))));
        let cand = Var::constant(random(2, 1));
        let cond = Var::constant(random(1, 1));
        assert!(matches!(c.forward(&p, &cond, &cand), Err(Error::Shape(_))));
        assert!(matches!(
            CriticNet::new(
                CriticConfig {
                    input_size: (12, 12),
                    ..config(true)
                },
                0
            ),
            Err(Error::Config(_))
        ));
    }
}
