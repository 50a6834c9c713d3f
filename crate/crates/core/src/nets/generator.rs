use autodiff::{ConvGeom, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    add_bias, batch_norm, fan_in_tensor, normal_tensor, BatchStats, BnState, Mode, ParamSet,
    KERNEL, LEAKY_SLOPE,
};
use crate::windowing::{Stack, STACK_DEPTH};
use crate::{Error, Result};

const DOWN: ConvGeom = ConvGeom::new(2, 1);
const PROJECT: ConvGeom = ConvGeom::new(1, 1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub base_filters: usize,
    pub batch_norm: bool,
    pub skip_connections: bool,
    /// `(height, width)` of the stacks the model is built for.
    pub input_size: (usize, usize),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: STACK_DEPTH,
            out_channels: STACK_DEPTH,
            encoder_depth: 4,
            decoder_depth: 4,
            base_filters: 64,
            batch_norm: true,
            skip_connections: true,
            input_size: (176, 256),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.encoder_depth == 0 || self.encoder_depth != self.decoder_depth {
            return fail(format!(
                "encoder and decoder depth must match and be positive, got {} and {}",
                self.encoder_depth, self.decoder_depth
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_filters == 0 {
            return fail("channel and filter counts must be positive".into());
        }
        let factor = 1usize << self.encoder_depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return fail(format!(
                "input size {h}x{w} must be divisible by {factor} for depth {}",
                self.encoder_depth
            ));
        }
        Ok(())
    }

    fn encoder_channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    fn decoder_out_channels(&self, level: usize) -> usize {
        let depth = self.encoder_depth;
        if level + 1 < depth {
            self.encoder_channels(depth - 2 - level)
        } else {
            self.base_filters
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    weight: usize,
    /// `(gamma, beta, running-stats index)` with batch norm, bias otherwise.
    norm: Norm,
}

#[derive(Clone, Copy, Debug)]
enum Norm {
    Batch {
        gamma: usize,
        beta: usize,
        state: usize,
    },
    Bias(usize),
}

/// U-Net-like reconstructor: stride-2 conv encoder, transposed-conv decoder
/// with mirrored skip concatenations, 3×3 projection and sigmoid output.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
    bn_states: Vec<BnState>,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
}

impl Generator {
    /// Build with seeded N(0, 0.02) block weights, N(1, 0.02) normalization
    /// scales and a U(±1/√fan_in) projection head; the head feeds the sigmoid
    /// directly, with no normalization to rescale it.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let mut bn_states = Vec::new();
        let mut block = |params: &mut ParamSet,
                         rng: &mut ChaCha8Rng,
                         name: String,
                         weight_shape: [usize; 4],
                         channels: usize| {
            let weight = params.push(
                format!("{name}.weight"),
                normal_tensor(&weight_shape, 0.0, rng),
            );
            let norm = if config.batch_norm {
                let gamma = params.push(
                    format!("{name}.gamma"),
                    normal_tensor(&[channels], 1.0, rng),
                );
                let beta = params.push(format!("{name}.beta"), Tensor::zeros([channels]));
                bn_states.push(BnState::new(channels));
                Norm::Batch {
                    gamma,
                    beta,
                    state: bn_states.len() - 1,
                }
            } else {
                Norm::Bias(params.push(format!("{name}.bias"), Tensor::zeros([channels])))
            };
            Block { weight, norm }
        };

        let depth = config.encoder_depth;
        let mut encoder = Vec::with_capacity(depth);
        let mut channels_in = config.in_channels;
        for level in 0..depth {
            let out = config.encoder_channels(level);
            encoder.push(block(
                &mut params,
                &mut rng,
                format!("enc{level}"),
                [out, channels_in, KERNEL, KERNEL],
                out,
            ));
            channels_in = out;
        }
        let mut decoder = Vec::with_capacity(depth);
        for level in 0..depth {
            let skip = if level > 0 && config.skip_connections {
                config.encoder_channels(depth - 1 - level)
            } else {
                0
            };
            let input = channels_in + skip;
            let out = config.decoder_out_channels(level);
            // transposed convolution weights are laid out [in, out, k, k]
            decoder.push(block(
                &mut params,
                &mut rng,
                format!("dec{level}"),
                [input, out, KERNEL, KERNEL],
                out,
            ));
            channels_in = out;
        }
        let head_weight = params.push(
            "head.weight",
            fan_in_tensor(
                &[config.out_channels, channels_in, 3, 3],
                channels_in * 9,
                &mut rng,
            ),
        );
        let head_bias = params.push("head.bias", Tensor::zeros([config.out_channels]));
        Ok(Self {
            config,
            params,
            bn_states,
            encoder,
            decoder,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn_states
    }

    pub(crate) fn restore(&mut self, params: ParamSet, bn_states: Vec<BnState>) -> Result<()> {
        let shapes = |p: &ParamSet| {
            p.tensors()
                .iter()
                .map(|t| t.shape().to_vec())
                .collect::<Vec<_>>()
        };
        if params.names() != self.params.names() || shapes(&params) != shapes(&self.params) {
            return Err(Error::Format(
                "generator parameters do not match its config".into(),
            ));
        }
        if bn_states.len() != self.bn_states.len() {
            return Err(Error::Format(
                "generator normalization state count mismatch".into(),
            ));
        }
        self.params = params;
        self.bn_states = bn_states;
        Ok(())
    }

    fn check_input(&self, x: &Var) -> Result<()> {
        let (h, w) = self.config.input_size;
        let s = x.shape();
        if s.len() != 4 || s[0] == 0 || s[1] != self.config.in_channels || s[2] != h || s[3] != w {
            return Err(Error::Shape(format!(
                "generator expects [N, {}, {h}, {w}], got {s:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    fn normalize(
        &self,
        x: &Var,
        params: &[Var],
        norm: Norm,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Var {
        match norm {
            Norm::Batch { gamma, beta, state } => {
                let (y, s) = batch_norm(
                    x,
                    &params[gamma],
                    &params[beta],
                    &self.bn_states[state],
                    mode,
                );
                stats.extend(s);
                y
            }
            Norm::Bias(bias) => add_bias(x, &params[bias]),
        }
    }

    /// Differentiable forward pass on `[N, 3, H, W]` inputs in `[0, 1]`.
    ///
    /// In training mode the observed batch statistics are returned so the
    /// caller can fold them into the running averages.
    pub fn forward(&self, params: &[Var], x: &Var, mode: Mode) -> Result<(Var, Vec<BatchStats>)> {
        self.check_input(x)?;
        assert_eq!(
            params.len(),
            self.params.len(),
            "bound parameter count mismatch"
        );
        let mut stats = Vec::new();
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for block in &self.encoder {
            let y = h.conv2d(&params[block.weight], DOWN);
            h = self
                .normalize(&y, params, block.norm, mode, &mut stats)
                .leaky_relu(LEAKY_SLOPE);
            skips.push(h.clone());
        }
        skips.pop();
        for (level, block) in self.decoder.iter().enumerate() {
            if level > 0 && self.config.skip_connections {
                let skip = skips.pop().expect("one skip per inner decoder level");
                h = h.concat_channels(&skip);
            }
            let out_hw = (
                DOWN.transposed_extent(h.shape()[2], KERNEL),
                DOWN.transposed_extent(h.shape()[3], KERNEL),
            );
            let y = h.conv2d_transpose(&params[block.weight], DOWN, out_hw);
            h = self
                .normalize(&y, params, block.norm, mode, &mut stats)
                .relu();
        }
        let logits = add_bias(
            &h.conv2d(&params[self.head_weight], PROJECT),
            &params[self.head_bias],
        );
        Ok((logits.sigmoid(), stats))
    }

    /// Fold training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        assert_eq!(
            stats.len(),
            self.bn_states.len(),
            "one stats entry per norm layer"
        );
        for (state, s) in self.bn_states.iter_mut().zip(stats) {
            state.update(s);
        }
    }

    /// Evaluation-mode predictions without gradient tracking.
    pub fn predict(&self, inputs: &[Stack]) -> Result<Vec<Stack>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let _guard = autodiff::no_grad();
        let batch = stacks_to_tensor(inputs)?;
        let params = self.params.bind(false);
        let (out, _) = self.forward(&params, &Var::constant(batch), Mode::Eval)?;
        tensor_to_stacks(out.value())
    }
}

/// `[N, 3, H, W]` tensor from equally sized stacks.
pub fn stacks_to_tensor(stacks: &[Stack]) -> Result<Tensor> {
    let (h, w) = stacks
        .first()
        .map(Stack::dims)
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let mut data = Vec::with_capacity(stacks.len() * STACK_DEPTH * h * w);
    for s in stacks {
        if s.dims() != (h, w) {
            return Err(Error::Shape("batch stacks differ in size".into()));
        }
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::new([stacks.len(), STACK_DEPTH, h, w], data))
}

pub fn tensor_to_stacks(t: &Tensor) -> Result<Vec<Stack>> {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    t.data()
        .chunks(t.sample_len())
        .map(|c| Stack::from_raw(h, w, c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::backward;
    use rand::{Rng, SeedableRng};

    fn small(size: usize, filters: usize) -> GeneratorConfig {
        GeneratorConfig {
            base_filters: filters,
            input_size: (size, size),
            ..GeneratorConfig::default()
        }
    }

    fn random_stacks(n: usize, size: usize, seed: u64) -> Vec<Stack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..STACK_DEPTH * size * size).map(|_| rng.gen()).collect();
                Stack::from_raw(size, size, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn output_shape_and_range() {
        let g = Generator::new(small(32, 4), 0).unwrap();
        let x = Var::constant(stacks_to_tensor(&random_stacks(2, 32, 1)).unwrap());
        let (y, stats) = g.forward(&g.params().bind(false), &x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3, 32, 32]);
        assert!(y.value().data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(stats.len(), g.bn_states().len());
        assert_eq!(stats.len(), 8);
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        let a = Generator::new(small(16, 4), 3).unwrap();
        let b = Generator::new(small(16, 4), 3).unwrap();
        let c = Generator::new(small(16, 4), 4).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn eval_mode_is_per_sample() {
        let g = Generator::new(small(16, 4), 0).unwrap();
        let inputs = random_stacks(3, 16, 2);
        let batch = g.predict(&inputs).unwrap();
        for (i, input) in inputs.iter().enumerate() {
            let alone = g.predict(std::slice::from_ref(input)).unwrap();
            for (a, b) in alone[0].data().iter().zip(batch[i].data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let g = Generator::new(small(16, 4), 0).unwrap();
        let wrong = Var::constant(Tensor::zeros([1, 3, 32, 32]));
        assert!(matches!(
            g.forward(&g.params().bind(false), &wrong, Mode::Eval),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Generator::new(small(24, 4), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut g = Generator::new(small(16, 2), 0).unwrap();
        let x = Var::constant(stacks_to_tensor(&random_stacks(2, 16, 5)).unwrap());
        let before = g.bn_states()[0].clone();
        let (_, stats) = g.forward(&g.params().bind(false), &x, Mode::Train).unwrap();
        g.update_running_stats(&stats);
        let after = &g.bn_states()[0];
        for c in 0..before.mean.len() {
            let expect = 0.9 * before.mean.data()[c] + 0.1 * stats[0].mean.data()[c];
            assert!((after.mean.data()[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Generator::new(small(16, 2), 9).unwrap();
        let x = Var::constant(stacks_to_tensor(&random_stacks(2, 16, 6)).unwrap());
        let probe = Tensor::new(
            vec![2, 3, 16, 16],
            random_stacks(2, 16, 7)
                .into_iter()
                .flat_map(Stack::into_data)
                .collect(),
        );
        let loss_at = |params: &ParamSet| {
            let (y, _) = g.forward(&params.bind(false), &x, Mode::Train).unwrap();
            y.mul_const(&probe).sum().item()
        };
        let bound = g.params().bind(true);
        let (y, _) = g.forward(&bound, &x, Mode::Train).unwrap();
        let grads = backward(&y.mul_const(&probe).sum(), &bound);
        let h = 1e-5;
        for (p, grad) in grads.iter().enumerate() {
            let i = (p * 7) % grad.len();
            let mut plus = g.params().clone();
            plus.tensors_mut()[p].data_mut()[i] += h;
            let mut minus = g.params().clone();
            minus.tensors_mut()[p].data_mut()[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let an = grad.data()[i];
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                "param {} [{i}]: analytic {an} vs numeric {fd}",
                g.params().names()[p]
            );
        }
    }
}
