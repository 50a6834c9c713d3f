//! Training the reconstructor on healthy window pairs, and inference.

use std::io::Write;
use std::time::Instant;

use autodiff::{backward, Adam, Tensor, Var};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessConfig, Split, Volume};
use crate::losses::{self, critic_loss, generator_loss, LossConfig, Objective};
use crate::nets::{
    stacks_to_tensor, Checkpoint, CriticConfig, CriticNet, Generator, GeneratorConfig, Mode,
};
use crate::windowing::{make_window_pairs, Stack, WindowPair};
use crate::{Error, Result};

/// Paper-length runs versus small desk-scale runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleProfile {
    Paper,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub profile: ScaleProfile,
    pub loss: LossConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Defaults to 0.5 for adversarial objectives and 0.9 for Dice.
    pub adam_beta1: Option<f64>,
    /// Defaults to 0.9 for adversarial objectives and 0.999 for Dice.
    pub adam_beta2: Option<f64>,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(Objective::WganGpL1)
    }
}

impl TrainConfig {
    /// Small filters and a few thousand steps on 64×64 slices.
    pub fn desk(objective: Objective) -> Self {
        Self {
            profile: ScaleProfile::Desk,
            loss: LossConfig {
                objective,
                ..LossConfig::default()
            },
            steps: 2000,
            batch_size: 8,
            learning_rate: 2e-4,
            adam_beta1: None,
            adam_beta2: None,
            seed: 0,
            checkpoint_every: 500,
            generator: GeneratorConfig {
                base_filters: 8,
                input_size: (64, 64),
                ..GeneratorConfig::default()
            },
            critic: CriticConfig {
                base_filters: 8,
                input_size: (64, 64),
                ..CriticConfig::default()
            },
        }
    }

    /// Full-size architecture and schedule on 176×256 slices.
    pub fn paper(objective: Objective) -> Self {
        let (steps, batch_size) = match objective {
            Objective::Dice => (600_000, 64),
            _ => (300_000, 32),
        };
        Self {
            profile: ScaleProfile::Paper,
            loss: LossConfig {
                objective,
                ..LossConfig::default()
            },
            steps,
            batch_size,
            learning_rate: 2e-4,
            adam_beta1: None,
            adam_beta2: None,
            seed: 0,
            checkpoint_every: 10_000,
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
        }
    }

    pub fn adam_betas(&self) -> (f64, f64) {
        let (b1, b2) = if self.loss.objective.is_adversarial() {
            (0.5, 0.9)
        } else {
            (0.9, 0.999)
        };
        (self.adam_beta1.unwrap_or(b1), self.adam_beta2.unwrap_or(b2))
    }

    /// Set the slice size on both networks.
    pub fn with_input_size(mut self, size: (usize, usize)) -> Self {
        self.generator.input_size = size;
        self.critic.input_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas();
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        self.generator.validate()?;
        if self.loss.objective.is_adversarial() {
            self.critic.validate()?;
            if self.critic.input_size != self.generator.input_size {
                return Err(Error::Config(
                    "critic and generator input sizes differ".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Losses observed in one training step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub generator_loss: f64,
    /// Mean absolute error of the generator batch, whatever the objective.
    pub l1: f64,
    /// Mean over this step's critic updates; absent for Dice.
    pub critic_loss: Option<f64>,
    pub wasserstein: Option<f64>,
    pub gradient_penalty: Option<f64>,
    pub wall_ms: f64,
}

/// Hooks called by [`Trainer::fit`].
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

/// Appends one JSON object per step.
pub struct JsonLinesLog<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TrainObserver for JsonLinesLog<W> {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        let line = serde_json::to_string(log).expect("step log serializes");
        writeln!(self.out, "{line}").map_err(|e| Error::io("<training log>", e))
    }
}

pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    critic: Option<CriticNet>,
    generator_opt: Adam,
    critic_opt: Option<Adam>,
    rng: ChaCha8Rng,
    step: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone(), config.seed)?;
        let (b1, b2) = config.adam_betas();
        let (critic, critic_opt) = if config.loss.objective.is_adversarial() {
            (
                Some(CriticNet::new(
                    config.critic.clone(),
                    config.seed.wrapping_add(1),
                )?),
                Some(Adam::new(config.learning_rate, b1, b2)),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            generator_opt: Adam::new(config.learning_rate, b1, b2),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            config,
            generator,
            critic,
            critic_opt,
            step: 0,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Resume model and optimizer state. The sampling stream restarts from
    /// the seed, offset by the step count.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(checkpoint.config.clone())?;
        t.generator = checkpoint.generator()?;
        t.critic = checkpoint.critic()?;
        t.generator_opt = t.generator_opt.with_state(checkpoint.generator_opt.clone());
        if let (Some(opt), Some(state)) = (t.critic_opt.take(), &checkpoint.critic_opt) {
            t.critic_opt = Some(opt.with_state(state.clone()));
        }
        t.step = checkpoint.step;
        t.rng = ChaCha8Rng::seed_from_u64(
            checkpoint
                .seed
                .wrapping_add(2)
                .wrapping_add(checkpoint.step),
        );
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            seed: self.config.seed,
            generator: self.generator.params().clone(),
            generator_bn: self.generator.bn_states().to_vec(),
            generator_opt: self.generator_opt.state().clone(),
            critic: self.critic.as_ref().map(|c| c.params().clone()),
            critic_opt: self.critic_opt.as_ref().map(|o| o.state().clone()),
        }
    }

    /// Indices of the next batch; pairs are reshuffled at every epoch start.
    /// A batch never holds more entries than there are pairs.
    fn next_batch(&mut self, n_pairs: usize) -> Vec<usize> {
        if self.order.len() != n_pairs {
            self.order = (0..n_pairs).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        (0..self.config.batch_size.min(n_pairs))
            .map(|_| {
                if self.cursor == n_pairs {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    fn batch(&mut self, pairs: &[WindowPair]) -> Result<(Tensor, Tensor)> {
        let idx = self.next_batch(pairs.len());
        let inputs: Vec<Stack> = idx.iter().map(|&i| pairs[i].input.clone()).collect();
        let targets: Vec<Stack> = idx.iter().map(|&i| pairs[i].target.clone()).collect();
        Ok((stacks_to_tensor(&inputs)?, stacks_to_tensor(&targets)?))
    }

    fn diverged(&self, what: &str, value: f64) -> Error {
        Error::Divergence {
            step: self.step + 1,
            reason: format!("{what} is {value}"),
            last_good: Some(Box::new(self.checkpoint())),
        }
    }

    /// One generator update, preceded by the configured critic updates for
    /// adversarial objectives.
    pub fn step(&mut self, pairs: &[WindowPair]) -> Result<StepLog> {
        if pairs.is_empty() {
            return Err(Error::Data("no window pairs to train on".into()));
        }
        let started = Instant::now();
        let loss_cfg = self.config.loss.clone();

        let mut critic_terms = None;
        if loss_cfg.objective.is_adversarial() {
            let (mut total, mut wass, mut gp) = (0.0, 0.0, 0.0);
            for _ in 0..loss_cfg.critic_steps {
                let (cond, real) = self.batch(pairs)?;
                let fake = {
                    let _guard = autodiff::no_grad();
                    let params = self.generator.params().bind(false);
                    self.generator
                        .forward(&params, &Var::constant(cond.clone()), Mode::Train)?
                        .0
                        .value()
                        .clone()
                };
                let critic = self
                    .critic
                    .as_ref()
                    .expect("adversarial trainer has a critic");
                let params = critic.params().bind(true);
                let terms = critic_loss(
                    &critic.bind(&params),
                    &cond,
                    &real,
                    &fake,
                    &loss_cfg,
                    &mut self.rng,
                );
                let value = terms.total.item();
                if !value.is_finite() {
                    return Err(self.diverged("critic loss", value));
                }
                let grads = backward(&terms.total, &params);
                let critic = self.critic.as_mut().expect("critic present");
                self.critic_opt
                    .as_mut()
                    .expect("critic optimizer present")
                    .step(critic.params_mut().tensors_mut(), &grads);
                total += value;
                wass += terms.wasserstein;
                gp += terms.penalty;
            }
            let n = loss_cfg.critic_steps as f64;
            critic_terms = Some((total / n, wass / n, gp / n));
        }

        let (cond, target) = self.batch(pairs)?;
        let params = self.generator.params().bind(true);
        let cond = Var::constant(cond);
        let target = Var::constant(target);
        let (fake, stats) = self.generator.forward(&params, &cond, Mode::Train)?;
        let critic_params = self.critic.as_ref().map(|c| c.params().bind(false));
        let bound = self
            .critic
            .as_ref()
            .zip(critic_params.as_deref())
            .map(|(c, p)| c.bind(p));
        let loss = generator_loss(
            bound.as_ref().map(|b| b as &dyn losses::Critic),
            &cond,
            &fake,
            &target,
            &loss_cfg,
        );
        let value = loss.item();
        if !value.is_finite() {
            return Err(self.diverged("generator loss", value));
        }
        let l1 = {
            let _guard = autodiff::no_grad();
            losses::adversarial::l1_loss(&fake.detach(), &target).item()
        };
        let grads = backward(&loss, &params);
        self.generator_opt
            .step(self.generator.params_mut().tensors_mut(), &grads);
        self.generator.update_running_stats(&stats);
        self.step += 1;

        Ok(StepLog {
            step: self.step,
            generator_loss: value,
            l1,
            critic_loss: critic_terms.map(|t| t.0),
            wasserstein: critic_terms.map(|t| t.1),
            gradient_penalty: critic_terms.map(|t| t.2),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Run until the configured step count.
    pub fn fit(
        &mut self,
        pairs: &[WindowPair],
        observer: &mut dyn TrainObserver,
    ) -> Result<Checkpoint> {
        let every = self.config.checkpoint_every;
        while self.step < self.config.steps {
            let log = self.step(pairs)?;
            observer.on_step(&log)?;
            if every > 0 && self.step.is_multiple_of(every) && self.step < self.config.steps {
                observer.on_checkpoint(&self.checkpoint())?;
            }
        }
        let last = self.checkpoint();
        observer.on_checkpoint(&last)?;
        Ok(last)
    }
}

/// Window pairs of every training-split scan, refusing any non-healthy scan.
///
/// The regime check runs on the manifest before any volume is read.
pub fn training_pairs(dataset: &Dataset, preprocess: &PreprocessConfig) -> Result<Vec<WindowPair>> {
    let entries: Vec<_> = dataset.manifest().split(Split::Train).collect();
    if let Some(bad) = entries.iter().find(|e| !e.cdr.is_healthy()) {
        return Err(Error::Regime(format!(
            "training split contains scan {} with CDR {}",
            bad.scan_id, bad.cdr
        )));
    }
    let mut pairs = Vec::new();
    for entry in entries {
        let volume = dataset.load_preprocessed(entry, preprocess)?;
        pairs.extend(make_window_pairs(&volume));
    }
    if pairs.is_empty() {
        return Err(Error::Data("training split yields no window pairs".into()));
    }
    Ok(pairs)
}

/// Train on the dataset's training split. The slice size is taken from the data.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    preprocess: &PreprocessConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    let pairs = training_pairs(dataset, preprocess)?;
    let config = config.clone().with_input_size(pairs[0].input.dims());
    Trainer::new(config)?.fit(&pairs, observer)
}

/// Predictions for every window pair of one preprocessed scan.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub scan_id: String,
    pub pairs: Vec<WindowPair>,
    pub predictions: Vec<Stack>,
    /// Set when the scan was too short to form any window.
    pub warning: Option<String>,
}

/// Windows evaluated per forward pass at inference.
const INFERENCE_BATCH: usize = 16;

pub fn reconstruct_volume(generator: &Generator, volume: &Volume) -> Result<Reconstruction> {
    let pairs = make_window_pairs(volume);
    if pairs.is_empty() {
        let msg = format!(
            "scan {} has {} slices; at least 6 are needed for a window pair",
            volume.scan_id,
            volume.len()
        );
        warn!("{msg}");
        return Ok(Reconstruction {
            scan_id: volume.scan_id.clone(),
            pairs,
            predictions: Vec::new(),
            warning: Some(msg),
        });
    }
    let mut predictions = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(INFERENCE_BATCH) {
        let inputs: Vec<Stack> = chunk.iter().map(|p| p.input.clone()).collect();
        predictions.extend(generator.predict(&inputs)?);
    }
    Ok(Reconstruction {
        scan_id: volume.scan_id.clone(),
        pairs,
        predictions,
        warning: None,
    })
}
