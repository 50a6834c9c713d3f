//! Differentiable training objectives: soft Dice, WGAN-GP and WGAN-GP + ℓ1.

use autodiff::{grad, Tensor, Var};
use rand::Rng;

use super::{LossConfig, Objective, DICE_EPSILON};

/// Anything that maps (condition, candidate) batches to one real score per
/// sample. Scores of different samples must not interact.
pub trait Critic {
    fn score(&self, condition: &Var, candidate: &Var) -> Var;
}

/// `f(x) = <w, x>` per sample, ignoring the condition.
#[derive(Clone, Debug)]
pub struct LinearCritic {
    pub weight: Tensor,
}

impl Critic for LinearCritic {
    fn score(&self, _condition: &Var, candidate: &Var) -> Var {
        let shape = candidate.shape().to_vec();
        let per_sample = self.weight.len();
        assert_eq!(
            candidate.value().sample_len(),
            per_sample,
            "weight/sample size mismatch"
        );
        let tiled = Tensor::new(
            shape.clone(),
            self.weight
                .data()
                .iter()
                .copied()
                .cycle()
                .take(shape[0] * per_sample)
                .collect(),
        );
        candidate.mul_const(&tiled).sum_samples()
    }
}

pub fn l1_loss(a: &Var, b: &Var) -> Var {
    a.sub(b).abs().mean()
}

pub fn l2_loss(a: &Var, b: &Var) -> Var {
    a.sub(b).square().mean()
}

/// Soft Dice over the whole batch.
pub fn soft_dice_loss(a: &Var, b: &Var) -> Var {
    let overlap = a.mul(b).sum().scale(2.0).add_scalar(DICE_EPSILON);
    let mass = a
        .square()
        .sum()
        .add(&b.square().sum())
        .add_scalar(DICE_EPSILON);
    overlap.mul(&mass.recip()).neg().add_scalar(1.0)
}

/// Per-sample interpolation coefficients `u ~ U(0, 1)`, tiled to `shape`.
fn interpolation_weights(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let inner: usize = shape[1..].iter().product();
    let draws: Vec<f64> = (0..shape[0]).map(|_| rng.gen::<f64>()).collect();
    Tensor::new(
        shape.to_vec(),
        draws
            .iter()
            .flat_map(|&u| std::iter::repeat_n(u, inner))
            .collect(),
    )
}

/// `mean_i (‖∇ critic(condition, x̂_i)‖₂ − 1)²` with `x̂ = u·real + (1−u)·fake`.
///
/// The result stays differentiable with respect to the critic's parameters.
pub fn gradient_penalty(
    critic: &dyn Critic,
    condition: &Tensor,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut impl Rng,
) -> Var {
    assert_eq!(real.shape(), fake.shape(), "real/fake shape mismatch");
    let u = interpolation_weights(real.shape(), rng);
    let mixed = real
        .zip_map(&u, |r, u| u * r)
        .zip_map(&fake.zip_map(&u, |f, u| (1.0 - u) * f), |a, b| a + b);
    let mixed = Var::leaf(mixed, true);
    let scores = critic.score(&Var::constant(condition.clone()), &mixed);
    let g = grad(&scores.sum(), std::slice::from_ref(&mixed), true).remove(0);
    let norms = g.square().sum_samples().add_scalar(1e-12).sqrt();
    norms.add_scalar(-1.0).square().mean()
}

/// Components of one critic objective evaluation.
pub struct CriticLoss {
    pub total: Var,
    /// `mean critic(fake) − mean critic(real)`.
    pub wasserstein: f64,
    pub penalty: f64,
}

/// `mean critic(c, fake) − mean critic(c, real) + λ·GP`.
pub fn critic_loss(
    critic: &dyn Critic,
    condition: &Tensor,
    real: &Tensor,
    fake: &Tensor,
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> CriticLoss {
    let cond = Var::constant(condition.clone());
    let fake_score = critic.score(&cond, &Var::constant(fake.clone())).mean();
    let real_score = critic.score(&cond, &Var::constant(real.clone())).mean();
    let wasserstein = fake_score.sub(&real_score);
    let (total, penalty) = if cfg.gp_lambda > 0.0 {
        let gp = gradient_penalty(critic, condition, real, fake, rng);
        let penalty = gp.item();
        (wasserstein.add(&gp.scale(cfg.gp_lambda)), penalty)
    } else {
        (wasserstein.clone(), 0.0)
    };
    CriticLoss {
        wasserstein: wasserstein.item(),
        penalty,
        total,
    }
}

/// Generator objective for the configured training mode.
///
/// `critic` may be `None` only for the Dice objective.
pub fn generator_loss(
    critic: Option<&dyn Critic>,
    condition: &Var,
    fake: &Var,
    target: &Var,
    cfg: &LossConfig,
) -> Var {
    let adversarial = || {
        critic
            .expect("adversarial objectives need a critic")
            .score(condition, fake)
            .mean()
            .neg()
    };
    match cfg.objective {
        Objective::Dice => soft_dice_loss(fake, target),
        Objective::WganGp => adversarial(),
        Objective::WganGpL1 => adversarial().add(&l1_loss(fake, target).scale(cfg.l1_weight)),
    }
}
