//! Iterative sign-gradient attacks inside an L∞ ball.
//!
//! One step moves every pixel by `step_size` along `∓sign(∇ₓJ(x', y))`
//! and clamps to the interval chosen by [`Clip`], by default
//! `[max(x−ε, 0), min(x+ε, 1)]`. [`Direction::Ascend`]
//! increases the loss of `y` (the basic iterative method);
//! [`Direction::Descend`] decreases it and so pushes the image deeper into
//! class `y` while it changes perceptibly.

mod cw;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Classifier, Prediction};
use crate::tensor::Tensor;

pub use cw::{cw_nke, CwConfig, CwResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    fn sign(self) -> f32 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Ascend => "ascend",
            Direction::Descend => "descend",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascend" => Ok(Direction::Ascend),
            "descend" => Ok(Direction::Descend),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Per-pixel interval each iterate is clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Clip {
    /// `[max(x−ε, 0), min(x+ε, 1)]`: the ε-ball intersected with valid pixels.
    #[default]
    Image,
    /// `[x−ε, x+ε]` only; iterates may leave `[0, 1]`.
    Ball,
}

impl fmt::Display for Clip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clip::Image => "image",
            Clip::Ball => "ball",
        })
    }
}

impl FromStr for Clip {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Clip::Image),
            "ball" => Ok(Clip::Ball),
            other => Err(Error::Config(format!("unknown clip policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// L∞ radius in pixel units.
    pub epsilon: f32,
    pub steps: usize,
    pub direction: Direction,
    /// At most `epsilon`.
    pub step_size: f32,
    pub clip: Clip,
}

impl AttackConfig {
    /// Step size equal to `epsilon`.
    pub fn new(epsilon: f32, steps: usize, direction: Direction) -> Self {
        Self {
            epsilon,
            steps,
            direction,
            step_size: epsilon,
            clip: Clip::Image,
        }
    }

    pub fn with_step_size(self, step_size: f32) -> Self {
        Self { step_size, ..self }
    }

    pub fn with_clip(self, clip: Clip) -> Self {
        Self { clip, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be finite and ≥ 0, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let step_ok = if self.epsilon > 0.0 {
            self.step_size > 0.0 && self.step_size <= self.epsilon
        } else {
            self.step_size >= 0.0
        };
        if !step_ok {
            return Err(Error::Config(format!(
                "step_size {} must lie in (0, epsilon = {}]",
                self.step_size, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor<f32>,
    pub initial_label: usize,
    pub final_label: usize,
    pub final_probabilities: Vec<f32>,
    pub linf_dist: f32,
    pub l2_dist: f32,
    /// `J(x'_t, y)` for `t = 0..=steps`.
    pub loss_trace: Vec<f32>,
}

impl AttackResult {
    pub fn final_confidence(&self) -> f32 {
        self.final_probabilities[self.final_label]
    }
}

#[derive(Debug, Clone)]
struct Ball {
    lo: Tensor<f32>,
    hi: Tensor<f32>,
}

impl Ball {
    fn new(x: &Tensor<f32>, epsilon: f32, clip: Clip) -> Self {
        match clip {
            Clip::Image => Self {
                lo: x.map(|v| (v - epsilon).max(0.0)),
                hi: x.map(|v| (v + epsilon).min(1.0)),
            },
            Clip::Ball => Self {
                lo: x.map(|v| v - epsilon),
                hi: x.map(|v| v + epsilon),
            },
        }
    }

    fn step(&self, x: &Tensor<f32>, grad: &Tensor<f32>, delta: f32) -> Result<Tensor<f32>> {
        let moved = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(grad.data())
                .map(|(&v, &g)| v + delta * crate::tensor::sign(g))
                .collect(),
        )?;
        moved.clamp_between(&self.lo, &self.hi)
    }
}

fn check_inputs(model: &impl Classifier, x: &Tensor<f32>, y: usize) -> Result<()> {
    if x.shape() != model.input_shape() {
        return Err(Error::Usage(format!(
            "image shape {:?} does not match model input {:?}",
            x.shape(),
            model.input_shape()
        )));
    }
    if y >= model.num_classes() {
        return Err(Error::Argument(format!(
            "label {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

fn checked_gradient(model: &impl Classifier, x: &Tensor<f32>, y: usize) -> Result<crate::nn::InputGradient> {
    let g = model.loss_and_input_grad(x, y)?;
    if g.grad.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in input gradient".into()));
    }
    Ok(g)
}

/// One clipped sign step from `x_current` toward lower (descend) or higher
/// (ascend) loss of class `y`, staying in the ball around `x_original`.
pub fn attack_step(
    model: &impl Classifier,
    x_current: &Tensor<f32>,
    x_original: &Tensor<f32>,
    y: usize,
    cfg: &AttackConfig,
) -> Result<Tensor<f32>> {
    cfg.validate()?;
    check_inputs(model, x_original, y)?;
    x_current.check_same_shape(x_original, "attack_step")?;
    let g = checked_gradient(model, x_current, y)?;
    Ball::new(x_original, cfg.epsilon, cfg.clip).step(x_current, &g.grad, cfg.direction.sign() * cfg.step_size)
}

/// `cfg.steps` attack steps from `x'_0 = x`.
pub fn run_attack(model: &impl Classifier, x: &Tensor<f32>, y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let mut results = run_attack_prefixes(model, x, y, cfg, &[cfg.steps])?;
    Ok(results.pop().expect("one prefix requested"))
}

/// Results after each count in `step_counts` (strictly increasing, each in
/// `1..=cfg.steps`) along a single trajectory. Iterate `t` depends only on
/// iterate `t−1`, so entry `i` equals `run_attack` with `step_counts[i]`
/// steps.
pub fn run_attack_prefixes(
    model: &impl Classifier,
    x: &Tensor<f32>,
    y: usize,
    cfg: &AttackConfig,
    step_counts: &[usize],
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    check_inputs(model, x, y)?;
    if step_counts.windows(2).any(|w| w[0] >= w[1])
        || step_counts.first().is_some_and(|&s| s == 0)
        || step_counts.last().is_some_and(|&s| s > cfg.steps)
    {
        return Err(Error::Argument(format!(
            "step counts {step_counts:?} must increase strictly within 1..={}",
            cfg.steps
        )));
    }
    let last = step_counts.last().copied().unwrap_or(0);
    let ball = Ball::new(x, cfg.epsilon, cfg.clip);
    let delta = cfg.direction.sign() * cfg.step_size;

    let mut current = x.clone();
    let mut trace = Vec::with_capacity(last + 1);
    let mut initial_label = None;
    let mut results = Vec::with_capacity(step_counts.len());
    let mut wanted = step_counts.iter().peekable();
    for t in 0..=last {
        let g = checked_gradient(model, &current, y)?;
        trace.push(g.loss);
        let prediction = Prediction::from_logits(&g.logits);
        let initial = *initial_label.get_or_insert(prediction.label);
        if wanted.next_if_eq(&&t).is_some() {
            results.push(AttackResult {
                linf_dist: current.linf_distance(x)?,
                l2_dist: current.l2_distance(x)?,
                adversarial: current.clone(),
                initial_label: initial,
                final_label: prediction.label,
                final_probabilities: prediction.probabilities,
                loss_trace: trace.clone(),
            });
        }
        if t < last {
            current = ball.step(&current, &g.grad, delta)?;
        }
    }
    Ok(results)
}
