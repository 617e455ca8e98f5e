use super::{check_inputs, checked_gradient, AttackResult};
use crate::error::{Error, Result};
use crate::nn::{Classifier, Prediction};
use crate::tensor::Tensor;

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Penalty form of "largest L2 perturbation that keeps the label":
/// minimize `J(x+δ, f(x)) − c·‖δ‖₂` with `x+δ ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    pub c: f32,
    pub iters: usize,
    pub lr: f32,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            iters: 200,
            lr: 0.01,
        }
    }
}

impl CwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.lr > 0.0 && self.c.is_finite() && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "c and lr must be positive, got c = {}, lr = {}",
                self.c, self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwResult {
    pub result: AttackResult,
    /// No iterate after the first update kept the label; `result` is then
    /// the unperturbed image.
    pub failed: bool,
}

/// Adam descent on `δ`, projecting `x+δ` back into `[0,1]` after every
/// update. Returns the label-keeping iterate with the largest `‖δ‖₂`.
///
/// At `δ = 0` the norm term has no gradient; the subgradient pointing along
/// `−∇J` is used, which is the direction that lowers both terms.
pub fn cw_nke(model: &impl Classifier, x: &Tensor<f32>, cfg: &CwConfig) -> Result<CwResult> {
    cfg.validate()?;
    let logits = model.logits(x)?;
    let y = Prediction::from_logits(&logits).label;
    check_inputs(model, x, y)?;

    let n = x.len();
    let mut delta = vec![0.0f32; n];
    let mut m = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best: Option<(f32, Tensor<f32>, Prediction)> = None;

    let mut current = x.clone();
    for t in 0..=cfg.iters {
        let g = checked_gradient(model, &current, y)?;
        trace.push(g.loss);
        let prediction = Prediction::from_logits(&g.logits);
        let norm = delta.iter().map(|d| d * d).sum::<f32>().sqrt();
        if t > 0 && prediction.label == y && best.as_ref().is_none_or(|(b, ..)| norm > *b) {
            best = Some((norm, current.clone(), prediction));
        }
        if t == cfg.iters {
            break;
        }

        let grad_j = g.grad.data();
        let direction: Vec<f32> = if norm > 0.0 {
            delta.iter().map(|d| d / norm).collect()
        } else {
            let gn = grad_j.iter().map(|v| v * v).sum::<f32>().sqrt();
            if gn > 0.0 {
                grad_j.iter().map(|v| -v / gn).collect()
            } else {
                vec![0.0; n]
            }
        };
        let step = (t + 1) as i32;
        let (bc1, bc2) = (1.0 - BETA1.powi(step), 1.0 - BETA2.powi(step));
        for i in 0..n {
            let gi = grad_j[i] - cfg.c * direction[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let update = cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            let xi = (x.data()[i] + delta[i] - update).clamp(0.0, 1.0);
            delta[i] = xi - x.data()[i];
        }
        current = Tensor::new(x.shape(), x.data().iter().zip(&delta).map(|(a, d)| a + d).collect())?;
    }

    let (failed, adversarial, prediction) = match best {
        Some((_, adv, p)) => (false, adv, p),
        None => (cfg.iters > 0, x.clone(), Prediction::from_logits(&logits)),
    };
    Ok(CwResult {
        result: AttackResult {
            linf_dist: adversarial.linf_distance(x)?,
            l2_dist: adversarial.l2_distance(x)?,
            adversarial,
            initial_label: y,
            final_label: prediction.label,
            final_probabilities: prediction.probabilities,
            loss_trace: trace,
        },
        failed,
    })
}
