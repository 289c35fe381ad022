//! Perceptual and classification losses with analytic gradients.
//!
//! Motion-space gradients are flattened frame-major like [`Motion::flat`];
//! distribution-space gradients are with respect to the class probabilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PredictiveDistribution;
use crate::motion::{forward_difference, forward_difference_adjoint, Motion};
use crate::skeleton::{distance, sub};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub const MAX_DERIVATIVE_ORDER: usize = 4;

/// A loss value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptualConfig {
    /// Weight of the dynamics term; the bone term gets `1 - alpha`.
    pub alpha: f64,
    /// Derivative order → weight. Weights sum to one.
    pub betas: BTreeMap<usize, f64>,
    pub max_order: usize,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            betas: BTreeMap::from([(0, 0.6), (2, 0.4)]),
            max_order: MAX_DERIVATIVE_ORDER,
        }
    }
}

impl PerceptualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.max_order > MAX_DERIVATIVE_ORDER {
            return Err(Error::Validation(format!(
                "max_order {} exceeds {MAX_DERIVATIVE_ORDER}",
                self.max_order
            )));
        }
        if self.betas.is_empty() {
            return Err(Error::Validation("no derivative orders weighted".into()));
        }
        for (&order, &beta) in &self.betas {
            if order > self.max_order {
                return Err(Error::Validation(format!(
                    "derivative order {order} exceeds max_order {}",
                    self.max_order
                )));
            }
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::Validation(format!("beta for order {order} is {beta}")));
            }
        }
        let total: f64 = self.betas.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("betas sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the classification loss; the perceptual loss gets `1 - w`.
    pub w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w: 0.4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.w) {
            Ok(())
        } else {
            Err(Error::Validation(format!("w = {} outside [0, 1]", self.w)))
        }
    }
}

fn check_pair(q: &Motion, adv: &Motion) -> Result<()> {
    if q.same_shape(adv) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "motions differ in shape: {} vs {} frames",
            q.frame_count(),
            adv.frame_count()
        )))
    }
}

/// Mean over frames of the squared bone-length deviation.
pub fn bone_loss(q: &Motion, adv: &Motion) -> Result<Loss> {
    check_pair(q, adv)?;
    let frames = q.frame_count();
    let scale = 1.0 / frames as f64;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; adv.coords().len()];
    let stride = q.joint_count();
    for t in 0..frames {
        let (orig, pert) = (q.frame(t), adv.frame(t));
        for &(a, b) in q.topology().bones() {
            let len = distance(orig[a], orig[b]);
            let adv_len = distance(pert[a], pert[b]);
            let diff = adv_len - len;
            value += diff * diff;
            if adv_len > 0.0 && diff != 0.0 {
                let dir = sub(pert[b], pert[a]);
                let coef = 2.0 * diff * scale / adv_len;
                for i in 0..3 {
                    grad[t * stride + b][i] += coef * dir[i];
                    grad[t * stride + a][i] -= coef * dir[i];
                }
            }
        }
    }
    Ok(Loss {
        value: value * scale,
        grad: grad.into_flattened(),
    })
}

/// Derivative matching: `sum_n beta_n * mean((q^n - adv^n)^2)`.
pub fn dynamics_loss(q: &Motion, adv: &Motion, cfg: &PerceptualConfig) -> Result<Loss> {
    check_pair(q, adv)?;
    cfg.validate()?;
    let stride = q.joint_count() * 3;
    let diff: Vec<f64> = adv.flat().iter().zip(q.flat()).map(|(a, b)| a - b).collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; diff.len()];
    for (&order, &beta) in &cfg.betas {
        if beta == 0.0 {
            continue;
        }
        let d = forward_difference(&diff, stride, order)?;
        let count = d.len() as f64;
        value += beta * d.iter().map(|v| v * v).sum::<f64>() / count;
        let scaled: Vec<f64> = d.iter().map(|v| 2.0 * beta * v / count).collect();
        for (g, a) in grad
            .iter_mut()
            .zip(forward_difference_adjoint(&scaled, stride, order))
        {
            *g += a;
        }
    }
    Ok(Loss { value, grad })
}

/// `alpha * dynamics + (1 - alpha) * bone`.
pub fn perceptual_loss(q: &Motion, adv: &Motion, cfg: &PerceptualConfig) -> Result<Loss> {
    let dynamics = dynamics_loss(q, adv, cfg)?;
    let bone = bone_loss(q, adv)?;
    let a = cfg.alpha;
    Ok(Loss {
        value: a * dynamics.value + (1.0 - a) * bone.value,
        grad: dynamics
            .grad
            .iter()
            .zip(&bone.grad)
            .map(|(d, b)| a * d + (1.0 - a) * b)
            .collect(),
    })
}

fn clamped_ln(r: f64) -> (f64, f64) {
    if r > LOG_FLOOR {
        (r.ln(), 1.0 / r)
    } else {
        (LOG_FLOOR.ln(), 0.0)
    }
}

fn check_classes(a: &PredictiveDistribution, b: &PredictiveDistribution) -> Result<()> {
    if a.class_count() == b.class_count() {
        Ok(())
    } else {
        Err(Error::ClassCount {
            expected: a.class_count(),
            found: b.class_count(),
        })
    }
}

/// Anything-but: negative cross-entropy of `adv` against the frozen clean
/// distribution.
pub fn ab_loss(clean: &PredictiveDistribution, adv: &PredictiveDistribution) -> Result<Loss> {
    check_classes(clean, adv)?;
    let mut value = 0.0;
    let grad = clean
        .probs()
        .iter()
        .zip(adv.probs())
        .map(|(&p, &r)| {
            let (ln, dln) = clamped_ln(r);
            value += p * ln;
            p * dln
        })
        .collect();
    Ok(Loss { value, grad })
}

/// Anything-but-N: negative entropy of `adv`.
pub fn abn_loss(adv: &PredictiveDistribution) -> Result<Loss> {
    let mut value = 0.0;
    let grad = adv
        .probs()
        .iter()
        .map(|&r| {
            let (ln, dln) = clamped_ln(r);
            value += r * ln;
            ln + r * dln
        })
        .collect();
    Ok(Loss { value, grad })
}

/// Specified attack: cross-entropy of `adv` against a one-hot target.
pub fn sa_loss(target: &PredictiveDistribution, adv: &PredictiveDistribution) -> Result<Loss> {
    check_classes(target, adv)?;
    let probs = target.probs();
    let hot = probs.iter().position(|&p| p == 1.0);
    let class = match hot {
        Some(c) if probs.iter().filter(|&&p| p != 0.0).count() == 1 => c,
        _ => return Err(Error::Validation("specified-attack target is not one-hot".into())),
    };
    let (ln, dln) = clamped_ln(adv.probs()[class]);
    let mut grad = vec![0.0; probs.len()];
    grad[class] = -dln;
    Ok(Loss { value: -ln, grad })
}

/// `w * classification + (1 - w) * perceptual`, with gradients combined the
/// same way. Both gradients must live in the same space.
pub fn total_loss(classification: &Loss, perceptual: &Loss, weights: LossWeights) -> Result<Loss> {
    if classification.grad.len() != perceptual.grad.len() {
        return Err(Error::Dimension(format!(
            "gradients of length {} and {}",
            classification.grad.len(),
            perceptual.grad.len()
        )));
    }
    let w = weights.w;
    Ok(Loss {
        value: w * classification.value + (1.0 - w) * perceptual.value,
        grad: classification
            .grad
            .iter()
            .zip(&perceptual.grad)
            .map(|(c, p)| w * c + (1.0 - w) * p)
            .collect(),
    })
}
