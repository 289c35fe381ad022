//! White-box attack loop.
//!
//! Starting from the clean motion, Adam descends
//! `w * L_c + (1 - w) * L_p` where `L_c` depends on the strategy and `L_p`
//! is the perceptual loss against the clean motion. Every iterate is checked
//! against the strategy's success predicate; among the successful ones the
//! iterate with the smallest perceptual loss is returned.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    ab_loss, abn_loss, perceptual_loss, sa_loss, total_loss, Loss, LossWeights, PerceptualConfig,
};
use crate::models::{DifferentiableClassifier, PredictiveDistribution};
use crate::motion::Motion;
use crate::optim::{Adam, AdamConfig};
use crate::skeleton::Joint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttackStrategy {
    /// Succeeds when the predicted label differs from the original.
    AnythingBut,
    /// Succeeds when the original label drops out of the top `n`.
    AnythingButN(usize),
    /// Succeeds when the predicted label equals the target.
    Specified(usize),
}

impl AttackStrategy {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        match *self {
            AttackStrategy::AnythingBut => Ok(()),
            AttackStrategy::AnythingButN(n) if n >= 1 && n < class_count => Ok(()),
            AttackStrategy::AnythingButN(n) => Err(Error::Validation(format!(
                "ABN needs 1 <= n < {class_count}, got {n}"
            ))),
            AttackStrategy::Specified(c) if c < class_count => Ok(()),
            AttackStrategy::Specified(c) => Err(Error::Validation(format!(
                "target class {c} out of range for {class_count} classes"
            ))),
        }
    }

    pub fn is_success(&self, dist: &PredictiveDistribution, original_label: usize) -> bool {
        match *self {
            AttackStrategy::AnythingBut => dist.argmax() != original_label,
            AttackStrategy::AnythingButN(n) => !dist.in_top_n(original_label, n),
            AttackStrategy::Specified(c) => dist.argmax() == c,
        }
    }

    /// Classification loss and its gradient with respect to `adv` probabilities.
    ///
    /// The anything-but reference is the one-hot of the clean prediction: the
    /// cross-entropy against the full clean distribution is stationary at the
    /// clean motion, so the descent would never leave its starting point.
    pub fn classification_loss(
        &self,
        original_label: usize,
        adv: &PredictiveDistribution,
    ) -> Result<Loss> {
        let k = adv.class_count();
        match *self {
            AttackStrategy::AnythingBut => ab_loss(&PredictiveDistribution::one_hot(original_label, k)?, adv),
            AttackStrategy::AnythingButN(_) => abn_loss(adv),
            AttackStrategy::Specified(c) => sa_loss(&PredictiveDistribution::one_hot(c, k)?, adv),
        }
    }

    fn requires_correct_prediction(&self) -> bool {
        !matches!(self, AttackStrategy::Specified(_))
    }
}

impl fmt::Display for AttackStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackStrategy::AnythingBut => write!(f, "ab"),
            AttackStrategy::AnythingButN(n) => write!(f, "abn:{n}"),
            AttackStrategy::Specified(c) => write!(f, "sa:{c}"),
        }
    }
}

impl FromStr for AttackStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("unknown strategy {s:?}; expected ab, abn:N or sa:CLASS"));
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (kind.to_ascii_lowercase().as_str(), arg) {
            ("ab", None) => Ok(AttackStrategy::AnythingBut),
            ("abn", Some(n)) => Ok(AttackStrategy::AnythingButN(n)),
            ("sa", Some(c)) => Ok(AttackStrategy::Specified(c)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for AttackStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttackStrategy> for String {
    fn from(s: AttackStrategy) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub weights: LossWeights,
    pub perceptual: PerceptualConfig,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Drives fake-target sampling for batch specified attacks.
    pub seed: u64,
    pub track_history: bool,
    /// Stop ABN at its first success instead of searching for a cheaper one.
    pub abn_early_stop: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            max_iterations: 300,
            weights: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            track_history: false,
            abn_early_stop: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be at least 1".into()));
        }
        self.weights.validate()?;
        self.perceptual.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub classification_loss: f64,
    pub perceptual_loss: f64,
    pub total_loss: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub strategy: AttackStrategy,
    pub success: bool,
    /// Adam steps taken to reach the returned iterate.
    pub iterations_used: usize,
    /// Adam steps taken in total.
    pub iterations_run: usize,
    pub original_label: usize,
    pub adversarial_motion: Motion,
    pub final_label: usize,
    pub final_probs: Vec<f64>,
    pub final_classification_loss: f64,
    pub final_perceptual_loss: f64,
    pub final_total_loss: f64,
    /// `adversarial - original`, frame-major.
    pub displacement: Vec<Joint>,
    pub history: Option<Vec<IterationRecord>>,
}

impl AttackResult {
    pub fn final_distribution(&self) -> PredictiveDistribution {
        PredictiveDistribution::new(self.final_probs.clone())
            .unwrap_or_else(|_| PredictiveDistribution::uniform(self.final_probs.len()))
    }

    pub fn final_top_n(&self, n: usize) -> Vec<usize> {
        self.final_distribution().top_n(n)
    }

    /// Root-mean-square coordinate displacement.
    pub fn rms_displacement(&self) -> f64 {
        let flat = self.displacement.as_flattened();
        (flat.iter().map(|d| d * d).sum::<f64>() / flat.len() as f64).sqrt()
    }
}

struct Evaluation {
    dist: PredictiveDistribution,
    classification: Loss,
    perceptual: Loss,
    total: f64,
}

fn evaluate<C: DifferentiableClassifier + ?Sized>(
    classifier: &C,
    original: &Motion,
    original_label: usize,
    strategy: AttackStrategy,
    cfg: &AttackConfig,
    adv: &Motion,
) -> Result<Evaluation> {
    let dist = classifier.forward(adv)?;
    let classification = strategy.classification_loss(original_label, &dist)?;
    let perceptual = perceptual_loss(original, adv, &cfg.perceptual)?;
    let w = cfg.weights.w;
    let total = w * classification.value + (1.0 - w) * perceptual.value;
    if !total.is_finite() {
        return Err(Error::Numeric("attack loss".into()));
    }
    Ok(Evaluation {
        dist,
        classification,
        perceptual,
        total,
    })
}

struct Best {
    iteration: usize,
    coords: Vec<f64>,
    eval: Evaluation,
}

/// Runs one white-box attack.
///
/// For AB and ABN the classifier must predict the motion's label (when it
/// has one); otherwise the sample is rejected.
pub fn attack<C: DifferentiableClassifier + ?Sized>(
    m: &Motion,
    classifier: &C,
    strategy: AttackStrategy,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let k = classifier.class_count();
    strategy.validate(k)?;
    let predicted = classifier.forward(m)?.argmax();
    let original_label = m.label.unwrap_or(predicted);
    if original_label >= k {
        return Err(Error::Validation(format!(
            "label {original_label} out of range for {k} classes"
        )));
    }
    if strategy.requires_correct_prediction() && predicted != original_label {
        return Err(Error::RejectedSample(format!(
            "classifier predicts {predicted}, label is {original_label}"
        )));
    }

    let mut adam = Adam::new(cfg.adam(), m.value_count());
    let mut coords = m.flat().to_vec();
    let mut history = cfg.track_history.then(Vec::new);
    let mut best: Option<Best> = None;
    let mut rollback: Option<(Vec<f64>, Adam, Vec<f64>)> = None;
    let mut halved = false;
    let mut iteration = 0;

    let last = loop {
        let eval = coords
            .iter()
            .all(|v| v.is_finite())
            .then(|| m.with_flat(&coords))
            .ok_or_else(|| Error::Numeric("iterate".into()))
            .and_then(|adv| evaluate(classifier, m, original_label, strategy, cfg, &adv?));
        let eval = match eval {
            Ok(e) => e,
            Err(Error::Numeric(_)) => {
                // Retry the last step once at half the step size.
                let Some((prev, prev_adam, prev_grad)) = rollback.take().filter(|_| !halved) else {
                    return Err(Error::Divergence { iteration });
                };
                halved = true;
                coords = prev;
                adam = prev_adam;
                adam.config.learning_rate *= 0.5;
                adam.step(&mut coords, &prev_grad);
                continue;
            }
            Err(e) => return Err(e),
        };

        let success = strategy.is_success(&eval.dist, original_label);
        if let Some(h) = history.as_mut() {
            h.push(IterationRecord {
                iteration,
                classification_loss: eval.classification.value,
                perceptual_loss: eval.perceptual.value,
                total_loss: eval.total,
                success,
            });
        }
        let done = iteration == cfg.max_iterations
            || (success && eval.perceptual.value == 0.0)
            || (success && cfg.abn_early_stop && matches!(strategy, AttackStrategy::AnythingButN(_)));

        let grad = if done {
            Vec::new()
        } else {
            let adv = m.with_flat(&coords)?;
            let class_loss = Loss {
                value: eval.classification.value,
                grad: classifier.input_gradient(&adv, &eval.classification.grad)?,
            };
            total_loss(&class_loss, &eval.perceptual, cfg.weights)?.grad
        };

        if success && best.as_ref().is_none_or(|b| eval.perceptual.value < b.eval.perceptual.value) {
            best = Some(Best {
                iteration,
                coords: coords.clone(),
                eval,
            });
            if done {
                break None;
            }
        } else if done {
            break Some(Best {
                iteration,
                coords: coords.clone(),
                eval,
            });
        }

        rollback = Some((coords.clone(), adam.clone(), grad.clone()));
        adam.step(&mut coords, &grad);
        iteration += 1;
    };

    let iterations_run = iteration;
    let (success, chosen) = match best {
        Some(b) => (true, b),
        None => (false, last.expect("loop ends with an iterate")),
    };
    let adversarial_motion = m.with_flat(&chosen.coords)?;
    let displacement = adversarial_motion
        .coords()
        .iter()
        .zip(m.coords())
        .map(|(a, q)| [a[0] - q[0], a[1] - q[1], a[2] - q[2]])
        .collect();
    Ok(AttackResult {
        strategy,
        success,
        iterations_used: chosen.iteration,
        iterations_run,
        original_label,
        final_label: chosen.eval.dist.argmax(),
        final_probs: chosen.eval.dist.probs().to_vec(),
        final_classification_loss: chosen.eval.classification.value,
        final_perceptual_loss: chosen.eval.perceptual.value,
        final_total_loss: chosen.eval.total,
        adversarial_motion,
        displacement,
        history,
    })
}

/// Aggregate statistics over a batch. Means are over successful items;
/// the success rate is over all items and undefined for an empty batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub count: usize,
    pub successes: usize,
    pub errors: usize,
    pub success_rate: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_perceptual_loss: Option<f64>,
}

impl BatchSummary {
    pub fn from_results(results: &[Result<AttackResult>]) -> Self {
        let ok: Vec<&AttackResult> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(|r| r.success)
            .collect();
        let mean = |f: &dyn Fn(&AttackResult) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
        };
        Self {
            count: results.len(),
            successes: ok.len(),
            errors: results.iter().filter(|r| r.is_err()).count(),
            success_rate: (!results.is_empty()).then(|| ok.len() as f64 / results.len() as f64),
            mean_iterations: mean(&|r| r.iterations_used as f64),
            mean_perceptual_loss: mean(&|r| r.final_perceptual_loss),
        }
    }
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub results: Vec<Result<AttackResult>>,
    pub summary: BatchSummary,
}

/// Attacks every motion with the same strategy.
pub fn attack_batch<C: DifferentiableClassifier + ?Sized>(
    motions: &[Motion],
    classifier: &C,
    strategy: AttackStrategy,
    cfg: &AttackConfig,
) -> BatchOutcome {
    attack_batch_with(motions, classifier, &vec![strategy; motions.len()], cfg)
}

/// Attacks `motions[i]` with `strategies[i]`. Items run in parallel; each
/// item's outcome is independent of scheduling.
pub fn attack_batch_with<C: DifferentiableClassifier + ?Sized>(
    motions: &[Motion],
    classifier: &C,
    strategies: &[AttackStrategy],
    cfg: &AttackConfig,
) -> BatchOutcome {
    let results: Vec<Result<AttackResult>> = if motions.len() != strategies.len() {
        motions
            .iter()
            .map(|_| {
                Err(Error::Dimension(format!(
                    "{} strategies for {} motions",
                    strategies.len(),
                    motions.len()
                )))
            })
            .collect()
    } else {
        motions
            .par_iter()
            .zip(strategies.par_iter())
            .map(|(m, &s)| attack(m, classifier, s, cfg))
            .collect()
    };
    let summary = BatchSummary::from_results(&results);
    BatchOutcome { results, summary }
}

/// One fake target per motion, uniform over the classes other than the
/// motion's label. Item `i` draws from stream `i` of `seed`.
pub fn random_fake_targets(labels: &[usize], class_count: usize, seed: u64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let pick = rng.random_range(0..class_count - 1);
            if pick >= label {
                pick + 1
            } else {
                pick
            }
        })
        .collect()
}
