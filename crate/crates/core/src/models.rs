//! Small differentiable action classifiers with analytic input gradients.
//!
//! Both architectures first resample a motion to a fixed number of frames by
//! linear interpolation, then produce class logits and a softmax
//! distribution:
//!
//! * `LinearSoftmax`: flatten all resampled frames, one affine map.
//! * `MlpPooled`: shared per-frame affine + tanh layer, temporal mean-pool,
//!   affine output layer.
//!
//! Flat parameter layout: `LinearSoftmax` is `W (K x D)` then `b (K)` with
//! `D = frames * 75`; `MlpPooled` is `W1 (H x 75)`, `b1 (H)`, `W2 (K x H)`,
//! `b2 (K)`. Matrices are row-major.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Motion;
use crate::optim::{Adam, AdamConfig};
use crate::skeleton::JOINT_COUNT;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const FRAME_FEATURES: usize = JOINT_COUNT * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    LinearSoftmax,
    MlpPooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub class_count: usize,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    #[serde(default = "default_frames")]
    pub downsample_frames: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    32
}

fn default_frames() -> usize {
    32
}

impl ClassifierSpec {
    pub fn new(architecture: Architecture, class_count: usize, seed: u64) -> Self {
        Self {
            architecture,
            class_count,
            hidden_width: default_hidden(),
            downsample_frames: default_frames(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Validation(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            )));
        }
        if self.downsample_frames < 2 {
            return Err(Error::Validation(format!(
                "downsample_frames must be at least 2, got {}",
                self.downsample_frames
            )));
        }
        if self.architecture == Architecture::MlpPooled && self.hidden_width == 0 {
            return Err(Error::Validation("hidden_width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let k = self.class_count;
        match self.architecture {
            Architecture::LinearSoftmax => k * self.input_width() + k,
            Architecture::MlpPooled => {
                let h = self.hidden_width;
                h * FRAME_FEATURES + h + k * h + k
            }
        }
    }

    fn input_width(&self) -> usize {
        self.downsample_frames * FRAME_FEATURES
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// A class-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution(Vec<f64>);

impl PredictiveDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("empty distribution".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, class_count: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::Validation(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        let mut p = vec![0.0; class_count];
        p[class] = 1.0;
        Ok(Self(p))
    }

    pub fn uniform(class_count: usize) -> Self {
        Self(vec![1.0 / class_count as f64; class_count])
    }

    /// Softmax with max subtraction.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("classifier logits".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(Self(exp.into_iter().map(|e| e / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        self.top_n(1)[0]
    }

    /// Labels by descending probability, ties broken by ascending index.
    /// `n` is clamped to `1..=K`.
    pub fn top_n(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.truncate(n.clamp(1, self.0.len()));
        idx
    }

    /// 1-based position of `class` in the [`top_n`](Self::top_n) ordering.
    pub fn rank_of(&self, class: usize) -> usize {
        self.top_n(self.0.len())
            .iter()
            .position(|&c| c == class)
            .map_or(usize::MAX, |r| r + 1)
    }

    /// Is `class` among the top `n`?
    pub fn in_top_n(&self, class: usize, n: usize) -> bool {
        self.rank_of(class) <= n
    }
}

pub fn top_n(dist: &PredictiveDistribution, n: usize) -> Vec<usize> {
    dist.top_n(n)
}

/// Anything that maps a motion to a class distribution.
pub trait Classifier: Sync {
    fn class_count(&self) -> usize;
    fn forward(&self, m: &Motion) -> Result<PredictiveDistribution>;

    fn predict(&self, m: &Motion) -> Result<usize> {
        Ok(self.forward(m)?.argmax())
    }
}

/// A classifier whose input gradient is available (white-box access).
pub trait DifferentiableClassifier: Classifier {
    /// Gradient of `upstream · Φ(m)` with respect to the motion coordinates,
    /// flattened frame-major. `upstream` is the loss gradient with respect to
    /// the output probabilities.
    fn input_gradient(&self, m: &Motion, upstream: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub spec: ClassifierSpec,
    pub params: Vec<f64>,
    #[serde(default)]
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    #[serde(flatten)]
    model: ClassifierParams,
}

impl ClassifierParams {
    pub fn zeros(spec: ClassifierSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            params: vec![0.0; spec.param_count()],
            spec,
            metadata: TrainingMetadata::default(),
        })
    }

    /// Glorot-uniform weights and zero biases drawn from `spec.seed`.
    pub fn initialize(spec: ClassifierSpec) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.spec.seed);
        let k = model.spec.class_count;
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in slice {
                *w = rng.random_range(-a..a);
            }
        };
        match model.spec.architecture {
            Architecture::LinearSoftmax => {
                let d = model.spec.input_width();
                fill(&mut model.params[..k * d], d, k);
            }
            Architecture::MlpPooled => {
                let h = model.spec.hidden_width;
                let w1 = h * FRAME_FEATURES;
                fill(&mut model.params[..w1], FRAME_FEATURES, h);
                let w2 = w1 + h;
                fill(&mut model.params[w2..w2 + k * h], h, k);
            }
        }
        Ok(model)
    }

    pub fn from_params(spec: ClassifierSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters for a model expecting {}",
                params.len(),
                spec.param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(Self {
            spec,
            params,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path, format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: CHECKPOINT_SCHEMA_VERSION,
                found: ck.schema_version,
            });
        }
        let metadata = ck.model.metadata.clone();
        let mut model = Self::from_params(ck.model.spec, ck.model.params)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        model.metadata = metadata;
        Ok(model)
    }

    /// Logits for a motion.
    pub fn logits(&self, m: &Motion) -> Result<Vec<f64>> {
        let x = self.features(m)?;
        let logits = match self.spec.architecture {
            Architecture::LinearSoftmax => self.linear_forward(&x),
            Architecture::MlpPooled => self.mlp_forward(&x).logits,
        };
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("classifier logits".into()));
        }
        Ok(logits)
    }

    /// Gradient of `upstream · logits(m)` with respect to the motion.
    pub fn input_gradient_logits(&self, m: &Motion, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.spec.class_count {
            return Err(Error::Dimension(format!(
                "upstream has {} entries for {} classes",
                upstream.len(),
                self.spec.class_count
            )));
        }
        let plan = resample_plan(m.frame_count(), self.spec.downsample_frames);
        let x = resample(m.flat(), FRAME_FEATURES, &plan);
        let dx = match self.spec.architecture {
            Architecture::LinearSoftmax => self.linear_input_grad(upstream),
            Architecture::MlpPooled => {
                let cache = self.mlp_forward(&x);
                self.mlp_backward(&x, &cache, upstream, None)
            }
        };
        Ok(resample_adjoint(&dx, FRAME_FEATURES, &plan, m.frame_count()))
    }

    fn features(&self, m: &Motion) -> Result<Vec<f64>> {
        if m.joint_count() != JOINT_COUNT {
            return Err(Error::Dimension(format!(
                "classifier expects {JOINT_COUNT} joints, motion has {}",
                m.joint_count()
            )));
        }
        let plan = resample_plan(m.frame_count(), self.spec.downsample_frames);
        Ok(resample(m.flat(), FRAME_FEATURES, &plan))
    }

    fn linear_forward(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let k = self.spec.class_count;
        let (w, b) = self.params.split_at(k * d);
        (0..k).map(|c| dot(&w[c * d..(c + 1) * d], x) + b[c]).collect()
    }

    fn linear_input_grad(&self, dz: &[f64]) -> Vec<f64> {
        let d = self.spec.input_width();
        let w = &self.params[..self.spec.class_count * d];
        let mut dx = vec![0.0; d];
        for (c, &g) in dz.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[c * d..(c + 1) * d], &mut dx);
            }
        }
        dx
    }

    fn mlp_layout(&self) -> MlpLayout {
        let h = self.spec.hidden_width;
        let k = self.spec.class_count;
        let w1 = 0;
        let b1 = w1 + h * FRAME_FEATURES;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        MlpLayout { h, k, w1, b1, w2, b2 }
    }

    fn mlp_forward(&self, x: &[f64]) -> MlpCache {
        let l = self.mlp_layout();
        let p = &self.params;
        let frames = x.len() / FRAME_FEATURES;
        let mut hidden = Vec::with_capacity(frames * l.h);
        let mut pooled = vec![0.0; l.h];
        for xt in x.chunks_exact(FRAME_FEATURES) {
            for u in 0..l.h {
                let row = &p[l.w1 + u * FRAME_FEATURES..l.w1 + (u + 1) * FRAME_FEATURES];
                let a = (dot(row, xt) + p[l.b1 + u]).tanh();
                hidden.push(a);
                pooled[u] += a;
            }
        }
        for v in &mut pooled {
            *v /= frames as f64;
        }
        let logits = (0..l.k)
            .map(|c| dot(&p[l.w2 + c * l.h..l.w2 + (c + 1) * l.h], &pooled) + p[l.b2 + c])
            .collect();
        MlpCache {
            hidden,
            pooled,
            logits,
        }
    }

    /// Backward pass of the MLP. Returns the input gradient; accumulates
    /// parameter gradients into `param_grad` when given.
    fn mlp_backward(
        &self,
        x: &[f64],
        cache: &MlpCache,
        dz: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let l = self.mlp_layout();
        let p = &self.params;
        let frames = x.len() / FRAME_FEATURES;
        let mut dpooled = vec![0.0; l.h];
        for (c, &g) in dz.iter().enumerate() {
            axpy(g, &p[l.w2 + c * l.h..l.w2 + (c + 1) * l.h], &mut dpooled);
        }
        if let Some(pg) = param_grad.as_deref_mut() {
            for (c, &g) in dz.iter().enumerate() {
                axpy(g, &cache.pooled, &mut pg[l.w2 + c * l.h..l.w2 + (c + 1) * l.h]);
                pg[l.b2 + c] += g;
            }
        }
        let inv_t = 1.0 / frames as f64;
        let mut dx = vec![0.0; x.len()];
        for (t, xt) in x.chunks_exact(FRAME_FEATURES).enumerate() {
            let dxt = &mut dx[t * FRAME_FEATURES..(t + 1) * FRAME_FEATURES];
            for u in 0..l.h {
                let a = cache.hidden[t * l.h + u];
                let da = dpooled[u] * inv_t * (1.0 - a * a);
                if da == 0.0 {
                    continue;
                }
                let row = l.w1 + u * FRAME_FEATURES..l.w1 + (u + 1) * FRAME_FEATURES;
                axpy(da, &p[row.clone()], dxt);
                if let Some(pg) = param_grad.as_deref_mut() {
                    axpy(da, xt, &mut pg[row]);
                    pg[l.b1 + u] += da;
                }
            }
        }
        dx
    }

    /// Cross-entropy of one resampled sample; accumulates parameter
    /// gradients scaled by `scale`.
    fn accumulate_ce_grad(&self, x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let logits = match self.spec.architecture {
            Architecture::LinearSoftmax => self.linear_forward(x),
            Architecture::MlpPooled => self.mlp_forward(x).logits,
        };
        let dist = PredictiveDistribution::from_logits(&logits)?;
        let loss = -dist.0[label].max(1e-300).ln();
        let mut dz = dist.0.clone();
        dz[label] -= 1.0;
        for g in &mut dz {
            *g *= scale;
        }
        match self.spec.architecture {
            Architecture::LinearSoftmax => {
                let d = x.len();
                let k = self.spec.class_count;
                for (c, &g) in dz.iter().enumerate() {
                    axpy(g, x, &mut grad[c * d..(c + 1) * d]);
                    grad[k * d + c] += g;
                }
            }
            Architecture::MlpPooled => {
                let cache = self.mlp_forward(x);
                self.mlp_backward(x, &cache, &dz, Some(grad));
            }
        }
        Ok(loss)
    }
}

struct MlpLayout {
    h: usize,
    k: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct MlpCache {
    hidden: Vec<f64>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

impl Classifier for ClassifierParams {
    fn class_count(&self) -> usize {
        self.spec.class_count
    }

    fn forward(&self, m: &Motion) -> Result<PredictiveDistribution> {
        PredictiveDistribution::from_logits(&self.logits(m)?)
    }
}

impl DifferentiableClassifier for ClassifierParams {
    fn input_gradient(&self, m: &Motion, upstream: &[f64]) -> Result<Vec<f64>> {
        let dist = self.forward(m)?;
        if upstream.len() != dist.class_count() {
            return Err(Error::Dimension(format!(
                "upstream has {} entries for {} classes",
                upstream.len(),
                dist.class_count()
            )));
        }
        let dz = softmax_backward(dist.probs(), upstream);
        self.input_gradient_logits(m, &dz)
    }
}

/// Pulls a probability-space gradient back to logit space:
/// `dz_j = p_j * sum_i p_i (g_j - g_i)`, which vanishes exactly for constant `g`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .zip(upstream)
        .map(|(&pj, &gj)| {
            pj * probs
                .iter()
                .zip(upstream)
                .map(|(&pi, &gi)| pi * (gj - gi))
                .sum::<f64>()
        })
        .collect()
}

/// `(i0, i1, w)` per output frame: `out = (1 - w) * in[i0] + w * in[i1]`.
fn resample_plan(frames: usize, target: usize) -> Vec<(usize, usize, f64)> {
    let span = (frames - 1) as f64;
    (0..target)
        .map(|k| {
            let s = k as f64 * span / (target - 1) as f64;
            let i0 = (s.floor() as usize).min(frames - 2);
            (i0, i0 + 1, s - i0 as f64)
        })
        .collect()
}

fn resample(values: &[f64], stride: usize, plan: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(plan.len() * stride);
    for &(i0, i1, w) in plan {
        let a = &values[i0 * stride..(i0 + 1) * stride];
        let b = &values[i1 * stride..(i1 + 1) * stride];
        out.extend(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y));
    }
    out
}

fn resample_adjoint(grad: &[f64], stride: usize, plan: &[(usize, usize, f64)], frames: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames * stride];
    for (k, &(i0, i1, w)) in plan.iter().enumerate() {
        let g = &grad[k * stride..(k + 1) * stride];
        axpy(1.0 - w, g, &mut out[i0 * stride..(i0 + 1) * stride]);
        axpy(w, g, &mut out[i1 * stride..(i1 + 1) * stride]);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

/// Minimizes mean cross-entropy with minibatch Adam. Batch order is drawn
/// from `spec.seed`, so equal inputs give bit-identical parameters.
pub fn train(
    spec: &ClassifierSpec,
    train_set: &[Motion],
    val_set: &[Motion],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let labels = train_set
        .iter()
        .chain(val_set)
        .map(|m| {
            let l = m
                .label
                .ok_or_else(|| Error::Validation("training motion without label".into()))?;
            if l >= spec.class_count {
                return Err(Error::Validation(format!(
                    "label {l} out of range for {} classes",
                    spec.class_count
                )));
            }
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ClassifierParams::initialize(spec.clone())?;
    let features = train_set
        .iter()
        .map(|m| model.features(m))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(cfg.adam, model.params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let batch = cfg.batch_size.max(1);
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                epoch_loss += model.accumulate_ce_grad(&features[i], labels[i], scale, &mut grad)?;
            }
            adam.step(&mut model.params, &grad);
        }
        epoch_loss /= train_set.len() as f64;
        if !epoch_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    model.metadata = TrainingMetadata {
        epochs: cfg.epochs,
        final_loss: Some(epoch_loss),
        train_accuracy: Some(accuracy(&model, train_set)?),
        val_accuracy: if val_set.is_empty() {
            None
        } else {
            Some(accuracy(&model, val_set)?)
        },
        test_accuracy: None,
    };
    Ok(model)
}

/// Fraction of labelled motions whose argmax matches the label.
pub fn accuracy(model: &dyn Classifier, motions: &[Motion]) -> Result<f64> {
    if motions.is_empty() {
        return Err(Error::EmptyInput("accuracy over no motions".into()));
    }
    let mut correct = 0usize;
    for m in motions {
        if Some(model.predict(m)?) == m.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / motions.len() as f64)
}
