//! Python bindings: motions, classifiers, datasets, training, attacks,
//! losses, transfer and analysis.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use skeleton_attack::analysis::{correlation_report as correlations, deviation_stats as deviations, joint_displacement_series};
use skeleton_attack::attack::{
    attack as run_attack, attack_batch_with, random_fake_targets, AttackConfig, AttackResult, AttackStrategy,
    BatchSummary,
};
use skeleton_attack::data::{generate_dataset as generate, load_dataset as load_dir, save_dataset, Dataset, DatasetSpec, Split};
use skeleton_attack::losses::{self, Loss, LossWeights, PerceptualConfig};
use skeleton_attack::models::{
    accuracy, train as fit, Architecture, Classifier, ClassifierParams, ClassifierSpec, DifferentiableClassifier,
    PredictiveDistribution, TrainConfig,
};
use skeleton_attack::motion::{derivative, load_motion, motion_to_json, parse_motion, save_motion, Motion};
use skeleton_attack::skeleton::{Joint, SkeletonTopology, JOINT_COUNT};
use skeleton_attack::transfer::{transfer_attack as run_transfer, Target};
use skeleton_attack::Error;

create_exception!(skeleton_attack, SkeletonAttackError, PyValueError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => {
            let source = std::error::Error::source(&e).map(|s| format!(": {s}")).unwrap_or_default();
            PyOSError::new_err(format!("{e}{source}"))
        }
        other => SkeletonAttackError::new_err(other.to_string()),
    }
}

/// Converts a serializable value into Python objects through `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SkeletonAttackError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_strategy(s: &str) -> PyResult<AttackStrategy> {
    s.parse().map_err(err)
}

fn parse_architecture(s: &str) -> PyResult<Architecture> {
    match s {
        "linear" | "linear_softmax" => Ok(Architecture::LinearSoftmax),
        "mlp" | "mlp_pooled" => Ok(Architecture::MlpPooled),
        _ => Err(SkeletonAttackError::new_err(format!(
            "unknown architecture {s:?}; expected \"linear\" or \"mlp\""
        ))),
    }
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(SkeletonAttackError::new_err(format!("unknown split {s:?}"))),
    }
}

fn loss_pair(l: Loss) -> (f64, Vec<f64>) {
    (l.value, l.grad)
}

/// A skeletal motion: `frames x 25 x 3` joint positions on the standard skeleton.
#[pyclass(name = "Motion", module = "skeleton_attack", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMotion {
    inner: Motion,
}

#[pymethods]
impl PyMotion {
    #[new]
    #[pyo3(signature = (coords, frame_rate = 30.0, label = None))]
    fn new(coords: Vec<Vec<Joint>>, frame_rate: f64, label: Option<usize>) -> PyResult<Self> {
        let inner = Motion::from_frames(coords, SkeletonTopology::standard(), frame_rate, label).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = parse_motion(text, std::path::Path::new("<string>")).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_motion(path).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        motion_to_json(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_motion(&self.inner, path).map_err(err)
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    #[getter]
    fn frame_rate(&self) -> f64 {
        self.inner.frame_rate
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.inner.label
    }

    /// Nested `frames x joints x 3` coordinates.
    fn coords(&self) -> Vec<Vec<Joint>> {
        self.inner.frames().map(<[Joint]>::to_vec).collect()
    }

    /// Coordinates flattened frame-major.
    fn flat(&self) -> Vec<f64> {
        self.inner.flat().to_vec()
    }

    /// A copy with flattened coordinates replaced.
    fn with_flat(&self, flat: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_flat(&flat).map_err(err)?,
        })
    }

    /// Forward difference of the given order, `(frames - order) x joints x 3`.
    fn derivative(&self, order: usize) -> PyResult<Vec<Vec<Joint>>> {
        let d = derivative(&self.inner, order).map_err(err)?;
        Ok((0..d.frames).map(|t| d.frame(t).to_vec()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Motion(frames={}, joints={}, frame_rate={}, label={:?})",
            self.inner.frame_count(),
            self.inner.joint_count(),
            self.inner.frame_rate,
            self.inner.label
        )
    }
}

/// A differentiable action classifier.
#[pyclass(name = "Classifier", module = "skeleton_attack", frozen)]
struct PyClassifier {
    inner: ClassifierParams,
}

#[pymethods]
impl PyClassifier {
    /// A freshly initialized (untrained) classifier.
    #[new]
    #[pyo3(signature = (architecture, class_count, seed = 0))]
    fn new(architecture: &str, class_count: usize, seed: u64) -> PyResult<Self> {
        let spec = ClassifierSpec::new(parse_architecture(architecture)?, class_count, seed);
        Ok(Self {
            inner: ClassifierParams::initialize(spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ClassifierParams::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        match self.inner.spec.architecture {
            Architecture::LinearSoftmax => "linear",
            Architecture::MlpPooled => "mlp",
        }
    }

    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metadata)
    }

    /// Class probabilities.
    fn forward(&self, motion: &PyMotion) -> PyResult<Vec<f64>> {
        Ok(self.inner.forward(&motion.inner).map_err(err)?.probs().to_vec())
    }

    fn predict(&self, motion: &PyMotion) -> PyResult<usize> {
        self.inner.predict(&motion.inner).map_err(err)
    }

    /// Gradient of `upstream . forward(motion)` with respect to the flattened coordinates.
    fn input_gradient(&self, motion: &PyMotion, upstream: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.input_gradient(&motion.inner, &upstream).map_err(err)
    }

    fn accuracy(&self, motions: Vec<PyRef<'_, PyMotion>>) -> PyResult<f64> {
        let ms: Vec<Motion> = motions.iter().map(|m| m.inner.clone()).collect();
        accuracy(&self.inner, &ms).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier(architecture={:?}, class_count={})",
            self.architecture(),
            self.inner.class_count()
        )
    }
}

/// A labelled synthetic dataset with train/val/test tags.
#[pyclass(name = "Dataset", module = "skeleton_attack", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    fn subset(&self, split: &str) -> PyResult<Vec<PyMotion>> {
        let split = parse_split(split)?;
        Ok(self.inner.subset(split).into_iter().map(|inner| PyMotion { inner }).collect())
    }

    fn motions(&self) -> Vec<PyMotion> {
        self.inner.motions.iter().cloned().map(|inner| PyMotion { inner }).collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.spec.class_count
    }

    /// Writes motion files plus a checksummed manifest into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, dir).map(|_| ()).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.motions.len()
    }
}

/// Outcome of one white-box attack.
#[pyclass(name = "AttackResult", module = "skeleton_attack", frozen)]
struct PyAttackResult {
    inner: AttackResult,
}

#[pymethods]
impl PyAttackResult {
    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[getter]
    fn success(&self) -> bool {
        self.inner.success
    }

    #[getter]
    fn iterations_used(&self) -> usize {
        self.inner.iterations_used
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn original_label(&self) -> usize {
        self.inner.original_label
    }

    #[getter]
    fn final_label(&self) -> usize {
        self.inner.final_label
    }

    #[getter]
    fn final_probs(&self) -> Vec<f64> {
        self.inner.final_probs.clone()
    }

    #[getter]
    fn classification_loss(&self) -> f64 {
        self.inner.final_classification_loss
    }

    #[getter]
    fn perceptual_loss(&self) -> f64 {
        self.inner.final_perceptual_loss
    }

    #[getter]
    fn total_loss(&self) -> f64 {
        self.inner.final_total_loss
    }

    #[getter]
    fn adversarial_motion(&self) -> PyMotion {
        PyMotion {
            inner: self.inner.adversarial_motion.clone(),
        }
    }

    fn rms_displacement(&self) -> f64 {
        self.inner.rms_displacement()
    }

    /// Per-joint displacement magnitudes, `joints x frames`.
    fn displacement_series(&self) -> PyResult<Vec<Vec<f64>>> {
        joint_displacement_series(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "AttackResult(strategy={:?}, success={}, iterations_used={}, perceptual_loss={})",
            self.strategy(),
            if self.inner.success { "True" } else { "False" },
            self.inner.iterations_used,
            self.inner.final_perceptual_loss
        )
    }
}

fn perceptual_config(alpha: f64, betas: Option<BTreeMap<usize, f64>>) -> PyResult<PerceptualConfig> {
    let mut cfg = PerceptualConfig {
        alpha,
        ..Default::default()
    };
    if let Some(b) = betas {
        cfg.betas = b;
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn attack_config(
    learning_rate: f64,
    max_iterations: usize,
    w: f64,
    alpha: f64,
    betas: Option<BTreeMap<usize, f64>>,
    seed: u64,
    track_history: bool,
) -> PyResult<AttackConfig> {
    let cfg = AttackConfig {
        learning_rate,
        max_iterations,
        weights: LossWeights { w },
        perceptual: perceptual_config(alpha, betas)?,
        seed,
        track_history,
        ..Default::default()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

#[pyfunction]
#[pyo3(signature = (class_count = 8, samples_per_class = 50, frames = 64, frame_rate = 30.0, noise_std = 0.02, seed = 0))]
fn generate_dataset(
    py: Python<'_>,
    class_count: usize,
    samples_per_class: usize,
    frames: usize,
    frame_rate: f64,
    noise_std: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = DatasetSpec {
        class_count,
        samples_per_class,
        frames,
        frame_rate,
        noise_std,
        seed,
        ..Default::default()
    };
    let inner = py.detach(|| generate(&spec)).map_err(err)?;
    Ok(PyDataset { inner })
}

#[pyfunction]
fn load_dataset(dir: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: load_dir(dir).map_err(err)?,
    })
}

/// Trains a classifier on `train_set`; `val_set` only feeds the metadata.
#[pyfunction]
#[pyo3(signature = (architecture, train_set, val_set, class_count, seed = 0, epochs = 200, batch_size = 16))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    architecture: &str,
    train_set: Vec<PyRef<'_, PyMotion>>,
    val_set: Vec<PyRef<'_, PyMotion>>,
    class_count: usize,
    seed: u64,
    epochs: usize,
    batch_size: usize,
) -> PyResult<PyClassifier> {
    let spec = ClassifierSpec::new(parse_architecture(architecture)?, class_count, seed);
    let tr: Vec<Motion> = train_set.iter().map(|m| m.inner.clone()).collect();
    let va: Vec<Motion> = val_set.iter().map(|m| m.inner.clone()).collect();
    let cfg = TrainConfig {
        epochs,
        batch_size,
        ..Default::default()
    };
    let inner = py.detach(|| fit(&spec, &tr, &va, &cfg)).map_err(err)?;
    Ok(PyClassifier { inner })
}

/// Runs one white-box attack. `strategy` is `"ab"`, `"abn:N"` or `"sa:CLASS"`.
#[pyfunction]
#[pyo3(signature = (
    motion, classifier, strategy = "ab", *, learning_rate = 0.005, max_iterations = 300, w = 0.4,
    alpha = 0.3, betas = None, seed = 0, track_history = false
))]
#[allow(clippy::too_many_arguments)]
fn attack(
    py: Python<'_>,
    motion: &PyMotion,
    classifier: &PyClassifier,
    strategy: &str,
    learning_rate: f64,
    max_iterations: usize,
    w: f64,
    alpha: f64,
    betas: Option<BTreeMap<usize, f64>>,
    seed: u64,
    track_history: bool,
) -> PyResult<PyAttackResult> {
    let strategy = parse_strategy(strategy)?;
    let cfg = attack_config(learning_rate, max_iterations, w, alpha, betas, seed, track_history)?;
    let inner = py
        .detach(|| run_attack(&motion.inner, &classifier.inner, strategy, &cfg))
        .map_err(err)?;
    Ok(PyAttackResult { inner })
}

/// Attacks every motion in parallel. Returns the per-item results (`None`
/// where an item was rejected or failed) and a summary dict. `"sa:random"`
/// draws one fake target per motion from `seed`.
#[pyfunction]
#[pyo3(signature = (
    motions, classifier, strategy = "ab", *, learning_rate = 0.005, max_iterations = 300, w = 0.4,
    alpha = 0.3, betas = None, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn attack_batch<'py>(
    py: Python<'py>,
    motions: Vec<PyRef<'py, PyMotion>>,
    classifier: &PyClassifier,
    strategy: &str,
    learning_rate: f64,
    max_iterations: usize,
    w: f64,
    alpha: f64,
    betas: Option<BTreeMap<usize, f64>>,
    seed: u64,
) -> PyResult<(Vec<Option<PyAttackResult>>, Bound<'py, PyAny>)> {
    let cfg = attack_config(learning_rate, max_iterations, w, alpha, betas, seed, false)?;
    let ms: Vec<Motion> = motions.iter().map(|m| m.inner.clone()).collect();
    let strategies = if strategy.eq_ignore_ascii_case("sa:random") {
        let k = classifier.inner.class_count();
        let labels = ms
            .iter()
            .map(|m| m.label.map_or_else(|| classifier.inner.predict(m), Ok))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        random_fake_targets(&labels, k, seed)
            .into_iter()
            .map(AttackStrategy::Specified)
            .collect()
    } else {
        vec![parse_strategy(strategy)?; ms.len()]
    };
    let outcome = py.detach(|| attack_batch_with(&ms, &classifier.inner, &strategies, &cfg));
    let summary: &BatchSummary = &outcome.summary;
    let summary = to_py(py, summary)?;
    let results = outcome
        .results
        .into_iter()
        .map(|r| r.ok().map(|inner| PyAttackResult { inner }))
        .collect();
    Ok((results, summary))
}

/// Replays surrogate attacks against black-box targets given as
/// `(name, classifier)` pairs. Returns the transfer report as a dict.
#[pyfunction]
#[pyo3(signature = (surrogate, targets, motions, strategy = "ab", *, max_iterations = 300, seed = 0))]
fn transfer_attack<'py>(
    py: Python<'py>,
    surrogate: &PyClassifier,
    targets: Vec<(String, PyRef<'py, PyClassifier>)>,
    motions: Vec<PyRef<'py, PyMotion>>,
    strategy: &str,
    max_iterations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy = parse_strategy(strategy)?;
    let cfg = AttackConfig {
        max_iterations,
        seed,
        ..Default::default()
    };
    let ms: Vec<Motion> = motions.iter().map(|m| m.inner.clone()).collect();
    let refs: Vec<Target<'_>> = targets
        .iter()
        .map(|(id, c)| Target {
            id,
            model: &c.inner as &dyn Classifier,
        })
        .collect();
    let report = run_transfer("surrogate", &surrogate.inner, &refs, &ms, strategy, &cfg).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn bone_loss(q: &PyMotion, adv: &PyMotion) -> PyResult<(f64, Vec<f64>)> {
    losses::bone_loss(&q.inner, &adv.inner).map(loss_pair).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (q, adv, betas = None))]
fn dynamics_loss(q: &PyMotion, adv: &PyMotion, betas: Option<BTreeMap<usize, f64>>) -> PyResult<(f64, Vec<f64>)> {
    let cfg = perceptual_config(0.3, betas)?;
    losses::dynamics_loss(&q.inner, &adv.inner, &cfg).map(loss_pair).map_err(err)
}

/// Perceptual loss and its gradient with respect to `adv`.
#[pyfunction]
#[pyo3(signature = (q, adv, alpha = 0.3, betas = None))]
fn perceptual_loss(
    q: &PyMotion,
    adv: &PyMotion,
    alpha: f64,
    betas: Option<BTreeMap<usize, f64>>,
) -> PyResult<(f64, Vec<f64>)> {
    let cfg = perceptual_config(alpha, betas)?;
    losses::perceptual_loss(&q.inner, &adv.inner, &cfg).map(loss_pair).map_err(err)
}

fn distribution(probs: Vec<f64>) -> PyResult<PredictiveDistribution> {
    PredictiveDistribution::new(probs).map_err(err)
}

/// Classification losses return the value and the gradient with respect
/// to the adversarial probabilities.
#[pyfunction]
fn ab_loss(clean: Vec<f64>, adv: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    losses::ab_loss(&distribution(clean)?, &distribution(adv)?).map(loss_pair).map_err(err)
}

#[pyfunction]
fn abn_loss(adv: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    losses::abn_loss(&distribution(adv)?).map(loss_pair).map_err(err)
}

#[pyfunction]
fn sa_loss(target: usize, adv: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let adv = distribution(adv)?;
    let hot = PredictiveDistribution::one_hot(target, adv.class_count()).map_err(err)?;
    losses::sa_loss(&hot, &adv).map(loss_pair).map_err(err)
}

fn unwrap_results(results: &[PyRef<'_, PyAttackResult>]) -> Vec<AttackResult> {
    results.iter().map(|r| r.inner.clone()).collect()
}

/// Correlation matrices over successful results; invalid cells are `None`.
#[pyfunction]
fn correlation_report<'py>(
    py: Python<'py>,
    results: Vec<PyRef<'py, PyAttackResult>>,
    originals: Vec<PyRef<'py, PyMotion>>,
) -> PyResult<Bound<'py, PyAny>> {
    let rs = unwrap_results(&results);
    let os: Vec<Motion> = originals.iter().map(|m| m.inner.clone()).collect();
    to_py(py, &correlations(&rs, &os).map_err(err)?)
}

/// Per-joint mean and population standard deviation of displacement magnitudes.
#[pyfunction]
fn deviation_stats<'py>(py: Python<'py>, results: Vec<PyRef<'py, PyAttackResult>>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &deviations(&unwrap_results(&results)).map_err(err)?)
}

#[pymodule]
#[pyo3(name = "skeleton_attack")]
fn skeleton_attack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SkeletonAttackError", m.py().get_type::<SkeletonAttackError>())?;
    m.add("JOINT_COUNT", JOINT_COUNT)?;
    m.add_class::<PyMotion>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(attack_batch, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_attack, m)?)?;
    m.add_function(wrap_pyfunction!(bone_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dynamics_loss, m)?)?;
    m.add_function(wrap_pyfunction!(perceptual_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ab_loss, m)?)?;
    m.add_function(wrap_pyfunction!(abn_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sa_loss, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_report, m)?)?;
    m.add_function(wrap_pyfunction!(deviation_stats, m)?)?;
    Ok(())
}
