mod common;

use skeleton_attack::attack::{attack, attack_batch_with, AttackConfig, AttackStrategy};
use skeleton_attack::data::{generate_dataset, DatasetSpec, Split};
use skeleton_attack::models::{
    train, Architecture, Classifier, ClassifierParams, ClassifierSpec, DifferentiableClassifier,
    PredictiveDistribution, TrainConfig,
};
use skeleton_attack::motion::Motion;
use skeleton_attack::{Error, Result};

fn small_benchmark() -> (ClassifierParams, Vec<Motion>) {
    let spec = DatasetSpec {
        class_count: 4,
        samples_per_class: 12,
        frames: 16,
        seed: 3,
        ..Default::default()
    };
    let ds = generate_dataset(&spec).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        ..Default::default()
    };
    let model = train(
        &ClassifierSpec::new(Architecture::LinearSoftmax, 4, 5),
        &ds.subset(Split::Train),
        &ds.subset(Split::Val),
        &cfg,
    )
    .unwrap();
    let correct = ds
        .motions
        .iter()
        .filter(|m| model.predict(m).ok() == m.label)
        .take(10)
        .cloned()
        .collect();
    (model, correct)
}

#[test]
fn results_respect_structure_history_and_predicates() {
    let (model, motions) = small_benchmark();
    assert!(motions.len() >= 5);
    let cfg = AttackConfig {
        max_iterations: 80,
        track_history: true,
        ..Default::default()
    };
    let strategies = [
        AttackStrategy::AnythingBut,
        AttackStrategy::AnythingButN(2),
        AttackStrategy::Specified(0),
    ];
    for s in strategies {
        let outcome = attack_batch_with(&motions, &model, &vec![s; motions.len()], &cfg);
        for (m, r) in motions.iter().zip(&outcome.results) {
            let r = r.as_ref().unwrap();
            let adv = &r.adversarial_motion;
            assert_eq!(adv.frame_count(), m.frame_count());
            assert_eq!(adv.joint_count(), m.joint_count());
            assert_eq!(adv.topology(), m.topology());

            let history = r.history.as_ref().unwrap();
            assert_eq!(history.len(), r.iterations_run + 1);
            if r.success {
                assert!(s.is_success(&model.forward(adv).unwrap(), r.original_label));
                let best = history
                    .iter()
                    .filter(|h| h.success)
                    .map(|h| h.perceptual_loss)
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(r.final_perceptual_loss, best);
                assert_eq!(history[r.iterations_used].perceptual_loss, best);
            } else {
                assert!(history.iter().all(|h| !h.success));
            }
        }
    }
}

/// Refuses inputs that moved too far from a reference motion.
struct Fragile<'a> {
    inner: &'a ClassifierParams,
    reference: &'a Motion,
    limit: f64,
}

impl Fragile<'_> {
    fn check(&self, m: &Motion) -> Result<()> {
        let far = m
            .flat()
            .iter()
            .zip(self.reference.flat())
            .any(|(a, b)| (a - b).abs() > self.limit);
        if far {
            Err(Error::Numeric("too far".into()))
        } else {
            Ok(())
        }
    }
}

impl Classifier for Fragile<'_> {
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn forward(&self, m: &Motion) -> Result<PredictiveDistribution> {
        self.check(m)?;
        self.inner.forward(m)
    }
}

impl DifferentiableClassifier for Fragile<'_> {
    fn input_gradient(&self, m: &Motion, upstream: &[f64]) -> Result<Vec<f64>> {
        self.inner.input_gradient(m, upstream)
    }
}

#[test]
fn divergence_guard_halves_once_then_fails() {
    let (model, motions) = small_benchmark();
    let m = &motions[0];
    // A first Adam step moves every coordinate by about the learning rate.
    let fragile = Fragile {
        inner: &model,
        reference: m,
        limit: 0.004,
    };
    let one_step = AttackConfig {
        max_iterations: 1,
        ..Default::default()
    };
    let r = attack(m, &fragile, AttackStrategy::AnythingBut, &one_step).unwrap();
    assert_eq!(r.iterations_run, 1);

    let longer = AttackConfig {
        max_iterations: 10,
        ..Default::default()
    };
    let err = attack(m, &fragile, AttackStrategy::AnythingBut, &longer).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");

    let frozen = Fragile {
        inner: &model,
        reference: m,
        limit: 0.0,
    };
    let err = attack(m, &frozen, AttackStrategy::AnythingBut, &longer).unwrap_err();
    assert!(matches!(err, Error::Divergence { iteration: 1 }), "{err}");
}

#[test]
fn attacks_are_deterministic() {
    let (model, motions) = small_benchmark();
    let cfg = AttackConfig {
        max_iterations: 40,
        ..Default::default()
    };
    let s = vec![AttackStrategy::AnythingBut; motions.len()];
    let a = attack_batch_with(&motions, &model, &s, &cfg);
    let b = attack_batch_with(&motions, &model, &s, &cfg);
    assert_eq!(
        serde_json::to_string(&a.summary).unwrap(),
        serde_json::to_string(&b.summary).unwrap()
    );
    for (x, y) in a.results.iter().zip(&b.results) {
        assert_eq!(x.as_ref().unwrap(), y.as_ref().unwrap());
    }
}
