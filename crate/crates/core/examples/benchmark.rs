//! Trains the default classifier on the default synthetic dataset and runs
//! every attack strategy over the correctly classified test motions, then
//! replays the AB samples against an independently seeded classifier.

use std::time::Instant;

use skeleton_attack::attack::{attack_batch, attack_batch_with, random_fake_targets, AttackConfig, AttackStrategy};
use skeleton_attack::data::{generate_dataset, DatasetSpec, Split};
use skeleton_attack::losses::LossWeights;
use skeleton_attack::models::{accuracy, train, Architecture, Classifier, ClassifierSpec, TrainConfig};
use skeleton_attack::transfer::{evaluate_transfer, Target};

fn main() -> skeleton_attack::Result<()> {
    let ds = generate_dataset(&DatasetSpec::default())?;
    let (tr, va, te) = (ds.subset(Split::Train), ds.subset(Split::Val), ds.subset(Split::Test));
    let start = Instant::now();
    let model = train(&ClassifierSpec::new(Architecture::MlpPooled, 8, 1), &tr, &va, &TrainConfig::default())?;
    println!("train {:?} test acc {}", start.elapsed(), accuracy(&model, &te)?);
    let other = train(&ClassifierSpec::new(Architecture::MlpPooled, 8, 2), &tr, &va, &TrainConfig::default())?;
    println!("second model test acc {}", accuracy(&other, &te)?);

    let correct: Vec<_> = te.iter().filter(|m| model.predict(m).ok() == m.label).cloned().collect();
    let cfg = AttackConfig::default();
    let start = Instant::now();
    let ab = attack_batch(&correct, &model, AttackStrategy::AnythingBut, &cfg);
    println!("ab: {:?} in {:?}", ab.summary, start.elapsed());
    for s in [AttackStrategy::AnythingButN(3), AttackStrategy::AnythingButN(5)] {
        let out = attack_batch(&correct, &model, s, &cfg);
        println!("{s}: {:?}", out.summary);
    }
    let labels: Vec<usize> = correct.iter().map(|m| m.label.unwrap()).collect();
    let targets = random_fake_targets(&labels, 8, cfg.seed);
    let strategies: Vec<_> = targets.into_iter().map(AttackStrategy::Specified).collect();
    let out = attack_batch_with(&correct, &model, &strategies, &cfg);
    println!("sa: {:?}", out.summary);

    let targets = [Target { id: "self", model: &model }, Target { id: "other", model: &other }];
    let report = evaluate_transfer("self", AttackStrategy::AnythingBut, &correct, &ab.results, &targets, cfg.seed)?;
    for t in &report.targets {
        println!(
            "transfer to {}: {:?} vs noise {:?}",
            t.target, t.success_rate, t.noise_success_rate
        );
    }

    for w in [1.0, 0.05] {
        let cfg = AttackConfig {
            weights: LossWeights { w },
            ..Default::default()
        };
        let out = attack_batch(&correct, &model, AttackStrategy::AnythingBut, &cfg);
        println!("ab w={w}: {:?}", out.summary);
    }
    Ok(())
}
