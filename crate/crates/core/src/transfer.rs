//! Black-box attacks by transferability: adversarial motions computed on a
//! surrogate classifier are replayed against targets that only expose
//! `forward`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{attack_batch, AttackConfig, AttackResult, AttackStrategy};
use crate::error::{Error, Result};
use crate::models::{Classifier, DifferentiableClassifier};
use crate::motion::Motion;

pub const TRANSFER_SCHEMA_VERSION: u32 = 1;

/// A black-box target: forward access only.
#[derive(Clone, Copy)]
pub struct Target<'a> {
    pub id: &'a str,
    pub model: &'a dyn Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    /// Surrogate successes replayed against this target.
    pub evaluated: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    /// Successes of Gaussian noise with the same RMS displacement.
    pub noise_successes: usize,
    pub noise_success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub schema_version: u32,
    pub surrogate: String,
    pub strategy: AttackStrategy,
    pub generated: usize,
    pub whitebox_successes: usize,
    pub whitebox_success_rate: Option<f64>,
    pub targets: Vec<TargetReport>,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Runs the white-box attack on the surrogate, then evaluates the successful
/// samples on every target.
pub fn transfer_attack<S: DifferentiableClassifier + ?Sized>(
    surrogate_id: &str,
    surrogate: &S,
    targets: &[Target<'_>],
    motions: &[Motion],
    strategy: AttackStrategy,
    cfg: &AttackConfig,
) -> Result<TransferReport> {
    check_class_counts(surrogate.class_count(), targets)?;
    let outcome = attack_batch(motions, surrogate, strategy, cfg);
    evaluate_transfer(surrogate_id, strategy, motions, &outcome.results, targets, cfg.seed)
}

fn check_class_counts(expected: usize, targets: &[Target<'_>]) -> Result<()> {
    for t in targets {
        if t.model.class_count() != expected {
            return Err(Error::ClassCount {
                expected,
                found: t.model.class_count(),
            });
        }
    }
    Ok(())
}

/// Replays precomputed surrogate results (parallel to `originals`) against
/// the targets. Only white-box successes are evaluated. Sample `i`'s noise
/// baseline draws from stream `i` of `seed`.
pub fn evaluate_transfer(
    surrogate_id: &str,
    strategy: AttackStrategy,
    originals: &[Motion],
    results: &[Result<AttackResult>],
    targets: &[Target<'_>],
    seed: u64,
) -> Result<TransferReport> {
    if originals.len() != results.len() {
        return Err(Error::Dimension(format!(
            "{} originals for {} results",
            originals.len(),
            results.len()
        )));
    }
    let successes: Vec<(usize, &AttackResult)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().filter(|r| r.success).map(|r| (i, r)))
        .collect();
    if let Some(first) = successes.first() {
        check_class_counts(first.1.final_probs.len(), targets)?;
    }

    let noisy = successes
        .iter()
        .map(|&(i, r)| noisy_copy(&originals[i], r.rms_displacement(), seed, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(targets.len());
    for t in targets {
        let mut hits = 0;
        let mut noise_hits = 0;
        for ((_, r), noisy) in successes.iter().zip(&noisy) {
            if strategy.is_success(&t.model.forward(&r.adversarial_motion)?, r.original_label) {
                hits += 1;
            }
            if strategy.is_success(&t.model.forward(noisy)?, r.original_label) {
                noise_hits += 1;
            }
        }
        reports.push(TargetReport {
            target: t.id.to_string(),
            evaluated: successes.len(),
            successes: hits,
            success_rate: rate(hits, successes.len()),
            noise_successes: noise_hits,
            noise_success_rate: rate(noise_hits, successes.len()),
        });
    }
    Ok(TransferReport {
        schema_version: TRANSFER_SCHEMA_VERSION,
        surrogate: surrogate_id.to_string(),
        strategy,
        generated: results.len(),
        whitebox_successes: successes.len(),
        whitebox_success_rate: rate(successes.len(), results.len()),
        targets: reports,
    })
}

/// `m` plus zero-mean Gaussian noise of standard deviation `rms` on every
/// coordinate.
pub fn noisy_copy(m: &Motion, rms: f64, seed: u64, stream: u64) -> Result<Motion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, rms).map_err(|e| Error::Validation(format!("noise scale: {e}")))?;
    let flat: Vec<f64> = m.flat().iter().map(|v| v + normal.sample(&mut rng)).collect();
    m.with_flat(&flat)
}

/// Success-rate matrix with one row per surrogate and one column per target
/// id (in first-seen order). Missing or undefined cells are empty.
pub fn transfer_matrix_csv(reports: &[TransferReport]) -> Result<String> {
    let mut columns: Vec<&str> = Vec::new();
    for r in reports {
        for t in &r.targets {
            if !columns.contains(&t.target.as_str()) {
                columns.push(&t.target);
            }
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("surrogate").chain(columns.iter().copied()).collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut row = vec![r.surrogate.clone()];
        for c in &columns {
            let cell = r
                .targets
                .iter()
                .find(|t| t.target == *c)
                .and_then(|t| t.success_rate)
                .map(|v| v.to_string())
                .unwrap_or_default();
            row.push(cell);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}
