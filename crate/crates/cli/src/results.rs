//! On-disk layout of an attack results directory.
//!
//! ```text
//! results/
//!   summary.json        batch summary, no paths or timestamps
//!   items.json          one record per attacked motion
//!   items.csv           the same records as a flat table
//!   original/<id>.json  clean motions
//!   adversarial/<id>.json
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skeleton_attack::attack::{AttackResult, AttackStrategy};
use skeleton_attack::motion::{load_motion, Motion};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub label: usize,
    pub strategy: AttackStrategy,
    pub success: bool,
    pub error: Option<String>,
    pub iterations_used: Option<usize>,
    pub iterations_run: Option<usize>,
    pub classification_loss: Option<f64>,
    pub perceptual_loss: Option<f64>,
    pub total_loss: Option<f64>,
    pub final_label: Option<usize>,
    pub final_probs: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemsFile {
    pub schema_version: u32,
    pub items: Vec<ItemRecord>,
}

impl ItemRecord {
    pub fn new(id: String, label: usize, strategy: AttackStrategy, r: &skeleton_attack::Result<AttackResult>) -> Self {
        match r {
            Ok(r) => Self {
                id,
                label,
                strategy,
                success: r.success,
                error: None,
                iterations_used: Some(r.iterations_used),
                iterations_run: Some(r.iterations_run),
                classification_loss: Some(r.final_classification_loss),
                perceptual_loss: Some(r.final_perceptual_loss),
                total_loss: Some(r.final_total_loss),
                final_label: Some(r.final_label),
                final_probs: Some(r.final_probs.clone()),
            },
            Err(e) => Self {
                id,
                label,
                strategy,
                success: false,
                error: Some(e.to_string()),
                iterations_used: None,
                iterations_run: None,
                classification_loss: None,
                perceptual_loss: None,
                total_loss: None,
                final_label: None,
                final_probs: None,
            },
        }
    }
}

pub fn original_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join("original").join(format!("{id}.json"))
}

pub fn adversarial_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join("adversarial").join(format!("{id}.json"))
}

/// Item records of a results directory; a directory without `items.json`
/// holds no items.
pub fn load_items(dir: &Path) -> Result<Vec<ItemRecord>> {
    if !dir.is_dir() {
        bail!("{}: not a results directory", dir.display());
    }
    let path = dir.join("items.json");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: ItemsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.schema_version != RESULTS_SCHEMA_VERSION {
        bail!(
            "{}: unsupported schema version {} (expected {RESULTS_SCHEMA_VERSION})",
            path.display(),
            file.schema_version
        );
    }
    Ok(file.items)
}

/// Rebuilds the attack result and clean motion of a successful item.
pub fn load_result(dir: &Path, item: &ItemRecord) -> Result<(AttackResult, Motion)> {
    let original = load_motion(original_path(dir, &item.id))?;
    let adversarial = load_motion(adversarial_path(dir, &item.id))?;
    if !adversarial.same_shape(&original) {
        bail!("{}: adversarial and original motions differ in shape", item.id);
    }
    let displacement = adversarial
        .coords()
        .iter()
        .zip(original.coords())
        .map(|(a, q)| [a[0] - q[0], a[1] - q[1], a[2] - q[2]])
        .collect();
    let missing = || anyhow::anyhow!("{}: incomplete item record", item.id);
    let result = AttackResult {
        strategy: item.strategy,
        success: item.success,
        iterations_used: item.iterations_used.ok_or_else(missing)?,
        iterations_run: item.iterations_run.ok_or_else(missing)?,
        original_label: item.label,
        adversarial_motion: adversarial,
        final_label: item.final_label.ok_or_else(missing)?,
        final_probs: item.final_probs.clone().ok_or_else(missing)?,
        final_classification_loss: item.classification_loss.ok_or_else(missing)?,
        final_perceptual_loss: item.perceptual_loss.ok_or_else(missing)?,
        final_total_loss: item.total_loss.ok_or_else(missing)?,
        displacement,
        history: None,
    };
    Ok((result, original))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Flat CSV of item records, optionally with extra trailing columns per row.
pub fn items_csv(items: &[ItemRecord], extra_header: &[&str], extra: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec![
        "id",
        "label",
        "strategy",
        "success",
        "iterations",
        "iterations_run",
        "classification_loss",
        "perceptual_loss",
        "total_loss",
        "final_label",
        "error",
    ];
    header.extend_from_slice(extra_header);
    w.write_record(&header)?;
    for (i, it) in items.iter().enumerate() {
        let mut row = vec![
            it.id.clone(),
            it.label.to_string(),
            it.strategy.to_string(),
            it.success.to_string(),
            opt(it.iterations_used),
            opt(it.iterations_run),
            opt(it.classification_loss),
            opt(it.perceptual_loss),
            opt(it.total_loss),
            opt(it.final_label),
            it.error.clone().unwrap_or_default(),
        ];
        if let Some(cells) = extra.get(i) {
            row.extend(cells.iter().cloned());
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
