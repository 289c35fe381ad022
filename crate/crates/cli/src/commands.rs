use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use skeleton_attack::analysis::{correlation_report, deviation_stats, matrix_csv, stats_csv, CorrelationMatrix};
use skeleton_attack::attack::{attack_batch_with, random_fake_targets, AttackConfig, AttackStrategy, BatchSummary};
use skeleton_attack::data::{generate_dataset, load_dataset, load_manifest, save_dataset, Dataset, DatasetSpec, Split};
use skeleton_attack::models::{accuracy, train as fit, Architecture, Classifier, ClassifierParams, ClassifierSpec, TrainConfig};
use skeleton_attack::motion::{save_motion, Motion};
use skeleton_attack::transfer::{transfer_attack, transfer_matrix_csv, Target, TransferReport, TRANSFER_SCHEMA_VERSION};

use crate::results::{
    adversarial_path, items_csv, load_items, load_result, original_path, ItemRecord, ItemsFile, RESULTS_SCHEMA_VERSION,
};
use crate::ExportFormat;

const INPUT_SCHEMA_VERSION: u32 = 1;

fn default_version() -> u32 {
    INPUT_SCHEMA_VERSION
}

/// Input files carry an optional `schema_version` next to their fields.
#[derive(Deserialize)]
struct Versioned<T> {
    #[serde(default = "default_version")]
    schema_version: u32,
    #[serde(flatten)]
    inner: T,
}

fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Versioned<T> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(
        v.schema_version == INPUT_SCHEMA_VERSION,
        "{}: unsupported schema version {} (expected {INPUT_SCHEMA_VERSION})",
        path.display(),
        v.schema_version
    );
    Ok(v.inner)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<AttackConfig> {
    let mut cfg = match path {
        Some(p) => read_versioned::<AttackConfig>(p)?,
        None => AttackConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ClassifierParams> {
    ClassifierParams::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Motions of one split with their manifest ids.
fn split_motions(dir: &Path, split: Split) -> Result<(Dataset, Vec<(String, Motion)>)> {
    let ds = load_dataset(dir)?;
    let manifest = load_manifest(dir)?;
    let picked = manifest
        .items
        .iter()
        .zip(&ds.motions)
        .zip(&ds.splits)
        .filter(|(_, &s)| s == split)
        .map(|((item, m), _)| {
            let id = Path::new(&item.file)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| item.file.clone());
            (id, m.clone())
        })
        .collect();
    Ok((ds, picked))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn gen_data(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Value> {
    let mut spec = match spec {
        Some(p) => read_versioned::<DatasetSpec>(p)?,
        None => DatasetSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate_dataset(&spec)?;
    let manifest = save_dataset(&ds, out)?;
    let count = |s: Split| ds.splits.iter().filter(|&&x| x == s).count();
    Ok(json!({
        "command": "gen-data",
        "motions": manifest.items.len(),
        "class_count": spec.class_count,
        "frames": spec.frames,
        "seed": spec.seed,
        "train": count(Split::Train),
        "val": count(Split::Val),
        "test": count(Split::Test),
    }))
}

pub fn train(
    data: &Path,
    arch: Architecture,
    out: &Path,
    seed: u64,
    epochs: Option<usize>,
    batch_size: Option<usize>,
) -> Result<Value> {
    let ds = load_dataset(data)?;
    let mut cfg = TrainConfig::default();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    let spec = ClassifierSpec::new(arch, ds.spec.class_count, seed);
    let mut model = fit(&spec, &ds.subset(Split::Train), &ds.subset(Split::Val), &cfg)?;
    let test = ds.subset(Split::Test);
    if !test.is_empty() {
        model.metadata.test_accuracy = Some(accuracy(&model, &test)?);
    }
    model.save(out)?;
    let meta = &model.metadata;
    Ok(json!({
        "command": "train",
        "architecture": arch,
        "seed": seed,
        "epochs": meta.epochs,
        "final_loss": meta.final_loss,
        "train_accuracy": meta.train_accuracy,
        "val_accuracy": meta.val_accuracy,
        "test_accuracy": meta.test_accuracy,
    }))
}

/// A strategy argument: a fixed strategy or one random fake target per motion.
enum StrategyArg {
    Fixed(AttackStrategy),
    RandomTarget,
}

fn parse_strategy(s: &str) -> Result<StrategyArg> {
    if s.eq_ignore_ascii_case("sa:random") {
        return Ok(StrategyArg::RandomTarget);
    }
    Ok(StrategyArg::Fixed(s.parse()?))
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    schema_version: u32,
    command: &'static str,
    strategy: &'a str,
    split: &'static str,
    architecture: Architecture,
    class_count: usize,
    eligible: usize,
    skipped_misclassified: usize,
    config: &'a AttackConfig,
    summary: BatchSummary,
}

pub fn attack(
    model_path: &Path,
    data: &Path,
    strategy: &str,
    config: Option<&Path>,
    out: &Path,
    split: Split,
    seed: Option<u64>,
) -> Result<Value> {
    let model = load_model(model_path)?;
    let cfg = load_config(config, seed)?;
    let arg = parse_strategy(strategy)?;
    let (ds, picked) = split_motions(data, split)?;
    let k = model.class_count();
    ensure!(
        ds.spec.class_count == k,
        "model has {k} classes, dataset has {}",
        ds.spec.class_count
    );

    let eligible = picked.len();
    let mut correct = Vec::new();
    for (id, m) in picked {
        if model.predict(&m)? == m.label.unwrap_or(usize::MAX) {
            correct.push((id, m));
        }
    }
    let motions: Vec<Motion> = correct.iter().map(|(_, m)| m.clone()).collect();
    let labels: Vec<usize> = motions.iter().map(|m| m.label.unwrap_or(0)).collect();
    let strategies: Vec<AttackStrategy> = match arg {
        StrategyArg::Fixed(s) => vec![s; motions.len()],
        StrategyArg::RandomTarget => {
            ensure!(k >= 2, "random targets need at least two classes");
            random_fake_targets(&labels, k, cfg.seed)
                .into_iter()
                .map(AttackStrategy::Specified)
                .collect()
        }
    };
    for s in &strategies {
        s.validate(k)?;
    }
    let outcome = attack_batch_with(&motions, &model, &strategies, &cfg);

    for sub in ["original", "adversarial"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut items = Vec::with_capacity(motions.len());
    for (((id, m), s), r) in correct.iter().zip(&strategies).zip(&outcome.results) {
        save_motion(m, original_path(out, id))?;
        if let Ok(r) = r {
            save_motion(&r.adversarial_motion, adversarial_path(out, id))?;
        }
        items.push(ItemRecord::new(id.clone(), m.label.unwrap_or(0), *s, r));
    }
    write_json(
        &out.join("items.json"),
        &ItemsFile {
            schema_version: RESULTS_SCHEMA_VERSION,
            items: items.clone(),
        },
    )?;
    write(&out.join("items.csv"), &items_csv(&items, &[], &[])?)?;

    let summary = AttackSummary {
        schema_version: RESULTS_SCHEMA_VERSION,
        command: "attack",
        strategy,
        split: split_name(split),
        architecture: model.spec.architecture,
        class_count: k,
        eligible,
        skipped_misclassified: eligible - motions.len(),
        config: &cfg,
        summary: outcome.summary,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(serde_json::to_value(&summary)?)
}

#[derive(Serialize)]
struct TransferFile<'a> {
    schema_version: u32,
    split: &'static str,
    reports: &'a [TransferReport],
}

#[allow(clippy::too_many_arguments)]
pub fn transfer(
    surrogates: &[PathBuf],
    targets: &[PathBuf],
    data: &Path,
    strategy: &str,
    config: Option<&Path>,
    out: &Path,
    split: Split,
    seed: Option<u64>,
) -> Result<Value> {
    let strategy = match parse_strategy(strategy)? {
        StrategyArg::Fixed(s) => s,
        StrategyArg::RandomTarget => bail!("transfer needs a fixed strategy (ab, abn:N or sa:CLASS)"),
    };
    let cfg = load_config(config, seed)?;
    let (ds, picked) = split_motions(data, split)?;
    let target_models = targets.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let target_ids: Vec<String> = targets.iter().map(|p| stem(p)).collect();
    let target_refs: Vec<Target<'_>> = target_ids
        .iter()
        .zip(&target_models)
        .map(|(id, model)| Target { id, model })
        .collect();

    let mut reports = Vec::with_capacity(surrogates.len());
    for path in surrogates {
        let surrogate = load_model(path)?;
        ensure!(
            surrogate.class_count() == ds.spec.class_count,
            "{}: model has {} classes, dataset has {}",
            path.display(),
            surrogate.class_count(),
            ds.spec.class_count
        );
        strategy.validate(surrogate.class_count())?;
        let mut correct = Vec::new();
        for (_, m) in &picked {
            if surrogate.predict(m)? == m.label.unwrap_or(usize::MAX) {
                correct.push(m.clone());
            }
        }
        reports.push(transfer_attack(&stem(path), &surrogate, &target_refs, &correct, strategy, &cfg)?);
    }

    let file = TransferFile {
        schema_version: TRANSFER_SCHEMA_VERSION,
        split: split_name(split),
        reports: &reports,
    };
    write_json(&out.join("transfer.json"), &file)?;
    write(&out.join("matrix.csv"), &transfer_matrix_csv(&reports)?)?;
    let noise: Vec<TransferReport> = reports
        .iter()
        .cloned()
        .map(|mut r| {
            for t in &mut r.targets {
                t.success_rate = t.noise_success_rate;
            }
            r
        })
        .collect();
    write(&out.join("noise_matrix.csv"), &transfer_matrix_csv(&noise)?)?;
    Ok(json!({
        "command": "transfer",
        "strategy": strategy,
        "split": split_name(split),
        "reports": reports,
    }))
}

fn valid_cells(m: &CorrelationMatrix) -> usize {
    m.0.iter().flatten().filter(|c| c.is_some()).count()
}

pub fn analyze(results: &Path, out: &Path, class: Option<usize>) -> Result<Value> {
    let items = load_items(results)?;
    let chosen: Vec<&ItemRecord> = items
        .iter()
        .filter(|it| it.success && class.is_none_or(|c| it.label == c))
        .collect();
    if chosen.is_empty() {
        bail!("no successful attacks in {}", results.display());
    }
    let mut attack_results = Vec::with_capacity(chosen.len());
    let mut originals = Vec::with_capacity(chosen.len());
    for it in chosen {
        let (r, o) = load_result(results, it)?;
        attack_results.push(r);
        originals.push(o);
    }
    let corr = correlation_report(&attack_results, &originals)?;
    let stats = deviation_stats(&attack_results)?;

    write(&out.join("disp_disp.csv"), &matrix_csv(&corr.disp_disp, &corr.joint_names)?)?;
    write(&out.join("disp_speed.csv"), &matrix_csv(&corr.disp_speed, &corr.joint_names)?)?;
    write(&out.join("disp_accel.csv"), &matrix_csv(&corr.disp_accel, &corr.joint_names)?)?;
    write(&out.join("deviation.csv"), &stats_csv(&stats)?)?;
    write_json(
        &out.join("report.json"),
        &json!({
            "schema_version": RESULTS_SCHEMA_VERSION,
            "class": class,
            "correlations": corr,
            "deviation": stats,
        }),
    )?;

    let most = stats
        .mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| stats.joint_names[j].clone());
    Ok(json!({
        "command": "analyze",
        "class": class,
        "samples": corr.sample_count,
        "valid_cells": {
            "disp_disp": valid_cells(&corr.disp_disp),
            "disp_speed": valid_cells(&corr.disp_speed),
            "disp_accel": valid_cells(&corr.disp_accel),
        },
        "most_displaced_joint": most,
    }))
}

/// RMS and largest per-joint displacement of an item, when its motions exist.
fn displacement_stats(results: &Path, item: &ItemRecord) -> Result<Option<(f64, f64)>> {
    if item.error.is_some() {
        return Ok(None);
    }
    let (r, _) = load_result(results, item)?;
    let largest = r
        .displacement
        .iter()
        .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        .fold(0.0, f64::max);
    Ok(Some((r.rms_displacement(), largest)))
}

pub fn export(results: &Path, format: ExportFormat, out: Option<&Path>) -> Result<Value> {
    let items = load_items(results)?;
    let stats = items
        .iter()
        .map(|it| displacement_stats(results, it))
        .collect::<Result<Vec<_>>>()?;
    let (path, text, name) = match format {
        ExportFormat::Csv => {
            let classes = items
                .iter()
                .find_map(|it| it.final_probs.as_ref().map(Vec::len))
                .unwrap_or(0);
            let prob_names: Vec<String> = (0..classes).map(|c| format!("p_{c}")).collect();
            let mut header = vec!["rms_displacement", "max_displacement"];
            header.extend(prob_names.iter().map(String::as_str));
            let extra: Vec<Vec<String>> = items
                .iter()
                .zip(&stats)
                .map(|(it, s)| {
                    let mut row = match s {
                        Some((rms, max)) => vec![rms.to_string(), max.to_string()],
                        None => vec![String::new(), String::new()],
                    };
                    let probs = it.final_probs.clone().unwrap_or_default();
                    row.extend((0..classes).map(|c| probs.get(c).map(|p| p.to_string()).unwrap_or_default()));
                    row
                })
                .collect();
            let text = items_csv(&items, &header, &extra)?;
            (out.map(Path::to_path_buf).unwrap_or_else(|| results.join("export.csv")), text, "csv")
        }
        ExportFormat::Json => {
            let rows: Vec<Value> = items
                .iter()
                .zip(&stats)
                .map(|(it, s)| {
                    let mut v = serde_json::to_value(it).expect("item serializes");
                    v["rms_displacement"] = json!(s.map(|s| s.0));
                    v["max_displacement"] = json!(s.map(|s| s.1));
                    v
                })
                .collect();
            let text = serde_json::to_string_pretty(&json!({
                "schema_version": RESULTS_SCHEMA_VERSION,
                "items": rows,
            }))? + "\n";
            (out.map(Path::to_path_buf).unwrap_or_else(|| results.join("export.json")), text, "json")
        }
    };
    write(&path, &text)?;
    Ok(json!({
        "command": "export",
        "format": name,
        "items": items.len(),
        "successes": items.iter().filter(|it| it.success).count(),
        "path": path.display().to_string(),
    }))
}
