//! Synthetic parametric action dataset and stratified splits.
//!
//! Each class is a fixed set of sinusoidal joint-angle tracks (amplitude,
//! frequency and phase per axis, plus a static pose offset) on a handful of
//! articulated joints, drawn once from the seed. Samples of a class differ by
//! a global phase offset and per-frame Gaussian angle noise. Motions come
//! from forward kinematics, so bone lengths are constant within a motion.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::{load_motion, motion_to_json, Motion};
use crate::skeleton::{forward_kinematics, JointAngleTrack, SkeletonTopology};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

// Joints whose local rotation a class may animate.
const ARTICULATED: [usize; 16] = [1, 2, 3, 5, 6, 7, 8, 10, 11, 12, 13, 15, 16, 17, 20, 21];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub frame_rate: f64,
    /// Standard deviation of per-frame angle noise, radians.
    pub noise_std: f64,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Translate every frame so the root sits at the origin.
    pub root_center: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            class_count: 8,
            samples_per_class: 50,
            frames: 64,
            frame_rate: 30.0,
            noise_std: 0.02,
            seed: 0,
            split: [0.5, 0.25, 0.25],
            root_center: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Validation("class_count must be at least 2".into()));
        }
        if self.frames < 8 {
            return Err(Error::Validation("frames must be at least 8".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Validation("samples_per_class must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Validation("noise_std must be nonnegative".into()));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Validation("frame_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub motions: Vec<Motion>,
    /// Parallel to `motions`; empty until split.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn subset(&self, split: Split) -> Vec<Motion> {
        self.motions
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(m, _)| m.clone())
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.motions.iter().map(|m| m.label.unwrap_or(0)).collect()
    }
}

struct AxisWave {
    amplitude: f64,
    phase: f64,
}

struct JointWave {
    joint: usize,
    offset: [f64; 3],
    frequency: f64,
    axes: [AxisWave; 3],
}

struct ClassProgram {
    joints: Vec<JointWave>,
    sway: f64,
    sway_frequency: f64,
}

fn draw_program(rng: &mut ChaCha8Rng) -> ClassProgram {
    let active = rng.random_range(3..=5);
    let joints = ARTICULATED
        .choose_multiple(rng, active)
        .map(|&joint| JointWave {
            joint,
            offset: [0, 1, 2].map(|_| rng.random_range(-0.4..0.4)),
            frequency: rng.random_range(0.4..1.6),
            axes: [0, 1, 2].map(|_| AxisWave {
                amplitude: rng.random_range(0.0..0.7),
                phase: rng.random_range(0.0..TAU),
            }),
        })
        .collect();
    ClassProgram {
        joints,
        sway: rng.random_range(0.0..0.05),
        sway_frequency: rng.random_range(0.2..0.8),
    }
}

fn synthesize(
    program: &ClassProgram,
    spec: &DatasetSpec,
    phase_offset: f64,
    noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
) -> JointAngleTrack {
    let mut track = JointAngleTrack::rest(spec.frames);
    for (t, frame) in track.angles.iter_mut().enumerate() {
        let time = t as f64 / spec.frame_rate;
        for w in &program.joints {
            for (axis, wave) in w.axes.iter().enumerate() {
                frame[w.joint][axis] = w.offset[axis]
                    + wave.amplitude * (TAU * w.frequency * time + wave.phase + phase_offset).sin();
            }
        }
        let sway = program.sway * (TAU * program.sway_frequency * time + phase_offset).sin();
        track.root_translation[t][0] += sway;
    }
    if let Some((normal, rng)) = noise {
        for frame in &mut track.angles {
            for angles in frame.iter_mut().skip(1) {
                for a in angles.iter_mut() {
                    *a += normal.sample(rng);
                }
            }
        }
    }
    track
}

/// Generates and splits a dataset. Deterministic given `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let topo = SkeletonTopology::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let programs: Vec<ClassProgram> = (0..spec.class_count).map(|_| draw_program(&mut rng)).collect();
    let normal = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::Validation(format!("noise distribution: {e}")))?;

    let mut motions = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for (class, program) in programs.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let phase = rng.random_range(0.0..TAU);
            let noise = (spec.noise_std > 0.0).then_some((&normal, &mut rng));
            let track = synthesize(program, spec, phase, noise);
            let mut m = forward_kinematics(&track, &topo, spec.frame_rate)?;
            if spec.root_center {
                m = m.root_centered();
            }
            m.label = Some(class);
            motions.push(m);
        }
    }
    let ds = Dataset {
        spec: spec.clone(),
        motions,
        splits: Vec::new(),
    };
    split_dataset(ds, spec.split, spec.seed)
}

/// Class-stratified split into train / validation / test.
///
/// Each class's count `n` is divided by largest remainder of `n * fraction`.
/// Equal remainders are resolved in the part order `(part + class) mod 3`,
/// which spreads the extra samples across parts from one class to the next.
pub fn split_dataset(mut ds: Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::Validation("split fractions must be nonnegative".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation("split fractions must sum to 1".into()));
    }
    let parts_used = fractions.iter().filter(|f| **f > 0.0).count();
    let class_count = ds.motions.iter().filter_map(|m| m.label).max().map_or(0, |l| l + 1);
    let mut splits = vec![Split::Train; ds.motions.len()];
    for class in 0..class_count {
        let mut members: Vec<usize> = (0..ds.motions.len())
            .filter(|&i| ds.motions[i].label == Some(class))
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < parts_used {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples for {parts_used} parts",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64 + 1);
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &fractions, class);
        let mut cursor = members.into_iter();
        for (part, &count) in counts.iter().enumerate() {
            for i in cursor.by_ref().take(count) {
                splits[i] = Split::ALL[part];
            }
        }
    }
    ds.splits = splits;
    Ok(ds)
}

fn largest_remainder(n: usize, fractions: &[f64; 3], class: usize) -> [usize; 3] {
    let exact = fractions.map(|f| n as f64 * f);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
            .then(((a + class) % 3).cmp(&((b + class) % 3)))
    });
    for &part in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[part] > 0.0 {
            counts[part] += 1;
            left -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub file: String,
    pub label: usize,
    pub split: Split,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: DatasetSpec,
    pub items: Vec<ManifestItem>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes one JSON file per motion plus `manifest.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut items = Vec::with_capacity(ds.motions.len());
    for (i, m) in ds.motions.iter().enumerate() {
        let file = format!("motion_{i:05}.json");
        let text = motion_to_json(m);
        let path = dir.join(&file);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        items.push(ManifestItem {
            file,
            label: m.label.unwrap_or(0),
            split: ds.splits.get(i).copied().unwrap_or(Split::Train),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        spec: ds.spec.clone(),
        items,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(&path, format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            expected: MANIFEST_SCHEMA_VERSION,
            found: manifest.schema_version,
        });
    }
    Ok(manifest)
}

/// Loads a dataset directory, verifying every file against its checksum.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let mut motions = Vec::with_capacity(manifest.items.len());
    let mut splits = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let path: PathBuf = dir.join(&item.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != item.sha256 {
            return Err(Error::parse(&path, "checksum does not match manifest"));
        }
        let m = load_motion(&path)?;
        if m.label != Some(item.label) {
            return Err(Error::parse(&path, "label disagrees with manifest"));
        }
        motions.push(m);
        splits.push(item.split);
    }
    Ok(Dataset {
        spec: manifest.spec,
        motions,
        splits,
    })
}
