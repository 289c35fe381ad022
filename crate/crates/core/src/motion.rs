//! Motion container, forward-difference derivatives and the motion JSON
//! file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::skeleton::{Joint, SkeletonTopology};

pub const MOTION_SCHEMA_VERSION: u32 = 1;

/// A sequence of at least two frames of 3D joint positions on a fixed
/// topology, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    coords: Vec<Joint>,
    frames: usize,
    topology: SkeletonTopology,
    pub frame_rate: f64,
    pub label: Option<usize>,
}

impl Motion {
    pub fn new(
        coords: Vec<Joint>,
        joint_count: usize,
        topology: SkeletonTopology,
        frame_rate: f64,
        label: Option<usize>,
    ) -> Result<Self> {
        if joint_count != topology.joint_count() {
            return Err(Error::Validation(format!(
                "expected {} joints per frame, found {joint_count}",
                topology.joint_count()
            )));
        }
        if !coords.len().is_multiple_of(joint_count) {
            return Err(Error::Dimension(format!(
                "{} joints do not divide into frames of {joint_count}",
                coords.len()
            )));
        }
        let frames = coords.len() / joint_count;
        if frames < 2 {
            return Err(Error::Validation(format!(
                "a motion needs at least 2 frames, found {frames}"
            )));
        }
        if let Some(i) = coords.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite coordinate in frame {}",
                i / (3 * joint_count)
            )));
        }
        Ok(Self {
            coords,
            frames,
            topology,
            frame_rate,
            label,
        })
    }

    pub fn from_frames(
        frames: Vec<Vec<Joint>>,
        topology: SkeletonTopology,
        frame_rate: f64,
        label: Option<usize>,
    ) -> Result<Self> {
        let expected = topology.joint_count();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != expected) {
            return Err(Error::Validation(format!(
                "frame {t}: expected {expected} joints, found {}",
                f.len()
            )));
        }
        Self::new(frames.concat(), expected, topology, frame_rate, label)
    }

    /// Same metadata with new coordinates of identical shape.
    pub fn with_coords(&self, coords: Vec<Joint>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(Error::Dimension(format!(
                "replacement has {} joints, motion has {}",
                coords.len(),
                self.coords.len()
            )));
        }
        Self::new(
            coords,
            self.joint_count(),
            self.topology.clone(),
            self.frame_rate,
            self.label,
        )
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.coords.len() * 3 {
            return Err(Error::Dimension(format!(
                "flat buffer of {} values for a motion of {}",
                flat.len(),
                self.coords.len() * 3
            )));
        }
        self.with_coords(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.topology.joint_count()
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn frame(&self, t: usize) -> &[Joint] {
        let j = self.joint_count();
        &self.coords[t * j..(t + 1) * j]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[Joint]> {
        self.coords.chunks_exact(self.joint_count())
    }

    pub fn coords(&self) -> &[Joint] {
        &self.coords
    }

    /// Coordinates as one `frames * joints * 3` slice.
    pub fn flat(&self) -> &[f64] {
        self.coords.as_flattened()
    }

    pub fn value_count(&self) -> usize {
        self.coords.len() * 3
    }

    /// Translates every frame so its root joint sits at the origin.
    pub fn root_centered(&self) -> Self {
        let root = self.topology.root();
        let j = self.joint_count();
        let mut coords = self.coords.clone();
        for frame in coords.chunks_exact_mut(j) {
            let r = frame[root];
            for p in frame.iter_mut() {
                *p = [p[0] - r[0], p[1] - r[1], p[2] - r[2]];
            }
        }
        Self {
            coords,
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Motion) -> bool {
        self.frames == other.frames && self.topology == other.topology
    }
}

/// Finite differences of a given order; `values` holds `frames` time steps
/// of joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTensor {
    pub order: usize,
    pub frames: usize,
    pub joints: usize,
    pub values: Vec<Joint>,
}

impl DerivativeTensor {
    pub fn frame(&self, t: usize) -> &[Joint] {
        &self.values[t * self.joints..(t + 1) * self.joints]
    }
}

/// Order-`order` forward difference, truncated to `frames - order` steps and
/// not scaled by the frame interval.
pub fn derivative(m: &Motion, order: usize) -> Result<DerivativeTensor> {
    let frames = m.frame_count();
    let stride = m.value_count() / frames;
    let flat = forward_difference(m.flat(), stride, order)?;
    Ok(DerivativeTensor {
        order,
        frames: frames - order,
        joints: m.joint_count(),
        values: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Repeated forward difference along the time axis of a frame-major buffer.
pub(crate) fn forward_difference(values: &[f64], stride: usize, order: usize) -> Result<Vec<f64>> {
    let frames = values.len() / stride;
    if order >= frames {
        return Err(Error::InsufficientFrames { order, frames });
    }
    let mut cur = values.to_vec();
    for _ in 0..order {
        let next: Vec<f64> = cur[stride..]
            .iter()
            .zip(&cur[..cur.len() - stride])
            .map(|(b, a)| b - a)
            .collect();
        cur = next;
    }
    Ok(cur)
}

/// Adjoint of [`forward_difference`]: maps a gradient over the differenced
/// buffer back to the undifferenced one.
pub(crate) fn forward_difference_adjoint(grad: &[f64], stride: usize, order: usize) -> Vec<f64> {
    let mut cur = grad.to_vec();
    for _ in 0..order {
        let steps = cur.len() / stride;
        let mut next = vec![0.0; (steps + 1) * stride];
        for t in 0..steps {
            for i in 0..stride {
                let g = cur[t * stride + i];
                next[(t + 1) * stride + i] += g;
                next[t * stride + i] -= g;
            }
        }
        cur = next;
    }
    cur
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    schema_version: u32,
    frame_rate: f64,
    label: Option<usize>,
    parents: Vec<i64>,
    frames: Vec<Vec<Joint>>,
}

/// Parses a motion JSON document.
pub fn parse_motion(text: &str, origin: &Path) -> Result<Motion> {
    let file: MotionFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(origin, format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    if file.schema_version != MOTION_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            expected: MOTION_SCHEMA_VERSION,
            found: file.schema_version,
        });
    }
    let topo = SkeletonTopology::from_encoded_parents(&file.parents)
        .map_err(|e| Error::parse(origin, e.to_string()))?;
    if !file.frame_rate.is_finite() || file.frame_rate <= 0.0 {
        return Err(Error::parse(origin, "frame_rate must be positive"));
    }
    Motion::from_frames(file.frames, topo, file.frame_rate, file.label)
        .map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<Motion> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text, path)
}

/// Renders a motion as JSON, one frame per line. Numbers use the shortest
/// decimal form that parses back to the identical `f64`.
pub fn motion_to_json(m: &Motion) -> String {
    let mut out = String::with_capacity(m.value_count() * 22);
    let num = |v: f64| serde_json::to_string(&v).expect("finite coordinates serialize");
    out.push_str("{\n");
    let _ = writeln!(out, "  \"schema_version\": {MOTION_SCHEMA_VERSION},");
    let _ = writeln!(out, "  \"frame_rate\": {},", num(m.frame_rate));
    match m.label {
        Some(l) => {
            let _ = writeln!(out, "  \"label\": {l},");
        }
        None => out.push_str("  \"label\": null,\n"),
    }
    let parents: Vec<String> = m
        .topology()
        .encoded_parents()
        .iter()
        .map(i64::to_string)
        .collect();
    let _ = writeln!(out, "  \"parents\": [{}],", parents.join(","));
    out.push_str("  \"frames\": [\n");
    for (t, frame) in m.frames().enumerate() {
        out.push_str("    [");
        for (j, p) in frame.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "[{},{},{}]", num(p[0]), num(p[1]), num(p[2]));
        }
        out.push(']');
        if t + 1 < m.frame_count() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save_motion(m: &Motion, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, motion_to_json(m)).map_err(|e| Error::io(path, e))
}
