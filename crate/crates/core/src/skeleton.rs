//! Fixed 25-joint kinematic tree, bone-length extraction and forward
//! kinematics.
//!
//! Joint layout of [`SkeletonTopology::standard`] (parent in brackets):
//!
//! ```text
//!  0 pelvis [-]    5 l_clavicle [2]   10 r_clavicle [2]   15 l_hip [0]    20 r_hip [0]
//!  1 spine  [0]    6 l_shoulder [5]   11 r_shoulder [10]  16 l_knee [15]  21 r_knee [20]
//!  2 chest  [1]    7 l_elbow    [6]   12 r_elbow    [11]  17 l_ankle [16] 22 r_ankle [21]
//!  3 neck   [2]    8 l_wrist    [7]   13 r_wrist    [12]  18 l_foot [17]  23 r_foot [22]
//!  4 head   [3]    9 l_hand     [8]   14 r_hand     [13]  19 l_toe [18]   24 r_toe [23]
//! ```
//!
//! Coordinates are y-up, meters. Local joint rotations are Euler angles in
//! radians stored as `[x, y, z]` and composed in ZXY order, `R = Rz * Rx * Ry`.

use crate::error::{Error, Result};
use crate::motion::Motion;

pub const JOINT_COUNT: usize = 25;
pub const BONE_COUNT: usize = JOINT_COUNT - 1;

pub type Joint = [f64; 3];

const STANDARD_PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(2),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(2),
    Some(10),
    Some(11),
    Some(12),
    Some(13),
    Some(0),
    Some(15),
    Some(16),
    Some(17),
    Some(18),
    Some(0),
    Some(20),
    Some(21),
    Some(22),
    Some(23),
];

const STANDARD_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "l_clavicle",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hand",
    "r_clavicle",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hand",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_foot",
    "l_toe",
    "r_hip",
    "r_knee",
    "r_ankle",
    "r_foot",
    "r_toe",
];

// Rest offset of each joint from its parent: (unnormalized direction, length).
const STANDARD_REST: [(Joint, f64); JOINT_COUNT] = [
    ([0.0, 0.0, 0.0], 0.0),
    ([0.0, 1.0, 0.0], 0.12),
    ([0.0, 1.0, 0.0], 0.15),
    ([0.0, 1.0, 0.0], 0.18),
    ([0.0, 1.0, 0.0], 0.12),
    ([1.0, 0.3, 0.0], 0.15),
    ([1.0, 0.0, 0.0], 0.12),
    ([0.0, -1.0, 0.0], 0.28),
    ([0.0, -1.0, 0.0], 0.25),
    ([0.0, -1.0, 0.0], 0.08),
    ([-1.0, 0.3, 0.0], 0.15),
    ([-1.0, 0.0, 0.0], 0.12),
    ([0.0, -1.0, 0.0], 0.28),
    ([0.0, -1.0, 0.0], 0.25),
    ([0.0, -1.0, 0.0], 0.08),
    ([1.0, -0.5, 0.0], 0.12),
    ([0.0, -1.0, 0.0], 0.42),
    ([0.0, -1.0, 0.0], 0.40),
    ([0.0, -0.5, 1.0], 0.08),
    ([0.0, 0.0, 1.0], 0.07),
    ([-1.0, -0.5, 0.0], 0.12),
    ([0.0, -1.0, 0.0], 0.42),
    ([0.0, -1.0, 0.0], 0.40),
    ([0.0, -0.5, 1.0], 0.08),
    ([0.0, 0.0, 1.0], 0.07),
];

/// Kinematic tree over [`JOINT_COUNT`] joints.
///
/// Joints are indexed so that every parent precedes its children; the single
/// root has no parent. `bones[k]` is `(parent, child)` for the k-th non-root
/// joint in index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    parents: Vec<Option<usize>>,
    bones: Vec<(usize, usize)>,
    joint_names: Vec<String>,
}

impl SkeletonTopology {
    pub fn standard() -> Self {
        Self::from_parents_named(
            STANDARD_PARENTS.to_vec(),
            STANDARD_NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("standard topology is valid")
    }

    /// Builds a topology from a parent table using generic joint names.
    /// When the table matches the standard tree, the standard names are used.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Result<Self> {
        if parents == STANDARD_PARENTS {
            return Ok(Self::standard());
        }
        let names = (0..parents.len()).map(|j| format!("joint_{j}")).collect();
        Self::from_parents_named(parents, names)
    }

    pub fn from_parents_named(parents: Vec<Option<usize>>, joint_names: Vec<String>) -> Result<Self> {
        if parents.len() != JOINT_COUNT {
            return Err(Error::Validation(format!(
                "expected {JOINT_COUNT} joints in parent table, found {}",
                parents.len()
            )));
        }
        if joint_names.len() != parents.len() {
            return Err(Error::Dimension(format!(
                "{} joint names for {} joints",
                joint_names.len(),
                parents.len()
            )));
        }
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Validation(format!(
                "parent table must have exactly one root, found {roots}"
            )));
        }
        let mut bones = Vec::with_capacity(BONE_COUNT);
        for (child, parent) in parents.iter().enumerate() {
            if let Some(p) = *parent {
                if p >= child {
                    return Err(Error::Validation(format!(
                        "joint {child} has parent {p}; parents must precede children"
                    )));
                }
                bones.push((p, child));
            }
        }
        Ok(Self {
            parents,
            bones,
            joint_names,
        })
    }

    /// Parses the on-disk encoding where the root parent is `-1`.
    pub fn from_encoded_parents(encoded: &[i64]) -> Result<Self> {
        let parents = encoded
            .iter()
            .enumerate()
            .map(|(j, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::Validation(format!("joint {j}: invalid parent index {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parents(parents)
    }

    pub fn encoded_parents(&self) -> Vec<i64> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root(&self) -> usize {
        self.parents.iter().position(Option::is_none).unwrap_or(0)
    }

    /// True when `joint` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_descendant(&self, joint: usize, ancestor: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(j) = cur {
            if j == ancestor {
                return true;
            }
            cur = self.parents[j];
        }
        false
    }

    /// Unit rest direction and length of each joint's offset from its parent
    /// (root entry is zero). Only defined for the standard tree.
    pub fn standard_rest_offsets() -> (Vec<Joint>, Vec<f64>) {
        let dirs = STANDARD_REST.iter().map(|(d, _)| normalize(*d)).collect();
        let lengths = STANDARD_REST[1..].iter().map(|(_, l)| *l).collect();
        (dirs, lengths)
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::standard()
    }
}

/// Per-bone Euclidean lengths of one frame, in `topo.bones()` order.
pub fn bone_length_vector(frame: &[Joint], topo: &SkeletonTopology) -> Result<Vec<f64>> {
    if frame.len() != topo.joint_count() {
        return Err(Error::Dimension(format!(
            "frame has {} joints, topology expects {}",
            frame.len(),
            topo.joint_count()
        )));
    }
    Ok(topo
        .bones()
        .iter()
        .map(|&(a, b)| distance(frame[a], frame[b]))
        .collect())
}

/// Joint rotations over time driving [`forward_kinematics`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleTrack {
    /// `angles[t][j]` is the local `[x, y, z]` Euler rotation of joint `j`.
    pub angles: Vec<Vec<Joint>>,
    /// Length of each bone, indexed like `SkeletonTopology::bones`.
    pub bone_lengths: Vec<f64>,
    /// Unit rest direction of each joint's offset from its parent; root ignored.
    pub rest_directions: Vec<Joint>,
    pub root_translation: Vec<Joint>,
}

impl JointAngleTrack {
    /// All-zero angles on the standard rest pose with the pelvis at 1 m height.
    pub fn rest(frames: usize) -> Self {
        let (rest_directions, bone_lengths) = SkeletonTopology::standard_rest_offsets();
        Self {
            angles: vec![vec![[0.0; 3]; JOINT_COUNT]; frames],
            bone_lengths,
            rest_directions,
            root_translation: vec![[0.0, 1.0, 0.0]; frames],
        }
    }

    pub fn frame_count(&self) -> usize {
        self.angles.len()
    }

    fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        let joints = topo.joint_count();
        if self.bone_lengths.len() != topo.bones().len() {
            return Err(Error::Validation(format!(
                "{} bone lengths for {} bones",
                self.bone_lengths.len(),
                topo.bones().len()
            )));
        }
        if let Some((k, l)) = self
            .bone_lengths
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::Validation(format!(
                "bone {k} has nonpositive length {l}"
            )));
        }
        if self.rest_directions.len() != joints {
            return Err(Error::Validation(format!(
                "{} rest directions for {joints} joints",
                self.rest_directions.len()
            )));
        }
        if self.root_translation.len() != self.angles.len() {
            return Err(Error::Validation(format!(
                "root track has {} frames, angle track has {}",
                self.root_translation.len(),
                self.angles.len()
            )));
        }
        if let Some(t) = self.angles.iter().position(|f| f.len() != joints) {
            return Err(Error::Validation(format!(
                "angle frame {t} does not have {joints} joints"
            )));
        }
        let finite = self
            .angles
            .iter()
            .flatten()
            .chain(&self.root_translation)
            .chain(&self.rest_directions)
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("angle track contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Joint positions for every frame of an angle track. Bone lengths are
/// constant across frames up to round-off.
pub fn forward_kinematics(
    track: &JointAngleTrack,
    topo: &SkeletonTopology,
    frame_rate: f64,
) -> Result<Motion> {
    track.validate(topo)?;
    let joints = topo.joint_count();
    let mut length_of = vec![0.0; joints];
    for (k, &(_, child)) in topo.bones().iter().enumerate() {
        length_of[child] = track.bone_lengths[k];
    }

    let mut coords = Vec::with_capacity(track.frame_count() * joints);
    let mut global_rot = vec![IDENTITY; joints];
    let mut pos = vec![[0.0; 3]; joints];
    for (t, angles) in track.angles.iter().enumerate() {
        for j in 0..joints {
            let local = euler_zxy(angles[j]);
            match topo.parents()[j] {
                None => {
                    global_rot[j] = local;
                    pos[j] = track.root_translation[t];
                }
                Some(p) => {
                    let offset = scale(track.rest_directions[j], length_of[j]);
                    pos[j] = add(pos[p], mat_vec(&global_rot[p], offset));
                    global_rot[j] = mat_mul(&global_rot[p], &local);
                }
            }
        }
        coords.extend_from_slice(&pos);
    }
    Motion::new(coords, joints, topo.clone(), frame_rate, None)
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn euler_zxy([x, y, z]: Joint) -> Mat3 {
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&rz, &rx), &ry)
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(m: &Mat3, v: Joint) -> Joint {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn add(a: Joint, b: Joint) -> Joint {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Joint, s: f64) -> Joint {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(a: Joint) -> Joint {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

pub(crate) fn norm(a: Joint) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn sub(a: Joint, b: Joint) -> Joint {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn distance(a: Joint, b: Joint) -> f64 {
    norm(sub(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest_frame() -> Vec<Joint> {
        let topo = SkeletonTopology::standard();
        let m = forward_kinematics(&JointAngleTrack::rest(2), &topo, 30.0).unwrap();
        m.frame(0).to_vec()
    }

    #[test]
    fn standard_topology_shape() {
        let topo = SkeletonTopology::standard();
        assert_eq!(topo.joint_count(), 25);
        assert_eq!(topo.bones().len(), 24);
        assert_eq!(topo.root(), 0);
        assert_eq!(topo.encoded_parents()[0], -1);
        let back = SkeletonTopology::from_encoded_parents(&topo.encoded_parents()).unwrap();
        assert_eq!(back, topo);
    }

    #[test]
    fn rejects_bad_parent_tables() {
        let mut two_roots = STANDARD_PARENTS.to_vec();
        two_roots[5] = None;
        assert!(SkeletonTopology::from_parents(two_roots).is_err());

        let mut cycle = STANDARD_PARENTS.to_vec();
        cycle[1] = Some(4);
        assert!(SkeletonTopology::from_parents(cycle).is_err());

        assert!(SkeletonTopology::from_parents(STANDARD_PARENTS[..24].to_vec()).is_err());
        assert!(SkeletonTopology::from_encoded_parents(&[-2; 25]).is_err());
    }

    #[test]
    fn coincident_joints_give_zero_lengths() {
        let topo = SkeletonTopology::standard();
        let frame = vec![[0.0; 3]; 25];
        assert_eq!(bone_length_vector(&frame, &topo).unwrap(), vec![0.0; 24]);
    }

    #[test]
    fn unit_offsets_give_unit_lengths() {
        let topo = SkeletonTopology::standard();
        // Place every joint one unit along a per-joint axis from its parent.
        let mut frame = vec![[0.0; 3]; 25];
        for &(p, c) in topo.bones() {
            let mut off = [0.0; 3];
            off[c % 3] = if c % 2 == 0 { 1.0 } else { -1.0 };
            frame[c] = add(frame[p], off);
        }
        let bl = bone_length_vector(&frame, &topo).unwrap();
        assert_eq!(bl.len(), 24);
        assert!(bl.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn bone_lengths_ignore_translation() {
        let topo = SkeletonTopology::standard();
        let frame = rest_frame();
        let moved: Vec<Joint> = frame.iter().map(|&j| add(j, [10.0, -3.0, 7.0])).collect();
        let a = bone_length_vector(&frame, &topo).unwrap();
        let b = bone_length_vector(&moved, &topo).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn joint_count_mismatch_is_dimension_error() {
        let topo = SkeletonTopology::standard();
        let err = bone_length_vector(&vec![[0.0; 3]; 24], &topo).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn rest_pose_is_static_and_matches_lengths() {
        let topo = SkeletonTopology::standard();
        let track = JointAngleTrack::rest(5);
        let m = forward_kinematics(&track, &topo, 30.0).unwrap();
        for t in 1..5 {
            assert_eq!(m.frame(t), m.frame(0));
        }
        let bl = bone_length_vector(m.frame(0), &topo).unwrap();
        for (a, b) in bl.iter().zip(&track.bone_lengths) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_joint_motion_moves_only_descendants() {
        let topo = SkeletonTopology::standard();
        let mut track = JointAngleTrack::rest(20);
        let elbow = 7;
        for (t, frame) in track.angles.iter_mut().enumerate() {
            frame[elbow] = [0.8 * (t as f64 * 0.4).sin(), 0.2, 0.0];
        }
        let m = forward_kinematics(&track, &topo, 30.0).unwrap();
        let rest = rest_frame();
        for t in 0..20 {
            for j in 0..25 {
                let moved = distance(m.frame(t)[j], rest[j]) > 1e-12;
                // The elbow joint itself rotates about its own position.
                let expect = topo.is_descendant(j, elbow) && j != elbow;
                if !expect {
                    assert!(!moved, "joint {j} moved at frame {t}");
                }
            }
        }
        assert!(distance(m.frame(5)[9], rest[9]) > 1e-3);
    }

    #[test]
    fn nonpositive_bone_length_rejected() {
        let topo = SkeletonTopology::standard();
        let mut track = JointAngleTrack::rest(3);
        track.bone_lengths[4] = 0.0;
        assert!(matches!(
            forward_kinematics(&track, &topo, 30.0),
            Err(Error::Validation(_))
        ));
    }
}
