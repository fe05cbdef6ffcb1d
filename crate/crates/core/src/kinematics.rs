//! Hand skeleton: the 16-joint kinematic tree, pose containers, forward
//! kinematics to the 21 evaluation keypoints, and the two trajectory helpers
//! the refinement pipeline starts from (interpolation and finite-difference
//! velocities).
//!
//! Every joint carries an axis-angle rotation expressed in its parent's frame.
//! A joint's world transform is `parent ∘ translate(rest_offset) ∘ rotate(pose)`,
//! so a point attached to joint `j` rides on the bone distal to `j`.

use std::ops::{Index, IndexMut};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const NUM_JOINTS: usize = 16;
pub const NUM_FINGERTIPS: usize = 5;
pub const NUM_KEYPOINTS: usize = NUM_JOINTS + NUM_FINGERTIPS;
/// Flattened pose length (16 joints × 3 axis-angle components).
pub const POSE_DIM: usize = NUM_JOINTS * 3;

/// Allowed deviation from uniform sample spacing, in seconds.
pub const DT_TOLERANCE: f64 = 1e-9;

const DEFAULT_TREE_JSON: &str = include_str!("../data/hand_tree.json");

macro_rules! joint_vectors {
    ($(#[$meta:meta])* $name:ident, $field:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq)]
        pub struct $name {
            pub $field: [Vec3; NUM_JOINTS],
        }

        impl $name {
            pub fn zeros() -> Self {
                Self { $field: [Vec3::zeros(); NUM_JOINTS] }
            }

            /// Builds from a flat slice of exactly 48 values, joint-major.
            pub fn from_flat(values: &[f64]) -> Result<Self> {
                if values.len() != POSE_DIM {
                    return Err(Error::Dimension(format!(
                        "{} needs {} components, got {}",
                        stringify!($name),
                        POSE_DIM,
                        values.len()
                    )));
                }
                let mut out = Self::zeros();
                for (j, chunk) in values.chunks_exact(3).enumerate() {
                    out.$field[j] = Vec3::new(chunk[0], chunk[1], chunk[2]);
                }
                Ok(out)
            }

            pub fn to_flat(&self) -> [f64; POSE_DIM] {
                let mut out = [0.0; POSE_DIM];
                for (j, v) in self.$field.iter().enumerate() {
                    out[3 * j..3 * j + 3].copy_from_slice(v.as_slice());
                }
                out
            }

            pub fn is_finite(&self) -> bool {
                self.$field.iter().all(|v| v.iter().all(|x| x.is_finite()))
            }

            pub fn get(&self, joint: usize, axis: usize) -> f64 {
                self.$field[joint][axis]
            }

            pub fn set(&mut self, joint: usize, axis: usize, value: f64) {
                self.$field[joint][axis] = value;
            }

            /// Component-wise `self + k * other`.
            pub fn add_scaled(&self, other: &Self, k: f64) -> Self {
                let mut out = *self;
                for j in 0..NUM_JOINTS {
                    out.$field[j] += other.$field[j] * k;
                }
                out
            }

            /// Component-wise `self - other`.
            pub fn sub(&self, other: &Self) -> Self {
                self.add_scaled(other, -1.0)
            }

            /// Euclidean norm over all 48 components.
            pub fn norm(&self) -> f64 {
                self.$field.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::zeros()
            }
        }

        impl Index<usize> for $name {
            type Output = Vec3;
            fn index(&self, joint: usize) -> &Vec3 {
                &self.$field[joint]
            }
        }

        impl IndexMut<usize> for $name {
            fn index_mut(&mut self, joint: usize) -> &mut Vec3 {
                &mut self.$field[joint]
            }
        }
    };
}

joint_vectors!(
    /// Per-joint axis-angle rotations in radians. Index 0 is the wrist (global) rotation.
    Pose,
    rotations
);
joint_vectors!(
    /// Per-joint axis-angle rates in rad/s.
    Velocity,
    rates
);
joint_vectors!(
    /// Per-joint torque vectors in N·m, expressed in each joint's parent frame.
    Torques,
    torques
);

/// One joint of the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<usize>,
    /// Translation from the parent joint, in the parent's frame (meters).
    pub rest_offset: Vec3,
    /// Per-axis `[min, max]` bounds on the axis-angle components (radians).
    pub limits: [[f64; 2]; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fingertip {
    pub joint: usize,
    pub offset: Vec3,
}

/// Serialized form of a tree (`mshand-tree` JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeConfig {
    #[serde(default = "tree_format")]
    pub format: String,
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub joints: Vec<JointConfig>,
    pub fingertips: Vec<FingertipConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointConfig {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub limits: [[f64; 2]; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FingertipConfig {
    pub joint: usize,
    pub offset: [f64; 3],
}

fn tree_format() -> String {
    "mshand-tree".into()
}

fn one() -> u32 {
    1
}

/// A validated 16-joint hand skeleton with five fingertip markers.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    joints: Vec<JointDef>,
    fingertips: Vec<Fingertip>,
    children: Vec<Vec<usize>>,
}

/// Validates a tree description and builds the skeleton.
pub fn build_tree(config: &TreeConfig) -> Result<KinematicTree> {
    if config.format != "mshand-tree" {
        return Err(Error::InvalidTree(format!("unexpected format tag {:?}", config.format)));
    }
    if config.version > 1 {
        return Err(Error::Version { format: "mshand-tree".into(), found: config.version, supported: 1 });
    }
    if config.joints.len() != NUM_JOINTS {
        return Err(Error::JointCount { expected: NUM_JOINTS, got: config.joints.len() });
    }
    let mut joints = Vec::with_capacity(NUM_JOINTS);
    for (i, jc) in config.joints.iter().enumerate() {
        match (i, jc.parent) {
            (0, Some(0)) => return Err(Error::SelfParentCycle(0)),
            (0, Some(_)) => return Err(Error::Root(0)),
            (0, None) => {}
            (i, None) => return Err(Error::Root(i)),
            (i, Some(p)) if p == i => return Err(Error::SelfParentCycle(i)),
            (i, Some(p)) if p > i => return Err(Error::ParentOrder { joint: i, parent: p }),
            _ => {}
        }
        let offset = Vec3::from(jc.offset);
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("offset of joint {} ({})", i, jc.name)));
        }
        if i > 0 && offset.norm() == 0.0 {
            return Err(Error::InvalidTree(format!("joint {} ({}) has a zero-length offset", i, jc.name)));
        }
        for (axis, [lo, hi]) in jc.limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::NonFinite(format!("limits of joint {} ({})", i, jc.name)));
            }
            if lo > hi || *lo < -std::f64::consts::PI || *hi > std::f64::consts::PI {
                return Err(Error::InvalidTree(format!(
                    "joint {} ({}) axis {} limits [{}, {}] must satisfy -pi <= min <= max <= pi",
                    i, jc.name, axis, lo, hi
                )));
            }
        }
        joints.push(JointDef {
            name: jc.name.clone(),
            parent: jc.parent,
            rest_offset: offset,
            limits: jc.limits,
        });
    }
    for i in 0..NUM_JOINTS {
        if joints[..i].iter().any(|j| j.name == joints[i].name) {
            return Err(Error::InvalidTree(format!("duplicate joint name {}", joints[i].name)));
        }
    }

    let mut children = vec![Vec::new(); NUM_JOINTS];
    for (i, j) in joints.iter().enumerate().skip(1) {
        children[j.parent.expect("validated")].push(i);
    }

    if config.fingertips.len() != NUM_FINGERTIPS {
        return Err(Error::Fingertip(format!(
            "expected {} fingertips, got {}",
            NUM_FINGERTIPS,
            config.fingertips.len()
        )));
    }
    let mut fingertips = Vec::with_capacity(NUM_FINGERTIPS);
    for (k, fc) in config.fingertips.iter().enumerate() {
        if fc.joint == 0 || fc.joint >= NUM_JOINTS {
            return Err(Error::Fingertip(format!("fingertip {} references invalid joint {}", k, fc.joint)));
        }
        if !children[fc.joint].is_empty() {
            return Err(Error::Fingertip(format!(
                "fingertip {} attaches to joint {}, which is not a distal joint",
                k, fc.joint
            )));
        }
        if config.fingertips[..k].iter().any(|o| o.joint == fc.joint) {
            return Err(Error::Fingertip(format!("joint {} carries two fingertips", fc.joint)));
        }
        let offset = Vec3::from(fc.offset);
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("fingertip {} offset", k)));
        }
        fingertips.push(Fingertip { joint: fc.joint, offset });
    }
    let leaves = (1..NUM_JOINTS).filter(|&i| children[i].is_empty()).count();
    if leaves != NUM_FINGERTIPS {
        return Err(Error::Fingertip(format!(
            "tree has {} distal joints but {} fingertips",
            leaves, NUM_FINGERTIPS
        )));
    }

    Ok(KinematicTree { joints, fingertips, children })
}

impl KinematicTree {
    /// The built-in adult hand (approximate bone lengths, 19 cm hand length).
    pub fn default_hand() -> Self {
        let config: TreeConfig = serde_json::from_str(DEFAULT_TREE_JSON).expect("bundled tree parses");
        build_tree(&config).expect("bundled tree is valid")
    }

    pub fn default_config() -> TreeConfig {
        serde_json::from_str(DEFAULT_TREE_JSON).expect("bundled tree parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: TreeConfig = serde_json::from_str(text)?;
        build_tree(&config)
    }

    pub fn to_config(&self) -> TreeConfig {
        TreeConfig {
            format: tree_format(),
            version: 1,
            note: None,
            joints: self
                .joints
                .iter()
                .map(|j| JointConfig {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: j.rest_offset.into(),
                    limits: j.limits,
                })
                .collect(),
            fingertips: self
                .fingertips
                .iter()
                .map(|f| FingertipConfig { joint: f.joint, offset: f.offset.into() })
                .collect(),
        }
    }

    pub fn joints(&self) -> &[JointDef] {
        &self.joints
    }

    pub fn joint(&self, index: usize) -> &JointDef {
        &self.joints[index]
    }

    pub fn fingertips(&self) -> &[Fingertip] {
        &self.fingertips
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// True when `ancestor` is `joint` itself or lies on its path to the root.
    pub fn is_ancestor_or_self(&self, ancestor: usize, joint: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(j) = cur {
            if j == ancestor {
                return true;
            }
            cur = self.joints[j].parent;
        }
        false
    }

    pub fn limits(&self, joint: usize, axis: usize) -> (f64, f64) {
        let [lo, hi] = self.joints[joint].limits[axis];
        (lo, hi)
    }

    /// Clamps every component into its joint limits. Returns the clamped
    /// component mask (joint-major, 48 entries).
    pub fn clamp_pose(&self, pose: &mut Pose) -> [bool; POSE_DIM] {
        let mut clamped = [false; POSE_DIM];
        for j in 0..NUM_JOINTS {
            for a in 0..3 {
                let (lo, hi) = self.limits(j, a);
                let v = pose.rotations[j][a];
                let c = v.clamp(lo, hi);
                if c != v {
                    pose.rotations[j][a] = c;
                    clamped[3 * j + a] = true;
                }
            }
        }
        clamped
    }

    pub fn clamped(&self, pose: &Pose) -> Pose {
        let mut p = *pose;
        self.clamp_pose(&mut p);
        p
    }

    pub fn within_limits(&self, pose: &Pose, tol: f64) -> bool {
        (0..NUM_JOINTS).all(|j| {
            (0..3).all(|a| {
                let (lo, hi) = self.limits(j, a);
                let v = pose.rotations[j][a];
                v >= lo - tol && v <= hi + tol
            })
        })
    }

    /// Copy of this tree with every rest offset and fingertip offset scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for j in &mut out.joints {
            j.rest_offset *= k;
        }
        for f in &mut out.fingertips {
            f.offset *= k;
        }
        out
    }

    /// Copy of this tree with new limits; used to lock axes for reduced systems.
    pub fn with_limits(&self, limits: impl Fn(usize, usize) -> (f64, f64)) -> Result<Self> {
        let mut config = self.to_config();
        for (j, jc) in config.joints.iter_mut().enumerate() {
            for a in 0..3 {
                let (lo, hi) = limits(j, a);
                jc.limits[a] = [lo, hi];
            }
        }
        build_tree(&config)
    }
}

/// Rotation for an axis-angle vector via the exponential map.
pub fn axis_angle(v: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// World transform of every joint frame, with the root placed at `base`.
pub fn joint_frames_from(tree: &KinematicTree, pose: &Pose, base: &Isometry3<f64>) -> [Isometry3<f64>; NUM_JOINTS] {
    let mut frames = [Isometry3::identity(); NUM_JOINTS];
    for (j, def) in tree.joints.iter().enumerate() {
        let parent = match def.parent {
            Some(p) => frames[p],
            None => *base,
        };
        let local = Isometry3::from_parts(Translation3::from(def.rest_offset), axis_angle(&pose.rotations[j]));
        frames[j] = parent * local;
    }
    frames
}

pub fn joint_frames(tree: &KinematicTree, pose: &Pose) -> [Isometry3<f64>; NUM_JOINTS] {
    joint_frames_from(tree, pose, &Isometry3::identity())
}

/// The 21 keypoints for already-computed joint frames.
pub fn keypoints_from_frames(tree: &KinematicTree, frames: &[Isometry3<f64>; NUM_JOINTS]) -> [Vec3; NUM_KEYPOINTS] {
    let mut out = [Vec3::zeros(); NUM_KEYPOINTS];
    for (j, f) in frames.iter().enumerate() {
        out[j] = f.translation.vector;
    }
    for (k, tip) in tree.fingertips.iter().enumerate() {
        out[NUM_JOINTS + k] = frames[tip.joint].transform_point(&tip.offset.into()).coords;
    }
    out
}

/// Keypoints in meters: 0 = wrist, 1–15 = joint origins, 16–20 = fingertips.
pub fn forward_kinematics(tree: &KinematicTree, pose: &Pose) -> [Vec3; NUM_KEYPOINTS] {
    keypoints_from_frames(tree, &joint_frames(tree, pose))
}

/// `n + 1` poses linearly interpolated in axis-angle coordinates from `a` to `b`.
/// When a tree is given, intermediate poses are clamped to its limits.
pub fn interpolate_poses(a: &Pose, b: &Pose, n: usize, tree: Option<&KinematicTree>) -> Result<Vec<Pose>> {
    if n == 0 {
        return Err(Error::InvalidArgument("interpolation needs n >= 1".into()));
    }
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let p = if k == 0 {
            *a
        } else if k == n {
            *b
        } else {
            let s = k as f64 / n as f64;
            let mut p = Pose::zeros();
            for j in 0..NUM_JOINTS {
                p.rotations[j] = a.rotations[j] + (b.rotations[j] - a.rotations[j]) * s;
            }
            if let Some(tree) = tree {
                tree.clamp_pose(&mut p);
            }
            p
        };
        out.push(p);
    }
    Ok(out)
}

/// One trajectory sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Option<Velocity>,
}

/// Uniformly sampled pose sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dt: f64,
    frames: Vec<Frame>,
}

impl Trajectory {
    pub fn new(dt: f64, frames: Vec<Frame>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Trajectory(format!("dt must be positive, got {dt}")));
        }
        if frames.is_empty() {
            return Err(Error::Trajectory("no samples".into()));
        }
        for (i, w) in frames.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) || (step - dt).abs() > DT_TOLERANCE {
                return Err(Error::Trajectory(format!(
                    "non-uniform spacing between samples {} and {}: {} s (dt {} s)",
                    i,
                    i + 1,
                    step,
                    dt
                )));
            }
        }
        for (i, f) in frames.iter().enumerate() {
            let vel_ok = f.velocity.is_none_or(|v| v.is_finite());
            if !f.t.is_finite() || !f.pose.is_finite() || !vel_ok {
                return Err(Error::NonFinite(format!("trajectory sample {i}")));
            }
        }
        Ok(Self { dt, frames })
    }

    /// Poses sampled at `t0 + i * dt`, without velocities.
    pub fn from_poses(dt: f64, t0: f64, poses: impl IntoIterator<Item = Pose>) -> Result<Self> {
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| Frame { t: t0 + i as f64 * dt, pose, velocity: None })
            .collect();
        Self::new(dt, frames)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.frames[i].pose
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|f| &f.pose)
    }

    pub fn has_velocities(&self) -> bool {
        self.frames.iter().all(|f| f.velocity.is_some())
    }

    /// Velocity at frame `i`, or zero when absent.
    pub fn velocity_or_zero(&self, i: usize) -> Velocity {
        self.frames[i].velocity.unwrap_or_default()
    }

    pub fn without_velocities(&self) -> Self {
        let frames = self.frames.iter().map(|f| Frame { velocity: None, ..*f }).collect();
        Self { dt: self.dt, frames }
    }

    /// Replaces every pose, keeping times; velocities are dropped.
    pub fn with_poses(&self, poses: &[Pose]) -> Result<Self> {
        if poses.len() != self.len() {
            return Err(Error::Dimension(format!("{} poses for {} frames", poses.len(), self.len())));
        }
        let frames = self
            .frames
            .iter()
            .zip(poses)
            .map(|(f, p)| Frame { t: f.t, pose: *p, velocity: None })
            .collect();
        Self::new(self.dt, frames)
    }
}

/// Fills velocities by finite differences: central in the interior, one-sided
/// at both ends. Components are differenced without angle wrapping.
pub fn finite_diff_velocity(traj: &Trajectory) -> Result<Trajectory> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::Trajectory(format!("finite differences need at least 2 samples, got {n}")));
    }
    let dt = traj.dt;
    let poses: Vec<&Pose> = traj.poses().collect();
    let mut frames = traj.frames.clone();
    for i in 0..n {
        let (a, b, span) = if i == 0 {
            (poses[0], poses[1], dt)
        } else if i == n - 1 {
            (poses[n - 2], poses[n - 1], dt)
        } else {
            (poses[i - 1], poses[i + 1], 2.0 * dt)
        };
        let mut v = Velocity::zeros();
        for j in 0..NUM_JOINTS {
            v.rates[j] = (b.rotations[j] - a.rotations[j]) / span;
        }
        frames[i].velocity = Some(v);
    }
    Ok(Trajectory { dt, frames })
}
