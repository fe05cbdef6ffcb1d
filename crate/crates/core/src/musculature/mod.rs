//! Muscle actuation layer.
//!
//! Muscles are polylines of attachment points, each expressed relative to a
//! joint frame of the skeleton. A muscle pulls every path point toward its
//! proximal neighbor; for each joint it actuates, the pulling segment that
//! crosses that joint produces a moment `F · (q − j) × ŝ`, where `q` is the
//! first path point distal to the joint and `ŝ` the unit line of pull.

mod hill;
mod mapping;

use std::collections::BTreeMap;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{joint_frames, KinematicTree, Pose, Torques, Vec3, Velocity, NUM_JOINTS};

pub use hill::{
    activation_step, force_length, force_velocity, muscle_force, passive_force_length, FL_WIDTH, FV_MAX,
    MAX_CONTRACTION_VELOCITY, TAU_ACTIVATION, TAU_DEACTIVATION,
};
pub use mapping::{
    apply_overrides, joint_center, map_bone_to_joint, map_muscles, BoneCentricAttachment, BoneCentricMuscle,
    BoneModel, OVERRIDE_MAX_DISTANCE,
};

const DEFAULT_MUSCLES_JSON: &str = include_str!("../../data/hand_muscles.json");

/// Consecutive path points closer than this are treated as coincident (m).
const DEGENERATE_SEGMENT: f64 = 1e-12;
/// Time step used to difference path length along the joint velocity (s).
const LENGTH_RATE_STEP: f64 = 1e-6;

/// A muscle path point fixed to a joint frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointCentricAttachment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_id: Option<String>,
    pub joint: usize,
    #[serde(with = "vec3_serde")]
    pub offset: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuscleDef {
    pub name: String,
    /// Origin first, insertion last, via-points between.
    pub path: Vec<JointCentricAttachment>,
    /// Maximum isometric force (N).
    pub f_max: f64,
    /// Optimal contractile-element length (m).
    pub l_opt: f64,
    /// Tendon slack length (m).
    pub l_slack: f64,
    pub actuated_joints: Vec<usize>,
}

/// Runtime state of one muscle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuscleState {
    /// Dimensionless, in `[0, 1]`.
    pub activation: f64,
    /// Contractile length (m), `path_length − l_slack` under the rigid-tendon model.
    pub fiber_length: f64,
}

/// Where a muscle crosses one of its actuated joints: `path[distal]` is `q`,
/// `path[distal - 1]` is the proximal end of the pulling segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crossing {
    pub joint: usize,
    pub distal: usize,
}

impl MuscleDef {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidMuscle { muscle: self.name.clone(), reason: reason.into() }
    }

    pub fn validate(&self, tree: &KinematicTree) -> Result<()> {
        if self.path.len() < 2 {
            return Err(self.invalid("path needs at least an origin and an insertion"));
        }
        if !(self.f_max > 0.0 && self.f_max.is_finite()) {
            return Err(self.invalid(format!("f_max must be positive, got {}", self.f_max)));
        }
        if !(self.l_opt > 0.0 && self.l_opt.is_finite()) {
            return Err(self.invalid(format!("l_opt must be positive, got {}", self.l_opt)));
        }
        if !(self.l_slack >= 0.0 && self.l_slack.is_finite()) {
            return Err(self.invalid(format!("l_slack must be non-negative, got {}", self.l_slack)));
        }
        for (k, att) in self.path.iter().enumerate() {
            if att.joint >= NUM_JOINTS {
                return Err(self.invalid(format!("path point {k} references joint {}", att.joint)));
            }
            if !att.offset.iter().all(|x| x.is_finite()) {
                return Err(self.invalid(format!("path point {k} has a non-finite offset")));
            }
        }
        if self.actuated_joints.is_empty() {
            return Err(self.invalid("actuated_joints is empty"));
        }
        self.crossings(tree).map(|_| ())
    }

    /// Locates the pulling segment for every actuated joint. A joint is
    /// crossed when the insertion lies on the joint's distal side and the
    /// origin on its proximal side.
    pub fn crossings(&self, tree: &KinematicTree) -> Result<Vec<Crossing>> {
        let origin = self.path.first().ok_or_else(|| self.invalid("empty path"))?.joint;
        let insertion = self.path.last().expect("non-empty").joint;
        let mut out = Vec::with_capacity(self.actuated_joints.len());
        for &j in &self.actuated_joints {
            if j >= NUM_JOINTS {
                return Err(self.invalid(format!("actuated joint {j} out of range")));
            }
            if !tree.is_ancestor_or_self(j, insertion) || tree.is_ancestor_or_self(j, origin) {
                return Err(self.invalid(format!(
                    "actuated joint {} ({}) is not between origin joint {} and insertion joint {}",
                    j,
                    tree.joint(j).name,
                    origin,
                    insertion
                )));
            }
            let distal = self
                .path
                .iter()
                .position(|a| tree.is_ancestor_or_self(j, a.joint))
                .expect("insertion is distal");
            out.push(Crossing { joint: j, distal });
        }
        Ok(out)
    }
}

/// The muscle set of a hand. Runtime states live with the simulator
/// (`SimState::muscle_states`), one per muscle in this order.
#[derive(Clone, Debug, PartialEq)]
pub struct Musculature {
    muscles: Vec<MuscleDef>,
    crossings: Vec<Vec<Crossing>>,
}

/// Serialized form (`mshand-muscles` JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuscleConfig {
    #[serde(default = "muscles_format")]
    pub format: String,
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub muscles: Vec<MuscleDef>,
}

fn muscles_format() -> String {
    "mshand-muscles".into()
}

fn one() -> u32 {
    1
}

impl Musculature {
    pub fn new(tree: &KinematicTree, muscles: Vec<MuscleDef>) -> Result<Self> {
        let mut crossings = Vec::with_capacity(muscles.len());
        for (i, m) in muscles.iter().enumerate() {
            m.validate(tree)?;
            if muscles[..i].iter().any(|o| o.name == m.name) {
                return Err(m.invalid("duplicate muscle name"));
            }
            crossings.push(m.crossings(tree)?);
        }
        Ok(Self { muscles, crossings })
    }

    /// No muscles at all; the skeleton then moves only under external torques.
    pub fn empty() -> Self {
        Self { muscles: Vec::new(), crossings: Vec::new() }
    }

    /// The bundled 31-muscle set for [`KinematicTree::default_hand`].
    pub fn default_hand(tree: &KinematicTree) -> Result<Self> {
        Self::from_json(tree, DEFAULT_MUSCLES_JSON)
    }

    pub fn from_config(tree: &KinematicTree, config: MuscleConfig) -> Result<Self> {
        if config.format != "mshand-muscles" {
            return Err(Error::InvalidArgument(format!("unexpected format tag {:?}", config.format)));
        }
        if config.version > 1 {
            return Err(Error::Version { format: config.format, found: config.version, supported: 1 });
        }
        Self::new(tree, config.muscles)
    }

    pub fn from_json(tree: &KinematicTree, text: &str) -> Result<Self> {
        Self::from_config(tree, serde_json::from_str(text)?)
    }

    pub fn to_config(&self) -> MuscleConfig {
        MuscleConfig { format: muscles_format(), version: 1, note: None, muscles: self.muscles.clone() }
    }

    pub fn muscles(&self) -> &[MuscleDef] {
        &self.muscles
    }

    pub fn len(&self) -> usize {
        self.muscles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.muscles.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.name == name)
    }

    pub fn crossings(&self, muscle: usize) -> &[Crossing] {
        &self.crossings[muscle]
    }

    /// Zero activation, fiber lengths taken from `pose`.
    pub fn initial_states(&self, tree: &KinematicTree, pose: &Pose) -> Result<Vec<MuscleState>> {
        let mut states = vec![MuscleState { activation: 0.0, fiber_length: 0.0 }; self.len()];
        self.update_fiber_lengths(tree, pose, &mut states)?;
        Ok(states)
    }

    pub fn update_fiber_lengths(&self, tree: &KinematicTree, pose: &Pose, states: &mut [MuscleState]) -> Result<()> {
        let frames = joint_frames(tree, pose);
        for (m, s) in self.muscles.iter().zip(states.iter_mut()) {
            s.fiber_length = path_length(&frames, m)? - m.l_slack;
        }
        Ok(())
    }

    /// Scales geometry and tendon/fiber lengths by `k`, so normalized fiber
    /// lengths are unchanged on a tree scaled by the same factor.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.muscles {
            for a in &mut m.path {
                a.offset *= k;
            }
            m.l_opt *= k;
            m.l_slack *= k;
        }
        out
    }
}

/// World-space polyline of a muscle.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGeometry {
    pub points: Vec<Vec3>,
    pub total_length: f64,
    /// `points[k + 1] − points[k]`.
    pub segments: Vec<Vec3>,
}

pub fn muscle_path_geometry(tree: &KinematicTree, pose: &Pose, muscle: &MuscleDef) -> Result<PathGeometry> {
    path_geometry_from_frames(&joint_frames(tree, pose), muscle)
}

pub fn path_geometry_from_frames(frames: &[Isometry3<f64>; NUM_JOINTS], muscle: &MuscleDef) -> Result<PathGeometry> {
    let mut points = Vec::with_capacity(muscle.path.len());
    for a in &muscle.path {
        let frame = frames.get(a.joint).ok_or_else(|| muscle.invalid(format!("joint {} out of range", a.joint)))?;
        points.push(frame.transform_point(&a.offset.into()).coords);
    }
    let mut segments = Vec::with_capacity(points.len().saturating_sub(1));
    let mut total_length = 0.0;
    for (k, w) in points.windows(2).enumerate() {
        let s = w[1] - w[0];
        let len = s.norm();
        if len < DEGENERATE_SEGMENT {
            return Err(Error::DegenerateSegment { muscle: muscle.name.clone(), from: k, to: k + 1 });
        }
        total_length += len;
        segments.push(s);
    }
    Ok(PathGeometry { points, total_length, segments })
}

fn path_length(frames: &[Isometry3<f64>; NUM_JOINTS], muscle: &MuscleDef) -> Result<f64> {
    Ok(path_geometry_from_frames(frames, muscle)?.total_length)
}

/// Moment of a unit pull at `q` along `pull` about the joint center `j`:
/// `(q − j) × pull/‖pull‖`. Its norm is the moment arm.
pub fn unit_moment(q: &Vec3, j: &Vec3, pull: &Vec3) -> Vec3 {
    (q - j).cross(&(pull / pull.norm()))
}

/// Advances every muscle's activation by `dt`, computes its force, and sums
/// the resulting joint torques. Torques are expressed in each joint's parent
/// frame, the frame of the joint's axis-angle coordinates.
pub fn muscle_torques(
    tree: &KinematicTree,
    pose: &Pose,
    velocity: &Velocity,
    musculature: &Musculature,
    states: &mut [MuscleState],
    excitations: &[f64],
    dt: f64,
) -> Result<Torques> {
    let n = musculature.len();
    if excitations.len() != n || states.len() != n {
        return Err(Error::Dimension(format!(
            "{} muscles, {} excitations, {} states",
            n,
            excitations.len(),
            states.len()
        )));
    }
    let mut torques = Torques::zeros();
    if n == 0 {
        return Ok(torques);
    }
    let frames = joint_frames(tree, pose);
    let ahead = joint_frames(tree, &pose.add_scaled(&Pose { rotations: velocity.rates }, LENGTH_RATE_STEP));
    let behind = joint_frames(tree, &pose.add_scaled(&Pose { rotations: velocity.rates }, -LENGTH_RATE_STEP));

    for (i, m) in musculature.muscles.iter().enumerate() {
        states[i] = activation_step(&states[i], excitations[i], dt)?;
        let geom = path_geometry_from_frames(&frames, m)?;
        let rate = (path_length(&ahead, m)? - path_length(&behind, m)?) / (2.0 * LENGTH_RATE_STEP);
        let fiber = geom.total_length - m.l_slack;
        states[i].fiber_length = fiber;
        let norm_length = fiber / m.l_opt;
        let norm_velocity = rate / (MAX_CONTRACTION_VELOCITY * m.l_opt);
        let force = muscle_force(m, &states[i], norm_length, norm_velocity)?;
        if force == 0.0 {
            continue;
        }
        for c in &musculature.crossings[i] {
            let q = geom.points[c.distal];
            let pull = geom.points[c.distal - 1] - q;
            let center = frames[c.joint].translation.vector;
            let world = unit_moment(&q, &center, &pull) * force;
            let parent_rotation = match tree.joint(c.joint).parent {
                Some(p) => frames[p].rotation,
                None => nalgebra::UnitQuaternion::identity(),
            };
            torques.torques[c.joint] += parent_rotation.inverse_transform_vector(&world);
        }
    }
    Ok(torques)
}

pub(crate) mod vec3_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::kinematics::Vec3;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::from(a))
    }
}

/// Per-point-id offset replacements (`mshand-overrides` is a bare JSON map).
pub type OverrideMap = BTreeMap<String, [f64; 3]>;
