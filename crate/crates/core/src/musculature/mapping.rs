//! Bone-centric to joint-centric attachment mapping.
//!
//! Anatomical data places each muscle point relative to a bone. The skeleton
//! here has joints rather than bones, so each joint gets a center: the mean
//! position of the bones grouped under it. A point `q` given as an offset
//! from bone `b` is re-expressed as an offset from its joint center `m`:
//! `(q − b) + (b − m) = q − m`. The world position is unchanged; only the
//! frame it rides on changes, which is what lets attachments follow a
//! reshaped skeleton.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{vec3_serde, JointCentricAttachment, MuscleDef, OverrideMap};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, Vec3};

/// Overridden attachments farther than this from their joint are rejected (m).
pub const OVERRIDE_MAX_DISTANCE: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneCentricAttachment {
    pub point_id: String,
    pub bone: String,
    #[serde(with = "vec3_serde")]
    pub offset: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneCentricMuscle {
    pub name: String,
    pub path: Vec<BoneCentricAttachment>,
    pub f_max: f64,
    pub l_opt: f64,
    pub l_slack: f64,
    pub actuated_joints: Vec<usize>,
}

/// Rest-pose bone positions plus the bone→joint assignment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoneModel {
    /// World position of each bone's reference point (m).
    pub bones: BTreeMap<String, [f64; 3]>,
    /// Bones whose mean position is the joint center, keyed by joint index.
    pub bone_groups: BTreeMap<usize, Vec<String>>,
    /// Joint each bone's attachments are assigned to.
    pub mapping: BTreeMap<String, usize>,
}

fn bone_position(bones: &BTreeMap<String, Vec3>, name: &str) -> Result<Vec3> {
    bones.get(name).copied().ok_or_else(|| Error::UnknownBone(name.to_string()))
}

/// Mean position of a joint's bone group.
pub fn joint_center(joint: usize, groups: &BTreeMap<usize, Vec<String>>, bones: &BTreeMap<String, Vec3>) -> Result<Vec3> {
    let group = groups.get(&joint).filter(|g| !g.is_empty()).ok_or(Error::EmptyBoneGroup(joint))?;
    let mut sum = Vec3::zeros();
    for name in group {
        sum += bone_position(bones, name)?;
    }
    Ok(sum / group.len() as f64)
}

pub fn map_bone_to_joint(
    att: &BoneCentricAttachment,
    bones: &BTreeMap<String, Vec3>,
    groups: &BTreeMap<usize, Vec<String>>,
    mapping: &BTreeMap<String, usize>,
) -> Result<JointCentricAttachment> {
    let joint = *mapping.get(&att.bone).ok_or_else(|| Error::UnknownBone(att.bone.clone()))?;
    let b = bone_position(bones, &att.bone)?;
    let center = joint_center(joint, groups, bones)?;
    if !groups[&joint].iter().any(|n| n == &att.bone) {
        return Err(Error::BoneNotInGroup { bone: att.bone.clone(), joint });
    }
    Ok(JointCentricAttachment { point_id: Some(att.point_id.clone()), joint, offset: att.offset + (b - center) })
}

impl BoneModel {
    pub fn positions(&self) -> BTreeMap<String, Vec3> {
        self.bones.iter().map(|(k, v)| (k.clone(), Vec3::from(*v))).collect()
    }

    /// Scales every bone position about the origin.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for p in out.bones.values_mut() {
            for c in p.iter_mut() {
                *c *= k;
            }
        }
        out
    }
}

/// Maps every path point of every muscle, keeping muscle parameters.
pub fn map_muscles(model: &BoneModel, muscles: &[BoneCentricMuscle]) -> Result<Vec<MuscleDef>> {
    let positions = model.positions();
    muscles
        .iter()
        .map(|m| {
            let path = m
                .path
                .iter()
                .map(|a| map_bone_to_joint(a, &positions, &model.bone_groups, &model.mapping))
                .collect::<Result<Vec<_>>>()?;
            Ok(MuscleDef {
                name: m.name.clone(),
                path,
                f_max: m.f_max,
                l_opt: m.l_opt,
                l_slack: m.l_slack,
                actuated_joints: m.actuated_joints.clone(),
            })
        })
        .collect()
}

/// Replaces attachment offsets by point id. Every id must exist, and every
/// replaced offset must lie within [`OVERRIDE_MAX_DISTANCE`] of its joint.
/// The result is validated against `tree`.
pub fn apply_overrides(tree: &KinematicTree, muscles: &[MuscleDef], overrides: &OverrideMap) -> Result<Vec<MuscleDef>> {
    let mut out = muscles.to_vec();
    for (id, offset) in overrides {
        let offset = Vec3::from(*offset);
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("override {id}")));
        }
        let mut found = false;
        for m in &mut out {
            for a in m.path.iter_mut().filter(|a| a.point_id.as_deref() == Some(id)) {
                if offset.norm() > OVERRIDE_MAX_DISTANCE {
                    return Err(Error::InvalidMuscle {
                        muscle: m.name.clone(),
                        reason: format!(
                            "override {id} places the point {:.1} mm from joint {}, limit is {:.0} mm",
                            offset.norm() * 1e3,
                            a.joint,
                            OVERRIDE_MAX_DISTANCE * 1e3
                        ),
                    });
                }
                a.offset = offset;
                found = true;
            }
        }
        if !found {
            return Err(Error::InvalidArgument(format!("override for unknown point id {id:?}")));
        }
    }
    for m in &out {
        m.validate(tree)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn att(bone: &str, offset: [f64; 3]) -> BoneCentricAttachment {
        BoneCentricAttachment { point_id: "p".into(), bone: bone.into(), offset: Vec3::from(offset) }
    }

    #[test]
    fn single_coincident_bone_gives_zero_offset() {
        let bones = BTreeMap::from([("b".to_string(), Vec3::new(0.3, -0.2, 0.1))]);
        let groups = BTreeMap::from([(2, vec!["b".to_string()])]);
        let mapping = BTreeMap::from([("b".to_string(), 2)]);
        let j = map_bone_to_joint(&att("b", [0.0; 3]), &bones, &groups, &mapping).unwrap();
        assert_eq!(j.joint, 2);
        assert_eq!(j.offset, Vec3::zeros());
    }

    #[test]
    fn two_bone_group_hand_example() {
        // q = b + (1,0,0) = (3,0,0); center m = ((2,0,0)+(4,0,0))/2 = (3,0,0).
        // offset = (1,0,0) + ((2,0,0) - (3,0,0)) = (0,0,0).
        let bones = BTreeMap::from([("b".to_string(), Vec3::new(2.0, 0.0, 0.0)), ("c".to_string(), Vec3::new(4.0, 0.0, 0.0))]);
        let groups = BTreeMap::from([(1, vec!["b".to_string(), "c".to_string()])]);
        let mapping = BTreeMap::from([("b".to_string(), 1), ("c".to_string(), 1)]);
        let j = map_bone_to_joint(&att("b", [1.0, 0.0, 0.0]), &bones, &groups, &mapping).unwrap();
        assert_eq!(j.offset, Vec3::zeros());
    }

    #[test]
    fn mapping_errors() {
        let bones = BTreeMap::from([("b".to_string(), Vec3::zeros()), ("c".to_string(), Vec3::x())]);
        let mapping = BTreeMap::from([("b".to_string(), 1), ("c".to_string(), 1)]);
        let groups = BTreeMap::from([(1, vec!["c".to_string()])]);
        assert!(matches!(
            map_bone_to_joint(&att("nope", [0.0; 3]), &bones, &groups, &mapping),
            Err(Error::UnknownBone(_))
        ));
        assert!(matches!(
            map_bone_to_joint(&att("b", [0.0; 3]), &bones, &BTreeMap::from([(1, vec![])]), &mapping),
            Err(Error::EmptyBoneGroup(1))
        ));
        assert!(matches!(
            map_bone_to_joint(&att("b", [0.0; 3]), &bones, &groups, &mapping),
            Err(Error::BoneNotInGroup { .. })
        ));
    }

    fn palm_flexor() -> MuscleDef {
        MuscleDef {
            name: "m".into(),
            path: vec![
                JointCentricAttachment { point_id: Some("m.0".into()), joint: 0, offset: Vec3::new(0.07, -0.01, 0.02) },
                JointCentricAttachment { point_id: Some("m.1".into()), joint: 1, offset: Vec3::new(0.01, -0.01, 0.0) },
            ],
            f_max: 20.0,
            l_opt: 0.02,
            l_slack: 0.0,
            actuated_joints: vec![1],
        }
    }

    #[test]
    fn overrides_replace_offsets() {
        let tree = KinematicTree::default_hand();
        let o = OverrideMap::from([("m.1".to_string(), [0.012, -0.008, 0.0])]);
        let out = apply_overrides(&tree, &[palm_flexor()], &o).unwrap();
        assert_eq!(out[0].path[1].offset, Vec3::new(0.012, -0.008, 0.0));
        assert_eq!(out[0].path[0].offset, palm_flexor().path[0].offset);
    }

    #[test]
    fn overrides_are_validated() {
        let tree = KinematicTree::default_hand();
        let far = OverrideMap::from([("m.1".to_string(), [0.031, 0.0, 0.0])]);
        assert!(apply_overrides(&tree, &[palm_flexor()], &far).is_err());
        let unknown = OverrideMap::from([("x.9".to_string(), [0.0, 0.0, 0.0])]);
        assert!(apply_overrides(&tree, &[palm_flexor()], &unknown).is_err());
    }
}
