#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mshand::io::{self, ExcitationsFile};
use mshand::kinematics::{joint_frames, KinematicTree, Pose, Trajectory};
use mshand::musculature::{BoneCentricAttachment, BoneCentricMuscle, BoneModel, Musculature};
use tempfile::TempDir;

pub fn mshand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mshand")).args(args).env_remove("MSHAND_CONFIG").output().unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub struct Files {
    pub dir: TempDir,
}

impl Files {
    pub fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn muscles(&self) -> PathBuf {
        let p = self.path("muscles.json");
        let tree = KinematicTree::default_hand();
        io::save_musculature(&Musculature::default_hand(&tree).unwrap(), &p).unwrap();
        p
    }

    pub fn pose(&self, pose: &Pose) -> PathBuf {
        let p = self.path("init.json");
        io::save_pose(pose, &p).unwrap();
        p
    }

    pub fn excitations(&self, e: &ExcitationsFile) -> PathBuf {
        let p = self.path("excitations.json");
        io::save_json(e, &p).unwrap();
        p
    }

    pub fn trajectory(&self, name: &str, t: &Trajectory) -> PathBuf {
        let p = self.path(name);
        io::save_trajectory(t, &p).unwrap();
        p
    }
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Bones at the joint centers of the bundled hand plus one off-center bone
/// per joint; attachments expressed relative to the first bone.
pub fn bone_fixture(tree: &KinematicTree) -> (BoneModel, Vec<BoneCentricMuscle>) {
    let frames = joint_frames(tree, &Pose::zeros());
    let mut model = BoneModel::default();
    for (j, fr) in frames.iter().enumerate() {
        let c = fr.translation.vector;
        let (a, b) = (format!("j{j}a"), format!("j{j}b"));
        model.bones.insert(a.clone(), [c.x - 0.002, c.y + 0.001, c.z]);
        model.bones.insert(b.clone(), [c.x + 0.002, c.y - 0.001, c.z]);
        model.bone_groups.insert(j, vec![a.clone(), b.clone()]);
        model.mapping.insert(a, j);
        model.mapping.insert(b, j);
    }
    let musc = Musculature::default_hand(tree).unwrap();
    let muscles = musc
        .muscles()
        .iter()
        .map(|m| BoneCentricMuscle {
            name: m.name.clone(),
            path: m
                .path
                .iter()
                .enumerate()
                .map(|(k, p)| BoneCentricAttachment {
                    point_id: p.point_id.clone().unwrap_or_else(|| format!("{}.{k}", m.name)),
                    bone: format!("j{}a", p.joint),
                    offset: p.offset - mshand::Vec3::new(-0.002, 0.001, 0.0),
                })
                .collect(),
            f_max: m.f_max,
            l_opt: m.l_opt,
            l_slack: m.l_slack,
            actuated_joints: m.actuated_joints.clone(),
        })
        .collect();
    (model, muscles)
}
