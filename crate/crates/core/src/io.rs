//! File formats. Every file carries a `format` tag and a `version`; files
//! from a newer version are rejected before their body is parsed.
//!
//! Trajectories are JSON lines: a header
//! `{"format":"mshand-traj","version":1,"dt":0.01}` followed by one
//! `{"t":…,"pose":[48 floats],"vel":[48 floats]|null}` record per frame.
//! Everything else is a single JSON document.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::kinematics::{Frame, KinematicTree, Pose, Trajectory, Velocity};
use crate::musculature::{BoneCentricMuscle, BoneModel, Musculature, OverrideMap};
use crate::neural::{Checkpoint, IdNet, RefineNet};
use crate::pipeline::{Feedback, PipelineParams};
use crate::training::TrainConfig;

pub const TRAJECTORY_FORMAT: &str = "mshand-traj";
pub const BONES_FORMAT: &str = "mshand-bones";
pub const ATTACHMENTS_FORMAT: &str = "mshand-attachments";
pub const OVERRIDES_FORMAT: &str = "mshand-overrides";
pub const EXCITATIONS_FORMAT: &str = "mshand-excitations";
pub const POSE_FORMAT: &str = "mshand-pose";
pub const CONFIG_FORMAT: &str = "mshand-config";
/// Every format is at version 1.
pub const FORMAT_VERSION: u32 = 1;

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, reason: reason.into() }
}

fn json_error(path: &Path, line_offset: usize, e: serde_json::Error) -> Error {
    parse_error(path, line_offset + e.line(), e.to_string())
}

#[derive(Deserialize)]
struct Envelope {
    format: Option<String>,
    version: Option<u32>,
}

/// Checks the `format` and `version` fields of a parsed envelope.
fn check_envelope(path: &Path, line: usize, env: &Envelope, format: &str) -> Result<()> {
    match env.format.as_deref() {
        Some(f) if f == format => {}
        Some(f) => return Err(parse_error(path, line, format!("expected format {format:?}, found {f:?}"))),
        None => return Err(parse_error(path, line, format!("missing format tag (expected {format:?})"))),
    }
    match env.version {
        Some(v) if v > FORMAT_VERSION => {
            Err(Error::Version { format: format.into(), found: v, supported: FORMAT_VERSION })
        }
        Some(_) => Ok(()),
        None => Err(parse_error(path, line, "missing version")),
    }
}

/// Parses a versioned JSON document from text.
fn parse_versioned<T: DeserializeOwned>(path: &Path, text: &str, format: &str) -> Result<T> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| json_error(path, 0, e))?;
    check_envelope(path, 1, &env, format)?;
    serde_json::from_str(text).map_err(|e| json_error(path, 0, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    parse_versioned(path, &read_text(path)?, format)
}

/// Writes pretty JSON plus a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// Trajectories

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format: String,
    version: u32,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    t: f64,
    pose: Vec<f64>,
    #[serde(default)]
    vel: Option<Vec<f64>>,
}

pub fn write_trajectory(traj: &Trajectory, mut out: impl Write) -> Result<()> {
    let header = TrajectoryHeader { format: TRAJECTORY_FORMAT.into(), version: FORMAT_VERSION, dt: traj.dt() };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in traj.frames() {
        let record = TrajectoryRecord {
            t: f.t,
            pose: f.pose.to_flat().to_vec(),
            vel: f.velocity.map(|v| v.to_flat().to_vec()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory; `path` only labels error messages. Blank lines are
/// skipped.
pub fn read_trajectory(input: impl BufRead, path: &Path) -> Result<Trajectory> {
    let mut header: Option<TrajectoryHeader> = None;
    let mut frames = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let env: Envelope = serde_json::from_str(&line).map_err(|e| json_error(path, i, e))?;
            check_envelope(path, line_no, &env, TRAJECTORY_FORMAT)?;
            header = Some(serde_json::from_str(&line).map_err(|e| json_error(path, i, e))?);
            continue;
        }
        let r: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| json_error(path, i, e))?;
        let pose = Pose::from_flat(&r.pose).map_err(|e| parse_error(path, line_no, format!("pose: {e}")))?;
        let velocity = match r.vel {
            Some(v) => Some(Velocity::from_flat(&v).map_err(|e| parse_error(path, line_no, format!("vel: {e}")))?),
            None => None,
        };
        frames.push(Frame { t: r.t, pose, velocity });
    }
    let header = header.ok_or_else(|| parse_error(path, 1, "missing header line"))?;
    Trajectory::new(header.dt, frames).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory(traj, BufWriter::new(fs::File::create(path)?))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_trajectory(BufReader::new(file), path)
}

// Skeleton and muscles

pub fn load_tree(path: &Path) -> Result<KinematicTree> {
    let config = serde_json::from_str(&read_text(path)?).map_err(|e| json_error(path, 0, e))?;
    crate::kinematics::build_tree(&config)
}

pub fn load_musculature(tree: &KinematicTree, path: &Path) -> Result<Musculature> {
    Musculature::from_config(tree, load_versioned(path, "mshand-muscles")?)
}

pub fn save_musculature(musculature: &Musculature, path: &Path) -> Result<()> {
    save_json(&musculature.to_config(), path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonesFile {
    pub format: String,
    pub version: u32,
    pub bones: BTreeMap<String, [f64; 3]>,
    pub bone_groups: BTreeMap<usize, Vec<String>>,
    pub mapping: BTreeMap<String, usize>,
}

impl From<&BoneModel> for BonesFile {
    fn from(m: &BoneModel) -> Self {
        Self {
            format: BONES_FORMAT.into(),
            version: FORMAT_VERSION,
            bones: m.bones.clone(),
            bone_groups: m.bone_groups.clone(),
            mapping: m.mapping.clone(),
        }
    }
}

pub fn load_bones(path: &Path) -> Result<BoneModel> {
    let f: BonesFile = load_versioned(path, BONES_FORMAT)?;
    Ok(BoneModel { bones: f.bones, bone_groups: f.bone_groups, mapping: f.mapping })
}

pub fn save_bones(model: &BoneModel, path: &Path) -> Result<()> {
    save_json(&BonesFile::from(model), path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttachmentsFile {
    pub format: String,
    pub version: u32,
    pub muscles: Vec<BoneCentricMuscle>,
}

pub fn load_attachments(path: &Path) -> Result<Vec<BoneCentricMuscle>> {
    Ok(load_versioned::<AttachmentsFile>(path, ATTACHMENTS_FORMAT)?.muscles)
}

pub fn save_attachments(muscles: &[BoneCentricMuscle], path: &Path) -> Result<()> {
    let f = AttachmentsFile { format: ATTACHMENTS_FORMAT.into(), version: FORMAT_VERSION, muscles: muscles.to_vec() };
    save_json(&f, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverridesFile {
    pub format: String,
    pub version: u32,
    /// Path-point id → replacement joint-centric offset.
    pub overrides: OverrideMap,
}

pub fn load_overrides(path: &Path) -> Result<OverrideMap> {
    Ok(load_versioned::<OverridesFile>(path, OVERRIDES_FORMAT)?.overrides)
}

// Excitations

/// Excitation program for `simulate`: either an explicit per-step
/// `sequence` (one value per muscle, in musculature order) or `sustained`
/// levels for named muscles held for `steps` steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcitationsFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sustained: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl ExcitationsFile {
    pub fn sustained(levels: BTreeMap<String, f64>, steps: usize) -> Self {
        Self {
            format: EXCITATIONS_FORMAT.into(),
            version: FORMAT_VERSION,
            sustained: Some(levels),
            steps: Some(steps),
            ..Default::default()
        }
    }

    pub fn sequence(rows: Vec<Vec<f64>>) -> Self {
        Self { format: EXCITATIONS_FORMAT.into(), version: FORMAT_VERSION, sequence: Some(rows), ..Default::default() }
    }

    /// Expands to one excitation vector per step.
    pub fn resolve(&self, musculature: &Musculature) -> Result<Vec<Vec<f64>>> {
        let n = musculature.len();
        match (&self.sequence, &self.sustained) {
            (Some(rows), None) => {
                if self.steps.is_some_and(|s| s != rows.len()) {
                    return Err(Error::InvalidArgument(format!(
                        "steps is {} but the sequence has {} rows",
                        self.steps.unwrap_or_default(),
                        rows.len()
                    )));
                }
                if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
                    return Err(Error::Dimension(format!("excitation row {i} has {} values for {n} muscles", r.len())));
                }
                Ok(rows.clone())
            }
            (None, Some(levels)) => {
                let steps = self.steps.ok_or_else(|| Error::InvalidArgument("sustained excitation needs steps".into()))?;
                let mut row = vec![0.0; n];
                for (name, &level) in levels {
                    let i = musculature.index_of(name).ok_or_else(|| Error::InvalidArgument(format!("unknown muscle {name:?}")))?;
                    row[i] = level;
                }
                Ok(vec![row; steps])
            }
            _ => Err(Error::InvalidArgument("give exactly one of sequence or sustained".into())),
        }
    }
}

pub fn load_excitations(path: &Path) -> Result<ExcitationsFile> {
    load_versioned(path, EXCITATIONS_FORMAT)
}

// Poses

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub format: String,
    pub version: u32,
    pub pose: Vec<f64>,
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    let f: PoseFile = load_versioned(path, POSE_FORMAT)?;
    Pose::from_flat(&f.pose).map_err(|e| parse_error(path, 1, e.to_string()))
}

pub fn save_pose(pose: &Pose, path: &Path) -> Result<()> {
    save_json(&PoseFile { format: POSE_FORMAT.into(), version: FORMAT_VERSION, pose: pose.to_flat().to_vec() }, path)
}

// Checkpoints

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string(ck)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_versioned(path, crate::neural::CHECKPOINT_FORMAT)
}

pub fn load_idnet(path: &Path) -> Result<IdNet> {
    IdNet::from_checkpoint(&load_checkpoint(path)?)
}

pub fn load_refinenet(path: &Path) -> Result<RefineNet> {
    RefineNet::from_checkpoint(&load_checkpoint(path)?)
}

// Run configuration

/// Which musculoskeletal system a run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// The bundled hand, or the `tree`/`muscles` files when given.
    #[default]
    Hand,
    /// The two-hinge system of [`crate::training::toy`].
    Toy,
}

/// Synthetic training data drawn from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub trajectories: usize,
    pub length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { trajectories: 250, length: 100 }
    }
}

/// Settings shared by the training and refinement commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format: String,
    pub version: u32,
    pub system: System,
    /// Relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub muscles: Option<PathBuf>,
    pub dynamics: DynamicsParams,
    pub feedback: Feedback,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            version: FORMAT_VERSION,
            system: System::Hand,
            tree: None,
            muscles: None,
            dynamics: DynamicsParams::default(),
            feedback: Feedback::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams { dynamics: self.dynamics.clone(), feedback: self.feedback }
    }

    /// Builds the tree and muscles named by the config.
    pub fn system(&self) -> Result<(KinematicTree, Musculature)> {
        match self.system {
            System::Toy => {
                if self.tree.is_some() || self.muscles.is_some() {
                    return Err(Error::InvalidArgument("the toy system takes no tree or muscles file".into()));
                }
                crate::training::toy::toy_system()
            }
            System::Hand => {
                let tree = match &self.tree {
                    Some(p) => load_tree(p)?,
                    None => KinematicTree::default_hand(),
                };
                let musc = match &self.muscles {
                    Some(p) => load_musculature(&tree, p)?,
                    None => Musculature::default_hand(&tree)?,
                };
                Ok((tree, musc))
            }
        }
    }

    /// Training trajectories for the configured system, drawn from `train.seed`.
    pub fn trajectories(&self, tree: &KinematicTree) -> Result<Vec<Trajectory>> {
        let (count, length, seed) = (self.data.trajectories, self.data.length, self.train.seed);
        match self.system {
            System::Toy => crate::training::toy::toy_trajectories(count, length, seed),
            System::Hand => crate::training::gen_trajectories(tree, count, length, seed),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = load_versioned(path, CONFIG_FORMAT)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.tree, &mut cfg.muscles].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.dynamics.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::POSE_DIM;

    fn sample() -> Trajectory {
        let tree = KinematicTree::default_hand();
        let t = &crate::training::gen_trajectories(&tree, 1, 5, 3).unwrap()[0];
        let mut frames = t.frames().to_vec();
        frames[2].velocity = None;
        Trajectory::new(t.dt(), frames).unwrap()
    }

    fn to_text(t: &Trajectory) -> String {
        let mut buf = Vec::new();
        write_trajectory(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let t = sample();
        let text = to_text(&t);
        let back = read_trajectory(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, t);
        assert!(text.lines().nth(3).unwrap().ends_with("\"vel\":null}"));
    }

    #[test]
    fn short_pose_reports_its_line() {
        let text = to_text(&sample());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut rec: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
        rec["pose"].as_array_mut().unwrap().pop();
        lines[3] = rec.to_string();
        let err = read_trajectory(lines.join("\n").as_bytes(), Path::new("x.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, reason, .. } => {
                assert_eq!(line, 4);
                assert!(reason.contains("47"), "{reason}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_velocity_field_means_absent() {
        let pose = vec![0.0; POSE_DIM];
        let text = format!(
            "{{\"format\":\"mshand-traj\",\"version\":1,\"dt\":0.01}}\n{{\"t\":0.0,\"pose\":{p:?}}}\n{{\"t\":0.01,\"pose\":{p:?}}}\n",
            p = pose
        );
        let t = read_trajectory(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.frames().iter().all(|f| f.velocity.is_none()));
    }

    #[test]
    fn newer_version_and_wrong_format_are_rejected() {
        let newer = "{\"format\":\"mshand-traj\",\"version\":2,\"dt\":0.01}\n";
        assert!(matches!(read_trajectory(newer.as_bytes(), Path::new("m")), Err(Error::Version { found: 2, .. })));
        let other = "{\"format\":\"mshand-pose\",\"version\":1,\"dt\":0.01}\n";
        assert!(matches!(read_trajectory(other.as_bytes(), Path::new("m")), Err(Error::Parse { line: 1, .. })));
        let newer_cfg = "{\"format\":\"mshand-config\",\"version\":7,\"unknown_future_field\":[1]}";
        assert!(matches!(
            parse_versioned::<RunConfig>(Path::new("c"), newer_cfg, CONFIG_FORMAT),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn non_uniform_dt_is_rejected() {
        let p = vec![0.0; POSE_DIM];
        let text = format!(
            "{{\"format\":\"mshand-traj\",\"version\":1,\"dt\":0.01}}\n{{\"t\":0.0,\"pose\":{p:?}}}\n{{\"t\":0.03,\"pose\":{p:?}}}\n"
        );
        assert!(read_trajectory(text.as_bytes(), Path::new("m")).is_err());
    }

    #[test]
    fn excitation_programs_resolve() {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::default_hand(&tree).unwrap();
        let e = ExcitationsFile::sustained(BTreeMap::from([("FDP4".to_string(), 1.0)]), 3);
        let rows = e.resolve(&musc).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0][musc.index_of("FDP4").unwrap()], 1.0);
        assert_eq!(rows[0].iter().sum::<f64>(), 1.0);
        let bad = ExcitationsFile::sustained(BTreeMap::from([("NOPE".to_string(), 1.0)]), 3);
        assert!(bad.resolve(&musc).is_err());
        assert!(ExcitationsFile::sequence(vec![vec![0.0; 2]]).resolve(&musc).is_err());
    }
}
