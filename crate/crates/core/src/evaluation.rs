//! Pose-accuracy metrics and the temporal-smoothing baseline.
//!
//! All keypoint metrics compare wrist-relative keypoints (each set has its
//! own wrist subtracted) and report millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, KinematicTree, Pose, Trajectory, Vec3, NUM_KEYPOINTS};

/// Default upper threshold of the PCK curve (mm).
pub const AUC_T_MAX: f64 = 50.0;
/// Number of thresholds sampled on `[0, t_max]`.
pub const AUC_STEPS: usize = 100;

pub type Keypoints = [Vec3; NUM_KEYPOINTS];

/// Wrist-relative keypoints in millimeters.
pub fn relative_keypoints_mm(tree: &KinematicTree, pose: &Pose) -> Keypoints {
    let mut kp = forward_kinematics(tree, pose);
    let wrist = kp[0];
    for k in kp.iter_mut() {
        *k = (*k - wrist) * 1000.0;
    }
    kp
}

fn keypoint_frames(tree: &KinematicTree, traj: &Trajectory) -> Vec<Keypoints> {
    traj.poses().map(|p| relative_keypoints_mm(tree, p)).collect()
}

fn check_pair(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("prediction has {} frames, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// Per-frame mean keypoint error (mm) between keypoint sequences.
pub fn keypoint_errors_per_frame(pred: &[Keypoints], gt: &[Keypoints]) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / NUM_KEYPOINTS as f64)
        .collect()
}

/// Mean per-joint position error over all frames and 21 keypoints (mm).
pub fn mpjpe(tree: &KinematicTree, pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(mpjpe_report(tree, pred, gt)?.0)
}

/// MPJPE and its per-frame breakdown.
pub fn mpjpe_report(tree: &KinematicTree, pred: &Trajectory, gt: &Trajectory) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, gt)?;
    let per_frame = keypoint_errors_per_frame(&keypoint_frames(tree, pred), &keypoint_frames(tree, gt));
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((mean, per_frame))
}

/// Area under the PCK curve from a flat list of keypoint errors, normalized
/// by `t_max` (trapezoid rule over `AUC_STEPS` uniform thresholds).
pub fn auc_from_errors(errors: &[f64], t_max: f64) -> Result<f64> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("AUC threshold must be positive, got {t_max}")));
    }
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to score".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pck = |t: f64| sorted.partition_point(|&e| e <= t) as f64 / sorted.len() as f64;
    let h = t_max / (AUC_STEPS - 1) as f64;
    let values: Vec<f64> = (0..AUC_STEPS).map(|k| pck(k as f64 * h)).collect();
    let area: f64 = values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum();
    Ok(area / t_max)
}

pub fn auc(tree: &KinematicTree, pred: &Trajectory, gt: &Trajectory, t_max: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (a, b) = (keypoint_frames(tree, pred), keypoint_frames(tree, gt));
    let errors: Vec<f64> = a.iter().zip(&b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm())).collect();
    auc_from_errors(&errors, t_max)
}

/// Mean norm of the acceleration difference (mm/s²) between keypoint
/// sequences, over interior frames and all keypoints.
pub fn accel_error_keypoints(pred: &[Keypoints], gt: &[Keypoints], dt: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::Trajectory(format!("acceleration error needs at least 3 frames, got {}", pred.len())));
    }
    let inv = 1.0 / (dt * dt);
    let mut total = 0.0;
    for i in 1..pred.len() - 1 {
        for k in 0..NUM_KEYPOINTS {
            let acc = |s: &[Keypoints]| (s[i + 1][k] - 2.0 * s[i][k] + s[i - 1][k]) * inv;
            total += (acc(pred) - acc(gt)).norm();
        }
    }
    Ok(total / ((pred.len() - 2) * NUM_KEYPOINTS) as f64)
}

pub fn accel_error(tree: &KinematicTree, pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_pair(pred, gt)?;
    if (pred.dt() - gt.dt()).abs() > crate::kinematics::DT_TOLERANCE {
        return Err(Error::Trajectory(format!("dt differs: {} vs {}", pred.dt(), gt.dt())));
    }
    accel_error_keypoints(&keypoint_frames(tree, pred), &keypoint_frames(tree, gt), pred.dt())
}

/// Replaces every pose by the mean over a centered window of `d` frames,
/// truncated at the ends (the mean minimizes the summed squared distance to
/// the window's poses). Velocities are dropped.
pub fn temporal_smooth(traj: &Trajectory, d: usize) -> Result<Trajectory> {
    if d == 0 || d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("smoothing window must be odd and positive, got {d}")));
    }
    let half = d / 2;
    let n = traj.len();
    let poses: Vec<Pose> = (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half).min(n - 1));
            let mut acc = Pose::zeros();
            for k in lo..=hi {
                acc = acc.add_scaled(traj.pose(k), 1.0);
            }
            Pose::zeros().add_scaled(&acc, 1.0 / (hi - lo + 1) as f64)
        })
        .collect();
    traj.with_poses(&poses)
}

/// The `eval` report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub auc: f64,
    /// `None` for fewer than 3 frames.
    pub ae_mm_s2: Option<f64>,
    pub frames: usize,
    /// Per-frame MPJPE (mm).
    pub per_frame: Vec<f64>,
}

pub fn evaluate(tree: &KinematicTree, pred: &Trajectory, gt: &Trajectory) -> Result<EvalReport> {
    let (mpjpe_mm, per_frame) = mpjpe_report(tree, pred, gt)?;
    let ae_mm_s2 = if pred.len() >= 3 { Some(accel_error(tree, pred, gt)?) } else { None };
    Ok(EvalReport { mpjpe_mm, auc: auc(tree, pred, gt, AUC_T_MAX)?, ae_mm_s2, frames: pred.len(), per_frame })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_of_constant_errors() {
        assert!((auc_from_errors(&[0.0; 10], 50.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(auc_from_errors(&[80.0; 10], 50.0).unwrap(), 0.0);
        // A step at 25 mm: exact area 0.5, off by at most one bin.
        let a = auc_from_errors(&[25.0; 10], 50.0).unwrap();
        assert!((a - 0.5).abs() <= 1.0 / 99.0, "{a}");
        assert!(auc_from_errors(&[1.0], 0.0).is_err());
    }

    #[test]
    fn smoothing_examples() {
        let mk = |vals: &[f64]| {
            let poses: Vec<Pose> = vals
                .iter()
                .map(|&v| {
                    let mut p = Pose::zeros();
                    p.rotations[3].z = v;
                    p
                })
                .collect();
            Trajectory::from_poses(0.01, 0.0, poses).unwrap()
        };
        let t = mk(&[0.0, 3.0, 0.0]);
        assert_eq!(temporal_smooth(&t, 3).unwrap().pose(1).rotations[3].z, 1.0);
        assert_eq!(temporal_smooth(&t, 1).unwrap(), t);
        let c = mk(&[0.4; 6]);
        assert!(temporal_smooth(&c, 5).unwrap().poses().all(|p| (p.rotations[3].z - 0.4).abs() < 1e-15));
        assert!(temporal_smooth(&t, 2).is_err());
        assert!(temporal_smooth(&t, 0).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let tree = KinematicTree::default_hand();
        let a = Trajectory::from_poses(0.01, 0.0, vec![Pose::zeros(); 3]).unwrap();
        let b = Trajectory::from_poses(0.01, 0.0, vec![Pose::zeros(); 4]).unwrap();
        assert!(mpjpe(&tree, &a, &b).is_err());
        assert!(accel_error(&tree, &a, &a.clone()).is_ok());
        let short = Trajectory::from_poses(0.01, 0.0, vec![Pose::zeros(); 2]).unwrap();
        assert!(accel_error(&tree, &short, &short).is_err());
    }
}
