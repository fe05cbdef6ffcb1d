//! Simulation-in-the-loop refinement.
//!
//! For every frame transition of a predicted trajectory the inverse-dynamics
//! network proposes muscle excitations, the simulator is placed in the
//! previous frame's state and advanced one control step, and the refinement
//! network fuses the next predicted pose with the simulated reference pose.

use serde::{Deserialize, Serialize};

use crate::dynamics::{set_state, step, DynamicsParams, SimState};
use crate::error::{Error, Result};
use crate::kinematics::{finite_diff_velocity, Frame, KinematicTree, Pose, Trajectory};
use crate::musculature::Musculature;
use crate::neural::{IdNet, RefineNet};

/// Which pose is injected into the simulator before each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// The refined pose of the previous frame.
    #[default]
    Refined,
    /// The predicted pose of the previous frame.
    Predicted,
}

impl std::str::FromStr for Feedback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refined" => Ok(Feedback::Refined),
            "predicted" => Ok(Feedback::Predicted),
            other => Err(Error::InvalidArgument(format!("feedback must be refined or predicted, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub dynamics: DynamicsParams,
    pub feedback: Feedback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub refined: Trajectory,
    /// Simulated poses and velocities; frame 0 copies the prediction.
    pub reference: Trajectory,
}

/// Runs the refinement loop over `pred`. Missing velocities are filled by
/// finite differences. Both outputs have the same length and timestamps as
/// `pred`, and frame 0 of each copies `pred`.
pub fn biopr_refine(
    pred: &Trajectory,
    tree: &KinematicTree,
    musculature: &Musculature,
    idnet: &IdNet,
    refinenet: &RefineNet,
    params: &PipelineParams,
) -> Result<PipelineOutput> {
    if pred.len() < 2 {
        return Err(Error::Trajectory(format!("refinement needs at least 2 frames, got {}", pred.len())));
    }
    if idnet.num_muscles() != musculature.len() {
        return Err(Error::Dimension(format!(
            "IDNet drives {} muscles, musculature has {}",
            idnet.num_muscles(),
            musculature.len()
        )));
    }
    let pred = if pred.has_velocities() { pred.clone() } else { finite_diff_velocity(pred)? };
    let frames = pred.frames();

    let mut state = SimState::new(tree, musculature, &frames[0].pose)?;
    state.time = frames[0].t;
    let mut refined = Vec::with_capacity(frames.len());
    let mut reference = Vec::with_capacity(frames.len());
    refined.push(Frame { t: frames[0].t, pose: frames[0].pose, velocity: None });
    reference.push(frames[0]);
    let mut last_refined: Pose = frames[0].pose;

    for w in frames.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let (v, v_next) = (cur.velocity.expect("filled"), next.velocity.expect("filled"));
        let excitation = idnet.infer(&cur.pose, &v, &next.pose, &v_next);
        let inject = match params.feedback {
            Feedback::Refined => last_refined,
            Feedback::Predicted => cur.pose,
        };
        state = set_state(&state, tree, musculature, &inject, &v)?;
        state = step(&state, tree, musculature, &excitation, &params.dynamics, None)?;
        if !state.pose.is_finite() || !state.velocity.is_finite() {
            return Err(Error::Diverged(format!("simulated state at t = {:.4} s", next.t)));
        }
        let p = refinenet.refine(tree, &next.pose, &state.pose);
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("refined pose at t = {:.4} s", next.t)));
        }
        last_refined = p;
        refined.push(Frame { t: next.t, pose: p, velocity: None });
        reference.push(Frame { t: next.t, pose: state.pose, velocity: Some(state.velocity) });
    }
    Ok(PipelineOutput { refined: Trajectory::new(pred.dt(), refined)?, reference: Trajectory::new(pred.dt(), reference)? })
}

/// Refines independent trajectories on up to `workers` threads. Results are
/// in input order and do not depend on `workers`.
pub fn biopr_refine_many(
    preds: &[Trajectory],
    tree: &KinematicTree,
    musculature: &Musculature,
    idnet: &IdNet,
    refinenet: &RefineNet,
    params: &PipelineParams,
    workers: usize,
) -> Result<Vec<PipelineOutput>> {
    if preds.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = preds.len().div_ceil(workers.max(1));
    let chunks: Vec<Result<Vec<PipelineOutput>>> = std::thread::scope(|s| {
        let handles: Vec<_> = preds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter().map(|p| biopr_refine(p, tree, musculature, idnet, refinenet, params)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("refinement worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(preds.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
