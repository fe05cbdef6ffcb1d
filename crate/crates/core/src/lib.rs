//! Musculoskeletal hand model and simulation-in-the-loop pose refinement.
//!
//! A 16-joint hand skeleton (wrist, three joints per finger, thumb) is
//! actuated by Hill-type muscles whose path points are attached to joint
//! frames. A semi-implicit Euler integrator advances the skeleton under
//! muscle torques. Two small networks sit on top:
//!
//! * the inverse-dynamics network maps a pose transition to muscle
//!   excitations and is trained by policy optimization against a PD torque
//!   target;
//! * the refinement network fuses a predicted pose with the pose the
//!   simulator reaches from the previous frame.
//!
//! ```
//! use mshand::{forward_kinematics, KinematicTree, Pose};
//!
//! let tree = KinematicTree::default_hand();
//! let keypoints = forward_kinematics(&tree, &Pose::zeros());
//! assert_eq!(keypoints.len(), 21);
//! assert_eq!(keypoints[0], mshand::Vec3::zeros());
//! ```
//!
//! Conventions: lengths in meters, angles in radians, `+x` toward the
//! fingers, `+y` dorsal, `+z` radial. Flexion is a negative rotation about a
//! joint's `z` axis.

pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kinematics;
pub mod musculature;
pub mod neural;
pub mod pipeline;
pub mod training;

pub use dynamics::{pd_torque, rollout, set_state, step, DynamicsParams, PdGains, SimState};
pub use error::{Error, Result};
pub use evaluation::{accel_error, auc, evaluate, mpjpe, temporal_smooth, EvalReport};
pub use kinematics::{
    finite_diff_velocity, forward_kinematics, Frame, KinematicTree, Pose, Torques, Trajectory, Vec3, Velocity,
    NUM_JOINTS, NUM_KEYPOINTS, POSE_DIM,
};
pub use musculature::{map_bone_to_joint, muscle_torques, MuscleDef, MuscleState, Musculature};
pub use neural::{IdNet, Mlp, RefineNet};
pub use pipeline::{biopr_refine, Feedback, PipelineOutput, PipelineParams};
pub use training::{train_idnet, train_refinenet, TrainConfig};

// The guide's snippets run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/skeleton.md")]
    mod skeleton {}
    #[doc = include_str!("../../../book/src/muscles.md")]
    mod muscles {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
