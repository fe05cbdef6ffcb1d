//! A reduced two-hinge system for quick inverse-dynamics experiments.
//!
//! The full hand tree is kept, but every axis except the flexion axes of the
//! index MCP and PIP joints is locked at zero. One flexor and one extensor
//! span both hinges with equal moment arms, so the reachable motions are
//! those where both hinges move together; [`toy_trajectories`] generates
//! exactly that family.

use rand::Rng;

use super::gen_with;
use crate::dynamics::{step, DynamicsParams, SimState};
use crate::error::{Error, Result};
use crate::kinematics::{Frame, KinematicTree, Pose, Trajectory, Vec3};
use crate::musculature::{JointCentricAttachment, MuscleDef, Musculature};
use crate::neural::IdNet;

pub const TOY_MCP: usize = 1;
pub const TOY_PIP: usize = 2;
/// Flexion range of both hinges (radians, flexion negative).
pub const TOY_RANGE: (f64, f64) = (-1.2, 0.0);
/// Flexion axis of both hinges.
pub const TOY_AXIS: usize = 2;

fn point(id: &str, joint: usize, offset: [f64; 3]) -> JointCentricAttachment {
    JointCentricAttachment { point_id: Some(id.into()), joint, offset: Vec3::from(offset) }
}

/// Tree, muscles (`TOY_FLEXOR`, `TOY_EXTENSOR`) and their actuated hinges.
pub fn toy_system() -> Result<(KinematicTree, Musculature)> {
    let hand = KinematicTree::default_hand();
    let tree = hand.with_limits(|j, a| {
        if (j == TOY_MCP || j == TOY_PIP) && a == TOY_AXIS {
            TOY_RANGE
        } else {
            (0.0, 0.0)
        }
    })?;
    let mcp = tree.joint(TOY_MCP).rest_offset;
    let phalanx = tree.joint(TOY_PIP).rest_offset.x;
    // Palmar (−y) route flexes, dorsal (+y) route extends. Offsets stay in
    // the z = 0 plane of the finger so the torques are pure flexion. The
    // dorsal points sit close to each hinge so the extensor's straight-line
    // moment arm keeps its sign over the full flexion range.
    let route = |name: &str, side: f64, f_max: f64, depth: f64, along: f64| {
        let path = vec![
            point(&format!("{name}.0"), 0, [mcp.x - 0.06, side * depth, mcp.z]),
            point(&format!("{name}.1"), 0, [mcp.x - along, side * depth, mcp.z]),
            point(&format!("{name}.2"), TOY_MCP, [along, side * depth, 0.0]),
            point(&format!("{name}.3"), TOY_MCP, [phalanx - along, side * depth, 0.0]),
            point(&format!("{name}.4"), TOY_PIP, [along, side * depth, 0.0]),
        ];
        MuscleDef { name: name.into(), path, f_max, l_opt: 0.06, l_slack: 0.0, actuated_joints: vec![TOY_MCP, TOY_PIP] }
    };
    let mut muscles = vec![route("TOY_FLEXOR", -1.0, 120.0, 0.010, 0.012), route("TOY_EXTENSOR", 1.0, 100.0, 0.008, 0.004)];
    // Slack lengths put both fibers slightly short of optimal at rest.
    let zero = Pose::zeros();
    for m in &mut muscles {
        let len = crate::musculature::muscle_path_geometry(&tree, &zero, m)?.total_length;
        m.l_slack = len - 0.95 * m.l_opt;
    }
    let musc = Musculature::new(&tree, muscles)?;
    Ok((tree, musc))
}

/// Pose with both hinges at flexion `angle`.
pub fn toy_pose(angle: f64) -> Pose {
    let mut p = Pose::zeros();
    p.rotations[TOY_MCP][TOY_AXIS] = angle;
    p.rotations[TOY_PIP][TOY_AXIS] = angle;
    p
}

/// Minimum-jerk motions through 3–6 random waypoints with both hinges at a
/// common angle.
pub fn toy_trajectories(count: usize, length: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let (lo, hi) = TOY_RANGE;
    gen_with(count, length, seed, |rng| toy_pose(rng.random_range(lo..=hi)))
}

/// Drives the simulator with the network's excitations to follow `target`:
/// each step asks for the transition from the current simulated state to the
/// next target frame.
pub fn closed_loop_rollout(
    tree: &KinematicTree,
    musculature: &Musculature,
    params: &DynamicsParams,
    idnet: &IdNet,
    target: &Trajectory,
) -> Result<Trajectory> {
    if target.len() < 2 || !target.has_velocities() {
        return Err(Error::Trajectory("tracking target needs 2 frames with velocities".into()));
    }
    let mut sim = SimState::new(tree, musculature, target.pose(0))?;
    sim.velocity = target.velocity_or_zero(0);
    let mut frames = vec![Frame { t: target.frames()[0].t, pose: sim.pose, velocity: Some(sim.velocity) }];
    for next in &target.frames()[1..] {
        let u = idnet.infer(&sim.pose, &sim.velocity, &next.pose, &next.velocity.expect("checked"));
        sim = step(&sim, tree, musculature, &u, params, None)?;
        frames.push(Frame { t: next.t, pose: sim.pose, velocity: Some(sim.velocity) });
    }
    Trajectory::new(target.dt(), frames)
}

/// Mean absolute hinge-angle error between two toy trajectories.
pub fn toy_tracking_error(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} frames", a.len(), b.len())));
    }
    let sum: f64 = a
        .poses()
        .zip(b.poses())
        .map(|(p, q)| {
            (p.rotations[TOY_MCP][TOY_AXIS] - q.rotations[TOY_MCP][TOY_AXIS]).abs()
                + (p.rotations[TOY_PIP][TOY_AXIS] - q.rotations[TOY_PIP][TOY_AXIS]).abs()
        })
        .sum();
    Ok(sum / (2 * a.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Velocity;
    use crate::musculature::muscle_torques;

    #[test]
    fn toy_muscles_flex_and_extend_both_hinges() {
        let (tree, musc) = toy_system().unwrap();
        for (u, sign) in [([1.0, 0.0], -1.0), ([0.0, 1.0], 1.0)] {
            let mut states = musc.initial_states(&tree, &toy_pose(-0.5)).unwrap();
            let tau = muscle_torques(&tree, &toy_pose(-0.5), &Velocity::zeros(), &musc, &mut states, &u, 0.01).unwrap();
            for j in [TOY_MCP, TOY_PIP] {
                assert!(tau.torques[j][TOY_AXIS] * sign > 0.0);
                assert!(tau.torques[j].x.abs() < 1e-12 && tau.torques[j].y.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn toy_trajectories_stay_on_the_synergy() {
        let trajs = toy_trajectories(4, 80, 1).unwrap();
        for t in &trajs {
            for p in t.poses() {
                assert_eq!(p.rotations[TOY_MCP][TOY_AXIS], p.rotations[TOY_PIP][TOY_AXIS]);
            }
        }
    }
}
