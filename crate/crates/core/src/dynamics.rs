//! Forward dynamics of the actuated skeleton.
//!
//! Each axis-angle component is an independent coordinate with its own
//! diagonal inertia and viscous damping. Torques from muscles, an optional
//! external source (the PD controller during supervision) and an optional
//! constant gravity load are integrated with semi-implicit Euler. Joint
//! limits are hard stops: the coordinate is clamped and its rate zeroed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, Pose, Torques, Trajectory, Velocity, Frame, POSE_DIM};
use crate::musculature::{muscle_torques, MuscleState, Musculature};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    /// Control step (s).
    pub dt: f64,
    /// Rotational inertia of every coordinate (kg·m²).
    pub inertia: f64,
    /// Viscous damping (N·m·s/rad).
    pub damping: f64,
    /// Integrator substeps per control step.
    pub substeps: usize,
    /// Constant torque added to every substep, 48 values in pose order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<Vec<f64>>,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        // An inertia of 2e-3 keeps the supervising PD loop (kd = 0.1) stable
        // at dt = 0.01; at 1e-4 the derivative term alone gives kd·dt/I = 10.
        Self { dt: 0.01, inertia: 2e-3, damping: 5e-3, substeps: 4, gravity: None }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(Error::InvalidArgument(format!("inertia must be positive, got {}", self.inertia)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidArgument(format!("damping must be non-negative, got {}", self.damping)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if let Some(g) = &self.gravity {
            if g.len() != POSE_DIM || !g.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidArgument(format!("gravity needs {POSE_DIM} finite values")));
            }
        }
        Ok(())
    }

    fn gravity_torques(&self) -> Result<Option<Torques>> {
        self.gravity.as_deref().map(Torques::from_flat).transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 2.0, kd: 0.1 }
    }
}

/// `kp (p_d − p) + kd (v_d − v)` per component; the wrist gets no torque.
pub fn pd_torque(p: &Pose, v: &Velocity, p_d: &Pose, v_d: &Velocity, gains: &PdGains) -> Torques {
    let mut t = Torques::zeros();
    for j in 1..p.rotations.len() {
        t.torques[j] = (p_d.rotations[j] - p.rotations[j]) * gains.kp + (v_d.rates[j] - v.rates[j]) * gains.kd;
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub pose: Pose,
    pub velocity: Velocity,
    pub muscle_states: Vec<MuscleState>,
    pub time: f64,
    /// Set by [`set_state`] when the injected pose had to be clamped.
    pub clamped: bool,
}

impl SimState {
    /// At rest in `pose` (clamped to limits), all muscles inactive.
    pub fn new(tree: &KinematicTree, musculature: &Musculature, pose: &Pose) -> Result<Self> {
        let mut pose = *pose;
        let clamped = tree.clamp_pose(&mut pose).iter().any(|&c| c);
        let muscle_states = musculature.initial_states(tree, &pose)?;
        Ok(Self { pose, velocity: Velocity::zeros(), muscle_states, time: 0.0, clamped })
    }

    pub fn activations(&self) -> Vec<f64> {
        self.muscle_states.iter().map(|s| s.activation).collect()
    }
}

/// Overwrites pose and velocity, keeping activations. Out-of-limit poses are
/// clamped and flagged; fiber lengths follow the new pose.
pub fn set_state(
    state: &SimState,
    tree: &KinematicTree,
    musculature: &Musculature,
    pose: &Pose,
    velocity: &Velocity,
) -> Result<SimState> {
    let mut pose = *pose;
    let clamped = tree.clamp_pose(&mut pose).iter().any(|&c| c);
    let mut muscle_states = state.muscle_states.clone();
    musculature.update_fiber_lengths(tree, &pose, &mut muscle_states)?;
    Ok(SimState { pose, velocity: *velocity, muscle_states, time: state.time, clamped })
}

/// Result of one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub state: SimState,
    /// Muscle torques averaged over the substeps.
    pub muscle_torque: Torques,
}

pub fn step(
    state: &SimState,
    tree: &KinematicTree,
    musculature: &Musculature,
    excitations: &[f64],
    params: &DynamicsParams,
    extra_torque: Option<&Torques>,
) -> Result<SimState> {
    Ok(step_detailed(state, tree, musculature, excitations, params, extra_torque)?.state)
}

pub fn step_detailed(
    state: &SimState,
    tree: &KinematicTree,
    musculature: &Musculature,
    excitations: &[f64],
    params: &DynamicsParams,
    extra_torque: Option<&Torques>,
) -> Result<StepOutput> {
    params.validate()?;
    if state.muscle_states.len() != musculature.len() {
        return Err(Error::Dimension(format!(
            "{} muscle states for {} muscles",
            state.muscle_states.len(),
            musculature.len()
        )));
    }
    let gravity = params.gravity_torques()?;
    let h = params.dt / params.substeps as f64;
    let mut pose = state.pose;
    let mut vel = state.velocity;
    let mut muscles = state.muscle_states.clone();
    let mut muscle_sum = Torques::zeros();

    for _ in 0..params.substeps {
        let tau_m = muscle_torques(tree, &pose, &vel, musculature, &mut muscles, excitations, h)?;
        muscle_sum = muscle_sum.add_scaled(&tau_m, 1.0);
        let mut total = tau_m.add_scaled(&Torques { torques: vel.rates }, -params.damping);
        if let Some(extra) = extra_torque {
            total = total.add_scaled(extra, 1.0);
        }
        if let Some(g) = &gravity {
            total = total.add_scaled(g, 1.0);
        }
        if !total.is_finite() {
            return Err(Error::Diverged(format!("non-finite torque at t = {:.4} s", state.time)));
        }
        for j in 0..pose.rotations.len() {
            for axis in 0..3 {
                let v = vel.rates[j][axis] + total.torques[j][axis] / params.inertia * h;
                let p = pose.rotations[j][axis] + v * h;
                let (lo, hi) = tree.limits(j, axis);
                let (p, v) = if p < lo {
                    (lo, 0.0)
                } else if p > hi {
                    (hi, 0.0)
                } else {
                    (p, v)
                };
                vel.rates[j][axis] = v;
                pose.rotations[j][axis] = p;
            }
        }
    }
    musculature.update_fiber_lengths(tree, &pose, &mut muscles)?;
    let next = SimState {
        pose,
        velocity: vel,
        muscle_states: muscles,
        time: state.time + params.dt,
        clamped: state.clamped,
    };
    let muscle_torque = Torques::zeros().add_scaled(&muscle_sum, 1.0 / params.substeps as f64);
    Ok(StepOutput { state: next, muscle_torque })
}

/// Applies one control step per excitation vector. The returned trajectory
/// starts with `state` and carries velocities.
pub fn rollout(
    state: &SimState,
    tree: &KinematicTree,
    musculature: &Musculature,
    excitations: &[Vec<f64>],
    params: &DynamicsParams,
) -> Result<Trajectory> {
    if excitations.is_empty() {
        return Err(Error::InvalidArgument("empty excitation sequence".into()));
    }
    let mut frames = Vec::with_capacity(excitations.len() + 1);
    let mut s = state.clone();
    frames.push(Frame { t: s.time, pose: s.pose, velocity: Some(s.velocity) });
    for u in excitations {
        s = step(&s, tree, musculature, u, params, None)?;
        frames.push(Frame { t: s.time, pose: s.pose, velocity: Some(s.velocity) });
    }
    Trajectory::new(params.dt, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (KinematicTree, Musculature) {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::default_hand(&tree).unwrap();
        (tree, musc)
    }

    #[test]
    fn pd_torque_examples() {
        let z = Pose::zeros();
        let zv = Velocity::zeros();
        assert_eq!(pd_torque(&z, &zv, &z, &zv, &PdGains::default()), Torques::zeros());

        let mut target = Pose::zeros();
        target.rotations[2].z = 0.5;
        let t = pd_torque(&z, &zv, &target, &zv, &PdGains { kp: 2.0, kd: 0.0 });
        assert_eq!(t.torques[2].z, 1.0);

        let mut vd = Velocity::zeros();
        vd.rates[5].x = 1.0;
        let t = pd_torque(&z, &zv, &z, &vd, &PdGains { kp: 2.0, kd: 0.1 });
        assert_eq!(t.torques[5], crate::kinematics::Vec3::new(0.1, 0.0, 0.0));

        let mut wrist = Pose::zeros();
        wrist.rotations[0].x = 0.3;
        assert_eq!(pd_torque(&z, &zv, &wrist, &zv, &PdGains::default()), Torques::zeros());
    }

    #[test]
    fn params_are_validated() {
        for p in [
            DynamicsParams { dt: 0.0, ..Default::default() },
            DynamicsParams { inertia: 0.0, ..Default::default() },
            DynamicsParams { damping: -1.0, ..Default::default() },
            DynamicsParams { substeps: 0, ..Default::default() },
            DynamicsParams { gravity: Some(vec![0.0; 47]), ..Default::default() },
        ] {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let (tree, musc) = setup();
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let next = step(&s, &tree, &musc, &vec![0.0; 31], &DynamicsParams::default(), None).unwrap();
        assert_eq!(next.pose, s.pose);
        assert_eq!(next.velocity, s.velocity);
        assert!((next.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn constant_torque_one_step() {
        // Undamped, from rest: v = c·dt/I after one control step, independent of substeps.
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let params = DynamicsParams { damping: 0.0, ..Default::default() };
        let mut extra = Torques::zeros();
        extra.torques[4].z = -0.01;
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let next = step(&s, &tree, &musc, &[], &params, Some(&extra)).unwrap();
        let expected = -0.01 * params.dt / params.inertia;
        assert!((next.velocity.rates[4].z - expected).abs() < 1e-12);
    }

    #[test]
    fn limits_are_hard_stops() {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let mut pose = Pose::zeros();
        let (lo, _) = tree.limits(4, 2);
        pose.rotations[4].z = lo;
        let s = SimState::new(&tree, &musc, &pose).unwrap();
        let mut extra = Torques::zeros();
        extra.torques[4].z = -5.0;
        let next = step(&s, &tree, &musc, &[], &DynamicsParams::default(), Some(&extra)).unwrap();
        assert_eq!(next.pose.rotations[4].z, lo);
        assert_eq!(next.velocity.rates[4].z, 0.0);
    }

    #[test]
    fn set_state_round_trip_and_clamp() {
        let (tree, musc) = setup();
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let mut p = Pose::zeros();
        p.rotations[7].z = -0.4;
        let mut v = Velocity::zeros();
        v.rates[7].z = 0.3;
        let s2 = set_state(&s, &tree, &musc, &p, &v).unwrap();
        assert_eq!((s2.pose, s2.velocity, s2.clamped), (p, v, false));

        p.rotations[7].z = -3.0;
        let s3 = set_state(&s, &tree, &musc, &p, &v).unwrap();
        assert!(s3.clamped);
        assert_eq!(s3.pose.rotations[7].z, tree.limits(7, 2).0);
    }

    #[test]
    fn set_state_at_rest_stays_put() {
        let (tree, musc) = setup();
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let mut p = Pose::zeros();
        p.rotations[1].z = -0.3;
        p.rotations[8].z = -0.5;
        let s = set_state(&s, &tree, &musc, &p, &Velocity::zeros()).unwrap();
        let next = step(&s, &tree, &musc, &vec![0.0; 31], &DynamicsParams::default(), None).unwrap();
        for j in 0..16 {
            assert!((next.pose.rotations[j] - p.rotations[j]).norm() < 1e-9, "joint {j}");
        }
    }

    #[test]
    fn rollout_length_and_constancy() {
        let (tree, musc) = setup();
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let traj = rollout(&s, &tree, &musc, &vec![vec![0.0; 31]; 7], &DynamicsParams::default()).unwrap();
        assert_eq!(traj.len(), 8);
        assert!(traj.poses().all(|p| *p == Pose::zeros()));
        assert!(rollout(&s, &tree, &musc, &[], &DynamicsParams::default()).is_err());
    }

    #[test]
    fn non_finite_torque_is_reported() {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let mut extra = Torques::zeros();
        extra.torques[3].z = f64::NAN;
        let r = step(&s, &tree, &musc, &[], &DynamicsParams::default(), Some(&extra));
        assert!(matches!(r, Err(Error::Diverged(_))));
    }

    #[test]
    fn gravity_adds_constant_torque() {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let mut g = vec![0.0; POSE_DIM];
        g[4 * 3 + 2] = -0.02;
        let params = DynamicsParams { damping: 0.0, gravity: Some(g), ..Default::default() };
        let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let next = step(&s, &tree, &musc, &[], &params, None).unwrap();
        assert!(next.pose.rotations[4].z < 0.0);
    }
}
