//! Training data and the two trainers.
//!
//! The inverse-dynamics network is trained as a one-step stochastic policy:
//! a simulator is placed in a trajectory state, the policy's excitations are
//! applied for one control step, and the reward compares the resulting muscle
//! torque with what a PD controller would apply to reach the next frame. The
//! refinement network is then fit by supervised regression onto clean poses.

mod ppo;
mod refine;
pub mod toy;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dynamics::PdGains;
use crate::error::{Error, Result};
use crate::kinematics::{Frame, KinematicTree, Pose, Torques, Trajectory, Velocity, NUM_JOINTS};

pub use ppo::{train_idnet, IdNetTraining};
pub use refine::{build_refine_dataset, refine_loss, train_refinenet, RefineDataset, RefineNetTraining};

/// Sampling interval of generated trajectories (s).
pub const TRAJECTORY_DT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Must be negative so that larger torque error earns less.
    pub omega_tau: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { omega_tau: -2.0 }
    }
}

/// Trainer settings. Batch sizes are desk-scale; the original large-cluster
/// values were 16384 transitions per policy update and 10240 poses per
/// refiner batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub idnet_lr: f64,
    pub refinenet_lr: f64,
    /// Transitions collected per policy update.
    pub idnet_batch: usize,
    pub idnet_updates: usize,
    pub ppo_epochs: usize,
    pub ppo_minibatches: usize,
    pub ppo_clip: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm ceiling for policy updates.
    pub max_grad_norm: f64,
    /// Exploration noise at initialization, in pre-sigmoid units.
    pub initial_log_std: f64,
    pub refinenet_batch: usize,
    pub refinenet_iters: usize,
    /// Noise on sampled training poses (degrees).
    pub noise_deg: f64,
    /// Simulated estimator error for refiner data (degrees).
    pub corruption_deg: f64,
    /// Fraction of trajectories held out from refiner fitting.
    pub holdout_fraction: f64,
    pub reward: RewardParams,
    pub pd_gains: PdGains,
    pub workers: usize,
    pub envs_per_worker: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            idnet_lr: 3e-4,
            refinenet_lr: 1e-3,
            idnet_batch: 2048,
            idnet_updates: 40,
            ppo_epochs: 4,
            ppo_minibatches: 4,
            ppo_clip: 0.2,
            entropy_coef: 1e-3,
            max_grad_norm: 0.5,
            initial_log_std: -0.5,
            refinenet_batch: 1024,
            refinenet_iters: 4500,
            noise_deg: 0.1,
            corruption_deg: 3.0,
            holdout_fraction: 0.2,
            reward: RewardParams::default(),
            pd_gains: PdGains::default(),
            workers: 4,
            envs_per_worker: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what}")));
        for (name, lr) in [("idnet_lr", self.idnet_lr), ("refinenet_lr", self.refinenet_lr)] {
            if !(lr > 0.0 && lr < 1.0) {
                return bad(&format!("{name} must lie in (0, 1), got {lr}"));
            }
        }
        if self.idnet_batch == 0 || self.refinenet_batch == 0 || self.ppo_epochs == 0 || self.ppo_minibatches == 0 {
            return bad("batch sizes, epochs and minibatch counts must be positive");
        }
        if self.ppo_minibatches > self.idnet_batch {
            return bad("more minibatches than transitions per update");
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return bad(&format!("ppo_clip must lie in (0, 1), got {}", self.ppo_clip));
        }
        if !(self.noise_deg >= 0.0 && self.corruption_deg >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in (0, 1)");
        }
        if !(self.reward.omega_tau < 0.0) {
            return bad("reward.omega_tau must be negative");
        }
        if self.workers == 0 || self.envs_per_worker == 0 {
            return bad("workers and envs_per_worker must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn num_envs(&self) -> usize {
        self.workers * self.envs_per_worker
    }
}

/// One row of a training log: the batch mean reward for policy training,
/// the mean loss for refiner training.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub update: usize,
    pub value: f64,
    /// Seconds since training started. Not reproducible across runs.
    pub wall_time: f64,
}

/// `exp(omega_tau · ‖τ_pd − τ_m‖)` over the non-wrist components.
pub fn torque_reward(tau_pd: &Torques, tau_m: &Torques, params: &RewardParams) -> f64 {
    let sq: f64 = (1..NUM_JOINTS).map(|j| (tau_pd.torques[j] - tau_m.torques[j]).norm_squared()).sum();
    (params.omega_tau * sq.sqrt()).exp()
}

/// Adds independent Gaussian noise (standard deviation in degrees) to every
/// non-wrist component, then clamps to the joint limits.
pub fn perturb_pose(tree: &KinematicTree, pose: &Pose, sigma_deg: f64, rng: &mut impl Rng) -> Result<Pose> {
    if !(sigma_deg >= 0.0 && sigma_deg.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be non-negative, got {sigma_deg}")));
    }
    if sigma_deg == 0.0 {
        return Ok(*pose);
    }
    let normal = Normal::new(0.0, sigma_deg.to_radians()).expect("valid std");
    let mut out = *pose;
    for j in 1..NUM_JOINTS {
        for a in 0..3 {
            out.rotations[j][a] += normal.sample(rng);
        }
    }
    tree.clamp_pose(&mut out);
    Ok(out)
}

/// Minimum-jerk blend `10τ³ − 15τ⁴ + 6τ⁵` and its derivative in `τ`.
pub fn min_jerk(tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (t3 * (10.0 - 15.0 * tau + 6.0 * t2), 30.0 * t2 * (1.0 - 2.0 * tau + t2))
}

/// Minimum-jerk trajectory through `waypoints`, `length` frames long, with
/// the frames split evenly across segments. Velocities are exact
/// derivatives of the blend, so each waypoint is reached at rest.
pub fn min_jerk_trajectory(waypoints: &[Pose], length: usize, dt: f64) -> Result<Trajectory> {
    if waypoints.len() < 2 || length < 2 {
        return Err(Error::InvalidArgument("need at least 2 waypoints and 2 frames".into()));
    }
    let duration = (length - 1) as f64 * dt;
    let segments = waypoints.len() - 1;
    let seg_time = duration / segments as f64;
    let frames = (0..length)
        .map(|i| {
            let t = i as f64 * dt;
            let k = ((t / seg_time) as usize).min(segments - 1);
            let tau = ((t - k as f64 * seg_time) / seg_time).clamp(0.0, 1.0);
            let (s, ds) = min_jerk(tau);
            let (a, b) = (&waypoints[k], &waypoints[k + 1]);
            let mut pose = Pose::zeros();
            let mut vel = Velocity::zeros();
            for j in 0..NUM_JOINTS {
                let d = b.rotations[j] - a.rotations[j];
                pose.rotations[j] = a.rotations[j] + d * s;
                vel.rates[j] = d * (ds / seg_time);
            }
            Frame { t, pose, velocity: Some(vel) }
        })
        .collect();
    Trajectory::new(dt, frames)
}

/// Uniform random pose within the limits; the wrist stays at zero because
/// no muscle in the model acts on it.
pub fn random_pose(tree: &KinematicTree, rng: &mut impl Rng) -> Pose {
    let mut p = Pose::zeros();
    for j in 1..NUM_JOINTS {
        for a in 0..3 {
            let (lo, hi) = tree.limits(j, a);
            p.rotations[j][a] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
    }
    p
}

/// `count` minimum-jerk trajectories of `length` frames at 100 Hz, each
/// through 3 to 6 random in-limit waypoints.
pub fn gen_trajectories(tree: &KinematicTree, count: usize, length: usize, seed: u64) -> Result<Vec<Trajectory>> {
    gen_with(count, length, seed, |rng| random_pose(tree, rng))
}

fn gen_with(
    count: usize,
    length: usize,
    seed: u64,
    mut waypoint: impl FnMut(&mut ChaCha8Rng) -> Pose,
) -> Result<Vec<Trajectory>> {
    if count == 0 || length == 0 {
        return Err(Error::InvalidArgument("trajectory count and length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(3..=6);
            let points: Vec<Pose> = (0..n).map(|_| waypoint(&mut rng)).collect();
            if length == 1 {
                return Trajectory::new(
                    TRAJECTORY_DT,
                    vec![Frame { t: 0.0, pose: points[0], velocity: Some(Velocity::zeros()) }],
                );
            }
            min_jerk_trajectory(&points, length, TRAJECTORY_DT)
        })
        .collect()
}
