//! Clipped-surrogate policy optimization of the inverse-dynamics network.
//!
//! Every transition is a one-step episode, so there is no critic: the
//! advantage is the reward minus a running-mean baseline.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{perturb_pose, torque_reward, LogEntry, TrainConfig};
use crate::dynamics::{pd_torque, set_state, step_detailed, DynamicsParams, SimState};
use crate::error::{Error, Result};
use crate::kinematics::{finite_diff_velocity, KinematicTree, Trajectory};
use crate::musculature::Musculature;
use crate::neural::{idnet_input, sigmoid, Adam, IdNet, Mlp, OutputTransform, IDNET_INPUT, LOG_STD_MAX, LOG_STD_MIN};

/// Weight of the newest batch in the running reward baseline.
const BASELINE_RATE: f64 = 0.5;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug)]
pub struct IdNetTraining {
    pub net: IdNet,
    /// Batch mean reward per update.
    pub log: Vec<LogEntry>,
    pub transitions: usize,
}

struct Env {
    rng: ChaCha8Rng,
    trajectory: usize,
    frame: usize,
    sim: SimState,
}

struct Sample {
    input: [f64; IDNET_INPUT],
    z: Vec<f64>,
    log_prob: f64,
    reward: f64,
}

struct Policy<'a> {
    mean: &'a Mlp,
    log_std: &'a [f64],
}

fn log_prob(z: &[f64], mean: impl Iterator<Item = f64>, log_std: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((z, m), s)| {
            let u = (z - m) / s.exp();
            -0.5 * u * u - s - HALF_LN_2PI
        })
        .sum()
}

struct Context<'a> {
    tree: &'a KinematicTree,
    musculature: &'a Musculature,
    params: &'a DynamicsParams,
    trajectories: &'a [Trajectory],
    cfg: &'a TrainConfig,
}

impl Context<'_> {
    fn new_env(&self, index: usize) -> Result<Env> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1 + index as u64);
        let trajectory = rng.random_range(0..self.trajectories.len());
        let frame = rng.random_range(0..self.trajectories[trajectory].len() - 1);
        let sim = SimState::new(self.tree, self.musculature, self.trajectories[trajectory].pose(frame))?;
        Ok(Env { rng, trajectory, frame, sim })
    }

    /// Runs `steps` lockstep transitions on every env of one worker.
    fn collect(&self, envs: &mut [Env], steps: usize, policy: &Policy) -> Result<Vec<Vec<Sample>>> {
        let n = self.musculature.len();
        let mut out: Vec<Vec<Sample>> = envs.iter().map(|_| Vec::with_capacity(steps)).collect();
        let mut inputs = Array2::zeros((envs.len(), IDNET_INPUT));
        for _ in 0..steps {
            let mut targets = Vec::with_capacity(envs.len());
            for (e, env) in envs.iter_mut().enumerate() {
                let traj = &self.trajectories[env.trajectory];
                let (cur, next) = (&traj.frames()[env.frame], &traj.frames()[env.frame + 1]);
                let p = perturb_pose(self.tree, &cur.pose, self.cfg.noise_deg, &mut env.rng)?;
                let p_next = perturb_pose(self.tree, &next.pose, self.cfg.noise_deg, &mut env.rng)?;
                let (v, v_next) = (cur.velocity.unwrap_or_default(), next.velocity.unwrap_or_default());
                let x = idnet_input(&p, &v, &p_next, &v_next);
                inputs.row_mut(e).assign(&ndarray::ArrayView1::from(&x[..]));
                targets.push((p, v, p_next, v_next, x));
            }
            let means = policy.mean.forward_batch(inputs.view())?;
            for (e, (env, (p, v, p_next, v_next, x))) in envs.iter_mut().zip(targets).enumerate() {
                let mean = means.row(e);
                let z: Vec<f64> = mean
                    .iter()
                    .zip(policy.log_std)
                    .map(|(m, s)| m + s.exp() * env.rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let excitation: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
                let injected = set_state(&env.sim, self.tree, self.musculature, &p, &v)?;
                let stepped = step_detailed(&injected, self.tree, self.musculature, &excitation, self.params, None)?;
                let tau_pd = pd_torque(&p, &v, &p_next, &v_next, &self.cfg.pd_gains);
                let reward = torque_reward(&tau_pd, &stepped.muscle_torque, &self.cfg.reward);
                let log_prob = log_prob(&z, mean.iter().copied(), policy.log_std);
                out[e].push(Sample { input: x, z, log_prob, reward });
                env.sim = stepped.state;
                env.frame += 1;
                if env.frame + 1 >= self.trajectories[env.trajectory].len() {
                    env.trajectory = env.rng.random_range(0..self.trajectories.len());
                    env.frame = 0;
                }
            }
            debug_assert_eq!(means.ncols(), n);
        }
        Ok(out)
    }
}

/// Trains a fresh inverse-dynamics network for `musculature`.
///
/// Each update collects `idnet_batch` transitions (rounded up to a multiple
/// of the environment count) from `workers × envs_per_worker` simulators.
/// Every environment walks its own trajectory with its own random stream,
/// so results depend on the seed and the environment count only.
pub fn train_idnet(
    tree: &KinematicTree,
    musculature: &Musculature,
    params: &DynamicsParams,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<IdNetTraining> {
    cfg.validate()?;
    params.validate()?;
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no training trajectories".into()));
    }
    if musculature.is_empty() {
        return Err(Error::InvalidArgument("musculature has no muscles".into()));
    }
    let trajectories = trajectories
        .iter()
        .map(|t| {
            if t.len() < 2 {
                Err(Error::Trajectory(format!("training trajectories need 2 frames, got {}", t.len())))
            } else if t.has_velocities() {
                Ok(t.clone())
            } else {
                finite_diff_velocity(t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ctx = Context { tree, musculature, params, trajectories: &trajectories, cfg };

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = IdNet::new(musculature.len(), &mut rng);
    let mut mean_net = init.mlp.with_output_transform(OutputTransform::Identity);
    let mut log_std = vec![cfg.initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); musculature.len()];
    let mut adam = Adam::new(cfg.idnet_lr, mean_net.num_params() + log_std.len());

    let mut envs = (0..cfg.num_envs()).map(|i| ctx.new_env(i)).collect::<Result<Vec<_>>>()?;
    let steps = cfg.idnet_batch.div_ceil(envs.len());
    let mut baseline: Option<f64> = None;
    let mut log = Vec::with_capacity(cfg.idnet_updates);
    let mut transitions = 0;

    for update in 0..cfg.idnet_updates {
        let policy = Policy { mean: &mean_net, log_std: &log_std };
        let per_worker: Vec<Result<Vec<Vec<Sample>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = envs
                .chunks_mut(cfg.envs_per_worker)
                .map(|chunk| {
                    let (ctx, policy) = (&ctx, &policy);
                    s.spawn(move || ctx.collect(chunk, steps, policy))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut batch = Vec::with_capacity(steps * envs.len());
        for worker in per_worker {
            for env_samples in worker? {
                batch.extend(env_samples);
            }
        }
        transitions += batch.len();

        let mean_reward = batch.iter().map(|s| s.reward).sum::<f64>() / batch.len() as f64;
        let b = match baseline {
            None => mean_reward,
            Some(b) => (1.0 - BASELINE_RATE) * b + BASELINE_RATE * mean_reward,
        };
        baseline = Some(b);
        let mut adv: Vec<f64> = batch.iter().map(|s| s.reward - b).collect();
        let spread = (adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64
            - (adv.iter().sum::<f64>() / adv.len() as f64).powi(2))
        .max(0.0)
        .sqrt();
        for a in &mut adv {
            *a /= spread + 1e-8;
        }

        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..cfg.ppo_epochs {
            order.shuffle(&mut rng);
            let size = batch.len().div_ceil(cfg.ppo_minibatches);
            for mb in order.chunks(size) {
                ppo_minibatch(&mut mean_net, &mut log_std, &mut adam, &batch, &adv, mb, cfg)?;
            }
        }
        log.push(LogEntry { update, value: mean_reward, wall_time: start.elapsed().as_secs_f64() });
    }

    let net = IdNet::from_parts(mean_net.with_output_transform(OutputTransform::Sigmoid), log_std)?;
    Ok(IdNetTraining { net, log, transitions })
}

fn ppo_minibatch(
    mean_net: &mut Mlp,
    log_std: &mut [f64],
    adam: &mut Adam,
    batch: &[Sample],
    adv: &[f64],
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<()> {
    let m = indices.len();
    let k = log_std.len();
    let mut inputs = Array2::zeros((m, IDNET_INPUT));
    for (r, &i) in indices.iter().enumerate() {
        inputs.row_mut(r).assign(&ndarray::ArrayView1::from(&batch[i].input[..]));
    }
    let cache = mean_net.forward_cached(inputs.view())?;
    let means = cache.output();
    let mut d_mean = Array2::zeros((m, k));
    // The entropy of a diagonal Gaussian grows by one per unit of log-std.
    let mut d_log_std = vec![-cfg.entropy_coef; k];
    let mut loss = 0.0;
    let (lo, hi) = (1.0 - cfg.ppo_clip, 1.0 + cfg.ppo_clip);
    for (r, &i) in indices.iter().enumerate() {
        let s = &batch[i];
        let a = adv[i];
        let ratio = (log_prob(&s.z, means.row(r).iter().copied(), log_std) - s.log_prob).exp();
        let clipped = ratio.clamp(lo, hi);
        debug_assert!((lo..=hi).contains(&clipped));
        let unclipped_term = ratio * a;
        let clipped_term = clipped * a;
        loss -= unclipped_term.min(clipped_term) / m as f64;
        // Gradient flows only through the unclipped branch when it is the minimum.
        if unclipped_term <= clipped_term {
            let w = -unclipped_term / m as f64;
            for c in 0..k {
                let inv_var = (-2.0 * log_std[c]).exp();
                let diff = s.z[c] - means[[r, c]];
                d_mean[[r, c]] += w * diff * inv_var;
                d_log_std[c] += w * (diff * diff * inv_var - 1.0);
            }
        }
    }
    loss -= cfg.entropy_coef * log_std.iter().sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("policy loss is {loss}")));
    }
    let (grads, _) = mean_net.backward(&cache, d_mean.view())?;
    if !grads.is_finite() {
        return Err(Error::Diverged("non-finite policy gradient".into()));
    }
    let norm = grads.values().chain(d_log_std.iter()).map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > cfg.max_grad_norm { cfg.max_grad_norm / norm } else { 1.0 };
    let flat: Vec<f64> = grads.values().chain(d_log_std.iter()).map(|g| g * scale).collect();
    adam.step(mean_net.params_mut().chain(log_std.iter_mut()), flat.into_iter());
    for s in log_std.iter_mut() {
        *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_log_prob_by_hand() {
        // One dimension, mean 0, log-std 0: -z²/2 - ln√(2π).
        let lp = log_prob(&[1.0], [0.0].into_iter(), &[0.0]);
        assert!((lp - (-0.5 - HALF_LN_2PI)).abs() < 1e-15);
        // Two independent dimensions add.
        let lp2 = log_prob(&[1.0, 0.5], [0.0, 1.0].into_iter(), &[0.0, (2.0f64).ln()]);
        let expected = (-0.5 - HALF_LN_2PI) + (-0.5 * 0.0625 - (2.0f64).ln() - HALF_LN_2PI);
        assert!((lp2 - expected).abs() < 1e-14);
    }
}
