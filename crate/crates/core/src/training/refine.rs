//! Supervised fitting of the refinement network.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{perturb_pose, LogEntry, TrainConfig};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, Pose, Trajectory, POSE_DIM};
use crate::musculature::Musculature;
use crate::neural::{refinenet_input, Adam, IdNet, RefineNet, REFINENET_INPUT};
use crate::pipeline::{biopr_refine_many, PipelineParams};

/// Log every this many iterations (and the last one).
const LOG_EVERY: usize = 50;

/// Aligned `(predicted, reference, ground truth)` pose triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineDataset {
    pub pred: Vec<Pose>,
    pub reference: Vec<Pose>,
    pub truth: Vec<Pose>,
}

impl RefineDataset {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn extend(&mut self, other: RefineDataset) {
        self.pred.extend(other.pred);
        self.reference.extend(other.reference);
        self.truth.extend(other.truth);
    }
}

/// Corrupts every frame of each clean trajectory with `sigma_deg` noise,
/// runs the refinement loop with `refinenet`, and pairs every frame after
/// the first with its simulated reference and clean pose. Noise is drawn
/// before any refinement, so the result does not depend on `workers`.
#[allow(clippy::too_many_arguments)]
pub fn build_refine_dataset(
    tree: &KinematicTree,
    musculature: &Musculature,
    idnet: &IdNet,
    refinenet: &RefineNet,
    params: &PipelineParams,
    trajectories: &[Trajectory],
    sigma_deg: f64,
    workers: usize,
    rng: &mut impl Rng,
) -> Result<RefineDataset> {
    let mut preds = Vec::with_capacity(trajectories.len());
    for clean in trajectories {
        let noisy = clean
            .poses()
            .map(|p| perturb_pose(tree, p, sigma_deg, rng))
            .collect::<Result<Vec<_>>>()?;
        preds.push(clean.with_poses(&noisy)?);
    }
    let outputs = biopr_refine_many(&preds, tree, musculature, idnet, refinenet, params, workers)?;
    let mut data = RefineDataset::default();
    for ((clean, pred), out) in trajectories.iter().zip(&preds).zip(&outputs) {
        for i in 1..clean.len() {
            data.pred.push(*pred.pose(i));
            data.reference.push(*out.reference.pose(i));
            data.truth.push(*clean.pose(i));
        }
    }
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct RefineNetTraining {
    pub net: RefineNet,
    /// Mean training-batch loss, every few iterations.
    pub log: Vec<LogEntry>,
    /// Held-out mean of `‖p_gt − p_refined‖` before and after fitting.
    pub heldout_initial_loss: f64,
    pub heldout_final_loss: f64,
    pub train_samples: usize,
    pub heldout_samples: usize,
}

/// Mean pose-space error `‖p_gt − refine(p_pred, p_ref)‖` over a dataset.
pub fn refine_loss(tree: &KinematicTree, net: &RefineNet, data: &RefineDataset) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| net.refine(tree, &data.pred[i], &data.reference[i]).sub(&data.truth[i]).norm())
        .sum();
    total / data.len().max(1) as f64
}

/// Trains the refiner on corrupted copies of `trajectories`, holding out the
/// trailing `holdout_fraction` of them for evaluation.
pub fn train_refinenet(
    tree: &KinematicTree,
    musculature: &Musculature,
    idnet: &IdNet,
    params: &PipelineParams,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<RefineNetTraining> {
    cfg.validate()?;
    if trajectories.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 trajectories (one is held out)".into()));
    }
    if let Some(t) = trajectories.iter().find(|t| t.len() < 2) {
        return Err(Error::Trajectory(format!("trajectories need at least 2 frames, got {}", t.len())));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = RefineNet::new(&mut rng);

    let holdout = ((trajectories.len() as f64 * cfg.holdout_fraction).ceil() as usize).clamp(1, trajectories.len() - 1);
    let (fit, held) = trajectories.split_at(trajectories.len() - holdout);
    let mut train = RefineDataset::default();
    train.extend(build_refine_dataset(tree, musculature, idnet, &net, params, fit, cfg.corruption_deg, cfg.workers, &mut rng)?);
    let heldout = build_refine_dataset(tree, musculature, idnet, &net, params, held, cfg.corruption_deg, cfg.workers, &mut rng)?;
    let heldout_initial_loss = refine_loss(tree, &net, &heldout);

    let inputs: Vec<[f64; REFINENET_INPUT]> =
        (0..train.len()).map(|i| refinenet_input(&train.pred[i], &train.reference[i])).collect();
    let mut adam = Adam::new(cfg.refinenet_lr, net.mlp.num_params());
    let batch = cfg.refinenet_batch;
    let mut x = Array2::zeros((batch, REFINENET_INPUT));
    let mut log = Vec::new();

    for iter in 0..cfg.refinenet_iters {
        let picks: Vec<usize> = (0..batch).map(|_| rng.random_range(0..train.len())).collect();
        for (r, &i) in picks.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&inputs[i][..]));
        }
        let cache = net.mlp.forward_cached(x.view())?;
        let residual = cache.output();
        let mut upstream = Array2::zeros((batch, POSE_DIM));
        let mut loss = 0.0;
        for (r, &i) in picks.iter().enumerate() {
            // The wrist is passed through, so only components 3.. carry error.
            let pred = train.pred[i].to_flat();
            let truth = train.truth[i].to_flat();
            let err: Vec<f64> = (3..POSE_DIM).map(|c| pred[c] + residual[[r, c]] - truth[c]).collect();
            let norm = err.iter().map(|e| e * e).sum::<f64>().sqrt();
            loss += norm / batch as f64;
            if norm > 0.0 {
                for (c, e) in (3..POSE_DIM).zip(&err) {
                    upstream[[r, c]] = e / norm / batch as f64;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("refinement loss is {loss} at iteration {iter}")));
        }
        let (grads, _) = net.mlp.backward(&cache, upstream.view())?;
        let flat: Vec<f64> = grads.values().copied().collect();
        adam.step(net.mlp.params_mut(), flat.into_iter());
        if iter % LOG_EVERY == 0 || iter + 1 == cfg.refinenet_iters {
            log.push(LogEntry { update: iter, value: loss, wall_time: start.elapsed().as_secs_f64() });
        }
    }

    let heldout_final_loss = refine_loss(tree, &net, &heldout);
    Ok(RefineNetTraining {
        net,
        log,
        heldout_initial_loss,
        heldout_final_loss,
        train_samples: train.len(),
        heldout_samples: heldout.len(),
    })
}
