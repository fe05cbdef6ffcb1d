use mshand::dynamics::{pd_torque, rollout, set_state, step, DynamicsParams, PdGains, SimState};
use mshand::kinematics::{KinematicTree, Pose, Velocity};
use mshand::musculature::Musculature;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hand() -> (KinematicTree, Musculature) {
    let tree = KinematicTree::default_hand();
    let musc = Musculature::default_hand(&tree).unwrap();
    (tree, musc)
}

fn random_in_limits(tree: &KinematicTree, rng: &mut impl Rng, margin: f64) -> Pose {
    let mut p = Pose::zeros();
    for j in 1..16 {
        for a in 0..3 {
            let (lo, hi) = tree.limits(j, a);
            let w = (hi - lo) * margin;
            p.rotations[j][a] = if hi - lo > 2.0 * w { rng.random_range(lo + w..=hi - w) } else { 0.5 * (lo + hi) };
        }
    }
    p
}

#[test]
fn sustained_ring_flexor_flexes_ring_joints_monotonically() {
    let (tree, musc) = hand();
    let fdp4 = musc.index_of("FDP4").unwrap();
    let mut u = vec![0.0; musc.len()];
    u[fdp4] = 1.0;
    let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
    let traj = rollout(&s, &tree, &musc, &vec![u; 150], &DynamicsParams::default()).unwrap();
    // Normalized flexion rises monotonically until it saturates near its peak;
    // the proximal joint moves first.
    let mut onsets = Vec::new();
    for name in ["ring_mcp", "ring_pip", "ring_dip"] {
        let j = tree.joint_index(name).unwrap();
        let angles: Vec<f64> = traj.poses().map(|p| -p.rotations[j].z).collect();
        let peak = angles.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.5, "{name} barely moved: {peak}");
        let norm: Vec<f64> = angles.iter().map(|a| a / peak).collect();
        let saturation = norm.iter().position(|&x| x >= 0.99).unwrap();
        for w in norm[..=saturation].windows(2) {
            assert!(w[1] >= w[0], "{name} not monotone: {} -> {}", w[0], w[1]);
        }
        onsets.push(norm.iter().position(|&x| x >= 0.1).unwrap());
    }
    assert!(onsets[0] <= onsets[2], "{onsets:?}");
}

#[test]
fn pd_regulation_reaches_random_targets() {
    let tree = KinematicTree::default_hand();
    let musc = Musculature::empty();
    let params = DynamicsParams::default();
    let gains = PdGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let target = random_in_limits(&tree, &mut rng, 0.05);
        let mut s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let mut reached = None;
        for k in 1..=200 {
            let tau = pd_torque(&s.pose, &s.velocity, &target, &Velocity::zeros(), &gains);
            s = step(&s, &tree, &musc, &[], &params, Some(&tau)).unwrap();
            let err = (1..16)
                .flat_map(|j| (0..3).map(move |a| (j, a)))
                .map(|(j, a)| (s.pose.rotations[j][a] - target.rotations[j][a]).abs())
                .fold(0.0, f64::max);
            if err < 1e-3 {
                reached = Some(k);
                break;
            }
        }
        assert!(reached.is_some());
    }
}

#[test]
fn rollouts_are_deterministic() {
    let (tree, musc) = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq: Vec<Vec<f64>> = (0..40).map(|_| (0..musc.len()).map(|_| rng.random::<f64>()).collect()).collect();
    let s = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
    let a = rollout(&s, &tree, &musc, &seq, &DynamicsParams::default()).unwrap();
    let b = rollout(&s, &tree, &musc, &seq, &DynamicsParams::default()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn limits_hold_under_random_excitation(seed in any::<u64>()) {
        let (tree, musc) = hand();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SimState::new(&tree, &musc, &random_in_limits(&tree, &mut rng, 0.0)).unwrap();
        for _ in 0..30 {
            let u: Vec<f64> = (0..musc.len()).map(|_| rng.random::<f64>()).collect();
            s = step(&s, &tree, &musc, &u, &DynamicsParams::default(), None).unwrap();
            prop_assert!(tree.within_limits(&s.pose, 1e-9));
        }
    }

    #[test]
    fn damping_dissipates_when_muscles_are_off(seed in any::<u64>()) {
        // Muscles inactive and never stretched past optimal: only damping acts.
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let params = DynamicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_in_limits(&tree, &mut rng, 0.0);
        let mut v = Velocity::zeros();
        for j in 1..16 {
            for a in 0..3 {
                v.rates[j][a] = rng.random_range(-2.0..2.0);
            }
        }
        let s0 = SimState::new(&tree, &musc, &Pose::zeros()).unwrap();
        let mut s = set_state(&s0, &tree, &musc, &pose, &v).unwrap();
        let energy = |v: &Velocity| params.inertia * v.rates.iter().map(|r| r.norm_squared()).sum::<f64>();
        let mut prev = energy(&s.velocity);
        for _ in 0..20 {
            s = step(&s, &tree, &musc, &[], &params, None).unwrap();
            let e = energy(&s.velocity);
            prop_assert!(e <= prev + 1e-15);
            prev = e;
        }
    }

    #[test]
    fn zero_torque_at_rest_is_identity(seed in any::<u64>()) {
        let tree = KinematicTree::default_hand();
        let musc = Musculature::empty();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_in_limits(&tree, &mut rng, 0.0);
        let s = SimState::new(&tree, &musc, &pose).unwrap();
        let next = step(&s, &tree, &musc, &[], &DynamicsParams::default(), None).unwrap();
        prop_assert_eq!(next.pose, s.pose);
        prop_assert_eq!(next.velocity, s.velocity);
    }
}
