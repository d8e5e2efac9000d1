mod common;

use common::{random_grid_trajectory, rel_err, NetCritic};
use gcrl::bias::{beneficial_bias, decompose_bias, BiasClass};
use gcrl::losses::{huber, quantile_huber, quantile_huber_grad, QuantileSpec};
use gcrl::mdp::{rollout, shortest_path_action, Action, EnvSpec, Goal, State, Trajectory};
use gcrl::replay::SampledSegment;
use gcrl::targets::{
    compute_target, n_step_targets, truncated_targets, ActionValuesFn, SegmentValues, StateFn, TargetKind, TargetSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kind() -> impl Strategy<Value = TargetKind> {
    prop_oneof![
        Just(TargetKind::Mher),
        Just(TargetKind::MherLambda),
        Just(TargetKind::Tmher),
        Just(TargetKind::TmherLambda),
    ]
}

/// Segment plus random per-offset action values in `[lo, 0]` and a random
/// target policy.
fn random_values(rng: &mut ChaCha8Rng, len: usize, lo: f64) -> SegmentValues<f64> {
    let mut v = SegmentValues::new(len);
    for i in 0..len {
        let q: Vec<f64> = (0..5).map(|_| rng.random_range(lo..=0.0)).collect();
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = gcrl::approx::softmax(&logits);
        v.bootstrap[i] = Some(q.iter().zip(&p).map(|(q, p)| q * p).sum());
        v.action_values[i] = Some((q, p));
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// With rewards in {-1, 0} and bootstrap values in `[-1/(1-γ), 0]`, the
    /// n-step and λ estimators stay in the same range. Retrace does not:
    /// its corrections can overshoot when the values are inconsistent.
    #[test]
    fn targets_stay_in_value_range(seed in any::<u64>(), k in kind(), n in 1usize..11, lambda in 0.0f64..=1.0, gamma in 0.5f64..0.99) {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_grid_trajectory(&env, &mut rng);
        let t = rng.random_range(0..traj.horizon());
        let goal = traj.achieved()[rng.random_range(t + 1..=traj.horizon())].clone();
        let seg = SampledSegment::new(&env, &traj, t, n, goal).unwrap();
        let lo = -1.0 / (1.0 - gamma);
        let mut values = random_values(&mut rng, seg.len(), lo);
        let spec = TargetSpec::new(k, n, lambda).unwrap();
        let y = compute_target(&spec, &seg, &mut values, gamma).unwrap();
        prop_assert!(y <= 1e-12 && y >= lo - 1e-9, "{:?}: {}", k, y);
    }

    /// Truncation changes nothing when no reward inside the segment is zero.
    #[test]
    fn truncation_is_inert_without_goal(seed in any::<u64>(), n in 1usize..11, lambda in 0.0f64..=1.0) {
        let env = EnvSpec::<f64>::grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_grid_trajectory(&env, &mut rng);
        let t = rng.random_range(0..traj.horizon());
        // A goal off the visited cells.
        let visited: Vec<_> = traj.achieved().to_vec();
        let goal = env.cells().into_iter().map(|(x, y)| Goal::cell(x, y)).find(|g| !visited.contains(g));
        prop_assume!(goal.is_some());
        let seg = SampledSegment::new(&env, &traj, t, n, goal.unwrap()).unwrap();
        let mut values = random_values(&mut rng, seg.len(), -10.0);
        let a = n_step_targets(&seg, &mut values, 0.95, n).unwrap();
        let b = truncated_targets(&seg, &mut values, 0.95, n).unwrap();
        prop_assert_eq!(a, b);
        for (plain, trunc) in [(TargetKind::Mher, TargetKind::Tmher), (TargetKind::MherLambda, TargetKind::TmherLambda)] {
            let ya = compute_target(&TargetSpec::new(plain, n, lambda).unwrap(), &seg, &mut values, 0.95).unwrap();
            let yb = compute_target(&TargetSpec::new(trunc, n, lambda).unwrap(), &seg, &mut values, 0.95).unwrap();
            prop_assert_eq!(ya, yb);
        }
    }

    /// λ-averages lie between the smallest and largest component target.
    #[test]
    fn lambda_average_is_a_convex_combination(seed in any::<u64>(), n in 1usize..11, lambda in 0.0f64..=1.0) {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_grid_trajectory(&env, &mut rng);
        let t = rng.random_range(0..traj.horizon());
        let seg = SampledSegment::new(&env, &traj, t, n, traj.goal().clone()).unwrap();
        let mut values = random_values(&mut rng, seg.len(), -10.0);
        let ys = n_step_targets(&seg, &mut values, 0.9, n).unwrap();
        let y = compute_target(&TargetSpec::new(TargetKind::MherLambda, n, lambda).unwrap(), &seg, &mut values, 0.9).unwrap();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
    }

    /// With λ = 0 every trace is cut and Retrace reduces to the one-step
    /// expected target.
    #[test]
    fn retrace_lambda_zero_is_expected_sarsa(seed in any::<u64>(), n in 1usize..11) {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_grid_trajectory(&env, &mut rng);
        let t = rng.random_range(0..traj.horizon());
        let seg = SampledSegment::new(&env, &traj, t, n, traj.goal().clone()).unwrap();
        let mut values = random_values(&mut rng, seg.len(), -10.0);
        let (q, p) = values.action_values[0].clone().unwrap();
        let expected: f64 = q.iter().zip(&p).map(|(q, p)| q * p).sum();
        let want = seg.rewards()[0] + 0.9 * expected;
        let y = compute_target(&TargetSpec::new(TargetKind::Retrace, n, 0.0).unwrap(), &seg, &mut values, 0.9).unwrap();
        prop_assert_eq!(y, want);
    }

    #[test]
    fn quantile_loss_continuous_at_threshold(kappa in 0.1f64..20.0, rho in 0.01f64..0.99, sign in prop::bool::ANY) {
        let spec = QuantileSpec::new(rho, kappa).unwrap();
        let s = if sign { 1.0 } else { -1.0 };
        let at = quantile_huber(s * kappa, 0.0, spec);
        let eps = 1e-9 * kappa;
        let inside = quantile_huber(s * (kappa - eps), 0.0, spec);
        let outside = quantile_huber(s * (kappa + eps), 0.0, spec);
        prop_assert!((at - inside).abs() < 1e-6 * (1.0 + at));
        prop_assert!((at - outside).abs() < 1e-6 * (1.0 + at));
        prop_assert!((huber(kappa, kappa) - kappa * kappa).abs() < 1e-12 * kappa * kappa);
    }

    #[test]
    fn quantile_loss_swaps_with_rho(y in -30.0f64..30.0, q in -30.0f64..30.0, rho in 0.01f64..0.99, kappa in 0.1f64..20.0) {
        let a = quantile_huber(y, q, QuantileSpec::new(rho, kappa).unwrap());
        let b = quantile_huber(q, y, QuantileSpec::new(1.0 - rho, kappa).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn quantile_gradient_matches_finite_difference(y in -30.0f64..30.0, q in -30.0f64..30.0, rho in 0.01f64..0.99, kappa in 0.1f64..20.0) {
        let u = y - q;
        prop_assume!(u.abs() > 1e-3 && (u.abs() - kappa).abs() > 1e-3);
        let spec = QuantileSpec::new(rho, kappa).unwrap();
        let h = 1e-6;
        let fd = (quantile_huber(y, q + h, spec) - quantile_huber(y, q - h, spec)) / (2.0 * h);
        prop_assert!(rel_err(quantile_huber_grad(y, q, spec), fd) <= 1e-5);
    }

    /// On successful on-policy rollouts the decomposition total is the
    /// critic's excess over the realized discounted return.
    #[test]
    fn decomposition_total_matches_realized_bias(seed in any::<u64>()) {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let critic = NetCritic::random(&mut rng, 12);
        let pi = |s: &State<f64>, g: &Goal<f64>| Action::Discrete(shortest_path_action(s, g) as usize);
        let (s, g) = env.sample_start_goal(&mut rng);
        let traj = rollout(&env, pi, &g, &s).unwrap();
        prop_assert!(traj.is_success(&env).unwrap());
        let gamma = 0.93;
        let d = decompose_bias(&env, &traj, 0, |s, a, g| critic.q(s, a, g), pi, gamma).unwrap();
        let realized = traj.discounted_return(&env, gamma).unwrap();
        let q0 = critic.q(&traj.states()[0], &traj.actions()[0], &g);
        prop_assert!((d.total - (q0 - realized)).abs() <= 1e-9);
        prop_assert!(d.telescoping_residual.abs() <= 1e-9);
    }

    /// Swapping which path is the segment and which is the on-policy
    /// rollout swaps the two targets and flips the classification.
    #[test]
    fn beneficial_bias_is_antisymmetric(seed in any::<u64>(), n in 1usize..8) {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let critic = NetCritic::random(&mut rng, 8);
        let value = |s: &State<f64>, g: &Goal<f64>| critic.row(s, g).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let pi = |s: &State<f64>, g: &Goal<f64>| critic.greedy(s, g);
        let traj = random_grid_trajectory(&env, &mut rng);
        let g = traj.goal().clone();
        let seg = SampledSegment::new(&env, &traj, 0, n, g.clone()).unwrap();
        let first = beneficial_bias(&env, &seg, pi, value, 0.9, n).unwrap();

        // The on-policy path as a stored trajectory, padded to the horizon.
        let mut states = vec![traj.states()[0].clone()];
        let mut actions = vec![traj.actions()[0].clone()];
        states.push(env.step(&states[0], &actions[0]).unwrap());
        while actions.len() < env.horizon {
            let a = pi(states.last().unwrap(), &g);
            states.push(env.step(states.last().unwrap(), &a).unwrap());
            actions.push(a);
        }
        let other = Trajectory::new(&env, states, actions, g.clone(), None).unwrap();
        let seg2 = SampledSegment::new(&env, &other, 0, n, g).unwrap();
        let mut replay = traj.actions()[1..].iter().cloned();
        let second = beneficial_bias(&env, &seg2, |_, _| replay.next().unwrap(), value, 0.9, n).unwrap();

        prop_assert_eq!(first.segment_target, second.on_policy_target);
        prop_assert_eq!(first.on_policy_target, second.segment_target);
        let flipped = match first.class {
            BiasClass::Beneficial => BiasClass::Detrimental,
            BiasClass::Detrimental => BiasClass::Beneficial,
            BiasClass::Neutral => BiasClass::Neutral,
        };
        prop_assert_eq!(second.class, flipped);
    }
}

#[test]
fn bootstrap_oracles_agree() {
    let env = EnvSpec::<f64>::grid(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let critic = NetCritic::random(&mut rng, 8);
    let traj = random_grid_trajectory(&env, &mut rng);
    let seg = SampledSegment::new(&env, &traj, 3, 6, traj.goal().clone()).unwrap();
    let greedy_value = |s: &State<f64>, g: &Goal<f64>| critic.row(s, g).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let one_hot = |s: &State<f64>, g: &Goal<f64>| {
        let q = critic.row(s, g);
        let mut p = vec![0.0; 5];
        p[gcrl::approx::argmax(&q)] = 1.0;
        (q, p)
    };
    for kind in [
        TargetKind::Mher,
        TargetKind::MherLambda,
        TargetKind::Tmher,
        TargetKind::TmherLambda,
    ] {
        let spec = TargetSpec::new(kind, 6, 0.7).unwrap();
        let a = compute_target(&spec, &seg, &mut StateFn(greedy_value), 0.95).unwrap();
        let b = compute_target(&spec, &seg, &mut ActionValuesFn(one_hot), 0.95).unwrap();
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn beneficial_bias_examples() {
    let env = EnvSpec::<f64>::grid(6);
    let g = Goal::cell(4, 0);
    let value = |s: &State<f64>, g: &Goal<f64>| -((s[0] - g[0]).abs() + (s[1] - g[1]).abs());
    let toward = |s: &State<f64>, g: &Goal<f64>| Action::Discrete(shortest_path_action(s, g) as usize);
    let away = |s: &State<f64>, _: &Goal<f64>| Action::Discrete(if s[0] > 0.0 { 2 } else { 0 });
    let straight = rollout(&env, toward, &g, &State::cell(0, 0)).unwrap();
    let seg = SampledSegment::new(&env, &straight, 0, 3, g.clone()).unwrap();

    // The segment heads straight for the goal while π detours.
    let c = beneficial_bias(&env, &seg, away, value, 0.9, 3).unwrap();
    assert_eq!(c.class, BiasClass::Beneficial);
    // Identical paths.
    let c = beneficial_bias(&env, &seg, toward, value, 0.9, 3).unwrap();
    assert_eq!(c.class, BiasClass::Neutral);
    assert_eq!(c.segment_target, c.on_policy_target);
    // The segment walks away while π approaches.
    let wander = rollout(&env, away, &g, &State::cell(2, 0)).unwrap();
    let seg = SampledSegment::new(&env, &wander, 0, 3, g).unwrap();
    let c = beneficial_bias(&env, &seg, toward, value, 0.9, 3).unwrap();
    assert_eq!(c.class, BiasClass::Detrimental);
}
