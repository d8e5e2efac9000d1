//! Off-policy bias measurement on evaluation trajectories.
//!
//! TSB and ISB are averaged over successful trajectories only; with no
//! success they are missing (`None`), never zero.

use crate::error::{contract, Result};
use crate::losses::td_error;
use crate::mdp::{Action, EnvSpec, Goal, State, Trajectory};
use crate::replay::SampledSegment;
use crate::scalar::Scalar;

/// Per-epoch bias metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport<F> {
    pub epoch: usize,
    pub success_rate: F,
    pub tsb: Option<F>,
    pub isb: Option<F>,
    pub successes: usize,
    /// Mean `δ(s_i, a_i, g)` over successful trajectories, per step `i < T`.
    pub delta_profile: Vec<F>,
    /// Mean `A(s_i, a_i, g)` over successful trajectories, per step `i < T`.
    pub advantage_profile: Vec<F>,
}

/// Fraction of trajectories whose final state satisfies the goal.
pub fn success_rate<F: Scalar>(env: &EnvSpec<F>, trajs: &[Trajectory<F>]) -> Result<F> {
    if trajs.is_empty() {
        return Ok(F::zero());
    }
    let mut hits = 0usize;
    for t in trajs {
        if t.is_success(env)? {
            hits += 1;
        }
    }
    Ok(F::from_usize_lossy(hits) / F::from_usize_lossy(trajs.len()))
}

fn require_success<F: Scalar>(env: &EnvSpec<F>, trajs: &[Trajectory<F>]) -> Result<()> {
    for t in trajs {
        if !t.is_success(env)? {
            return contract("bias metrics are defined on successful trajectories only");
        }
    }
    Ok(())
}

/// Terminal shifting bias: mean of `Q(s_T, π(s_T, g), g)`.
pub fn tsb<F, Q, P>(env: &EnvSpec<F>, successful: &[Trajectory<F>], mut q: Q, mut pi: P) -> Result<Option<F>>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    require_success(env, successful)?;
    if successful.is_empty() {
        return Ok(None);
    }
    let sum: F = successful
        .iter()
        .map(|t| {
            let s_t = t.states().last().expect("non-empty trajectory");
            let a = pi(s_t, t.goal());
            q(s_t, &a, t.goal())
        })
        .sum();
    Ok(Some(sum / F::from_usize_lossy(successful.len())))
}

/// Initial shooting bias:
/// `mean[Q(s_0, a_0, g) - Σ_{i<T} γ^i r(s_{i+1}, g)] - γ^T · tsb`.
pub fn isb<F, Q>(
    env: &EnvSpec<F>,
    successful: &[Trajectory<F>],
    mut q: Q,
    gamma: F,
    tsb: Option<F>,
) -> Result<Option<F>>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
{
    require_success(env, successful)?;
    let Some(tsb) = tsb else {
        return Ok(None);
    };
    if successful.is_empty() {
        return Ok(None);
    }
    let mut sum = F::zero();
    for t in successful {
        let q0 = q(&t.states()[0], &t.actions()[0], t.goal());
        sum += q0 - t.discounted_return(env, gamma)?;
    }
    let horizon = successful[0].horizon() as i32;
    Ok(Some(
        sum / F::from_usize_lossy(successful.len()) - gamma.powi(horizon) * tsb,
    ))
}

/// Shooting/shifting split of `Q̄(s_t, a_t, g)` along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasDecomposition<F> {
    /// `Σ_{i=t}^{T-1} γ^{i-t} (-δ̄(s_i, a_i, g))`: discounted TD errors,
    /// signed so that overestimation counts as positive bias.
    pub shooting: F,
    /// `Q̄(s_T, π(s_T, g), g)`.
    pub shifting: F,
    /// `shooting + γ^{T-t} · shifting`.
    pub total: F,
    /// `Q̄(s_t, a_t, g) - [Σ γ^{i-t}(r_{i+1} - δ̄_i) + γ^{T-t} Q̄(s_T, π(s_T))]`;
    /// zero up to rounding for any critic when the actions after step `t`
    /// are the policy's own.
    pub telescoping_residual: F,
}

/// Decomposes the critic's value at step `t` of `traj` into shooting and
/// shifting terms. `traj` must follow `pi` after step `t`; on a successful
/// trajectory `total` is then the bias of `Q̄(s_t, a_t, g)` against the
/// realized return.
pub fn decompose_bias<F, Q, P>(
    env: &EnvSpec<F>,
    traj: &Trajectory<F>,
    t: usize,
    mut q_bar: Q,
    mut pi: P,
    gamma: F,
) -> Result<BiasDecomposition<F>>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    let horizon = traj.horizon();
    if t >= horizon {
        return contract(format!("step {t} not below horizon {horizon}"));
    }
    let g = traj.goal();
    let states = traj.states();
    let actions = traj.actions();
    let rewards = traj.rewards(env, g)?;
    let mut v_pi = |q_bar: &mut Q, s: &State<F>| {
        let a = pi(s, g);
        q_bar(s, &a, g)
    };

    let mut shooting = F::zero();
    let mut rewards_part = F::zero();
    let mut disc = F::one();
    for i in t..horizon {
        let q_sa = q_bar(&states[i], &actions[i], g);
        let d = td_error(rewards[i], q_sa, v_pi(&mut q_bar, &states[i + 1]), gamma);
        shooting -= disc * d;
        rewards_part += disc * rewards[i];
        disc *= gamma;
    }
    let shifting = v_pi(&mut q_bar, &states[horizon]);
    let total = shooting + disc * shifting;
    let q_t = q_bar(&states[t], &actions[t], g);
    Ok(BiasDecomposition {
        shooting,
        shifting,
        total,
        telescoping_residual: q_t - (rewards_part + total),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasClass {
    Beneficial,
    Neutral,
    Detrimental,
}

/// Compares an off-policy n-step target with its on-policy counterpart.
pub fn classify<F: Scalar>(off_policy: F, on_policy: F) -> BiasClass {
    if off_policy > on_policy {
        BiasClass::Beneficial
    } else if off_policy < on_policy {
        BiasClass::Detrimental
    } else {
        BiasClass::Neutral
    }
}

/// Both n-step targets compared by [`beneficial_bias`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasComparison<F> {
    pub class: BiasClass,
    pub segment_target: F,
    pub on_policy_target: F,
}

/// Classifies the segment's n-step target against the target of the
/// on-policy path that takes `a_t` at `s_t` and then follows `π`. Both
/// bootstrap with `value(s, g)`; `n` is truncated to the segment length.
pub fn beneficial_bias<F, P, V>(
    env: &EnvSpec<F>,
    seg: &SampledSegment<'_, F>,
    mut pi: P,
    mut value: V,
    gamma: F,
    n: usize,
) -> Result<BiasComparison<F>>
where
    F: Scalar,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
    V: FnMut(&State<F>, &Goal<F>) -> F,
{
    if n == 0 {
        return contract("n must be at least 1");
    }
    let n = n.min(seg.len());
    let g = seg.goal();
    let mut seg_target = F::zero();
    let mut on_target = F::zero();
    let mut disc = F::one();
    let mut s = env.step(seg.state(0), seg.action(0))?;
    for i in 1..=n {
        seg_target += disc * seg.rewards()[i - 1];
        on_target += disc * env.reward(&env.achieved_goal(&s), g)?;
        disc *= gamma;
        if i < n {
            let a = pi(&s, g);
            s = env.step(&s, &a)?;
        }
    }
    seg_target += disc * value(seg.state(n), g);
    on_target += disc * value(&s, g);
    Ok(BiasComparison {
        class: classify(seg_target, on_target),
        segment_target: seg_target,
        on_policy_target: on_target,
    })
}

/// Success rate, TSB, ISB and per-step TD-error/advantage profiles of one
/// evaluation round. `q` feeds TSB/ISB; `q_profile` feeds the profiles.
pub fn bias_report<F, Q, QP, P>(
    env: &EnvSpec<F>,
    epoch: usize,
    trajs: &[Trajectory<F>],
    mut q: Q,
    mut q_profile: QP,
    mut pi: P,
    gamma: F,
) -> Result<BiasReport<F>>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    QP: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    let mut successful = Vec::new();
    for t in trajs {
        if t.is_success(env)? {
            successful.push(t.clone());
        }
    }
    let rate = success_rate(env, trajs)?;
    let tsb_v = tsb(env, &successful, &mut q, &mut pi)?;
    let isb_v = isb(env, &successful, &mut q, gamma, tsb_v)?;

    let horizon = env.horizon;
    let mut delta_profile = vec![F::zero(); horizon];
    let mut advantage_profile = vec![F::zero(); horizon];
    for t in &successful {
        let g = t.goal();
        let rewards = t.rewards(env, g)?;
        let mut v = Vec::with_capacity(horizon + 1);
        for s in t.states() {
            let a = pi(s, g);
            v.push(q_profile(s, &a, g));
        }
        for i in 0..horizon {
            let q_sa = q_profile(&t.states()[i], &t.actions()[i], g);
            delta_profile[i] += td_error(rewards[i], q_sa, v[i + 1], gamma);
            advantage_profile[i] += q_sa - v[i];
        }
    }
    if !successful.is_empty() {
        let k = F::from_usize_lossy(successful.len());
        delta_profile.iter_mut().for_each(|d| *d /= k);
        advantage_profile.iter_mut().for_each(|a| *a /= k);
    }
    Ok(BiasReport {
        epoch,
        success_rate: rate,
        tsb: tsb_v,
        isb: isb_v,
        successes: successful.len(),
        delta_profile,
        advantage_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, shortest_path_action};

    fn greedy() -> impl FnMut(&State<f64>, &Goal<f64>) -> Action<f64> {
        |s, g| Action::Discrete(shortest_path_action(s, g) as usize)
    }

    fn path(env: &EnvSpec<f64>, from: (usize, usize), to: (usize, usize)) -> Trajectory<f64> {
        rollout(env, greedy(), &Goal::cell(to.0, to.1), &State::cell(from.0, from.1)).unwrap()
    }

    #[test]
    fn success_counts() {
        let env = EnvSpec::grid(5);
        let ok = path(&env, (0, 0), (2, 1));
        let stuck = rollout(
            &env,
            |_: &State<f64>, _: &Goal<f64>| Action::Discrete(4),
            &Goal::cell(4, 4),
            &State::cell(0, 0),
        )
        .unwrap();
        assert_eq!(success_rate(&env, &[ok.clone(), ok.clone()]).unwrap(), 1.0);
        assert_eq!(success_rate(&env, std::slice::from_ref(&stuck)).unwrap(), 0.0);
        let mut mix = vec![stuck; 117];
        mix.extend(vec![ok; 3]);
        assert_eq!(success_rate(&env, &mix).unwrap(), 0.025);
    }

    #[test]
    fn tsb_constant_and_mean() {
        let env = EnvSpec::grid(5);
        let a = path(&env, (0, 0), (2, 1));
        let b = path(&env, (4, 4), (3, 1));
        let c = tsb(&env, &[a.clone(), b.clone()], |_, _, _| -0.7, greedy()).unwrap();
        assert_eq!(c, Some(-0.7));
        let by_goal = |_: &State<f64>, _: &Action<f64>, g: &Goal<f64>| if g[0] == 2.0 { -0.2 } else { 0.0 };
        assert!((tsb(&env, &[a, b], by_goal, greedy()).unwrap().unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(tsb(&env, &[], |_, _, _| 1.0, greedy()).unwrap(), None);
    }

    #[test]
    fn isb_hand_values() {
        let env = EnvSpec::grid(5);
        // Three moves, the last one earning 0: return -1 - 0.9 = -1.9.
        let t = path(&env, (0, 0), (3, 0));
        assert!((t.discounted_return(&env, 0.9).unwrap() + 1.9).abs() < 1e-15);
        let zero = isb(&env, std::slice::from_ref(&t), |_, _, _| 0.0, 0.9, Some(0.0))
            .unwrap()
            .unwrap();
        assert!((zero - 1.9).abs() < 1e-12);
        let over = isb(&env, std::slice::from_ref(&t), |_, _, _| -1.9 + 0.1, 0.9, Some(0.0))
            .unwrap()
            .unwrap();
        assert!((over - 0.1).abs() < 1e-12);
        assert_eq!(isb(&env, &[t], |_, _, _| 0.0, 0.9, None).unwrap(), None);
    }

    #[test]
    fn metrics_reject_failures() {
        let env = EnvSpec::grid(5);
        let stuck = rollout(
            &env,
            |_: &State<f64>, _: &Goal<f64>| Action::Discrete(4),
            &Goal::cell(4, 4),
            &State::cell(0, 0),
        )
        .unwrap();
        assert!(tsb(&env, &[stuck], |_, _, _| 0.0, greedy()).is_err());
    }

    #[test]
    fn constant_critic_telescopes() {
        let env = EnvSpec::grid(5);
        let t = path(&env, (0, 0), (3, 2));
        let d = decompose_bias(&env, &t, 0, |_, _, _| -2.5, greedy(), 0.9).unwrap();
        assert_eq!(d.shifting, -2.5);
        assert!(d.telescoping_residual.abs() < 1e-12);
    }

    #[test]
    fn classify_is_antisymmetric() {
        assert_eq!(classify(1.0, 0.0), BiasClass::Beneficial);
        assert_eq!(classify(0.0, 1.0), BiasClass::Detrimental);
        assert_eq!(classify(0.5, 0.5), BiasClass::Neutral);
    }
}
