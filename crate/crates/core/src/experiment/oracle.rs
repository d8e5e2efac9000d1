//! Self-checks against exact references, run by `gcrl oracle-check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::{argmax, value_iteration, DenseNet, OutputActivation};
use crate::bias::{decompose_bias, isb, tsb};
use crate::error::Result;
use crate::losses::nstep_td_identity;
use crate::mdp::{grid_step, rollout, Action, EnvSpec, Goal, State, GRID_ACTIONS};
use crate::replay::SampledSegment;
use crate::targets::{compute_target, ActionValuesFn, TargetKind, TargetSpec};

/// Outcome of one check; `worst` is the largest observed error.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

fn check(name: &'static str, worst: f64, tolerance: f64, cases: usize) -> OracleCheck {
    OracleCheck {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
        cases,
    }
}

/// `-(1 - γ^d) / (1 - γ)` with `d` the Manhattan distance from the successor
/// cell to the goal.
pub fn closed_form_q(size: usize, s: (usize, usize), a: usize, g: (usize, usize), gamma: f64) -> f64 {
    let next = grid_step(&State::<f64>::cell(s.0, s.1), a, size).expect("valid cell and action");
    let d = (next[0] - g.0 as f64).abs() + (next[1] - g.1 as f64).abs();
    -(1.0 - gamma.powi(d as i32)) / (1.0 - gamma)
}

/// Random grid critic `Q(s, a, g)` and its greedy policy.
struct RandomCritic {
    net: DenseNet<f64>,
}

impl RandomCritic {
    fn new(rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(RandomCritic {
            net: DenseNet::new(&[4 + GRID_ACTIONS, 16, 16, 1], OutputActivation::Linear, rng)?,
        })
    }

    fn q(&self, s: &State<f64>, a: &Action<f64>, g: &Goal<f64>) -> f64 {
        let mut x = vec![s[0], s[1], g[0], g[1]];
        x.extend(a.encode(GRID_ACTIONS));
        self.net.forward(&x).expect("fixed input width")[0]
    }

    fn greedy(&self, s: &State<f64>, g: &Goal<f64>) -> Action<f64> {
        let q: Vec<f64> = (0..GRID_ACTIONS).map(|a| self.q(s, &Action::Discrete(a), g)).collect();
        Action::Discrete(argmax(&q))
    }
}

fn random_trajectory(env: &EnvSpec<f64>, rng: &mut ChaCha8Rng) -> Result<crate::mdp::Trajectory<f64>> {
    let (s, g) = env.sample_start_goal(rng);
    let mut r = rng.clone();
    let t = rollout(env, |_, _| env.random_action(&mut r), &g, &s)?;
    *rng = r;
    Ok(t)
}

/// Value iteration against the closed form on a 5x5 grid.
pub fn value_iteration_check() -> Result<OracleCheck> {
    let (size, gamma) = (5, 0.9);
    let env = EnvSpec::<f64>::grid(size);
    let vi = value_iteration(&env, gamma)?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &s in &env.cells() {
        for a in 0..GRID_ACTIONS {
            for &g in &env.cells() {
                worst = worst.max((vi.q.get(s, a, g) - closed_form_q(size, s, a, g, gamma)).abs());
                cases += 1;
            }
        }
    }
    Ok(check("value iteration = closed form", worst, 1e-12, cases))
}

/// With the optimal critic and its greedy policy both bias metrics vanish on
/// every start/goal pair.
pub fn optimal_bias_check() -> Result<OracleCheck> {
    let gamma = 0.9;
    let env = EnvSpec::<f64>::grid(5);
    let vi = value_iteration(&env, gamma)?;
    let q = |s: &State<f64>, a: &Action<f64>, g: &Goal<f64>| {
        vi.q.value_at(s, a.index().expect("discrete"), g).expect("grid cell")
    };
    let pi = |s: &State<f64>, g: &Goal<f64>| Action::Discrete(vi.q.greedy(s, g).expect("grid cell"));
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &(sx, sy) in &env.cells() {
        for &(gx, gy) in &env.cells() {
            let traj = rollout(&env, pi, &Goal::cell(gx, gy), &State::cell(sx, sy))?;
            let one = [traj];
            let t = tsb(&env, &one, q, pi)?;
            let i = isb(&env, &one, q, gamma, t)?;
            worst = worst
                .max(t.map_or(f64::INFINITY, f64::abs))
                .max(i.map_or(f64::INFINITY, f64::abs));
            cases += 1;
        }
    }
    Ok(check("optimal critic has zero TSB and ISB", worst, 1e-9, cases))
}

/// The n-step TD identity on random critics and random segments.
pub fn td_identity_check(draws: usize, seed: u64) -> Result<OracleCheck> {
    let env = EnvSpec::<f64>::grid(6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let q = RandomCritic::new(&mut rng)?;
        let q_bar = RandomCritic::new(&mut rng)?;
        let traj = random_trajectory(&env, &mut rng)?;
        let t = rng.random_range(0..traj.horizon());
        let n = rng.random_range(1..=10usize).min(traj.horizon() - t);
        let gamma = if rng.random_bool(0.5) { 0.9 } else { 0.98 };
        let goal = if rng.random_bool(0.5) {
            traj.achieved()[rng.random_range(t + 1..=traj.horizon())].clone()
        } else {
            traj.goal().clone()
        };
        let seg = SampledSegment::new(&env, &traj, t, n, goal)?;
        let id = nstep_td_identity(
            &seg,
            |s, a, g| q.q(s, a, g),
            |s, a, g| q_bar.q(s, a, g),
            |s, g| q_bar.greedy(s, g),
            gamma,
            n,
        )?;
        worst = worst.max((id.lhs - id.rhs()).abs());
    }
    Ok(check("n-step TD identity", worst, 1e-9, draws))
}

/// Shooting plus shifting reproduces the critic along on-policy rollouts.
pub fn telescoping_check(draws: usize, seed: u64) -> Result<OracleCheck> {
    let env = EnvSpec::<f64>::grid(6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..draws {
        let q_bar = RandomCritic::new(&mut rng)?;
        let (s, g) = env.sample_start_goal(&mut rng);
        let traj = rollout(&env, |s, g| q_bar.greedy(s, g), &g, &s)?;
        for t in 0..traj.horizon() {
            let d = decompose_bias(
                &env,
                &traj,
                t,
                |s, a, g| q_bar.q(s, a, g),
                |s, g| q_bar.greedy(s, g),
                0.95,
            )?;
            worst = worst.max(d.telescoping_residual.abs());
            cases += 1;
        }
    }
    Ok(check("telescoping decomposition", worst, 1e-9, cases))
}

/// With `n = 1` every estimator is the one-step target.
pub fn reduction_check(draws: usize, seed: u64) -> Result<OracleCheck> {
    let env = EnvSpec::<f64>::grid(6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let kinds = [
        TargetKind::Mher,
        TargetKind::MherLambda,
        TargetKind::Tmher,
        TargetKind::TmherLambda,
        TargetKind::Retrace,
    ];
    for _ in 0..draws {
        let q_bar = RandomCritic::new(&mut rng)?;
        let traj = random_trajectory(&env, &mut rng)?;
        let t = rng.random_range(0..traj.horizon());
        let seg = SampledSegment::new(&env, &traj, t, 1, traj.goal().clone())?;
        let values = |s: &State<f64>, g: &Goal<f64>| {
            let q: Vec<f64> = (0..GRID_ACTIONS).map(|a| q_bar.q(s, &Action::Discrete(a), g)).collect();
            let mut p = vec![0.0; GRID_ACTIONS];
            p[argmax(&q)] = 1.0;
            (q, p)
        };
        let gamma = 0.98;
        let her = compute_target(&TargetSpec::her(), &seg, &mut ActionValuesFn(values), gamma)?;
        for kind in kinds {
            let lambda = rng.random_range(0.0..=1.0);
            let spec = TargetSpec::new(kind, 1, lambda)?;
            let y = compute_target(&spec, &seg, &mut ActionValuesFn(values), gamma)?;
            worst = worst.max((y - her).abs());
        }
    }
    Ok(check(
        "n = 1 reduces every estimator to the HER target",
        worst,
        0.0,
        draws * kinds.len(),
    ))
}

/// All checks with fixed seeds.
pub fn run_all() -> Result<Vec<OracleCheck>> {
    Ok(vec![
        value_iteration_check()?,
        optimal_bias_check()?,
        td_identity_check(1000, 7)?,
        telescoping_check(200, 11)?,
        reduction_check(500, 13)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all().unwrap() {
            assert!(c.passed, "{c:?}");
            assert!(c.cases > 0);
        }
    }
}
