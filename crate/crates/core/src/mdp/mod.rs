//! Goal-augmented MDP contract and the two deterministic environments.
//!
//! States and goals are small real vectors. The gridworld uses integer-valued
//! coordinates in `[0, N-1]` and five discrete actions; the point-reach task
//! lives in the unit box with continuous 2-D velocity actions. Episodes always
//! run for the full horizon `T`: reaching the goal does not terminate them.

mod grid;
mod point;

use std::ops::Deref;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::scalar::Scalar;

pub use grid::{grid_step, shortest_path_action, GridAction, GRID_ACTIONS};
pub use point::point_step;

/// Environment state.
#[derive(Clone, Debug, PartialEq)]
pub struct State<F>(pub Vec<F>);

/// Point in goal space (achieved or desired).
#[derive(Clone, Debug, PartialEq)]
pub struct Goal<F>(pub Vec<F>);

impl<F> Deref for State<F> {
    type Target = [F];
    fn deref(&self) -> &[F] {
        &self.0
    }
}

impl<F> Deref for Goal<F> {
    type Target = [F];
    fn deref(&self) -> &[F] {
        &self.0
    }
}

impl<F: Scalar> State<F> {
    pub fn cell(x: usize, y: usize) -> Self {
        State(vec![F::from_usize_lossy(x), F::from_usize_lossy(y)])
    }
}

impl<F: Scalar> Goal<F> {
    pub fn cell(x: usize, y: usize) -> Self {
        Goal(vec![F::from_usize_lossy(x), F::from_usize_lossy(y)])
    }
}

/// An action: a grid move index, or a continuous velocity in `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq)]
pub enum Action<F> {
    Discrete(usize),
    Continuous(Vec<F>),
}

impl<F: Scalar> Action<F> {
    /// Critic-side encoding: one-hot of width `width` for discrete actions,
    /// the raw components otherwise.
    pub fn encode(&self, width: usize) -> Vec<F> {
        match self {
            Action::Discrete(i) => {
                let mut v = vec![F::zero(); width];
                if *i < width {
                    v[*i] = F::one();
                }
                v
            }
            Action::Continuous(a) => a.clone(),
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

/// How the sparse reward decides that a goal is reached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GoalTest<F> {
    /// Coordinate-wise equality (gridworld).
    Exact,
    /// Euclidean distance strictly below the tolerance.
    Within(F),
}

/// Sparse goal reward: `0` when the goal is reached, `-1` otherwise.
pub fn sparse_reward<F: Scalar>(achieved: &[F], goal: &[F], test: GoalTest<F>) -> Result<F> {
    if achieved.len() != goal.len() {
        return contract(format!(
            "achieved goal has dimension {}, desired goal {}",
            achieved.len(),
            goal.len()
        ));
    }
    let hit = match test {
        GoalTest::Exact => achieved.iter().zip(goal).all(|(a, b)| a == b),
        GoalTest::Within(eps) => {
            let d2: F = achieved.iter().zip(goal).map(|(&a, &b)| (a - b) * (a - b)).sum();
            d2.sqrt() < eps
        }
    };
    Ok(if hit { F::zero() } else { -F::one() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvKind<F> {
    /// `size x size` gridworld with five discrete actions.
    Grid { size: usize },
    /// Unit-box reach task; each step moves by `step_scale * action`.
    Point { step_scale: F },
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec<F> {
    pub kind: EnvKind<F>,
    pub horizon: usize,
    /// Goal tolerance. Ignored by the gridworld, which tests exact equality.
    pub tolerance: F,
    /// Seed of the start/goal sampler.
    pub seed: u64,
}

impl<F: Scalar> EnvSpec<F> {
    /// `size x size` grid with horizon `3 * size`.
    pub fn grid(size: usize) -> Self {
        EnvSpec {
            kind: EnvKind::Grid { size },
            horizon: 3 * size,
            tolerance: F::zero(),
            seed: 0,
        }
    }

    /// Point-reach with tolerance 0.05, step scale 0.05 and horizon 50.
    pub fn point() -> Self {
        EnvSpec {
            kind: EnvKind::Point {
                step_scale: F::lit(0.05),
            },
            horizon: 50,
            tolerance: F::lit(0.05),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return contract("horizon must be at least 1");
        }
        if self.tolerance < F::zero() {
            return contract("goal tolerance must be non-negative");
        }
        if let EnvKind::Grid { size } = self.kind {
            if size < 2 {
                return contract("grid size must be at least 2");
            }
            if self.horizon != 3 * size {
                return contract(format!(
                    "grid horizon must be 3 * size = {}, got {}",
                    3 * size,
                    self.horizon
                ));
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, EnvKind::Grid { .. })
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn goal_dim(&self) -> usize {
        2
    }

    /// Width of the action encoding fed to critics.
    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Grid { .. } => GRID_ACTIONS,
            EnvKind::Point { .. } => 2,
        }
    }

    pub fn goal_test(&self) -> GoalTest<F> {
        match self.kind {
            EnvKind::Grid { .. } => GoalTest::Exact,
            EnvKind::Point { .. } => GoalTest::Within(self.tolerance),
        }
    }

    /// Generator for start states and desired goals, independent of any agent randomness.
    pub fn goal_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0x9E37_79B9);
        rng
    }

    pub fn step(&self, state: &State<F>, action: &Action<F>) -> Result<State<F>> {
        match (self.kind, action) {
            (EnvKind::Grid { size }, Action::Discrete(a)) => grid_step(state, *a, size),
            (EnvKind::Point { step_scale }, Action::Continuous(a)) => Ok(point_step(state, a, step_scale)),
            _ => contract("action kind does not match environment"),
        }
    }

    /// Achieved-goal projection; both tasks observe the goal coordinates directly.
    pub fn achieved_goal(&self, state: &State<F>) -> Goal<F> {
        Goal(state.0.clone())
    }

    pub fn reward(&self, achieved: &[F], goal: &[F]) -> Result<F> {
        sparse_reward(achieved, goal, self.goal_test())
    }

    /// Uniform start and goal with the start not already satisfying the goal.
    pub fn sample_start_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> (State<F>, Goal<F>) {
        loop {
            let (s, g) = match self.kind {
                EnvKind::Grid { size } => (
                    State::cell(rng.random_range(0..size), rng.random_range(0..size)),
                    Goal::cell(rng.random_range(0..size), rng.random_range(0..size)),
                ),
                EnvKind::Point { .. } => {
                    let mut u = || F::lit(rng.random::<f64>());
                    (State(vec![u(), u()]), Goal(vec![u(), u()]))
                }
            };
            if self.reward(&s, &g).map(|r| r < F::zero()).unwrap_or(false) {
                return (s, g);
            }
        }
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Action<F> {
        match self.kind {
            EnvKind::Grid { .. } => Action::Discrete(rng.random_range(0..GRID_ACTIONS)),
            EnvKind::Point { .. } => Action::Continuous((0..2).map(|_| F::lit(rng.random_range(-1.0..=1.0))).collect()),
        }
    }

    /// Every cell of the grid, row-major in `y` then `x`.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        match self.kind {
            EnvKind::Grid { size } => (0..size).flat_map(|y| (0..size).map(move |x| (x, y))).collect(),
            EnvKind::Point { .. } => Vec::new(),
        }
    }
}

/// One episode: `T + 1` states, `T` actions and the desired goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<F> {
    states: Vec<State<F>>,
    actions: Vec<Action<F>>,
    achieved: Vec<Goal<F>>,
    goal: Goal<F>,
    /// Behavior-policy probability of each logged discrete action.
    behavior: Option<Vec<F>>,
}

impl<F: Scalar> Trajectory<F> {
    /// Validates shapes and computes achieved goals.
    pub fn new(
        env: &EnvSpec<F>,
        states: Vec<State<F>>,
        actions: Vec<Action<F>>,
        goal: Goal<F>,
        behavior: Option<Vec<F>>,
    ) -> Result<Self> {
        if actions.is_empty() || states.len() != actions.len() + 1 {
            return contract(format!(
                "trajectory needs T >= 1 actions and T + 1 states, got {} actions and {} states",
                actions.len(),
                states.len()
            ));
        }
        if let Some(mu) = &behavior {
            if mu.len() != actions.len() {
                return contract("behavior probabilities must match the action count");
            }
        }
        if goal.len() != env.goal_dim() {
            return contract("desired goal has wrong dimension");
        }
        for s in &states {
            if s.len() != env.state_dim() {
                return contract("state has wrong dimension");
            }
        }
        let achieved = states.iter().map(|s| env.achieved_goal(s)).collect();
        Ok(Trajectory {
            states,
            actions,
            achieved,
            goal,
            behavior,
        })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[State<F>] {
        &self.states
    }

    pub fn actions(&self) -> &[Action<F>] {
        &self.actions
    }

    pub fn achieved(&self) -> &[Goal<F>] {
        &self.achieved
    }

    pub fn goal(&self) -> &Goal<F> {
        &self.goal
    }

    pub fn behavior(&self) -> Option<&[F]> {
        self.behavior.as_deref()
    }

    /// Rewards `r(s_1, g) .. r(s_T, g)` for an arbitrary goal.
    pub fn rewards(&self, env: &EnvSpec<F>, goal: &[F]) -> Result<Vec<F>> {
        self.achieved[1..].iter().map(|ag| env.reward(ag, goal)).collect()
    }

    /// `sum_{i<T} gamma^i r(s_{i+1}, g)` under the trajectory's own goal.
    pub fn discounted_return(&self, env: &EnvSpec<F>, gamma: F) -> Result<F> {
        let mut ret = F::zero();
        let mut disc = F::one();
        for r in self.rewards(env, &self.goal)? {
            ret += disc * r;
            disc *= gamma;
        }
        Ok(ret)
    }

    /// Success means the final state satisfies the goal.
    pub fn is_success(&self, env: &EnvSpec<F>) -> Result<bool> {
        let last = self.achieved.last().expect("non-empty trajectory");
        Ok(env.reward(last, &self.goal)? == F::zero())
    }
}

/// Runs `policy` for exactly `env.horizon` steps from `start`.
pub fn rollout<F, P>(env: &EnvSpec<F>, mut policy: P, goal: &Goal<F>, start: &State<F>) -> Result<Trajectory<F>>
where
    F: Scalar,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    rollout_inner(env, |s, g| (policy(s, g), None), goal, start)
}

/// Like [`rollout`], but the policy also reports the probability with which
/// it chose each action; those probabilities are stored on the trajectory.
pub fn rollout_logged<F, P>(env: &EnvSpec<F>, mut policy: P, goal: &Goal<F>, start: &State<F>) -> Result<Trajectory<F>>
where
    F: Scalar,
    P: FnMut(&State<F>, &Goal<F>) -> (Action<F>, F),
{
    rollout_inner(
        env,
        |s, g| {
            let (a, p) = policy(s, g);
            (a, Some(p))
        },
        goal,
        start,
    )
}

fn rollout_inner<F, P>(env: &EnvSpec<F>, mut policy: P, goal: &Goal<F>, start: &State<F>) -> Result<Trajectory<F>>
where
    F: Scalar,
    P: FnMut(&State<F>, &Goal<F>) -> (Action<F>, Option<F>),
{
    let t_max = env.horizon;
    let mut states = Vec::with_capacity(t_max + 1);
    let mut actions = Vec::with_capacity(t_max);
    let mut probs = Vec::with_capacity(t_max);
    let mut logged = true;
    states.push(start.clone());
    for t in 0..t_max {
        let (a, p) = policy(&states[t], goal);
        let next = env.step(&states[t], &a)?;
        match p {
            Some(p) => probs.push(p),
            None => logged = false,
        }
        actions.push(a);
        states.push(next);
    }
    Trajectory::new(env, states, actions, goal.clone(), logged.then_some(probs))
}

/// Runs one episode per `(start, goal)` pair in lockstep, so the policy sees
/// every live episode's current state in a single call. The policy returns
/// one action per episode, with an optional behavior probability.
pub fn rollout_many<F, P>(env: &EnvSpec<F>, mut policy: P, starts: &[(State<F>, Goal<F>)]) -> Result<Vec<Trajectory<F>>>
where
    F: Scalar,
    P: FnMut(&[&State<F>], &[&Goal<F>]) -> Result<Vec<(Action<F>, Option<F>)>>,
{
    let k = starts.len();
    let mut states: Vec<Vec<State<F>>> = starts.iter().map(|(s, _)| vec![s.clone()]).collect();
    let mut actions: Vec<Vec<Action<F>>> = vec![Vec::with_capacity(env.horizon); k];
    let mut probs: Vec<Vec<F>> = vec![Vec::with_capacity(env.horizon); k];
    let mut logged = vec![true; k];
    let goals: Vec<&Goal<F>> = starts.iter().map(|(_, g)| g).collect();
    for _ in 0..env.horizon {
        let current: Vec<&State<F>> = states.iter().map(|s| s.last().expect("start state")).collect();
        let chosen = policy(&current, &goals)?;
        if chosen.len() != k {
            return Err(crate::error::Error::Shape {
                expected: k,
                got: chosen.len(),
            });
        }
        for (i, (a, p)) in chosen.into_iter().enumerate() {
            let next = env.step(states[i].last().expect("start state"), &a)?;
            match p {
                Some(p) => probs[i].push(p),
                None => logged[i] = false,
            }
            actions[i].push(a);
            states[i].push(next);
        }
    }
    states
        .into_iter()
        .zip(actions)
        .zip(probs)
        .zip(logged)
        .zip(starts)
        .map(|((((s, a), p), l), (_, g))| Trajectory::new(env, s, a, g.clone(), l.then_some(p)))
        .collect()
}
