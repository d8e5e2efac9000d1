//! Episode-granular replay with "future" hindsight relabeling.
//!
//! Whole trajectories are stored untouched; goals are relabeled per sampled
//! segment at sampling time, and every reward inside a segment is recomputed
//! against that segment's single goal.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::mdp::{Action, EnvSpec, Goal, State, Trajectory};
use crate::scalar::Scalar;

/// Default capacity in transitions.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HindsightSpec {
    /// Probability of replacing the goal by a future achieved goal.
    pub relabel_prob: f64,
}

impl Default for HindsightSpec {
    fn default() -> Self {
        HindsightSpec { relabel_prob: 0.8 }
    }
}

impl HindsightSpec {
    pub fn new(relabel_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&relabel_prob) {
            return contract(format!("relabel probability {relabel_prob} outside [0, 1]"));
        }
        Ok(HindsightSpec { relabel_prob })
    }
}

/// Goal for a segment starting at `t`: the original goal with probability
/// `1 - p`, otherwise `phi(s_t')` with `t'` uniform in `t+1..=T`.
pub fn relabel_goal<F: Scalar, R: Rng + ?Sized>(
    t: usize,
    traj: &Trajectory<F>,
    spec: &HindsightSpec,
    rng: &mut R,
) -> Result<Goal<F>> {
    let horizon = traj.horizon();
    if t >= horizon {
        return contract(format!("start step {t} not below horizon {horizon}"));
    }
    if rng.random::<f64>() < spec.relabel_prob {
        let future = rng.random_range(t + 1..=horizon);
        Ok(traj.achieved()[future].clone())
    } else {
        Ok(traj.goal().clone())
    }
}

/// An `n_eff`-step slice `s_t .. s_{t+n_eff}` of a stored trajectory with its goal.
#[derive(Clone, Debug)]
pub struct SampledSegment<'a, F> {
    traj: &'a Trajectory<F>,
    start: usize,
    goal: Goal<F>,
    rewards: Vec<F>,
}

impl<'a, F: Scalar> SampledSegment<'a, F> {
    /// Segment from `start`, truncated at the horizon, rewards recomputed for `goal`.
    pub fn new(env: &EnvSpec<F>, traj: &'a Trajectory<F>, start: usize, n: usize, goal: Goal<F>) -> Result<Self> {
        if n == 0 {
            return contract("segment length must be at least 1");
        }
        if start >= traj.horizon() {
            return contract(format!("start step {start} not below horizon {}", traj.horizon()));
        }
        let len = n.min(traj.horizon() - start);
        let rewards = traj.achieved()[start + 1..=start + len]
            .iter()
            .map(|ag| env.reward(ag, &goal))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledSegment {
            traj,
            start,
            goal,
            rewards,
        })
    }

    pub fn trajectory(&self) -> &'a Trajectory<F> {
        self.traj
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Effective length after horizon truncation.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn goal(&self) -> &Goal<F> {
        &self.goal
    }

    /// `r_{t+1} .. r_{t+n_eff}` under the segment goal.
    pub fn rewards(&self) -> &[F] {
        &self.rewards
    }

    /// `s_{t+i}` for `0 <= i <= n_eff`.
    pub fn state(&self, i: usize) -> &'a State<F> {
        assert!(i <= self.len(), "offset {i} past segment end");
        &self.traj.states()[self.start + i]
    }

    /// `a_{t+i}`; valid for `i < T - t`, which may reach past the segment end.
    pub fn action(&self, i: usize) -> &'a Action<F> {
        &self.traj.actions()[self.start + i]
    }

    /// Logged behavior probability of `a_{t+i}`.
    pub fn behavior_prob(&self, i: usize) -> Option<F> {
        self.traj.behavior().map(|mu| mu[self.start + i])
    }

    /// Whether `a_{t+i}` exists in the underlying trajectory.
    pub fn has_action(&self, i: usize) -> bool {
        self.start + i < self.traj.horizon()
    }
}

/// FIFO store of whole episodes, bounded by a transition count.
#[derive(Clone, Debug)]
pub struct TrajectoryBuffer<F> {
    episodes: VecDeque<Trajectory<F>>,
    capacity: usize,
    transitions: usize,
}

impl<F: Scalar> TrajectoryBuffer<F> {
    pub fn new(capacity: usize) -> Self {
        TrajectoryBuffer {
            episodes: VecDeque::new(),
            capacity,
            transitions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory<F>> {
        self.episodes.iter()
    }

    /// Appends an episode, evicting the oldest episodes until the count fits.
    pub fn store(&mut self, traj: Trajectory<F>) -> Result<()> {
        let len = traj.horizon();
        if len == 0 || len > self.capacity {
            return contract(format!(
                "episode of {len} transitions does not fit capacity {}",
                self.capacity
            ));
        }
        if traj.states().len() != len + 1 || traj.achieved().len() != len + 1 {
            return contract("malformed trajectory");
        }
        while self.transitions + len > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty while over capacity");
            self.transitions -= old.horizon();
        }
        self.transitions += len;
        self.episodes.push_back(traj);
        Ok(())
    }

    /// Samples `batch` segments: uniform episode, uniform start in `0..T`,
    /// hindsight goal, length `min(n, T - t)`.
    pub fn sample_segments<R: Rng + ?Sized>(
        &self,
        env: &EnvSpec<F>,
        batch: usize,
        n: usize,
        spec: &HindsightSpec,
        rng: &mut R,
    ) -> Result<Vec<SampledSegment<'_, F>>> {
        if self.episodes.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        (0..batch)
            .map(|_| {
                let traj = &self.episodes[rng.random_range(0..self.episodes.len())];
                let t = rng.random_range(0..traj.horizon());
                let goal = relabel_goal(t, traj, spec, rng)?;
                SampledSegment::new(env, traj, t, n, goal)
            })
            .collect()
    }
}

/// Writes episodes as CSV, one row per time index `t = 0..=T`.
///
/// Header: `episode,t,s0..s{k},a0..a{m},mu,g0..g{j}`. Discrete actions use a
/// single `a0` column holding the index. The action and `mu` fields are empty
/// on the terminal row, and `mu` is empty when no behavior probabilities were
/// logged.
pub fn write_episodes_csv<F: Scalar, W: Write>(env: &EnvSpec<F>, episodes: &[Trajectory<F>], mut out: W) -> Result<()> {
    let act_cols = if env.is_discrete() { 1 } else { env.action_dim() };
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..env.state_dim()).map(|i| format!("s{i}")));
    header.extend((0..act_cols).map(|i| format!("a{i}")));
    header.push("mu".into());
    header.extend((0..env.goal_dim()).map(|i| format!("g{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (e, tr) in episodes.iter().enumerate() {
        for t in 0..=tr.horizon() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(tr.states()[t].iter().map(|v| format!("{}", v.as_f64())));
            match tr.actions().get(t) {
                Some(Action::Discrete(i)) => row.push(i.to_string()),
                Some(Action::Continuous(a)) => row.extend(a.iter().map(|v| format!("{}", v.as_f64()))),
                None => row.extend((0..act_cols).map(|_| String::new())),
            }
            row.push(match (tr.behavior(), t < tr.horizon()) {
                (Some(mu), true) => format!("{}", mu[t].as_f64()),
                _ => String::new(),
            });
            row.extend(tr.goal().iter().map(|v| format!("{}", v.as_f64())));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Reads the format produced by [`write_episodes_csv`].
pub fn read_episodes_csv<F: Scalar, R: BufRead>(env: &EnvSpec<F>, input: R) -> Result<Vec<Trajectory<F>>> {
    let bad = |msg: String| Error::Format {
        path: "<episodes>".into(),
        msg,
    };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    let sd = env.state_dim();
    let ad = if env.is_discrete() { 1 } else { env.action_dim() };
    let gd = env.goal_dim();
    if cols.len() != 2 + sd + ad + 1 + gd || cols[0] != "episode" || cols[1] != "t" {
        return Err(bad(format!("unexpected header {header:?}")));
    }

    struct Partial<F> {
        states: Vec<State<F>>,
        actions: Vec<Action<F>>,
        mu: Vec<Option<F>>,
        goal: Option<Goal<F>>,
    }
    let mut out = Vec::new();
    let mut cur: Option<(usize, Partial<F>)> = None;
    let num = |s: &str, lineno: usize| -> Result<F> {
        s.parse::<f64>()
            .map(F::lit)
            .map_err(|_| bad(format!("line {lineno}: bad number {s:?}")))
    };
    let finish = |p: Partial<F>, out: &mut Vec<Trajectory<F>>| -> Result<()> {
        let mu = if p.mu.iter().all(Option::is_some) {
            Some(p.mu.into_iter().flatten().collect())
        } else {
            None
        };
        let goal = p.goal.ok_or_else(|| bad("episode without rows".into()))?;
        out.push(Trajectory::new(env, p.states, p.actions, goal, mu)?);
        Ok(())
    };
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!("line {lineno}: expected {} fields", cols.len())));
        }
        let ep: usize = f[0].parse().map_err(|_| bad(format!("line {lineno}: bad episode")))?;
        if cur.as_ref().map(|(e, _)| *e != ep).unwrap_or(true) {
            if let Some((_, p)) = cur.take() {
                finish(p, &mut out)?;
            }
            cur = Some((
                ep,
                Partial {
                    states: Vec::new(),
                    actions: Vec::new(),
                    mu: Vec::new(),
                    goal: None,
                },
            ));
        }
        let p = &mut cur.as_mut().expect("current episode").1;
        let state = (0..sd).map(|i| num(f[2 + i], lineno)).collect::<Result<Vec<_>>>()?;
        p.states.push(State(state));
        let act = &f[2 + sd..2 + sd + ad];
        if !act[0].is_empty() {
            let a = if env.is_discrete() {
                Action::Discrete(act[0].parse().map_err(|_| bad(format!("line {lineno}: bad action")))?)
            } else {
                Action::Continuous(act.iter().map(|s| num(s, lineno)).collect::<Result<Vec<_>>>()?)
            };
            p.actions.push(a);
            let mu = f[2 + sd + ad];
            p.mu.push(if mu.is_empty() { None } else { Some(num(mu, lineno)?) });
        }
        let g0 = 2 + sd + ad + 1;
        let goal = (0..gd).map(|i| num(f[g0 + i], lineno)).collect::<Result<Vec<_>>>()?;
        p.goal = Some(Goal(goal));
    }
    if let Some((_, p)) = cur.take() {
        finish(p, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, rollout_logged, shortest_path_action};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_episode(env: &EnvSpec<f64>, rng: &mut ChaCha8Rng) -> Trajectory<f64> {
        let (s, g) = env.sample_start_goal(rng);
        let mut r2 = ChaCha8Rng::seed_from_u64(rng.random());
        rollout_logged(env, |_, _| (env.random_action(&mut r2), 0.2), &g, &s).unwrap()
    }

    #[test]
    fn store_counts_transitions() {
        let env = EnvSpec::<f64>::grid(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = TrajectoryBuffer::new(DEFAULT_CAPACITY);
        buf.store(random_episode(&env, &mut rng)).unwrap();
        assert_eq!(buf.transitions(), 30);
    }

    #[test]
    fn fifo_eviction() {
        let env = EnvSpec::<f64>::grid(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps: Vec<_> = (0..3).map(|_| random_episode(&env, &mut rng)).collect();
        let mut buf = TrajectoryBuffer::new(60);
        for e in &eps {
            buf.store(e.clone()).unwrap();
            assert!(buf.transitions() <= 60);
        }
        assert_eq!(buf.transitions(), 60);
        assert_eq!(buf.episodes(), 2);
        let kept: Vec<_> = buf.iter().cloned().collect();
        assert_eq!(kept, eps[1..].to_vec());
    }

    #[test]
    fn oversized_episode_rejected() {
        let env = EnvSpec::<f64>::grid(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buf = TrajectoryBuffer::new(10);
        assert!(buf.store(random_episode(&env, &mut rng)).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let env = EnvSpec::<f64>::grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut buf = TrajectoryBuffer::new(DEFAULT_CAPACITY);
        for _ in 0..5 {
            buf.store(random_episode(&env, &mut rng)).unwrap();
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            buf.sample_segments(&env, 32, 4, &HindsightSpec::default(), &mut r)
                .unwrap()
                .into_iter()
                .map(|s| (s.start(), s.len(), s.goal().clone(), s.rewards().to_vec()))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn empty_buffer_errors() {
        let env = EnvSpec::<f64>::grid(4);
        let buf = TrajectoryBuffer::<f64>::new(100);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let e = buf.sample_segments(&env, 4, 1, &HindsightSpec::default(), &mut r);
        assert!(matches!(e, Err(Error::EmptyBuffer)));
    }

    #[test]
    fn relabel_degenerate_probabilities() {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = random_episode(&env, &mut rng);
        let never = HindsightSpec::new(0.0).unwrap();
        let always = HindsightSpec::new(1.0).unwrap();
        for _ in 0..200 {
            assert_eq!(&relabel_goal(3, &tr, &never, &mut rng).unwrap(), tr.goal());
            let last = relabel_goal(tr.horizon() - 1, &tr, &always, &mut rng).unwrap();
            assert_eq!(&last, tr.achieved().last().unwrap());
        }
        assert!(relabel_goal(tr.horizon(), &tr, &always, &mut rng).is_err());
        assert!(HindsightSpec::new(1.5).is_err());
    }

    #[test]
    fn truncation_and_one_step() {
        let env = EnvSpec::<f64>::grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tr = random_episode(&env, &mut rng);
        let t_max = tr.horizon();
        let seg = SampledSegment::new(&env, &tr, t_max - 2, 10, tr.goal().clone()).unwrap();
        assert_eq!(seg.len(), 2);
        let mut buf = TrajectoryBuffer::new(DEFAULT_CAPACITY);
        buf.store(tr).unwrap();
        for seg in buf
            .sample_segments(&env, 100, 1, &HindsightSpec::default(), &mut rng)
            .unwrap()
        {
            assert_eq!(seg.len(), 1);
        }
    }

    #[test]
    fn relabeled_to_next_state_gives_zero_reward() {
        let env = EnvSpec::<f64>::grid(5);
        let tr = rollout(
            &env,
            |s, g| Action::Discrete(shortest_path_action(s, g) as usize),
            &Goal::cell(4, 4),
            &State::cell(0, 0),
        )
        .unwrap();
        let goal = tr.achieved()[4].clone();
        let seg = SampledSegment::new(&env, &tr, 3, 5, goal).unwrap();
        assert_eq!(seg.rewards()[0], 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let env = EnvSpec::<f64>::grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps: Vec<_> = (0..3).map(|_| random_episode(&env, &mut rng)).collect();
        let mut bytes = Vec::new();
        write_episodes_csv(&env, &eps, &mut bytes).unwrap();
        let back = read_episodes_csv(&env, bytes.as_slice()).unwrap();
        assert_eq!(back, eps);

        let env = EnvSpec::<f64>::point();
        let (s, g) = env.sample_start_goal(&mut rng);
        let tr = rollout(&env, |_, _| Action::Continuous(vec![0.25, -0.5]), &g, &s).unwrap();
        let mut bytes = Vec::new();
        write_episodes_csv(&env, std::slice::from_ref(&tr), &mut bytes).unwrap();
        let back = read_episodes_csv(&env, bytes.as_slice()).unwrap();
        assert_eq!(back, vec![tr]);
    }
}
