//! TD3-style goal-conditioned trainer. All target variants share one loop
//! and differ only in their [`TargetSpec`](crate::targets::TargetSpec) and
//! critic [`LossMode`](crate::losses::LossMode).

mod config;
mod ensemble;
mod policy;

use std::collections::HashMap;

use ndarray::{s, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::approx::{gumbel_softmax_sample, softmax, Normalizer};
use crate::error::{contract, Result};
use crate::losses::{actor_loss, critic_loss, ActionHead};
use crate::mdp::{rollout_many, Action, EnvSpec, Goal, State, Trajectory};
use crate::replay::{relabel_goal, SampledSegment, TrajectoryBuffer};
use crate::scalar::Scalar;
use crate::targets::{bootstrap_offsets, compute_target, SegmentValues, TargetKind};

pub use config::AgentConfig;
pub use ensemble::{behavior_prob, CriticEnsemble};
pub use policy::{CriticChoice, PolicySnapshot};

use ensemble::min_columns;
use policy::{critic_rows, encode_actions, encode_inputs, greedy_actions};

/// Statistics of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats<F> {
    /// Mean of the two critics' losses.
    pub critic_loss: F,
    pub actor_loss: Option<F>,
    pub mean_target: F,
    /// Distinct `(state, goal)` rows evaluated for bootstrapping.
    pub bootstrap_rows: usize,
}

/// One sampled segment and its regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetRecord<F> {
    pub state: State<F>,
    pub action: Action<F>,
    pub next_state: State<F>,
    pub goal: Goal<F>,
    /// Rewards along the segment, `r_{t+1} ..`.
    pub rewards: Vec<F>,
    pub target: F,
}

/// Statistics of one collection-and-training cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleStats<F> {
    pub episodes: usize,
    pub batches: usize,
    pub actor_updates: usize,
    /// Mean critic loss over the cycle's batches; `None` during warm-up.
    pub critic_loss: Option<F>,
}

/// Trainer state: networks, normalizers, replay and random streams.
pub struct Agent<F: Scalar> {
    env: EnvSpec<F>,
    config: AgentConfig<F>,
    nets: CriticEnsemble<F>,
    state_norm: Normalizer<F>,
    goal_norm: Normalizer<F>,
    buffer: TrajectoryBuffer<F>,
    rng: ChaCha8Rng,
    goal_rng: ChaCha8Rng,
}

impl<F: Scalar> Agent<F> {
    /// Builds networks from `config.seed`. Start states and goals are drawn
    /// from the environment's own sampler stream.
    pub fn new(env: EnvSpec<F>, config: AgentConfig<F>) -> Result<Self> {
        env.validate()?;
        config.validate(&env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let input = env.state_dim() + env.goal_dim();
        let nets = CriticEnsemble::new(input, env.action_dim(), &config.hidden, config.lr, &mut rng)?;
        Ok(Agent {
            goal_rng: env.goal_rng(),
            state_norm: Normalizer::new(env.state_dim()),
            goal_norm: Normalizer::new(env.goal_dim()),
            buffer: TrajectoryBuffer::new(config.buffer_capacity),
            env,
            config,
            nets,
            rng,
        })
    }

    pub fn env(&self) -> &EnvSpec<F> {
        &self.env
    }

    pub fn config(&self) -> &AgentConfig<F> {
        &self.config
    }

    pub fn ensemble(&self) -> &CriticEnsemble<F> {
        &self.nets
    }

    pub fn ensemble_mut(&mut self) -> &mut CriticEnsemble<F> {
        &mut self.nets
    }

    pub fn buffer(&self) -> &TrajectoryBuffer<F> {
        &self.buffer
    }

    pub fn normalizers(&self) -> (&Normalizer<F>, &Normalizer<F>) {
        (&self.state_norm, &self.goal_norm)
    }

    fn inputs(&self, states: &[&State<F>], goals: &[&Goal<F>]) -> Result<Array2<F>> {
        let s: Vec<&[F]> = states.iter().map(|s| s.0.as_slice()).collect();
        let g: Vec<&[F]> = goals.iter().map(|g| g.0.as_slice()).collect();
        encode_inputs(&self.state_norm, &self.goal_norm, &s, &g)
    }

    /// Deterministic actions of the current actor.
    pub fn act_eval_batch(&self, states: &[&State<F>], goals: &[&Goal<F>]) -> Result<Vec<Action<F>>> {
        let x = self.inputs(states, goals)?;
        Ok(greedy_actions(&self.env, &self.nets.actor.forward_batch(x.view())?))
    }

    pub fn act_eval(&self, s: &State<F>, g: &Goal<F>) -> Result<Action<F>> {
        Ok(self.act_eval_batch(&[s], &[g])?.remove(0))
    }

    /// Exploratory actions. With probability ε a uniformly random action,
    /// otherwise a Gumbel-Softmax draw from the actor's logits (discrete) or
    /// the `tanh` action plus clipped Gaussian noise (continuous). Discrete
    /// actions carry their exact behavior probability.
    pub fn act_explore_batch(
        &mut self,
        states: &[&State<F>],
        goals: &[&Goal<F>],
    ) -> Result<Vec<(Action<F>, Option<F>)>> {
        let x = self.inputs(states, goals)?;
        let out = self.nets.actor.forward_batch(x.view())?;
        let eps = self.config.epsilon;
        let noise = Normal::new(0.0, self.config.noise_std.as_f64())
            .map_err(|e| crate::error::Error::Contract(e.to_string()))?;
        let mut chosen = Vec::with_capacity(states.len());
        for row in out.rows() {
            let logits = row.to_vec();
            let uniform = self.rng.random::<f64>() < eps.as_f64();
            if self.env.is_discrete() {
                let a = if uniform {
                    self.rng.random_range(0..logits.len())
                } else {
                    gumbel_softmax_sample(&logits, self.config.gumbel_temperature, &mut self.rng)?.index
                };
                chosen.push((Action::Discrete(a), Some(behavior_prob(&logits, a, eps)?)));
            } else {
                let a = if uniform {
                    self.env.random_action(&mut self.rng)
                } else {
                    Action::Continuous(
                        logits
                            .iter()
                            .map(|z| {
                                let v = z.tanh() + F::lit(noise.sample(&mut self.rng));
                                v.max(-F::one()).min(F::one())
                            })
                            .collect(),
                    )
                };
                chosen.push((a, None));
            }
        }
        Ok(chosen)
    }

    pub fn act_explore(&mut self, s: &State<F>, g: &Goal<F>) -> Result<(Action<F>, Option<F>)> {
        Ok(self.act_explore_batch(&[s], &[g])?.remove(0))
    }

    fn training_starts(&mut self, count: usize) -> Vec<(State<F>, Goal<F>)> {
        (0..count)
            .map(|_| self.env.sample_start_goal(&mut self.goal_rng))
            .collect()
    }

    /// Stores `warmup_episodes` uniformly random episodes and fits the
    /// normalizers to them.
    pub fn warmup(&mut self) -> Result<()> {
        let starts = self.training_starts(self.config.warmup_episodes);
        let env = self.env.clone();
        let discrete_mu = F::one() / F::from_usize_lossy(env.action_dim());
        let rng = &mut self.rng;
        let episodes = rollout_many(
            &env,
            |s, _| {
                Ok(s.iter()
                    .map(|_| {
                        let a = env.random_action(rng);
                        (a, env.is_discrete().then_some(discrete_mu))
                    })
                    .collect())
            },
            &starts,
        )?;
        self.absorb(episodes)?;
        Ok(())
    }

    /// Collects `count` exploratory episodes, stores them and updates the
    /// normalizers. Returns the new episodes.
    pub fn collect(&mut self, count: usize) -> Result<Vec<Trajectory<F>>> {
        let starts = self.training_starts(count);
        let env = self.env.clone();
        let episodes = rollout_many(&env, |s, g| self.act_explore_batch(s, g), &starts)?;
        self.absorb(episodes.clone())?;
        Ok(episodes)
    }

    fn absorb(&mut self, episodes: Vec<Trajectory<F>>) -> Result<()> {
        let mut goals = Vec::new();
        for traj in &episodes {
            for t in 0..traj.horizon() {
                goals.push(relabel_goal(t, traj, &self.config.hindsight, &mut self.rng)?);
            }
        }
        self.state_norm
            .update(episodes.iter().flat_map(|e| e.states().iter().map(|s| s.0.as_slice())))?;
        self.goal_norm.update(goals.iter().map(|g| g.0.as_slice()))?;
        for e in episodes {
            self.buffer.store(e)?;
        }
        Ok(())
    }

    /// One cycle: collect episodes, then `batches_per_cycle` optimization
    /// steps with an actor update on every `actor_delay`-th batch. No
    /// gradient step happens before the buffer holds `warmup_episodes`.
    pub fn train_cycle(&mut self) -> Result<CycleStats<F>> {
        let episodes = self.collect(self.config.episodes_per_cycle)?.len();
        if self.buffer.episodes() < self.config.warmup_episodes {
            return Ok(CycleStats {
                episodes,
                batches: 0,
                actor_updates: 0,
                critic_loss: None,
            });
        }
        let mut loss = F::zero();
        let mut actor_updates = 0;
        let batches = self.config.batches_per_cycle;
        for b in 0..batches {
            let update_actor = (b + 1) % self.config.actor_delay == 0;
            let stats = self.train_batch(update_actor)?;
            loss += stats.critic_loss;
            actor_updates += usize::from(stats.actor_loss.is_some());
        }
        Ok(CycleStats {
            episodes,
            batches,
            actor_updates,
            critic_loss: Some(loss / F::from_usize_lossy(batches)),
        })
    }

    /// One optimization step on a freshly sampled batch: targets from the
    /// target networks with clipped double-Q bootstrapping, both critics
    /// regressed onto them, optionally an actor step against critic 1, then a
    /// soft target update.
    pub fn train_batch(&mut self, update_actor: bool) -> Result<BatchStats<F>> {
        let segs = self.buffer.sample_segments(
            &self.env,
            self.config.batch_size,
            self.config.target.n,
            &self.config.hindsight,
            &mut self.rng,
        )?;
        let (targets, bootstrap_rows) = self.targets_for(&segs)?;
        let width = self.env.action_dim();

        // Critic inputs at (s_t, a_t, g).
        let s0: Vec<&[F]> = segs.iter().map(|s| s.state(0).0.as_slice()).collect();
        let g0: Vec<&[F]> = segs.iter().map(|s| s.goal().0.as_slice()).collect();
        let a0: Vec<&Action<F>> = segs.iter().map(|s| s.action(0)).collect();
        let x = encode_inputs(&self.state_norm, &self.goal_norm, &s0, &g0)?;
        let xa = critic_rows(x.view(), encode_actions(&self.env, &a0).view());
        let batch = segs.len();
        drop(segs);

        let CriticEnsemble {
            actor,
            critics,
            critic_opts,
            actor_opt,
            ..
        } = &mut self.nets;
        let mut critic_loss_sum = F::zero();
        for k in 0..2 {
            let trace = critics[k].forward_trace(xa.view())?;
            let q: Vec<F> = trace.output().iter().copied().collect();
            let (loss, dq) = critic_loss(&q, &targets, self.config.loss, self.config.quantile)?;
            let dq = Array2::from_shape_vec((batch, 1), dq).expect("one column");
            let (grads, _) = critics[k].backward(&trace, dq.view())?;
            critic_opts[k].step(&mut critics[k], &grads)?;
            critic_loss_sum += loss;
        }

        let mut actor_loss_value = None;
        if update_actor {
            let head = if self.env.is_discrete() {
                let temperature = self.config.gumbel_temperature;
                let noise = Array2::from_shape_fn((batch, width), |_| {
                    let u: f64 = self.rng.random_range(f64::MIN_POSITIVE..1.0);
                    F::lit(-(-u.ln()).ln())
                });
                ActionHead::GumbelStraightThrough { noise, temperature }
            } else {
                ActionHead::Tanh
            };
            let out = actor_loss(
                actor,
                &critics[0],
                x.view(),
                &head,
                self.config.action_penalty,
                self.config.penalty_on,
            )?;
            actor_opt.step(actor, &out.grads)?;
            actor_loss_value = Some(out.loss);
        }
        self.nets.soft_update(self.config.tau)?;

        let mean_target = targets.iter().copied().sum::<F>() / F::from_usize_lossy(batch);
        Ok(BatchStats {
            critic_loss: critic_loss_sum / F::lit(2.0),
            actor_loss: actor_loss_value,
            mean_target,
            bootstrap_rows,
        })
    }

    /// Targets for `segs` from the target networks, and the number of
    /// distinct bootstrap rows evaluated.
    fn targets_for(&self, segs: &[SampledSegment<'_, F>]) -> Result<(Vec<F>, usize)> {
        let spec = self.config.target;
        let gamma = self.config.gamma;
        // Distinct (state, goal) rows that some target reads.
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows_s: Vec<&[F]> = Vec::new();
        let mut rows_g: Vec<&[F]> = Vec::new();
        let mut wanted: Vec<Vec<(usize, usize)>> = Vec::with_capacity(segs.len());
        for seg in segs {
            let mut w = Vec::new();
            for i in bootstrap_offsets(&spec, seg) {
                let (st, g) = (seg.state(i), seg.goal());
                let key: Vec<u64> = st.iter().chain(g.iter()).map(|v| v.key_bits()).collect();
                let row = *index.entry(key).or_insert_with(|| {
                    rows_s.push(st.0.as_slice());
                    rows_g.push(g.0.as_slice());
                    rows_s.len() - 1
                });
                w.push((i, row));
            }
            wanted.push(w);
        }
        let x_boot = encode_inputs(&self.state_norm, &self.goal_norm, &rows_s, &rows_g)?;
        let target_out = self.nets.actor_target.forward_batch(x_boot.view())?;
        let width = self.env.action_dim();

        let mut values: Vec<SegmentValues<F>> = segs.iter().map(|s| SegmentValues::new(s.len())).collect();
        if spec.kind == TargetKind::Retrace {
            let r = rows_s.len();
            let mut x_all = Array2::zeros((r * width, x_boot.ncols() + width));
            for row in 0..r {
                for a in 0..width {
                    let k = row * width + a;
                    x_all.slice_mut(s![k, ..x_boot.ncols()]).assign(&x_boot.row(row));
                    x_all[[k, x_boot.ncols() + a]] = F::one();
                }
            }
            let q1 = self.nets.critic_targets[0].forward_batch(x_all.view())?;
            let q2 = self.nets.critic_targets[1].forward_batch(x_all.view())?;
            let q_min = min_columns(&q1, &q2);
            for (v, w) in values.iter_mut().zip(&wanted) {
                for &(i, row) in w {
                    let q = q_min[row * width..(row + 1) * width].to_vec();
                    let p = softmax(&target_out.row(row).to_vec());
                    v.action_values[i - 1] = Some((q, p));
                }
            }
        } else {
            let actions = greedy_actions(&self.env, &target_out);
            let refs: Vec<&Action<F>> = actions.iter().collect();
            let enc = encode_actions(&self.env, &refs);
            let boot = self.nets.cdq_bootstrap(critic_rows(x_boot.view(), enc.view()).view())?;
            for (v, w) in values.iter_mut().zip(&wanted) {
                for &(i, row) in w {
                    v.bootstrap[i - 1] = Some(boot[row]);
                }
            }
        }
        let mut targets = Vec::with_capacity(segs.len());
        for (seg, v) in segs.iter().zip(values.iter_mut()) {
            targets.push(compute_target(&spec, seg, v, gamma)?);
        }

        Ok((targets, rows_s.len()))
    }

    /// Samples a batch as [`Agent::train_batch`] would and returns its
    /// targets without any update.
    pub fn sample_targets(&mut self) -> Result<Vec<TargetRecord<F>>> {
        let segs = self.buffer.sample_segments(
            &self.env,
            self.config.batch_size,
            self.config.target.n,
            &self.config.hindsight,
            &mut self.rng,
        )?;
        let (targets, _) = self.targets_for(&segs)?;
        Ok(segs
            .iter()
            .zip(targets)
            .map(|(seg, target)| TargetRecord {
                state: seg.state(0).clone(),
                action: seg.action(0).clone(),
                next_state: seg.state(1).clone(),
                goal: seg.goal().clone(),
                rewards: seg.rewards().to_vec(),
                target,
            })
            .collect())
    }

    /// Frozen copy of the actor, critic 1 and its target, and the normalizers.
    pub fn snapshot(&self) -> PolicySnapshot<F> {
        PolicySnapshot {
            env: self.env.clone(),
            gamma: self.config.gamma,
            actor: self.nets.actor.clone(),
            critic: self.nets.critics[0].clone(),
            critic_target: self.nets.critic_targets[0].clone(),
            state_norm: self.state_norm.clone(),
            goal_norm: self.goal_norm.clone(),
        }
    }

    /// Largest absolute target/source parameter gap.
    pub fn target_gap(&self) -> F {
        self.nets.max_target_gap()
    }

    /// Minimum of the two target critics at `(s, π̄(s, g), g)`.
    pub fn cdq_bootstrap(&self, s: &State<F>, g: &Goal<F>) -> Result<F> {
        let x = self.inputs(&[s], &[g])?;
        let out = self.nets.actor_target.forward_batch(x.view())?;
        let actions = greedy_actions(&self.env, &out);
        let enc = encode_actions(&self.env, &[&actions[0]]);
        Ok(self.nets.cdq_bootstrap(critic_rows(x.view(), enc.view()).view())?[0])
    }

    /// Replaces the replay buffer, e.g. to train on a fixed dataset.
    pub fn replace_buffer(&mut self, buffer: TrajectoryBuffer<F>) -> Result<()> {
        if buffer.capacity() < self.env.horizon {
            return contract("replay capacity must hold at least one episode");
        }
        self.buffer = buffer;
        Ok(())
    }
}
