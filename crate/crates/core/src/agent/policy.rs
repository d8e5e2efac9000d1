use std::cell::RefCell;
use std::io::{Read, Write};

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::approx::checkpoint::{
    expect_magic, read_net, read_normalizer, read_u32, write_net, write_normalizer, write_u32,
};
use crate::approx::{argmax, DenseNet, Normalizer};
use crate::bias::{bias_report, BiasReport};
use crate::error::{contract, Error, Result};
use crate::mdp::{rollout_many, Action, EnvKind, EnvSpec, Goal, State, Trajectory};
use crate::scalar::Scalar;

const POLICY_MAGIC: &[u8; 8] = b"GCRLPOL1";

/// Which critic a metric reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticChoice {
    /// The trained critic `Q_θ1`.
    Live,
    /// Its target copy `Q_θ̄1`.
    Target,
}

/// Rows `[norm(s), norm(g)]`.
pub(crate) fn encode_inputs<F: Scalar>(
    state_norm: &Normalizer<F>,
    goal_norm: &Normalizer<F>,
    states: &[&[F]],
    goals: &[&[F]],
) -> Result<Array2<F>> {
    if states.len() != goals.len() {
        return Err(Error::Shape {
            expected: states.len(),
            got: goals.len(),
        });
    }
    let (ds, dg) = (state_norm.dim(), goal_norm.dim());
    let mut x = Array2::zeros((states.len(), ds + dg));
    for (r, (s, g)) in states.iter().zip(goals).enumerate() {
        let row = x.row_mut(r).into_slice().expect("standard layout");
        state_norm.normalize_into(s, &mut row[..ds])?;
        goal_norm.normalize_into(g, &mut row[ds..])?;
    }
    Ok(x)
}

/// Appends action encodings to actor-input rows.
pub(crate) fn critic_rows<F: Scalar>(inputs: ArrayView2<F>, actions: ArrayView2<F>) -> Array2<F> {
    concatenate(Axis(1), &[inputs, actions]).expect("same row count")
}

/// Deterministic actions from linear actor outputs: argmax for discrete
/// tasks (lowest index on ties), `tanh` for continuous ones.
pub(crate) fn greedy_actions<F: Scalar>(env: &EnvSpec<F>, outputs: &Array2<F>) -> Vec<Action<F>> {
    outputs
        .rows()
        .into_iter()
        .map(|row| {
            let v = row.to_vec();
            if env.is_discrete() {
                Action::Discrete(argmax(&v))
            } else {
                Action::Continuous(v.into_iter().map(|z| z.tanh()).collect())
            }
        })
        .collect()
}

pub(crate) fn encode_actions<F: Scalar>(env: &EnvSpec<F>, actions: &[&Action<F>]) -> Array2<F> {
    let width = env.action_dim();
    let mut a = Array2::zeros((actions.len(), width));
    for (r, act) in actions.iter().enumerate() {
        for (j, v) in act.encode(width).into_iter().enumerate() {
            a[[r, j]] = v;
        }
    }
    a
}

/// Frozen deterministic policy with its critics and normalizers: what
/// evaluation and the bias metrics need, and what checkpoints store.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot<F> {
    pub env: EnvSpec<F>,
    pub gamma: F,
    pub actor: DenseNet<F>,
    pub critic: DenseNet<F>,
    pub critic_target: DenseNet<F>,
    pub state_norm: Normalizer<F>,
    pub goal_norm: Normalizer<F>,
}

impl<F: Scalar> PolicySnapshot<F> {
    pub fn act_eval_batch(&self, states: &[&State<F>], goals: &[&Goal<F>]) -> Result<Vec<Action<F>>> {
        let s: Vec<&[F]> = states.iter().map(|s| s.0.as_slice()).collect();
        let g: Vec<&[F]> = goals.iter().map(|g| g.0.as_slice()).collect();
        let x = encode_inputs(&self.state_norm, &self.goal_norm, &s, &g)?;
        Ok(greedy_actions(&self.env, &self.actor.forward_batch(x.view())?))
    }

    pub fn act_eval(&self, s: &State<F>, g: &Goal<F>) -> Result<Action<F>> {
        Ok(self.act_eval_batch(&[s], &[g])?.remove(0))
    }

    pub fn q_batch(
        &self,
        which: CriticChoice,
        states: &[&State<F>],
        actions: &[&Action<F>],
        goals: &[&Goal<F>],
    ) -> Result<Vec<F>> {
        let s: Vec<&[F]> = states.iter().map(|s| s.0.as_slice()).collect();
        let g: Vec<&[F]> = goals.iter().map(|g| g.0.as_slice()).collect();
        let x = encode_inputs(&self.state_norm, &self.goal_norm, &s, &g)?;
        let a = encode_actions(&self.env, actions);
        let net = match which {
            CriticChoice::Live => &self.critic,
            CriticChoice::Target => &self.critic_target,
        };
        Ok(net
            .forward_batch(critic_rows(x.view(), a.view()).view())?
            .into_raw_vec_and_offset()
            .0)
    }

    pub fn q(&self, which: CriticChoice, s: &State<F>, a: &Action<F>, g: &Goal<F>) -> Result<F> {
        Ok(self.q_batch(which, &[s], &[a], &[g])?[0])
    }

    /// Runs the deterministic policy from every `(start, goal)` pair.
    pub fn evaluate(&self, starts: &[(State<F>, Goal<F>)]) -> Result<Vec<Trajectory<F>>> {
        rollout_many(
            &self.env,
            |s, g| Ok(self.act_eval_batch(s, g)?.into_iter().map(|a| (a, None)).collect()),
            starts,
        )
    }

    /// Success rate, TSB and ISB from the live critic; TD-error and advantage
    /// profiles from `profile`.
    pub fn report(&self, epoch: usize, trajs: &[Trajectory<F>], profile: CriticChoice) -> Result<BiasReport<F>> {
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let guard = |r: Result<F>| match r {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                F::nan()
            }
        };
        let report = bias_report(
            &self.env,
            epoch,
            trajs,
            |s, a, g| guard(self.q(CriticChoice::Live, s, a, g)),
            |s, a, g| guard(self.q(profile, s, a, g)),
            |s, g| match self.act_eval(s, g) {
                Ok(a) => a,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Action::Discrete(0)
                }
            },
            self.gamma,
        )?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    /// Binary checkpoint:
    ///
    /// ```text
    /// magic        8 bytes "GCRLPOL1"
    /// env kind     u8      0 grid, 1 point
    /// grid size    u32     0 for point
    /// horizon      u32
    /// tolerance    f64
    /// step scale   f64     0 for grid
    /// gamma        f64
    /// actor, critic, critic target   network records
    /// state, goal normalizers        normalizer records
    /// ```
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(POLICY_MAGIC)?;
        let (kind, size, step) = match self.env.kind {
            EnvKind::Grid { size } => (0u8, size as u32, 0.0),
            EnvKind::Point { step_scale } => (1u8, 0, step_scale.as_f64()),
        };
        w.write_all(&[kind])?;
        write_u32(w, size)?;
        write_u32(w, self.env.horizon as u32)?;
        for v in [self.env.tolerance.as_f64(), step, self.gamma.as_f64()] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_net(w, &self.actor)?;
        write_net(w, &self.critic)?;
        write_net(w, &self.critic_target)?;
        write_normalizer(w, &self.state_norm)?;
        write_normalizer(w, &self.goal_norm)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, POLICY_MAGIC)?;
        let mut kind = [0u8];
        r.read_exact(&mut kind)?;
        let size = read_u32(r)? as usize;
        let horizon = read_u32(r)? as usize;
        let mut f = [0f64; 3];
        for v in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let env_kind = match kind[0] {
            0 => EnvKind::Grid { size },
            1 => EnvKind::Point {
                step_scale: F::lit(f[1]),
            },
            k => {
                return Err(Error::Format {
                    path: String::new(),
                    msg: format!("unknown environment tag {k}"),
                })
            }
        };
        let env = EnvSpec {
            kind: env_kind,
            horizon,
            tolerance: F::lit(f[0]),
            seed: 0,
        };
        env.validate()?;
        let snap = PolicySnapshot {
            env,
            gamma: F::lit(f[2]),
            actor: read_net(r)?,
            critic: read_net(r)?,
            critic_target: read_net(r)?,
            state_norm: read_normalizer(r)?,
            goal_norm: read_normalizer(r)?,
        };
        snap.check()?;
        Ok(snap)
    }

    fn check(&self) -> Result<()> {
        let input = self.state_norm.dim() + self.goal_norm.dim();
        if self.actor.input_dim() != input || self.actor.output_dim() != self.env.action_dim() {
            return contract("actor shape does not match the environment");
        }
        for c in [&self.critic, &self.critic_target] {
            if c.input_dim() != input + self.env.action_dim() || c.output_dim() != 1 {
                return contract("critic shape does not match the environment");
            }
        }
        Ok(())
    }
}
