//! Critic and actor losses, TD-error primitives and the n-step TD identity.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::approx::{softmax, softmax_backward, DenseNet, Grads};
use crate::error::{contract, Error, Result};
use crate::mdp::{Action, EnvSpec, Goal, State};
use crate::replay::SampledSegment;
use crate::scalar::Scalar;
use crate::targets::{n_step_target, StateFn};

/// Quantile level and Huber threshold of the quantile-regression loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantileSpec<F> {
    pub rho: F,
    pub kappa: F,
}

impl<F: Scalar> Default for QuantileSpec<F> {
    fn default() -> Self {
        QuantileSpec {
            rho: F::lit(0.75),
            kappa: F::lit(10.0),
        }
    }
}

impl<F: Scalar> QuantileSpec<F> {
    pub fn new(rho: F, kappa: F) -> Result<Self> {
        if !(rho > F::zero() && rho < F::one()) {
            return contract(format!("quantile level must lie in (0, 1), got {rho}"));
        }
        if !(kappa > F::zero()) {
            return contract(format!("Huber threshold must be positive, got {kappa}"));
        }
        Ok(QuantileSpec { rho, kappa })
    }
}

/// `u^2` inside `[-κ, κ]`, `κ(2|u| - κ)` outside.
pub fn huber<F: Scalar>(u: F, kappa: F) -> F {
    let a = u.abs();
    if a <= kappa {
        u * u
    } else {
        kappa * (a + a - kappa)
    }
}

/// `d huber(u) / du`.
pub fn huber_grad<F: Scalar>(u: F, kappa: F) -> F {
    if u.abs() <= kappa {
        u + u
    } else {
        (kappa + kappa) * u.signum()
    }
}

fn quantile_weight<F: Scalar>(y: F, q: F, rho: F) -> F {
    if y < q {
        F::one() - rho
    } else {
        rho
    }
}

/// `|ρ - 1(y < Q)| · huber(y - Q, κ)`.
pub fn quantile_huber<F: Scalar>(y: F, q: F, spec: QuantileSpec<F>) -> F {
    quantile_weight(y, q, spec.rho) * huber(y - q, spec.kappa)
}

/// Derivative of [`quantile_huber`] with respect to `Q`.
pub fn quantile_huber_grad<F: Scalar>(y: F, q: F, spec: QuantileSpec<F>) -> F {
    -quantile_weight(y, q, spec.rho) * huber_grad(y - q, spec.kappa)
}

/// Regression criterion of a critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    HuberMean,
    Quantile,
}

/// Batch-mean critic loss and its adjoint with respect to each `Q`.
pub fn critic_loss<F: Scalar>(q: &[F], y: &[F], mode: LossMode, spec: QuantileSpec<F>) -> Result<(F, Vec<F>)> {
    if q.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if q.len() != y.len() {
        return Err(Error::Shape {
            expected: q.len(),
            got: y.len(),
        });
    }
    let inv = F::one() / F::from_usize_lossy(q.len());
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(q.len());
    for (&q, &y) in q.iter().zip(y) {
        let (l, g) = match mode {
            LossMode::HuberMean => (huber(y - q, spec.kappa), -huber_grad(y - q, spec.kappa)),
            LossMode::Quantile => (quantile_huber(y, q, spec), quantile_huber_grad(y, q, spec)),
        };
        loss += l;
        grad.push(g * inv);
    }
    Ok((loss * inv, grad))
}

/// `γ · next + r - q`.
pub fn td_error<F: Scalar>(reward: F, q: F, next_value: F, gamma: F) -> F {
    gamma * next_value + reward - q
}

/// TD error of `(s, a)` under `goal`, stepping the environment:
/// `γ Q̄(s', π̄(s', g), g) + r(s', g) - Q(s, a, g)`.
pub fn td_error_at<F, Q, QB, P>(
    env: &EnvSpec<F>,
    s: &State<F>,
    a: &Action<F>,
    g: &Goal<F>,
    mut q: Q,
    mut q_bar: QB,
    mut pi_bar: P,
    gamma: F,
) -> Result<F>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    QB: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    let next = env.step(s, a)?;
    let r = env.reward(&env.achieved_goal(&next), g)?;
    let a_next = pi_bar(&next, g);
    Ok(td_error(r, q(s, a, g), q_bar(&next, &a_next, g), gamma))
}

/// `Q̄(s, a, g) - Q̄(s, π(s, g), g)`.
pub fn advantage<F, QB, P>(s: &State<F>, a: &Action<F>, g: &Goal<F>, mut q_bar: QB, mut pi: P) -> F
where
    F: Scalar,
    QB: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    let a_pi = pi(s, g);
    q_bar(s, a, g) - q_bar(s, &a_pi, g)
}

/// Both sides of the n-step TD identity on one segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NStepTdIdentity<F> {
    /// `y^(n) - Q(s_t, a_t, g)`.
    pub lhs: F,
    /// `δ_θ(s_t, a_t, g)`.
    pub delta: F,
    /// `Σ_{i=1}^{n-1} γ^i [A_θ̄ + δ_θ̄](s_{t+i}, a_{t+i}, g)`.
    pub correction: F,
}

impl<F: Scalar> NStepTdIdentity<F> {
    pub fn rhs(&self) -> F {
        self.delta + self.correction
    }
}

/// Evaluates `y^(n) - Q_θ(s_t, a_t)` directly and through TD errors and
/// advantages along the stored segment. Both bootstraps use `π` and `Q_θ̄`.
pub fn nstep_td_identity<F, Q, QB, P>(
    seg: &SampledSegment<'_, F>,
    mut q: Q,
    mut q_bar: QB,
    mut pi: P,
    gamma: F,
    n: usize,
) -> Result<NStepTdIdentity<F>>
where
    F: Scalar,
    Q: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    QB: FnMut(&State<F>, &Action<F>, &Goal<F>) -> F,
    P: FnMut(&State<F>, &Goal<F>) -> Action<F>,
{
    if n == 0 || n > seg.len() {
        return contract(format!("identity needs 1 <= n <= {}, got {n}", seg.len()));
    }
    let g = seg.goal();
    let q_t = q(seg.state(0), seg.action(0), g);
    let y = n_step_target(
        seg,
        &mut StateFn(|s: &State<F>, g: &Goal<F>| {
            let a = pi(s, g);
            q_bar(s, &a, g)
        }),
        gamma,
        n,
    )?;

    let r = seg.rewards();
    let mut v_pi = |q_bar: &mut QB, s: &State<F>| {
        let a = pi(s, g);
        q_bar(s, &a, g)
    };
    let delta = td_error(r[0], q_t, v_pi(&mut q_bar, seg.state(1)), gamma);
    let mut correction = F::zero();
    let mut disc = F::one();
    for (i, &r_i) in r.iter().enumerate().take(n).skip(1) {
        disc *= gamma;
        let (s_i, a_i) = (seg.state(i), seg.action(i));
        let q_sa = q_bar(s_i, a_i, g);
        let adv = q_sa - v_pi(&mut q_bar, s_i);
        let delta_bar = td_error(r_i, q_sa, v_pi(&mut q_bar, seg.state(i + 1)), gamma);
        correction += disc * (adv + delta_bar);
    }
    Ok(NStepTdIdentity {
        lhs: y - q_t,
        delta,
        correction,
    })
}

/// Critic loss written through TD errors: mean of `(δ_θ + correction)^2`.
pub fn td_form_loss<F: Scalar>(terms: &[NStepTdIdentity<F>]) -> Result<F> {
    if terms.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: F = terms.iter().map(|t| t.rhs() * t.rhs()).sum();
    Ok(sum / F::from_usize_lossy(terms.len()))
}

/// Critic loss in target form: mean of `(y - Q)^2`.
pub fn target_form_loss<F: Scalar>(q: &[F], y: &[F]) -> Result<F> {
    if q.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if q.len() != y.len() {
        return Err(Error::Shape {
            expected: q.len(),
            got: y.len(),
        });
    }
    let sum: F = q.iter().zip(y).map(|(&q, &y)| (y - q) * (y - q)).sum();
    Ok(sum / F::from_usize_lossy(q.len()))
}

/// How the actor's linear outputs become the action fed to the critic.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionHead<F> {
    /// `tanh` of the outputs; continuous actions.
    Tanh,
    /// `softmax((logits + noise) / τ)`, fully relaxed.
    GumbelSoft { noise: Array2<F>, temperature: F },
    /// Hard one-hot of `argmax(logits + noise)` in the forward pass, gradient
    /// taken through the relaxed probabilities.
    GumbelStraightThrough { noise: Array2<F>, temperature: F },
}

/// What the quadratic action penalty is applied to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PenaltyTarget {
    /// The actor's linear outputs (pre-`tanh` values or logits).
    #[default]
    PreActivation,
    /// The action passed to the critic, differentiated along the same path
    /// as the critic term.
    Action,
}

#[derive(Clone, Debug)]
pub struct ActorLoss<F> {
    pub loss: F,
    /// `mean Q_θ1(s, π(s, g), g)`.
    pub q_mean: F,
    /// Weighted squared-norm action penalty.
    pub penalty: F,
    pub grads: Grads<F>,
}

/// `-mean Q(x, a) + w · mean ||p||^2` with `a = head(actor(x))` and `p`
/// either `a` or `actor(x)`, and its gradient with respect to the actor
/// parameters. `inputs` are the actor inputs; the critic sees
/// `[inputs, action]`. The actor must have a linear output.
pub fn actor_loss<F: Scalar>(
    actor: &DenseNet<F>,
    critic: &DenseNet<F>,
    inputs: ArrayView2<F>,
    head: &ActionHead<F>,
    penalty_weight: F,
    penalty_on: PenaltyTarget,
) -> Result<ActorLoss<F>> {
    let b = inputs.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let trace = actor.forward_trace(inputs)?;
    let pre = trace.output();
    let width = pre.ncols();
    if critic.input_dim() != inputs.ncols() + width {
        return Err(Error::Shape {
            expected: critic.input_dim(),
            got: inputs.ncols() + width,
        });
    }

    // Forward through the head, keeping what its backward pass needs.
    let (action, soft, temperature) = match head {
        ActionHead::Tanh => (pre.mapv(|v| v.tanh()), None, F::one()),
        ActionHead::GumbelSoft { noise, temperature } | ActionHead::GumbelStraightThrough { noise, temperature } => {
            if noise.dim() != pre.dim() {
                return Err(Error::Shape {
                    expected: pre.len(),
                    got: noise.len(),
                });
            }
            if !(*temperature > F::zero()) {
                return contract("Gumbel-Softmax temperature must be positive");
            }
            let mut soft = Array2::zeros(pre.dim());
            let mut hard = Array2::zeros(pre.dim());
            for r in 0..b {
                let z: Vec<F> = (0..width)
                    .map(|j| (pre[[r, j]] + noise[[r, j]]) / *temperature)
                    .collect();
                let p = softmax(&z);
                let k = crate::approx::argmax(&z);
                hard[[r, k]] = F::one();
                for j in 0..width {
                    soft[[r, j]] = p[j];
                }
            }
            let fed = if matches!(head, ActionHead::GumbelSoft { .. }) {
                soft.clone()
            } else {
                hard
            };
            (fed, Some(soft), *temperature)
        }
    };

    let critic_in = concatenate(Axis(1), &[inputs, action.view()]).expect("same row count");
    let ctrace = critic.forward_trace(critic_in.view())?;
    let q = ctrace.output();
    let inv = F::one() / F::from_usize_lossy(b);
    let q_mean = q.sum() * inv;
    let penalized = match penalty_on {
        PenaltyTarget::PreActivation => pre,
        PenaltyTarget::Action => &action,
    };
    let penalty = penalty_weight * penalized.iter().map(|&v| v * v).sum::<F>() * inv;
    let two_w = (penalty_weight + penalty_weight) * inv;

    let d_q = Array2::from_elem((b, 1), -inv);
    let (_, d_critic_in) = critic.backward(&ctrace, d_q.view())?;
    let mut d_action = d_critic_in.slice(s![.., inputs.ncols()..]).to_owned();
    if penalty_on == PenaltyTarget::Action {
        d_action.zip_mut_with(&action, |d, &a| *d += two_w * a);
    }

    let mut d_pre = Array2::zeros(pre.dim());
    for r in 0..b {
        match &soft {
            None => {
                for j in 0..width {
                    let a = action[[r, j]];
                    d_pre[[r, j]] = d_action[[r, j]] * (F::one() - a * a);
                }
            }
            Some(soft) => {
                let p: Vec<F> = soft.row(r).to_vec();
                let d: Vec<F> = d_action.row(r).to_vec();
                for (j, g) in softmax_backward(&p, &d).into_iter().enumerate() {
                    d_pre[[r, j]] = g / temperature;
                }
            }
        }
    }
    if penalty_on == PenaltyTarget::PreActivation {
        d_pre.zip_mut_with(pre, |d, &p| *d += two_w * p);
    }
    let (grads, _) = actor.backward(&trace, d_pre.view())?;
    Ok(ActorLoss {
        loss: penalty - q_mean,
        q_mean,
        penalty,
        grads,
    })
}
