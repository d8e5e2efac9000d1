use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::approx::{AdamState, DenseNet, OutputActivation};
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Actor, twin critics, their target copies and optimizer states.
#[derive(Clone, Debug)]
pub struct CriticEnsemble<F> {
    pub actor: DenseNet<F>,
    pub actor_target: DenseNet<F>,
    pub critics: [DenseNet<F>; 2],
    pub critic_targets: [DenseNet<F>; 2],
    pub actor_opt: AdamState<F>,
    pub critic_opts: [AdamState<F>; 2],
}

impl<F: Scalar> CriticEnsemble<F> {
    /// Fresh networks; targets start as exact copies. The actor has a linear
    /// output (logits or pre-tanh actions); critics map
    /// `[input, action]` to a scalar.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: F,
        rng: &mut R,
    ) -> Result<Self> {
        let mut actor_sizes = vec![input_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![input_dim + action_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);

        let actor = DenseNet::new(&actor_sizes, OutputActivation::Linear, rng)?;
        let c1 = DenseNet::new(&critic_sizes, OutputActivation::Linear, rng)?;
        let c2 = DenseNet::new(&critic_sizes, OutputActivation::Linear, rng)?;
        Ok(CriticEnsemble {
            actor_opt: AdamState::new(&actor, lr),
            critic_opts: [AdamState::new(&c1, lr), AdamState::new(&c2, lr)],
            actor_target: actor.clone(),
            critic_targets: [c1.clone(), c2.clone()],
            actor,
            critics: [c1, c2],
        })
    }

    /// `θ̄ <- (1 - τ) θ̄ + τ θ` for the actor and both critics.
    pub fn soft_update(&mut self, tau: F) -> Result<()> {
        self.actor_target.soft_update_from(&self.actor, tau)?;
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.soft_update_from(c, tau)?;
        }
        Ok(())
    }

    /// Largest absolute difference between any target parameter and its source.
    pub fn max_target_gap(&self) -> F {
        let pairs = [
            (&self.actor_target, &self.actor),
            (&self.critic_targets[0], &self.critics[0]),
            (&self.critic_targets[1], &self.critics[1]),
        ];
        let mut gap = F::zero();
        for (t, s) in pairs {
            for (lt, ls) in t.layers().iter().zip(s.layers()) {
                for (a, b) in lt.weights.iter().zip(&ls.weights).chain(lt.bias.iter().zip(&ls.bias)) {
                    gap = gap.max((*a - *b).abs());
                }
            }
        }
        gap
    }

    /// `min_i Q̄_i(x)` per row of critic inputs.
    pub fn cdq_bootstrap(&self, critic_inputs: ArrayView2<F>) -> Result<Vec<F>> {
        let q1 = self.critic_targets[0].forward_batch(critic_inputs)?;
        let q2 = self.critic_targets[1].forward_batch(critic_inputs)?;
        Ok(min_columns(&q1, &q2))
    }
}

pub(crate) fn min_columns<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> Vec<F> {
    a.iter().zip(b.iter()).map(|(&x, &y)| x.min(y)).collect()
}

/// Probability that the ε-mixture explorer picks `action`:
/// `ε / |A| + (1 - ε) · softmax(logits)[action]`.
pub fn behavior_prob<F: Scalar>(logits: &[F], action: usize, epsilon: F) -> Result<F> {
    if action >= logits.len() {
        return contract(format!("action {action} outside 0..{}", logits.len()));
    }
    let p = crate::approx::softmax(logits);
    Ok(epsilon / F::from_usize_lossy(logits.len()) + (F::one() - epsilon) * p[action])
}
