use crate::error::{contract, Result};
use crate::losses::{LossMode, PenaltyTarget, QuantileSpec};
use crate::mdp::EnvSpec;
use crate::replay::{HindsightSpec, DEFAULT_CAPACITY};
use crate::scalar::Scalar;
use crate::targets::TargetSpec;

/// Trainer hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig<F> {
    pub gamma: F,
    /// Hidden layer widths, shared by actor and critics.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub episodes_per_cycle: usize,
    pub batches_per_cycle: usize,
    pub cycles_per_epoch: usize,
    pub eval_episodes: usize,
    pub warmup_episodes: usize,
    /// Replay capacity in transitions.
    pub buffer_capacity: usize,
    pub tau: F,
    /// Actor update period in batches.
    pub actor_delay: usize,
    pub epsilon: F,
    /// Gaussian exploration noise, continuous actions only.
    pub noise_std: F,
    pub lr: F,
    pub action_penalty: F,
    pub penalty_on: PenaltyTarget,
    pub gumbel_temperature: F,
    pub hindsight: HindsightSpec,
    pub target: TargetSpec<F>,
    pub loss: LossMode,
    pub quantile: QuantileSpec<F>,
    pub seed: u64,
}

impl<F: Scalar> AgentConfig<F> {
    /// Paper-scale defaults for `env`: `γ = 1 - 1/T`, three hidden layers
    /// (512 wide on grids, 256 otherwise), batch 1024, 12 episodes and 40
    /// batches per cycle, 10 cycles per epoch on grids and 50 otherwise.
    pub fn for_env(env: &EnvSpec<F>) -> Self {
        let grid = env.is_discrete();
        let width = if grid { 512 } else { 256 };
        AgentConfig {
            gamma: F::one() - F::one() / F::from_usize_lossy(env.horizon),
            hidden: vec![width; 3],
            batch_size: 1024,
            episodes_per_cycle: 12,
            batches_per_cycle: 40,
            cycles_per_epoch: if grid { 10 } else { 50 },
            eval_episodes: 120,
            warmup_episodes: 100,
            buffer_capacity: DEFAULT_CAPACITY,
            tau: F::lit(0.005),
            actor_delay: 2,
            epsilon: F::lit(0.3),
            noise_std: F::lit(0.2),
            lr: F::lit(1e-3),
            action_penalty: F::one(),
            penalty_on: PenaltyTarget::PreActivation,
            gumbel_temperature: F::one(),
            hindsight: HindsightSpec::default(),
            target: TargetSpec::her(),
            loss: LossMode::HuberMean,
            quantile: QuantileSpec::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, env: &EnvSpec<F>) -> Result<()> {
        self.target.validate()?;
        QuantileSpec::new(self.quantile.rho, self.quantile.kappa)?;
        let positive = [
            ("batch_size", self.batch_size),
            ("episodes_per_cycle", self.episodes_per_cycle),
            ("batches_per_cycle", self.batches_per_cycle),
            ("cycles_per_epoch", self.cycles_per_epoch),
            ("eval_episodes", self.eval_episodes),
            ("actor_delay", self.actor_delay),
        ];
        for (name, v) in positive {
            if v == 0 {
                return contract(format!("{name} must be positive"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return contract("hidden layer widths must be positive");
        }
        if !(self.gamma > F::zero() && self.gamma < F::one()) {
            return contract(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > F::zero() && self.tau <= F::one()) {
            return contract(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.epsilon >= F::zero() && self.epsilon <= F::one()) {
            return contract(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.lr > F::zero()) || !(self.gumbel_temperature > F::zero()) || self.noise_std < F::zero() {
            return contract("learning rate and temperature must be positive, noise non-negative");
        }
        if self.action_penalty < F::zero() {
            return contract("action penalty must be non-negative");
        }
        if self.buffer_capacity < env.horizon {
            return contract("replay capacity must hold at least one episode");
        }
        if self.target.requires_discrete() && !env.is_discrete() {
            return contract("retrace targets need discrete actions");
        }
        Ok(())
    }
}
