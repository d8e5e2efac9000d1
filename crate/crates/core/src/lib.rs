//! Goal-conditioned reinforcement learning with multi-step hindsight targets
//! and measurement of the off-policy bias they introduce.
//!
//! The pieces, bottom up:
//!
//! * [`mdp`]: gridworld and point-reach tasks with sparse rewards.
//! * [`replay`]: episode storage and hindsight goal relabeling.
//! * [`approx`]: dense networks, Adam, normalizers and a tabular oracle.
//! * [`targets`]: one-step, n-step, λ-averaged, truncated and Retrace targets.
//! * [`losses`]: Huber and quantile critic losses, the actor loss and the
//!   n-step TD identity.
//! * [`bias`]: terminal shifting and initial shooting bias metrics.
//! * [`agent`]: a TD3-style learner tying the above together.
//! * [`experiment`]: configs, training runs and CSV results.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

// `!(x > 0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod agent;
pub mod approx;
pub mod bias;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod mdp;
pub mod replay;
pub mod scalar;
pub mod targets;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type State = mdp::State<f64>;
pub type Goal = mdp::Goal<f64>;
pub type Action = mdp::Action<f64>;
pub type Trajectory = mdp::Trajectory<f64>;
pub type EnvSpec = mdp::EnvSpec<f64>;
pub type DenseNet = approx::DenseNet<f64>;
pub type Normalizer = approx::Normalizer<f64>;
pub type TargetSpec = targets::TargetSpec<f64>;
pub type QuantileSpec = losses::QuantileSpec<f64>;
pub type AgentConfig = agent::AgentConfig<f64>;
pub type Agent = agent::Agent<f64>;
pub type PolicySnapshot = agent::PolicySnapshot<f64>;
pub type BiasReport = bias::BiasReport<f64>;
