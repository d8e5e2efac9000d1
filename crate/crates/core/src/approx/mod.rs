//! Function approximation written from scratch: dense ReLU networks with
//! reverse-mode gradients, Adam, a running input normalizer, the
//! Gumbel-Softmax head for discrete actions, and a tabular Q backend used as
//! an exact oracle on small grids.

mod adam;
pub mod checkpoint;
mod gumbel;
mod net;
mod normalizer;
mod tabular;

pub use adam::AdamState;
pub use gumbel::{argmax, gumbel_softmax_backward, gumbel_softmax_sample, softmax, softmax_backward, GumbelSample};
pub use net::{Dense, DenseNet, Grads, OutputActivation, Trace};
pub use normalizer::Normalizer;
pub use tabular::{value_iteration, TabularQ, ValueIteration};
