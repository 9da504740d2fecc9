//! Model-based reinforcement learning with Bayesian neural network dynamics
//! models and particle-based policy search.
//!
//! The crate learns one-step dynamics models from episodic experience
//! (heteroscedastic MLPs with multiplicative dropout noise), then optimizes
//! feedback policies by backpropagating through sampled particle rollouts.
//! Rollout noise can be frozen up front (PEGASUS-style common random
//! numbers) so the simulated objective and its gradient are deterministic
//! functions of the policy parameters; gradients are norm-clipped to keep
//! backpropagation through long horizons stable.

pub mod error;
pub mod optim;
pub mod rng;
pub mod special;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
