//! Train small ReLU RNNs to imitate hidden Markov models and take the learned
//! dynamics apart: fixed points, slow zones, kick neurons and the circuit
//! that drives transitions.

pub mod analysis;
pub mod circuit;
pub mod dynamics;
pub mod error;
pub mod hmm;
pub mod metrics;
pub mod numerics;
pub mod ot;
pub mod rnn;
pub mod train;

pub use error::{Error, Result};
