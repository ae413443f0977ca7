//! Virtual microphone estimation toolkit.
//!
//! Simulates reverberant multi-talker array recordings, trains a
//! time-domain network that synthesizes a virtual microphone from two real
//! ones, beamforms the augmented array with a mask-based Souden MVDR and
//! scores the results.

pub mod beamformer;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod room;
pub mod signal;

pub use error::{Error, Result};
