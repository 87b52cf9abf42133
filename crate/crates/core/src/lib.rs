//! Densely connected spatial-temporal feature extraction with self-attention
//! for network intrusion detection.

pub mod autograd;
pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
