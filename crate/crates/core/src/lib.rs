pub mod actors;
pub mod constraints;
pub mod error;
pub mod eval;
pub mod io;
pub mod melody;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod seqvae;
pub mod vae;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use rng::Rng;
