pub mod background;
pub mod error;
pub mod eval;
pub mod fishbowl;
pub mod formats;
pub mod gradcheck;
pub mod image;
pub mod motion;
pub mod object;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
