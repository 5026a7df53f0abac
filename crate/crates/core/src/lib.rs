pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod perceptual;
pub mod shared;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{Module, Param};
pub use tensor::Tensor;

/// The seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;
