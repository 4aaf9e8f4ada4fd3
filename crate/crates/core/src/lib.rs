pub mod corpus;
pub mod error;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod reading;
pub mod rng;
pub mod toy;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
pub use model::{DeepCom, ModelConfig};
pub use numerics::{ParamStore, Tensor};
pub use reading::SpanSet;
pub use training::TrainConfig;
