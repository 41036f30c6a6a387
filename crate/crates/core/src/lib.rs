pub mod baselines;
pub mod decoder;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod instance;
pub mod model;
pub mod policy;
pub mod report;
pub mod rollout;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod taskgraph;
pub mod trainer;

pub use error::{CapamError, Result};
pub use instance::ProblemInstance;
pub use model::{CapamModel, ModelConfig};
pub use policy::{run_episode, Policy, SelectMode};
pub use sim::{EpisodeResult, SimState};
