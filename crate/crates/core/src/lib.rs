pub mod cli;
pub mod data;
pub mod embed;
pub mod error;
pub mod explain;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod task;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, Model, ModelConfig};
pub use task::Task;
pub use tensor::Tensor;
