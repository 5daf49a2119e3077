//! Synthetic boundary-case data and a small learned-deferral classifier that
//! exercises the three-way formulation end to end.

pub mod features;
pub mod generate;
pub mod model;

pub use features::{featurize, SparseVector};
pub use generate::{generate, Category, DatasetExample, GenConfig};
pub use model::{predict_toy, train_toy, ToyModel, TrainConfig};
