//! Heterogeneous causal graph learning: constrained structure discovery over
//! covariates, treatment, interactions, mediators and outcome, followed by
//! LASSO refitting, closed-form heterogeneous effects and bootstrap intervals.

pub mod dataset;
pub mod debias;
pub mod discover;
pub mod dot;
pub mod effects;
pub mod error;
pub mod functional;
pub mod graph;
pub mod inference;
pub mod layout;
pub mod linalg;
mod optim;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use layout::BlockLayout;
pub use scalar::Scalar;

pub type Graph = graph::WeightedGraph<f64>;
pub type Params = graph::Parameters<f64>;
pub type Data = dataset::Dataset<f64>;
pub type FunctionalModel = functional::FunctionalParams<f64>;

pub type Graph32 = graph::WeightedGraph<f32>;
pub type Params32 = graph::Parameters<f32>;
pub type Data32 = dataset::Dataset<f32>;
