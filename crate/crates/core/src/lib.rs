//! Model-free linear-quadratic mean-field social control for agents with
//! multiplicative noise.
//!
//! The learners ([`feedback`], [`feedforward`]) see only integral data
//! matrices built from simulated trajectories ([`sim`], [`dataset`]);
//! [`riccati`] holds the model-based ground truth used to check them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod expm;
pub mod features;
pub mod feedback;
pub mod feedforward;
pub mod linalg;
pub mod meanfield;
pub mod model;
pub mod pipeline;
pub mod riccati;
pub mod sim;

pub use dataset::{FeedbackDataset, FeedforwardDataset, Quadrature};
pub use error::{Error, Result};
pub use expm::matrix_exponential;
pub use features::{quad_features, smat, svec};
pub use feedback::irl_feedback_iterate;
pub use feedforward::irl_feedforward_iterate;
pub use linalg::{Mat, Vector};
pub use meanfield::{IdentifiedModel, MeanFieldMethod, MeanFieldPath};
pub use model::{CostSpec, DerivedWeights, SystemDynamics, ValidationReport};
pub use pipeline::{benchmark_config, ExperimentConfig, RunOptions, RunReport};
pub use riccati::{FeedbackSolution, FeedforwardSolution, IterationTrace};
pub use sim::{AffinePolicy, Ensemble, InitialState, Integrator, NoiseSpec, SamplingPlan, Trajectory};
