//! Federated implicit-feedback collaborative filtering with Thompson-sampled
//! payload selection.
//!
//! The server only ships a bandit-chosen slice of the item-factor matrix to
//! each round of clients. Clients solve their user factor locally, return
//! item gradients, and the server folds them into the global model with Adam.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod cf;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod runner;
pub mod seed;

pub use bandit::{BanditConfig, BanditState, RewardMode};
pub use cf::{FactorMatrix, GradientBlock, HyperParams, UserFactor};
pub use data::{InteractionMatrix, SplitDataset};
pub use error::{Error, Result};
pub use eval::{Metrics, MetricsRecord};
pub use exec::Execution;
pub use federation::{
    run_training, Aggregation, Optimizer, SelectionPolicy, ServerState, TrainingConfig, TrainingSeeds,
};
pub use runner::{ExperimentConfig, Strategy};
