//! Clients, the knowledge-transfer matrix and collaborative rounds.

mod client;
mod config;
mod matrix;
mod state;

pub use client::{auto_local_epochs, evaluate, ClientState, EpochStats, TrainSettings};
pub use config::{parse_architecture, Contrastive, ExperimentConfig, Mode, PhaseOrder, PretrainLoss};
pub use matrix::{build_transfer_matrix, KnowledgeMatrix};
pub use state::{
    run_experiment, run_experiment_with, ClientInfo, ExperimentResult, FederationState, Instrumentation,
    RoundMetrics,
};
