//! Multi-fidelity algorithm selection from partial learning curves.
//!
//! A meta-feature encoder initializes an LSTM that reads the first fidelity
//! steps of every candidate's learning curve; a linear readout scores the
//! candidates, and a differentiable soft rank turns the scores into a
//! ranking trained against the final-fidelity ranking with a Spearman loss.
//! A Successive Halving baseline and the evaluation/report pipeline live
//! alongside.

pub mod data;
pub mod error;
pub mod exec;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod nn;
pub mod report;
pub mod sh;
pub mod softrank;
pub mod stats;
pub mod train;

pub use data::{generate_synthetic, split, MetaDataset, SyntheticSpec};
pub use error::{Error, Result};
pub use exec::Exec;
pub use loss::{spearman_eval, spearman_loss};
pub use model::{predict_partial, ImfasParams, ModelDims};
pub use report::{evaluate_model, render_report, EvalReport, ReportFormat};
pub use sh::{sh_eval, sh_rank, ShConfig};
pub use softrank::{soft_rank, SoftRankConfig};
pub use train::{run_seeds, train, ExperimentConfig, TrainConfig, TrainHistory};

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
