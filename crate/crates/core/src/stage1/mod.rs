//! Ensemble pseudo-label refinement with disjoint residual labels.

pub mod drl;
pub mod ensemble;
pub mod refine;

pub use drl::{drl_loss, drl_loss_logits, drl_size, sample_drl, DrlAssignment};
pub use ensemble::EnsembleState;
pub use refine::{refine, write_trace_csv, RefineConfig, RefineEpoch, RefineOutcome};
