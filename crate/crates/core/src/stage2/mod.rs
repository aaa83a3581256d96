//! Source-style image synthesis from confident target samples.

pub mod io;
pub mod losses;
pub mod synthesize;

pub use io::{write_loss_trace_csv, SyntheticSet};
pub use losses::{bn_match_from_stats, bn_match_loss, synthesis_objective, tv_norm, tv_norm_with_grad, LossParts, Weights};
pub use synthesize::{batch_fidelity, synthesize, synthesize_batch, SynthesisBatch, SynthesisConfig, SynthesisInit};
