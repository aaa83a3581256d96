pub mod benchmarks;
pub mod checkpoint;
pub mod continual;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod pseudo_labels;
pub mod stage1;
pub mod stage2;
