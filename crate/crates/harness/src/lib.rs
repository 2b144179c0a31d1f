//! Experiment harness for `mbrain-core`.
//!
//! Reproduces the Split-MNIST benchmark (with a naive sequential baseline),
//! the raw-pixel versus latent routing ablation, the bottleneck sweep on the
//! synthetic crowded manifold and the autonomous A → B → A retrieval run.
//! Each experiment returns an [`ExperimentReport`] that can be written as
//! JSON, CSV or a text table.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use experiments::{run_bottleneck_sweep, run_lifelong_sequence, run_routing_ablation, run_split_mnist};
pub use report::{emit_report, Check, ExperimentReport, Metric, ReportFormat};
