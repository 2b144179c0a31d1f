use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{ResetPolicy, TeacherConfig};
use crate::inference::Sensitivity;
use crate::nn::AdamConfig;
use crate::routers::RouterKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Distillation weight.
    pub beta: f64,
    /// Router weight.
    pub gamma: f64,
    pub temperature: f64,
    /// Minimum novelty margin `m`.
    pub margin: f64,
    /// Consecutive qualifying batches required to commit (`K`).
    pub mvm_batches: usize,
    pub warmup_threshold: f64,
    pub target_teacher_accuracy: f64,
    pub stability_window: usize,
    /// Allowed relative deviation of each windowed router loss from the window mean.
    pub stability_tolerance: f64,
    pub holdout_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub router_kind: RouterKind,
    pub bottleneck_k: usize,
    pub sensitivity: Sensitivity,
    /// Passes over the transient buffer when the source pauses.
    pub max_epochs: usize,
    /// Local label-space size of every task.
    pub task_classes: usize,
    pub teacher_hidden: Vec<usize>,
    pub reset_policy: ResetPolicy,
    pub learning_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 1.0,
            temperature: 2.0,
            margin: 0.05,
            mvm_batches: 50,
            warmup_threshold: 0.30,
            target_teacher_accuracy: 0.95,
            stability_window: 10,
            stability_tolerance: 0.10,
            holdout_fraction: 0.1,
            batch_size: 64,
            seed: 0,
            router_kind: RouterKind::Tbae,
            bottleneck_k: 12,
            sensitivity: Sensitivity::Auto,
            max_epochs: 5,
            task_classes: 5,
            teacher_hidden: vec![256, 128],
            reset_policy: ResetPolicy::HeadOnly,
            learning_rate: 1e-3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.mvm_batches < 1 {
            return bad("mvm_batches must be at least 1");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return bad("holdout_fraction must lie in (0, 0.5)");
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("temperature", self.temperature),
            ("warmup_threshold", self.warmup_threshold),
            ("stability_tolerance", self.stability_tolerance),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        if !(self.target_teacher_accuracy > 0.0 && self.target_teacher_accuracy <= 1.0) {
            return bad("target_teacher_accuracy must lie in (0, 1]");
        }
        if let Sensitivity::Fixed(s) = self.sensitivity {
            if !(s > 0.0) {
                return bad("fixed sensitivity must be positive");
            }
        }
        if self.stability_window < 2 || self.batch_size == 0 || self.bottleneck_k == 0 || self.task_classes == 0 {
            return bad("stability_window >= 2 and batch_size, bottleneck_k, task_classes >= 1 required");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            hidden: self.teacher_hidden.clone(),
            reset_policy: self.reset_policy,
            warmup_threshold: self.warmup_threshold,
            adam: self.adam(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_bounds_enforced() {
        PipelineConfig::default().validate().unwrap();
        for cfg in [
            PipelineConfig { mvm_batches: 0, ..Default::default() },
            PipelineConfig { holdout_fraction: 0.5, ..Default::default() },
            PipelineConfig { beta: 0.0, ..Default::default() },
            PipelineConfig { gamma: -1.0, ..Default::default() },
            PipelineConfig { sensitivity: Sensitivity::Fixed(0.0), ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
