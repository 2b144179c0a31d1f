//! Flat `key = value` experiment configuration.
//!
//! Keys mirror [`PipelineConfig`] field names plus a few experiment-level
//! settings. Blank lines and `#` comments are ignored; unknown keys are
//! errors.

use std::collections::BTreeMap;
use std::path::Path;

use mbrain_core::datasets::ManifoldConfig;
use mbrain_core::pipeline::PipelineConfig;
use mbrain_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub manifold: ManifoldConfig,
    /// Local classes of the synthetic tasks, read off the latent coordinates.
    pub manifold_classes: usize,
    pub sweep_ks: Vec<usize>,
    /// Router training epochs per k in the bottleneck sweep.
    pub sweep_epochs: usize,
    /// Router training epochs per task in the routing ablation.
    pub ablation_epochs: usize,
    /// Epochs per task for the naive sequential baseline.
    pub baseline_epochs: usize,
    /// Width of the frozen random projection used as backbone latents.
    pub latent_dim: usize,
    /// Optional cap on samples per task (0 = all), for quick runs.
    pub max_task_samples: usize,
}

impl ExperimentConfig {
    /// Split-MNIST defaults: 784-wide raw pixels, `G = 784 → 256 → 128 → 5`.
    pub fn vision() -> Self {
        Self {
            pipeline: PipelineConfig {
                margin: 0.006,
                mvm_batches: 400,
                max_epochs: 15,
                target_teacher_accuracy: 0.97,
                stability_tolerance: 0.3,
                teacher_hidden: vec![256, 128],
                task_classes: 5,
                bottleneck_k: 12,
                ..PipelineConfig::default()
            },
            ..Self::synthetic()
        }
    }

    /// Crowded-manifold defaults: 4096-wide embeddings, `G = 4096 → 256 → C`.
    pub fn synthetic() -> Self {
        Self {
            pipeline: PipelineConfig {
                teacher_hidden: vec![256],
                task_classes: 4,
                bottleneck_k: 12,
                mvm_batches: 30,
                target_teacher_accuracy: 0.85,
                stability_tolerance: 0.25,
                ..PipelineConfig::default()
            },
            manifold: ManifoldConfig::default(),
            manifold_classes: 4,
            sweep_ks: vec![4, 12, 32, 64],
            sweep_epochs: 15,
            ablation_epochs: 3,
            baseline_epochs: 1,
            latent_dim: 128,
            max_task_samples: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.pipeline.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.seed = seed;
        self.manifold.seed = seed;
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        let m = &mut self.manifold;
        match key {
            "beta" => p.beta = num(key, value)?,
            "gamma" => p.gamma = num(key, value)?,
            "temperature" => p.temperature = num(key, value)?,
            "margin" => p.margin = num(key, value)?,
            "mvm_batches" => p.mvm_batches = num(key, value)?,
            "warmup_threshold" => p.warmup_threshold = num(key, value)?,
            "target_teacher_accuracy" => p.target_teacher_accuracy = num(key, value)?,
            "stability_window" => p.stability_window = num(key, value)?,
            "stability_tolerance" => p.stability_tolerance = num(key, value)?,
            "holdout_fraction" => p.holdout_fraction = num(key, value)?,
            "batch_size" => p.batch_size = num(key, value)?,
            "seed" => self.set_seed(num(key, value)?),
            "router_kind" => p.router_kind = value.parse()?,
            "bottleneck_k" => p.bottleneck_k = num(key, value)?,
            "sensitivity" => p.sensitivity = value.parse()?,
            "max_epochs" => p.max_epochs = num(key, value)?,
            "task_classes" => p.task_classes = num(key, value)?,
            "teacher_hidden" => p.teacher_hidden = list(key, value)?,
            "reset_policy" => p.reset_policy = value.parse()?,
            "learning_rate" => p.learning_rate = num(key, value)?,
            "ambient_dim" => m.ambient_dim = num(key, value)?,
            "intrinsic_dim" => m.intrinsic_dim = num(key, value)?,
            "center_offset" => m.center_offset = num(key, value)?,
            "ambient_noise_sigma" => m.ambient_noise_sigma = num(key, value)?,
            "basis_scale" => m.basis_scale = num(key, value)?,
            "context_scale" => m.context_scale = num(key, value)?,
            "samples_per_task" => m.samples_per_task = num(key, value)?,
            "holdout_per_task" => m.holdout_per_task = num(key, value)?,
            "manifold_classes" => self.manifold_classes = num(key, value)?,
            "sweep_ks" => self.sweep_ks = list(key, value)?,
            "sweep_epochs" => self.sweep_epochs = num(key, value)?,
            "ablation_epochs" => self.ablation_epochs = num(key, value)?,
            "baseline_epochs" => self.baseline_epochs = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "max_task_samples" => self.max_task_samples = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Overlays a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.manifold.validate()?;
        if self.manifold_classes < 2 || self.manifold_classes > self.manifold.intrinsic_dim {
            return Err(Error::Config("manifold_classes must lie in [2, intrinsic_dim]".into()));
        }
        if self.sweep_ks.is_empty() || self.sweep_ks.contains(&0) {
            return Err(Error::Config("sweep_ks needs positive entries".into()));
        }
        if self.sweep_epochs == 0 || self.ablation_epochs == 0 || self.baseline_epochs == 0 || self.latent_dim == 0 {
            return Err(Error::Config("epoch counts and latent_dim must be positive".into()));
        }
        Ok(())
    }

    /// Every effective setting, keyed as in the config file.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let p = &self.pipeline;
        let m = &self.manifold;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        [
            ("beta", p.beta.to_string()),
            ("gamma", p.gamma.to_string()),
            ("temperature", p.temperature.to_string()),
            ("margin", p.margin.to_string()),
            ("mvm_batches", p.mvm_batches.to_string()),
            ("warmup_threshold", p.warmup_threshold.to_string()),
            ("target_teacher_accuracy", p.target_teacher_accuracy.to_string()),
            ("stability_window", p.stability_window.to_string()),
            ("stability_tolerance", p.stability_tolerance.to_string()),
            ("holdout_fraction", p.holdout_fraction.to_string()),
            ("batch_size", p.batch_size.to_string()),
            ("seed", p.seed.to_string()),
            ("router_kind", p.router_kind.to_string()),
            ("bottleneck_k", p.bottleneck_k.to_string()),
            ("sensitivity", p.sensitivity.to_string()),
            ("max_epochs", p.max_epochs.to_string()),
            ("task_classes", p.task_classes.to_string()),
            ("teacher_hidden", join(&p.teacher_hidden)),
            ("reset_policy", p.reset_policy.to_string()),
            ("learning_rate", p.learning_rate.to_string()),
            ("ambient_dim", m.ambient_dim.to_string()),
            ("intrinsic_dim", m.intrinsic_dim.to_string()),
            ("center_offset", m.center_offset.to_string()),
            ("ambient_noise_sigma", m.ambient_noise_sigma.to_string()),
            ("basis_scale", m.basis_scale.to_string()),
            ("context_scale", m.context_scale.to_string()),
            ("samples_per_task", m.samples_per_task.to_string()),
            ("holdout_per_task", m.holdout_per_task.to_string()),
            ("manifold_classes", self.manifold_classes.to_string()),
            ("sweep_ks", join(&self.sweep_ks)),
            ("sweep_epochs", self.sweep_epochs.to_string()),
            ("ablation_epochs", self.ablation_epochs.to_string()),
            ("baseline_epochs", self.baseline_epochs.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("max_task_samples", self.max_task_samples.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}
