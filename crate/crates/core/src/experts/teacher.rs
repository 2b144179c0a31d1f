use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::{accuracy, cross_entropy_with_logits, Activation, Adam, AdamConfig, DenseLayer, DenseNet, Prng};

/// Number of consecutive batch losses averaged by the warm-up gate.
pub const WARMUP_WINDOW: usize = 5;

/// Which part of `G` is re-initialized when a new task starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    HeadOnly,
    FullHeadStack,
}

impl std::str::FromStr for ResetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head_only" => Ok(ResetPolicy::HeadOnly),
            "full_head_stack" => Ok(ResetPolicy::FullHeadStack),
            other => Err(Error::Config(format!("unknown reset policy '{other}'"))),
        }
    }
}

impl std::fmt::Display for ResetPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResetPolicy::HeadOnly => "head_only",
            ResetPolicy::FullHeadStack => "full_head_stack",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    /// Widths of the hidden layers of `G`.
    pub hidden: Vec<usize>,
    pub reset_policy: ResetPolicy,
    pub warmup_threshold: f64,
    pub adam: AdamConfig,
}

impl TeacherConfig {
    /// `G = 784 → 256 → 128 → C`.
    pub fn vision() -> Self {
        Self { hidden: vec![256, 128], ..Self::synthetic() }
    }

    /// `G = 4096 → 256 → C`.
    pub fn synthetic() -> Self {
        Self {
            hidden: vec![256],
            reset_policy: ResetPolicy::HeadOnly,
            warmup_threshold: 0.30,
            adam: AdamConfig::default(),
        }
    }
}

/// Outcome of one teacher update, measured on the logits before the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherStep {
    pub loss: f32,
    pub accuracy: f64,
}

/// Frozen backbone `F` (identity when absent) and plastic head `G`.
#[derive(Debug, Clone)]
pub struct TeacherState {
    backbone: Option<DenseNet>,
    head: DenseNet,
    config: TeacherConfig,
    optim: Adam,
    recent: VecDeque<f32>,
    warmed_up: bool,
    prng: Prng,
}

impl TeacherState {
    /// Builds a teacher over `backbone` (frozen here if it is not already).
    pub fn new(
        backbone: Option<DenseNet>,
        input_dim: usize,
        classes: usize,
        config: TeacherConfig,
        prng: Prng,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("teacher needs at least one class".into()));
        }
        if !(config.warmup_threshold > 0.0) {
            return Err(Error::Config("warmup_threshold must be positive".into()));
        }
        let backbone = backbone.map(|mut f| {
            f.freeze();
            f
        });
        let feature_dim = match &backbone {
            Some(f) if f.input_dim() != input_dim => {
                return Err(dim_err!("backbone expects {} inputs, not {input_dim}", f.input_dim()))
            }
            Some(f) => f.output_dim(),
            None => input_dim,
        };
        let mut prng = prng;
        let mut dims = vec![feature_dim];
        dims.extend(&config.hidden);
        dims.push(classes);
        let head = DenseNet::mlp(&dims, Activation::Relu, Activation::Linear, &mut prng)?;
        let optim = Adam::new(&head, config.adam);
        Ok(Self { backbone, head, config, optim, recent: VecDeque::new(), warmed_up: false, prng })
    }

    pub fn backbone(&self) -> Option<&DenseNet> {
        self.backbone.as_ref()
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Width of `h`.
    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn warmed_up(&self) -> bool {
        self.warmed_up
    }

    /// `h = F(x)`; a copy of `x` when `F` is the identity.
    pub fn features(&self, x: &ArrayView2<f32>) -> Result<Array2<f32>> {
        match &self.backbone {
            Some(f) => f.predict(x),
            None => {
                if x.ncols() != self.feature_dim() {
                    return Err(dim_err!("input width {} != {}", x.ncols(), self.feature_dim()));
                }
                Ok(x.to_owned())
            }
        }
    }

    /// `(h, z_T)`.
    pub fn forward(&self, x: &ArrayView2<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        let h = self.features(x)?;
        let z = self.head.predict(&h.view())?;
        Ok((h, z))
    }

    /// Teacher logits for already extracted features.
    pub fn logits(&self, h: &ArrayView2<f32>) -> Result<Array2<f32>> {
        self.head.predict(h)
    }

    /// One Adam step of `G` on cross-entropy. Opens the warm-up gate once
    /// the mean of the last [`WARMUP_WINDOW`] losses drops below the
    /// threshold; the gate stays open until the next head reset.
    pub fn loss_step(&mut self, h: &ArrayView2<f32>, labels: &[usize]) -> Result<TeacherStep> {
        let (z, cache) = self.head.forward(h)?;
        let (loss, grad) = cross_entropy_with_logits(&z.view(), labels)?;
        let acc = accuracy(&z.view(), labels);
        let grads = self.head.param_grads(&cache, &grad)?;
        self.optim.step(&mut self.head, &grads)?;
        self.recent.push_back(loss);
        if self.recent.len() > WARMUP_WINDOW {
            self.recent.pop_front();
        }
        if !self.warmed_up && self.recent.len() == WARMUP_WINDOW {
            let mean = self.recent.iter().map(|&l| l as f64).sum::<f64>() / WARMUP_WINDOW as f64;
            self.warmed_up = mean < self.config.warmup_threshold;
        }
        Ok(TeacherStep { loss, accuracy: acc })
    }

    /// Re-initializes the policy's portion of `G` with `classes` outputs and
    /// closes the warm-up gate.
    pub fn reset_head(&mut self, classes: usize) -> Result<()> {
        if classes == 0 {
            return Err(Error::Config("new class count must be at least 1".into()));
        }
        match self.config.reset_policy {
            ResetPolicy::HeadOnly => {
                let last = self.head.layers().len() - 1;
                let inputs = self.head.layers()[last].inputs();
                let mut layers = self.head.layers().to_vec();
                layers[last] = DenseLayer::glorot(inputs, classes, Activation::Linear, &mut self.prng);
                self.head = DenseNet::from_layers(layers)?;
            }
            ResetPolicy::FullHeadStack => {
                let mut dims = vec![self.feature_dim()];
                dims.extend(&self.config.hidden);
                dims.push(classes);
                self.head = DenseNet::mlp(&dims, Activation::Relu, Activation::Linear, &mut self.prng)?;
            }
        }
        self.optim = Adam::new(&self.head, self.config.adam);
        self.recent.clear();
        self.warmed_up = false;
        Ok(())
    }
}
