use serde::{Deserialize, Serialize};

use super::{MvmTracker, PipelineConfig};
use crate::datasets::{holdout_split, LabeledSet, LabeledView, MIN_SPLIT_SAMPLES};
use crate::error::{Error, Result};
use crate::experts::{StudentExpert, TeacherState};
use crate::nn::{Prng};
use crate::routers::Router;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Probing,
    Warmup,
    Distilling,
    Committed,
}

/// Loss components of one simultaneous step. `distill` is zero while the
/// warm-up gate is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub teacher: f64,
    pub distill: f64,
    pub router: f64,
    pub total: f64,
    pub teacher_accuracy: f64,
}

impl StepLosses {
    pub fn new(teacher: f64, distill: f64, router: f64, beta: f64, gamma: f64) -> Self {
        Self { teacher, distill, router, total: teacher + beta * distill + gamma * router, teacher_accuracy: 0.0 }
    }
}

/// One transient task session: buffers, the provisional pair and the gate.
#[derive(Debug, Clone)]
pub struct SessionState {
    phase: Phase,
    buffer: LabeledSet,
    holdout: LabeledSet,
    student: Option<StudentExpert>,
    router: Option<Router>,
    mvm: MvmTracker,
    prng: Prng,
    steps: usize,
}

impl SessionState {
    /// Fresh provisional student and router with seed-derived weights.
    pub fn spawn(config: &PipelineConfig, id: usize, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut prng = Prng::new(seed);
        let student = StudentExpert::new(id, input_dim, config.task_classes, config.adam(), &mut prng.child(1))?;
        let router = Router::new(config.router_kind, input_dim, config.bottleneck_k, config.adam(), &mut prng.child(2))?;
        prng = prng.child(3);
        Ok(Self {
            phase: Phase::Warmup,
            buffer: LabeledSet::empty(input_dim),
            holdout: LabeledSet::empty(input_dim),
            student: Some(student),
            router: Some(router),
            mvm: MvmTracker::new(
                config.mvm_batches,
                config.target_teacher_accuracy,
                config.stability_window,
                config.stability_tolerance,
            ),
            prng,
            steps: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_active(&self) -> bool {
        matches!(self.phase, Phase::Warmup | Phase::Distilling)
    }

    pub fn buffer(&self) -> &LabeledSet {
        &self.buffer
    }

    pub fn holdout(&self) -> &LabeledSet {
        &self.holdout
    }

    pub fn student(&self) -> Option<&StudentExpert> {
        self.student.as_ref()
    }

    pub fn router(&self) -> Option<&Router> {
        self.router.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mvm(&self) -> &MvmTracker {
        &self.mvm
    }

    pub fn commitment_check(&self) -> bool {
        self.is_active() && self.mvm.passed()
    }

    /// Buffers an arriving batch, reserving the holdout share, and returns
    /// the training part.
    pub fn ingest(&mut self, batch: LabeledView<'_>, fraction: f64) -> Result<LabeledSet> {
        if !self.is_active() {
            return Err(Error::Usage("ingest outside an active session".into()));
        }
        let owned = batch.to_owned();
        let train = if owned.len() >= MIN_SPLIT_SAMPLES {
            let (train, hold) = holdout_split(&owned, fraction, self.prng.next_seed())?;
            self.holdout.append(hold.view())?;
            train
        } else {
            owned
        };
        self.buffer.append(train.view())?;
        Ok(train)
    }

    /// Teacher, router and (once warmed up) student updates on one batch.
    pub fn step(&mut self, config: &PipelineConfig, teacher: &mut TeacherState, batch: LabeledView<'_>) -> Result<StepLosses> {
        if !self.is_active() {
            return Err(Error::Usage(format!("session step in phase {:?}", self.phase)));
        }
        let h = teacher.features(&batch.features)?;
        let t = teacher.loss_step(&h.view(), batch.labels)?;
        let router = self.router.as_mut().expect("active session owns a router");
        let r = router.train_step_scaled(&h.view(), config.gamma as f32)?;
        let mut distill = 0.0;
        if teacher.warmed_up() {
            self.phase = Phase::Distilling;
            let z_t = teacher.logits(&h.view())?;
            let student = self.student.as_mut().expect("active session owns a student");
            let scaled = student.distill_step(&h.view(), &z_t.view(), config.temperature as f32, config.beta as f32)?;
            distill = scaled as f64 / config.beta;
        }
        self.mvm.observe(t.accuracy, r as f64, self.phase == Phase::Distilling);
        self.steps += 1;
        let mut losses = StepLosses::new(t.loss as f64, distill, r as f64, config.beta, config.gamma);
        losses.teacher_accuracy = t.accuracy;
        Ok(losses)
    }

    /// Shuffled mini-batches over the buffered training data.
    pub fn epoch_batches(&mut self, batch_size: usize) -> Vec<LabeledSet> {
        self.buffer.shuffled_batches(batch_size, &mut self.prng)
    }

    /// Hands over the provisional pair and holdout, and zeroes the buffers.
    pub(crate) fn take_for_commit(&mut self) -> Result<(StudentExpert, Router, LabeledSet)> {
        if !self.commitment_check() {
            return Err(Error::Usage("commit without a passing commitment check".into()));
        }
        let holdout = std::mem::replace(&mut self.holdout, LabeledSet::empty(self.buffer.width()));
        self.buffer.purge();
        self.phase = Phase::Committed;
        Ok((self.student.take().expect("pair present"), self.router.take().expect("pair present"), holdout))
    }

    /// Drops the provisional pair and all buffered data.
    pub(crate) fn discard(&mut self) {
        self.buffer.purge();
        self.holdout.purge();
        self.student = None;
        self.router = None;
        self.phase = Phase::Probing;
    }
}
