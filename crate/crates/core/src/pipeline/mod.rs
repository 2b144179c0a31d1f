//! The simultaneous training pipeline.
//!
//! Untagged batches arrive one at a time. Outside a session each batch is
//! probed against the library; a novel batch spawns a provisional student
//! and router, and every following batch trains teacher, student and router
//! together until the commitment gate passes. Commitment calibrates the
//! router threshold on the reserved holdout, freezes the pair into the
//! library and purges the buffered data.
//!
//! When the source pauses, [`Pipeline::flush`] runs further passes over the
//! buffer. A session that still fails the gate is discarded.

mod config;
mod library;
mod mvm;
mod session;

pub use config::PipelineConfig;
pub use library::{load_library, save_library, ExpertLibrary, ExpertRecord, ProbeResult, Verdict, MANIFEST_VERSION};
pub use mvm::MvmTracker;
pub use session::{Phase, SessionState, StepLosses};

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledView;
use crate::error::{Error, Result};
use crate::experts::TeacherState;
use crate::inference::ClassSlice;
use crate::nn::{derive_seed, DenseNet, Prng};
use crate::routers::calibrate_threshold;

const TEACHER_TAG: u64 = 0x7EAC;
const SPAWN_TAG: u64 = 0x5BA0;
const PROBE_TAG: u64 = 0x9B0E;
const CALIBRATION_TAG: u64 = 0xCA1B;

/// One familiarity decision, in stream order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub batch: usize,
    pub s_fam: f64,
    /// `Some(expert)` when familiar.
    pub familiar: Option<usize>,
}

/// What happened to one observed batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Familiar(usize),
    Spawned { expert: usize, losses: StepLosses },
    Trained(StepLosses),
    Committed { expert: usize, losses: StepLosses },
}

/// Result of [`Pipeline::flush`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushOutcome {
    Idle,
    Committed(usize),
    Discarded,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    teacher: TeacherState,
    library: ExpertLibrary,
    session: Option<SessionState>,
    released: Option<TeacherState>,
    decisions: Vec<Decision>,
    batches: usize,
    spawns: usize,
    discards: usize,
}

impl Pipeline {
    /// `backbone` is the frozen feature extractor; `None` means identity.
    pub fn new(config: PipelineConfig, input_dim: usize, backbone: Option<DenseNet>) -> Result<Self> {
        config.validate()?;
        let teacher = TeacherState::new(
            backbone,
            input_dim,
            config.task_classes,
            config.teacher_config(),
            Prng::new(derive_seed(config.seed, TEACHER_TAG)),
        )?;
        Ok(Self {
            config,
            teacher,
            library: ExpertLibrary::new(),
            session: None,
            released: None,
            decisions: Vec::new(),
            batches: 0,
            spawns: 0,
            discards: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn library(&self) -> &ExpertLibrary {
        &self.library
    }

    pub fn teacher(&self) -> &TeacherState {
        &self.teacher
    }

    pub fn session(&self) -> Option<&SessionState> {
        self.session.as_ref()
    }

    /// The teacher as it stood at the most recent commitment, before its
    /// head was reset.
    pub fn released_teacher(&self) -> Option<&TeacherState> {
        self.released.as_ref()
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn batches_seen(&self) -> usize {
        self.batches
    }

    /// Provisional pairs created so far, committed or not.
    pub fn spawns(&self) -> usize {
        self.spawns
    }

    pub fn discards(&self) -> usize {
        self.discards
    }

    fn active(&self) -> bool {
        self.session.as_ref().is_some_and(|s| s.is_active())
    }

    /// Feeds one batch from the stream.
    pub fn observe(&mut self, batch: LabeledView<'_>) -> Result<Observation> {
        let index = self.batches;
        self.batches += 1;
        if !self.active() {
            let h = self.teacher.features(&batch.features)?;
            let probe = self
                .library
                .probe_familiarity(&h.view(), derive_seed(self.config.seed, PROBE_TAG ^ (index as u64) << 16))?;
            self.decisions.push(Decision {
                batch: index,
                s_fam: probe.s_fam,
                familiar: match probe.verdict {
                    Verdict::Familiar(j) => Some(j),
                    Verdict::Novel => None,
                },
            });
            if let Verdict::Familiar(j) = probe.verdict {
                return Ok(Observation::Familiar(j));
            }
            self.spawn_provisional()?;
            let losses = self.train_on_arrival(batch)?;
            let expert = self.library.len();
            return Ok(match self.try_commit()? {
                Some(id) => Observation::Committed { expert: id, losses },
                None => Observation::Spawned { expert, losses },
            });
        }
        let losses = self.train_on_arrival(batch)?;
        Ok(match self.try_commit()? {
            Some(id) => Observation::Committed { expert: id, losses },
            None => Observation::Trained(losses),
        })
    }

    /// Starts a session with a fresh provisional pair.
    pub fn spawn_provisional(&mut self) -> Result<()> {
        if self.active() {
            return Err(Error::Usage("a provisional pair is already active".into()));
        }
        let id = self.library.len();
        let seed = derive_seed(self.config.seed, SPAWN_TAG + self.spawns as u64);
        self.session = Some(SessionState::spawn(&self.config, id, self.teacher.feature_dim(), seed)?);
        self.spawns += 1;
        Ok(())
    }

    fn train_on_arrival(&mut self, batch: LabeledView<'_>) -> Result<StepLosses> {
        let session = self.session.as_mut().expect("active session");
        let train = session.ingest(batch, self.config.holdout_fraction)?;
        session.step(&self.config, &mut self.teacher, train.view())
    }

    fn try_commit(&mut self) -> Result<Option<usize>> {
        if self.session.as_ref().is_some_and(|s| s.commitment_check()) {
            return self.commit_and_purge().map(Some);
        }
        Ok(None)
    }

    /// Calibrates, freezes and appends the provisional pair, purges the
    /// buffers and resets the teacher head.
    pub fn commit_and_purge(&mut self) -> Result<usize> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| Error::Usage("commit without a session".into()))?;
        let (mut student, mut router, holdout) = session.take_for_commit()?;
        let id = self.library.len();
        let seed = derive_seed(self.config.seed, CALIBRATION_TAG + id as u64);
        let stats = calibrate_threshold(&router, &holdout.features.view(), self.config.margin, seed)?;
        drop(holdout);
        student.freeze()?;
        router.freeze();
        let slice = ClassSlice { offset: self.library.global_classes(), width: student.classes() };
        self.library.append(ExpertRecord { student, router, stats, slice })?;
        self.released = Some(self.teacher.clone());
        self.teacher.reset_head(self.config.task_classes)?;
        Ok(id)
    }

    /// Source pause: up to `max_epochs` passes over the buffer, committing
    /// as soon as the gate passes; otherwise the session is discarded.
    pub fn flush(&mut self) -> Result<FlushOutcome> {
        if !self.active() {
            return Ok(FlushOutcome::Idle);
        }
        for _ in 0..self.config.max_epochs {
            let batches = self.session.as_mut().expect("active").epoch_batches(self.config.batch_size);
            for b in &batches {
                self.session.as_mut().expect("active").step(&self.config, &mut self.teacher, b.view())?;
                if let Some(id) = self.try_commit()? {
                    return Ok(FlushOutcome::Committed(id));
                }
            }
        }
        self.discard()?;
        Ok(FlushOutcome::Discarded)
    }

    fn discard(&mut self) -> Result<()> {
        if let Some(s) = self.session.as_mut() {
            s.discard();
        }
        self.discards += 1;
        self.teacher.reset_head(self.config.task_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LabeledSet;
    use crate::routers::RouterKind;
    use ndarray::Array2;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            mvm_batches: 5,
            target_teacher_accuracy: 0.9,
            stability_tolerance: 0.5,
            batch_size: 20,
            bottleneck_k: 2,
            task_classes: 2,
            teacher_hidden: vec![16],
            learning_rate: 5e-3,
            max_epochs: 30,
            router_kind: RouterKind::Tbae,
            ..PipelineConfig::default()
        }
    }

    fn blob_task(center: f32, n: usize, seed: u64) -> LabeledSet {
        let mut p = Prng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 6), |(i, j)| {
            let side = if labels[i] == 0 { -0.5 } else { 0.5 };
            center + if j == 0 { side } else { 0.0 } + 0.05 * p.normal() as f32
        });
        LabeledSet::new(x, labels).unwrap()
    }

    #[test]
    fn empty_library_probe_is_novel() {
        let lib = ExpertLibrary::new();
        let p = lib.probe_familiarity(&Array2::zeros((3, 4)).view(), 0).unwrap();
        assert_eq!(p.verdict, Verdict::Novel);
        assert_eq!(p.s_fam, f64::INFINITY);
        assert_eq!(lib.router_evals(), 0);
    }

    #[test]
    fn spawn_is_deterministic_and_exclusive() {
        let cfg = small_config();
        let a = SessionState::spawn(&cfg, 0, 6, 42).unwrap();
        let b = SessionState::spawn(&cfg, 0, 6, 42).unwrap();
        assert_eq!(a.student().unwrap().digest(), b.student().unwrap().digest());
        assert_eq!(a.router().unwrap().digest(), b.router().unwrap().digest());
        let mut p = Pipeline::new(cfg, 6, None).unwrap();
        p.spawn_provisional().unwrap();
        assert_eq!(p.library().len(), 0);
        assert!(matches!(p.spawn_provisional(), Err(Error::Usage(_))));
    }

    #[test]
    fn commit_without_gate_is_usage_error() {
        let mut p = Pipeline::new(small_config(), 6, None).unwrap();
        assert!(matches!(p.commit_and_purge(), Err(Error::Usage(_))));
        p.spawn_provisional().unwrap();
        assert!(matches!(p.commit_and_purge(), Err(Error::Usage(_))));
    }

    #[test]
    fn loss_total_arithmetic() {
        let l = StepLosses::new(0.5, 0.2, 0.1, 1.0, 1.0);
        assert!((l.total - 0.8).abs() < 1e-12);
    }

    #[test]
    fn two_tasks_then_return() {
        let mut p = Pipeline::new(small_config(), 6, None).unwrap();
        for (center, seed) in [(0.0, 1), (3.0, 2)] {
            let task = blob_task(center, 400, seed);
            for rows in task.shuffled_batches(20, &mut Prng::new(seed)) {
                p.observe(rows.view()).unwrap();
            }
            p.flush().unwrap();
        }
        assert_eq!(p.library().len(), 2);
        assert_eq!(p.library().global_classes(), 4);
        let s = p.session().unwrap();
        assert_eq!((s.buffer().len(), s.holdout().len()), (0, 0));
        let back = blob_task(0.0, 40, 9);
        let evals = p.library().router_evals();
        let obs = p.observe(back.select(&(0..20).collect::<Vec<_>>()).view()).unwrap();
        assert_eq!(obs, Observation::Familiar(0));
        assert_eq!(p.library().router_evals() - evals, 2);
    }

    #[test]
    fn short_anomaly_is_discarded() {
        let mut p = Pipeline::new(PipelineConfig { max_epochs: 1, ..small_config() }, 6, None).unwrap();
        let junk = blob_task(9.0, 20, 3);
        assert!(matches!(p.observe(junk.view()).unwrap(), Observation::Spawned { .. }));
        assert_eq!(p.flush().unwrap(), FlushOutcome::Discarded);
        assert_eq!(p.library().len(), 0);
        assert_eq!(p.session().unwrap().buffer().len(), 0);
    }
}
