//! Teacher and student experts.
//!
//! The teacher is a frozen feature extractor `F` under a plastic head `G`,
//! trained with cross-entropy. Each task also gets a small student adapter
//! that learns only from the teacher's temperature-softened outputs and is
//! frozen for good at commitment.

mod student;
mod teacher;

pub use student::StudentExpert;
pub use teacher::{ResetPolicy, TeacherConfig, TeacherState, TeacherStep, WARMUP_WINDOW};

/// Hidden width of student adapters.
pub const ADAPTER_HIDDEN: usize = 64;
