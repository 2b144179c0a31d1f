#![allow(dead_code)]

use mbrain_core::datasets::LabeledSet;
use mbrain_core::nn::Prng;
use mbrain_core::pipeline::{Pipeline, PipelineConfig};
use mbrain_core::routers::RouterKind;
use ndarray::Array2;

pub const WIDTH: usize = 6;

pub fn small_config() -> PipelineConfig {
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

/// Two well separated classes around `center`, split on feature 0.
pub fn blob_task(center: f32, n: usize, seed: u64) -> LabeledSet {
    let mut p = Prng::new(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, WIDTH), |(i, j)| {
        let side = if labels[i] == 0 { -0.5 } else { 0.5 };
        center + if j == 0 { side } else { 0.0 } + 0.05 * p.normal() as f32
    });
    LabeledSet::new(x, labels).unwrap()
}

pub fn task_batches(center: f32, seed: u64) -> Vec<LabeledSet> {
    blob_task(center, 400, seed).shuffled_batches(20, &mut Prng::new(seed))
}

/// Pipeline after learning the blob tasks at centers 0 and 3.
pub fn two_task_pipeline() -> Pipeline {
    let mut p = Pipeline::new(small_config(), WIDTH, None).unwrap();
    for (center, seed) in [(0.0, 1), (3.0, 2)] {
        for b in task_batches(center, seed) {
            p.observe(b.view()).unwrap();
        }
        p.flush().unwrap();
    }
    assert_eq!(p.library().len(), 2);
    p
}
