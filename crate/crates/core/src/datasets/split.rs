use ndarray::{Array2, Axis};

use super::{LabeledSet, Mnist, TaskStream};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, Prng};

/// Two Split-MNIST tasks: training streams plus held-out test sets.
#[derive(Debug, Clone)]
pub struct SplitMnist {
    pub stream_a: TaskStream,
    pub stream_b: TaskStream,
    pub test_a: LabeledSet,
    pub test_b: LabeledSet,
}

/// Rows whose digit is in `digits`, relabelled to the digit's position in
/// the sorted digit set (for `{5..9}`, digit 7 becomes 2).
pub fn task_subset(images: &Array2<f32>, labels: &[u8], digits: &[u8]) -> Result<LabeledSet> {
    if digits.is_empty() {
        return Err(Error::Config("empty digit set".into()));
    }
    let mut sorted = digits.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| sorted.contains(&labels[i])).collect();
    let local = rows
        .iter()
        .map(|&i| sorted.iter().position(|&d| d == labels[i]).expect("filtered"))
        .collect();
    LabeledSet::new(images.select(Axis(0), &rows), local)
}

pub fn split_mnist_streams(
    mnist: &Mnist,
    digits_a: &[u8],
    digits_b: &[u8],
    batch_size: usize,
    seed: u64,
) -> Result<SplitMnist> {
    if digits_a.is_empty() || digits_b.is_empty() {
        return Err(Error::Config("empty digit set".into()));
    }
    if digits_a.iter().any(|d| digits_b.contains(d)) {
        return Err(Error::Config("digit sets overlap".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let train_a = task_subset(&mnist.train_images, &mnist.train_labels, digits_a)?;
    let train_b = task_subset(&mnist.train_images, &mnist.train_labels, digits_b)?;
    let mut prng_a = Prng::new(derive_seed(seed, 0xA));
    let mut prng_b = Prng::new(derive_seed(seed, 0xB));
    Ok(SplitMnist {
        stream_a: TaskStream::from_set(&train_a, "A", batch_size, 1, &mut prng_a),
        stream_b: TaskStream::from_set(&train_b, "B", batch_size, 1, &mut prng_b),
        test_a: task_subset(&mnist.test_images, &mnist.test_labels, digits_a)?,
        test_b: task_subset(&mnist.test_images, &mnist.test_labels, digits_b)?,
    })
}
