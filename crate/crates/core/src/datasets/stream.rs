use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{dim_err, Result};
use crate::nn::Prng;

/// Features with local class labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
}

/// Borrowed, untagged batch: the only form in which data reaches the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct LabeledView<'a> {
    pub features: ArrayView2<'a, f32>,
    pub labels: &'a [usize],
}

impl LabeledSet {
    pub fn new(features: Array2<f32>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(dim_err!("{} feature rows but {} labels", features.nrows(), labels.len()));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            features: Array2::zeros((0, width)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn view(&self) -> LabeledView<'_> {
        LabeledView {
            features: self.features.view(),
            labels: &self.labels,
        }
    }

    pub fn select(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn append(&mut self, other: LabeledView<'_>) -> Result<()> {
        if other.features.ncols() != self.width() {
            return Err(dim_err!("appending width {} to width {}", other.features.ncols(), self.width()));
        }
        self.features
            .append(Axis(0), other.features)
            .expect("widths checked");
        self.labels.extend_from_slice(other.labels);
        Ok(())
    }

    /// Drops every sample and releases the storage.
    pub fn purge(&mut self) {
        self.features = Array2::zeros((0, self.width()));
        self.labels = Vec::new();
    }

    /// Consecutive batches over a seeded permutation of the rows.
    pub fn shuffled_batches(&self, batch_size: usize, prng: &mut Prng) -> Vec<LabeledSet> {
        let order = prng.permutation(self.len());
        order.chunks(batch_size.max(1)).map(|rows| self.select(rows)).collect()
    }
}

impl<'a> LabeledView<'a> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_owned(&self) -> LabeledSet {
        LabeledSet {
            features: self.features.to_owned(),
            labels: self.labels.to_vec(),
        }
    }
}

/// One block of a task stream. `task_tag` is for the scorer only.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    data: LabeledSet,
    task_tag: String,
}

impl StreamBatch {
    pub fn new(data: LabeledSet, task_tag: impl Into<String>) -> Self {
        Self {
            data,
            task_tag: task_tag.into(),
        }
    }

    /// The untagged payload handed to the pipeline.
    pub fn data(&self) -> LabeledView<'_> {
        self.data.view()
    }

    pub fn task_tag(&self) -> &str {
        &self.task_tag
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Block-sequential stream of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub batches: Vec<StreamBatch>,
    pub batch_size: usize,
    /// Upper bound on passes a session may make over its buffer.
    pub epochs_per_session: usize,
}

impl TaskStream {
    pub fn from_set(set: &LabeledSet, tag: &str, batch_size: usize, epochs: usize, prng: &mut Prng) -> Self {
        let batches = set
            .shuffled_batches(batch_size, prng)
            .into_iter()
            .map(|b| StreamBatch::new(b, tag))
            .collect();
        Self {
            batches,
            batch_size,
            epochs_per_session: epochs,
        }
    }

    /// Appends `other` as a new block.
    pub fn then(mut self, other: TaskStream) -> Self {
        self.batches.extend(other.batches);
        self
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(StreamBatch::len).sum()
    }

    /// Tag-contiguous runs: `(tag, first batch index, batch count)`.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut out: Vec<(String, usize, usize)> = Vec::new();
        for (i, b) in self.batches.iter().enumerate() {
            match out.last_mut() {
                Some((tag, _, n)) if tag == b.task_tag() => *n += 1,
                _ => out.push((b.task_tag().to_string(), i, 1)),
            }
        }
        out
    }
}

/// True when no tag reappears after a different tag was seen within one
/// pass. Returning blocks (A, B, A) are expressed as separate streams.
pub fn is_block_sequential(batches: &[StreamBatch]) -> bool {
    let mut seen: Vec<&str> = Vec::new();
    for b in batches {
        match seen.last() {
            Some(&last) if last == b.task_tag() => {}
            _ => {
                if seen.contains(&b.task_tag()) {
                    return false;
                }
                seen.push(b.task_tag());
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize) -> LabeledSet {
        LabeledSet::new(
            Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32),
            (0..n).map(|i| i % 3).collect(),
        )
        .unwrap()
    }

    #[test]
    fn purge_leaves_zero_length() {
        let mut s = set(10);
        s.purge();
        assert_eq!(s.len(), 0);
        assert_eq!(s.features.len(), 0);
        assert_eq!(s.width(), 2);
    }

    #[test]
    fn stream_is_block_sequential() {
        let mut prng = Prng::new(1);
        let s = TaskStream::from_set(&set(20), "A", 6, 1, &mut prng)
            .then(TaskStream::from_set(&set(10), "B", 6, 1, &mut prng));
        assert!(is_block_sequential(&s.batches));
        assert_eq!(s.blocks().len(), 2);
        assert_eq!(s.samples(), 30);
        let mut broken = s.batches.clone();
        broken.push(s.batches[0].clone());
        assert!(!is_block_sequential(&broken));
    }

    #[test]
    fn mismatched_rows_rejected() {
        assert!(LabeledSet::new(Array2::zeros((3, 2)), vec![0, 1]).is_err());
    }
}
