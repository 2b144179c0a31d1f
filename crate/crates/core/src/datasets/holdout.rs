use super::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::Prng;

/// Smallest buffer that can be split into train and holdout parts.
pub const MIN_SPLIT_SAMPLES: usize = 10;

/// Seeded disjoint split; the holdout receives `round(fraction · n)` rows.
pub fn holdout_split(buffer: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let n = buffer.len();
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::Config(format!(
            "buffer of {n} samples is too small to split (need {MIN_SPLIT_SAMPLES})"
        )));
    }
    let held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let order = Prng::new(seed).permutation(n);
    let (hold_rows, train_rows) = order.split_at(held);
    let mut hold_rows = hold_rows.to_vec();
    let mut train_rows = train_rows.to_vec();
    hold_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((buffer.select(&train_rows), buffer.select(&hold_rows)))
}
