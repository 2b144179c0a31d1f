use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Novelty threshold derived from holdout reconstruction errors:
/// `tau = mu_cal + max(3 · sigma_cal, margin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mu_cal: f64,
    pub sigma_cal: f64,
    pub margin: f64,
    pub tau: f64,
}

impl CalibrationStats {
    pub fn new(mu_cal: f64, sigma_cal: f64, margin: f64) -> Self {
        Self {
            mu_cal,
            sigma_cal,
            margin,
            tau: mu_cal + (3.0 * sigma_cal).max(margin),
        }
    }

    /// Mean and sample standard deviation of `errors`.
    pub fn from_errors(errors: &[f64], margin: f64) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Usage("calibration needs a non-empty holdout".into()));
        }
        if !(margin >= 0.0) {
            return Err(Error::Config(format!("margin must be non-negative, got {margin}")));
        }
        let n = errors.len() as f64;
        let mu = errors.iter().sum::<f64>() / n;
        let constant = errors.iter().all(|&e| e == errors[0]);
        let sigma = if errors.len() > 1 && !constant {
            (errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self::new(mu, sigma, margin))
    }

    /// Errors equal to `tau` count as familiar.
    pub fn is_novel(&self, error: f64) -> bool {
        error > self.tau
    }

    /// Threshold for the mean error of `n` samples: the same law applied to
    /// the standard error, `mu + max(3 sigma / sqrt(n), m)`. Equals `tau`
    /// for `n = 1`.
    pub fn batch_threshold(&self, n: usize) -> f64 {
        if n <= 1 {
            return self.tau;
        }
        self.mu_cal + (3.0 * self.sigma_cal / (n as f64).sqrt()).max(self.margin)
    }

    pub fn is_novel_batch(&self, mean_error: f64, n: usize) -> bool {
        mean_error > self.batch_threshold(n)
    }
}

pub fn is_novel(error: f64, stats: &CalibrationStats) -> bool {
    stats.is_novel(error)
}
