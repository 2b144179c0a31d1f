use std::collections::VecDeque;

/// Minimum-viable-manifold gate: counts consecutive batches on which the
/// teacher meets its accuracy target and the router loss is stable. Any
/// failing batch resets the count.
#[derive(Debug, Clone)]
pub struct MvmTracker {
    required: usize,
    target_accuracy: f64,
    window: usize,
    tolerance: f64,
    losses: VecDeque<f64>,
    streak: usize,
}

impl MvmTracker {
    pub fn new(required: usize, target_accuracy: f64, window: usize, tolerance: f64) -> Self {
        Self { required, target_accuracy, window, tolerance, losses: VecDeque::new(), streak: 0 }
    }

    /// Router stability: every loss in the trailing window lies within
    /// `tolerance` (relative) of the window mean.
    pub fn router_stable(&self) -> bool {
        if self.losses.is_empty() {
            return false;
        }
        let mean = self.losses.iter().sum::<f64>() / self.losses.len() as f64;
        self.losses.iter().all(|&l| (l - mean).abs() <= self.tolerance * mean.abs())
    }

    /// Records one batch; `eligible` is false while the warm-up gate is
    /// still closed. Returns whether the gate is now satisfied.
    pub fn observe(&mut self, teacher_accuracy: f64, router_loss: f64, eligible: bool) -> bool {
        self.losses.push_back(router_loss);
        if self.losses.len() > self.window {
            self.losses.pop_front();
        }
        if eligible && teacher_accuracy >= self.target_accuracy && self.router_stable() {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.passed()
    }

    pub fn streak(&self) -> usize {
        self.streak
    }

    pub fn passed(&self) -> bool {
        self.streak >= self.required
    }
}
