//! Synthetic "crowded manifold" embeddings.
//!
//! Both tasks live on the same `d`-dimensional linear manifold embedded in a
//! high-dimensional ambient space; they differ only by a small shift of their
//! centers along a fixed direction `u`:
//!
//! ```text
//! x = c_global + s_t · offset · u + z · M + noise
//! z ~ N(0, I_d),  noise ~ N(0, sigma² I),  s_A = +1, s_B = -1
//! ```
//!
//! `u` has unit RMS entries (±1), so `offset` is the per-coordinate shift.
//! `M` (d × ambient) has entries `N(0, basis_scale² / d)`, giving each ambient
//! coordinate a signal variance of `basis_scale²`. `M`, `u` and `c_global`
//! derive from the seed alone and are shared by both tasks.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::LabeledSet;
use crate::nn::{argmax_rows, Prng};

pub const MBDS_MAGIC: &[u8; 4] = b"MBDS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub center_offset: f64,
    pub ambient_noise_sigma: f64,
    /// Per-coordinate standard deviation of the manifold signal `z · M`.
    pub basis_scale: f64,
    /// Per-coordinate scale of the shared global context `c_global`.
    pub context_scale: f64,
    pub samples_per_task: usize,
    pub holdout_per_task: usize,
    pub seed: u64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            ambient_dim: 4096,
            intrinsic_dim: 12,
            center_offset: 0.15,
            ambient_noise_sigma: 0.02,
            basis_scale: 0.3,
            context_scale: 0.1,
            samples_per_task: 5000,
            holdout_per_task: 500,
            seed: 0,
        }
    }
}

impl ManifoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intrinsic_dim == 0 || self.intrinsic_dim >= self.ambient_dim {
            return Err(Error::Config(format!(
                "intrinsic_dim {} must lie in [1, ambient_dim = {})",
                self.intrinsic_dim, self.ambient_dim
            )));
        }
        if !(self.center_offset >= 0.0) {
            return Err(Error::Config("center_offset must be non-negative".into()));
        }
        if !(self.ambient_noise_sigma >= 0.0 && self.basis_scale >= 0.0 && self.context_scale >= 0.0) {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldTask {
    A,
    B,
}

impl ManifoldTask {
    fn sign(self) -> f64 {
        match self {
            ManifoldTask::A => 1.0,
            ManifoldTask::B => -1.0,
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            ManifoldTask::A => 0xA0,
            ManifoldTask::B => 0xB0,
        }
    }
}

/// Shared generator geometry.
#[derive(Debug, Clone)]
pub struct CrowdedManifold {
    config: ManifoldConfig,
    basis: Array2<f32>,
    direction: Array1<f32>,
    context: Array1<f32>,
}

impl CrowdedManifold {
    pub fn new(config: ManifoldConfig) -> Result<Self> {
        config.validate()?;
        let root = Prng::new(config.seed);
        let (d, n) = (config.intrinsic_dim, config.ambient_dim);
        let basis_std = config.basis_scale / (d as f64).sqrt();
        let mut p = root.child(1);
        let basis = Array2::from_shape_simple_fn((d, n), || (basis_std * p.normal()) as f32);
        let mut p = root.child(2);
        let direction = Array1::from_shape_simple_fn(n, || if p.below(2) == 0 { 1.0 } else { -1.0 });
        let mut p = root.child(3);
        let context = Array1::from_shape_simple_fn(n, || (config.context_scale * p.normal()) as f32);
        Ok(Self { config, basis, direction, context })
    }

    pub fn config(&self) -> &ManifoldConfig {
        &self.config
    }

    /// The unit-RMS shift direction `u`.
    pub fn direction(&self) -> &Array1<f32> {
        &self.direction
    }

    pub fn center(&self, task: ManifoldTask) -> Array1<f32> {
        let shift = (task.sign() * self.config.center_offset) as f32;
        &self.context + &self.direction.mapv(|u| u * shift)
    }

    fn draw(&self, task: ManifoldTask, count: usize, stream: u64) -> (Array2<f32>, Array2<f32>) {
        let mut p = Prng::new(self.config.seed).child(task.stream_tag()).child(stream);
        let d = self.config.intrinsic_dim;
        let z = Array2::from_shape_simple_fn((count, d), || p.normal() as f32);
        let mut x = z.dot(&self.basis);
        x += &self.center(task);
        let sigma = self.config.ambient_noise_sigma;
        if sigma > 0.0 {
            x.mapv_inplace(|v| v + (sigma * p.normal()) as f32);
        }
        (x, z)
    }

    /// Draws `count` samples from `stream` (an independent seeded stream).
    pub fn sample(&self, task: ManifoldTask, count: usize, stream: u64) -> Array2<f32> {
        self.draw(task, count, stream).0
    }

    /// Same samples as [`CrowdedManifold::sample`], labeled by which of the
    /// first `classes` latent coordinates is largest.
    pub fn sample_labeled(&self, task: ManifoldTask, count: usize, stream: u64, classes: usize) -> Result<LabeledSet> {
        if classes < 2 || classes > self.config.intrinsic_dim {
            return Err(Error::Config(format!(
                "{classes} classes need 2..={} latent coordinates",
                self.config.intrinsic_dim
            )));
        }
        let (x, z) = self.draw(task, count, stream);
        let labels = argmax_rows(&z.slice(s![.., ..classes]));
        LabeledSet::new(x, labels)
    }
}

/// Train and holdout features for one task.
pub fn gen_crowded_manifold(config: &ManifoldConfig, task: ManifoldTask) -> Result<(Array2<f32>, Array2<f32>)> {
    let gen = CrowdedManifold::new(config.clone())?;
    Ok((
        gen.sample(task, config.samples_per_task, 0),
        gen.sample(task, config.holdout_per_task, 1),
    ))
}

/// `MBDS` file: magic, ambient dim u32, count u32, then little-endian f32 rows.
pub fn write_mbds<W: Write>(rows: &Array2<f32>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * rows.len());
    buf.extend_from_slice(MBDS_MAGIC);
    buf.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
    buf.extend_from_slice(&(rows.nrows() as u32).to_le_bytes());
    for v in rows.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::Format(format!("MBDS stream: {e}")))
}

pub fn read_mbds<R: Read>(mut r: R) -> Result<Array2<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(format!("MBDS stream: {e}")))?;
    if bytes.len() < 12 || &bytes[0..4] != MBDS_MAGIC {
        return Err(Error::Format("missing MBDS header".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[12..];
    if payload.len() != 4 * dim * count {
        return Err(Error::Format(format!(
            "MBDS payload holds {} bytes, header promises {}",
            payload.len(),
            4 * dim * count
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((count, dim), values).expect("length checked"))
}
