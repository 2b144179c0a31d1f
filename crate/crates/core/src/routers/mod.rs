//! Per-task reconstruction routers and their novelty thresholds.

mod calibration;
mod tbae;
mod vae;

pub use calibration::{is_novel, CalibrationStats};
pub use tbae::TbaeRouter;
pub use vae::{ElboTerms, VaeRouter};

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{digest_hex, read_net, write_net, AdamConfig, DenseNet, Prng};

/// Hidden width of router encoders and decoders.
pub const ROUTER_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Tbae,
    Vae,
}

impl std::str::FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tbae" => Ok(RouterKind::Tbae),
            "vae" => Ok(RouterKind::Vae),
            other => Err(Error::Config(format!("unknown router kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for RouterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RouterKind::Tbae => "tbae",
            RouterKind::Vae => "vae",
        })
    }
}

/// Either router family behind one interface.
#[derive(Debug, Clone)]
pub enum Router {
    Tbae(TbaeRouter),
    Vae(VaeRouter),
}

impl Router {
    pub fn new(kind: RouterKind, input_dim: usize, k: usize, adam: AdamConfig, prng: &mut Prng) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("router bottleneck k must be positive".into()));
        }
        Ok(match kind {
            RouterKind::Tbae => Router::Tbae(TbaeRouter::new(input_dim, ROUTER_HIDDEN, k, adam, prng)?),
            RouterKind::Vae => Router::Vae(VaeRouter::new(input_dim, ROUTER_HIDDEN, k, adam, prng)?),
        })
    }

    pub fn kind(&self) -> RouterKind {
        match self {
            Router::Tbae(_) => RouterKind::Tbae,
            Router::Vae(_) => RouterKind::Vae,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Router::Tbae(r) => r.k(),
            Router::Vae(r) => r.k(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Router::Tbae(r) => r.input_dim(),
            Router::Vae(r) => r.input_dim(),
        }
    }

    /// Per-row familiarity error. `noise_seed` drives the VAE sample and is
    /// ignored by the deterministic router.
    pub fn errors(&self, h: &ArrayView2<f32>, noise_seed: u64) -> Result<Array1<f32>> {
        match self {
            Router::Tbae(r) => r.score(h),
            Router::Vae(r) => r.score(h, &mut Prng::new(noise_seed)),
        }
    }

    /// Batch-mean familiarity error.
    pub fn mean_error(&self, h: &ArrayView2<f32>, noise_seed: u64) -> Result<f64> {
        let e = self.errors(h, noise_seed)?;
        Ok(e.iter().map(|&v| v as f64).sum::<f64>() / e.len().max(1) as f64)
    }

    /// One Adam step; returns the unscaled batch loss before the update.
    pub fn train_step(&mut self, h: &ArrayView2<f32>) -> Result<f32> {
        self.train_step_scaled(h, 1.0)
    }

    /// Gradient multiplied by `scale` (the objective weight).
    pub fn train_step_scaled(&mut self, h: &ArrayView2<f32>, scale: f32) -> Result<f32> {
        match self {
            Router::Tbae(r) => r.train_step_scaled(h, scale),
            Router::Vae(r) => r.train_step_scaled(h, scale),
        }
    }

    pub fn freeze(&mut self) {
        match self {
            Router::Tbae(r) => r.freeze(),
            Router::Vae(r) => r.freeze(),
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Router::Tbae(r) => r.is_frozen(),
            Router::Vae(r) => r.is_frozen(),
        }
    }

    fn parts(&self) -> (&DenseNet, &DenseNet) {
        match self {
            Router::Tbae(r) => (r.encoder(), r.decoder()),
            Router::Vae(r) => (r.encoder(), r.decoder()),
        }
    }

    /// Encoder `MBNN` image followed by the decoder image.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (enc, dec) = self.parts();
        let mut buf = Vec::new();
        write_net(enc, &mut buf).expect("writing to memory");
        write_net(dec, &mut buf).expect("writing to memory");
        buf
    }

    /// Rebuilds a frozen router from [`Router::to_bytes`] output.
    pub fn from_bytes(kind: RouterKind, bytes: &[u8]) -> Result<Self> {
        let split = mbnn_len(bytes)?;
        let encoder = read_net(&bytes[..split])?;
        let decoder = read_net(&bytes[split..])?;
        let adam = AdamConfig::default();
        let mut router = match kind {
            RouterKind::Tbae => {
                if encoder.output_dim() != decoder.input_dim() {
                    return Err(Error::Format("router code widths disagree".into()));
                }
                Router::Tbae(TbaeRouter::from_parts(encoder, decoder, adam))
            }
            RouterKind::Vae => Router::Vae(
                VaeRouter::from_parts(encoder, decoder, adam, 0).map_err(|e| Error::Format(e.to_string()))?,
            ),
        };
        router.freeze();
        Ok(router)
    }

    pub fn digest(&self) -> String {
        digest_hex(&self.to_bytes())
    }
}

/// Byte length of the leading `MBNN` image in `bytes`, read from its header.
fn mbnn_len(bytes: &[u8]) -> Result<usize> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| Error::Format("truncated MBNN header".into()))
    };
    let layers = word(8)?;
    let mut len = 12 + 12 * layers;
    for l in 0..layers.min(1 << 10) {
        let (i, o) = (word(12 + 12 * l)?, word(16 + 12 * l)?);
        len += 4 * (i * o + o);
    }
    if len > bytes.len() {
        return Err(Error::Format("truncated MBNN payload".into()));
    }
    Ok(len)
}

/// Scores `holdout` and derives `tau = mu + max(3 sigma, margin)`.
pub fn calibrate_threshold(
    router: &Router,
    holdout: &ArrayView2<f32>,
    margin: f64,
    noise_seed: u64,
) -> Result<CalibrationStats> {
    if holdout.nrows() == 0 {
        return Err(Error::Usage("calibration needs a non-empty holdout".into()));
    }
    let errors: Vec<f64> = router.errors(holdout, noise_seed)?.iter().map(|&v| v as f64).collect();
    CalibrationStats::from_errors(&errors, margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn batch(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
        let mut p = Prng::new(seed);
        Array2::from_shape_simple_fn((rows, cols), || p.uniform(-1.0, 1.0) as f32)
    }

    #[test]
    fn trailing_loss_average_does_not_increase() {
        // the VAE objective is sampled, so its windows get a small allowance
        for (kind, slack) in [(RouterKind::Tbae, 1.0), (RouterKind::Vae, 1.01)] {
            let mut prng = Prng::new(9);
            let mut r = Router::new(kind, 12, 3, AdamConfig::default(), &mut prng).unwrap();
            let x = batch(32, 12, 1);
            let losses: Vec<f32> = (0..200).map(|_| r.train_step(&x.view()).unwrap()).collect();
            let avg = |w: &[f32]| w.iter().sum::<f32>() / w.len() as f32;
            let windows: Vec<f32> = losses.chunks(50).map(avg).collect();
            for pair in windows.windows(2) {
                assert!(pair[1] <= pair[0] * slack, "{kind}: {windows:?}");
            }
        }
    }

    #[test]
    fn bytes_round_trip_and_freeze() {
        for kind in [RouterKind::Tbae, RouterKind::Vae] {
            let mut prng = Prng::new(3);
            let r = Router::new(kind, 7, 2, AdamConfig::default(), &mut prng).unwrap();
            let back = Router::from_bytes(kind, &r.to_bytes()).unwrap();
            assert_eq!(back.digest(), r.digest());
            assert_eq!(back.kind(), kind);
            assert_eq!(back.k(), 2);
            assert!(back.is_frozen());
            let bytes = r.to_bytes();
            assert!(matches!(Router::from_bytes(kind, &bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn calibration_threshold_law() {
        let mut prng = Prng::new(4);
        let r = Router::new(RouterKind::Tbae, 5, 2, AdamConfig::default(), &mut prng).unwrap();
        let h = batch(40, 5, 2);
        let stats = calibrate_threshold(&r, &h.view(), 0.05, 0).unwrap();
        assert!(stats.tau - stats.mu_cal >= 0.05 - 1e-12);
        let empty = Array2::<f32>::zeros((0, 5));
        assert!(matches!(calibrate_threshold(&r, &empty.view(), 0.05, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn frozen_router_is_usage_error_and_kind_parses() {
        let mut prng = Prng::new(5);
        let mut r = Router::new(RouterKind::Vae, 4, 2, AdamConfig::default(), &mut prng).unwrap();
        r.freeze();
        assert!(matches!(r.train_step(&batch(2, 4, 0).view()), Err(Error::Usage(_))));
        assert_eq!("vae".parse::<RouterKind>().unwrap(), RouterKind::Vae);
        assert!(matches!("flow".parse::<RouterKind>(), Err(Error::Config(_))));
    }
}
