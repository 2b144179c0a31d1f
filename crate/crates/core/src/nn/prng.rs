use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ndarray::{Array2, ArrayView2, Zip};

use super::Scalar;
use crate::error::{dim_err, Result};

/// Seeded deterministic generator (ChaCha8).
///
/// The same seed yields a bit-identical stream on the same build. Child
/// generators derived with [`Prng::child`] depend only on the parent seed and
/// the tag, never on how much of the parent stream was consumed.
#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag into a new, well-spread seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, tag: u64) -> Prng {
        Prng::new(derive_seed(self.seed, tag))
    }

    /// Draws a fresh seed from this stream.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for Prng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Reparameterized draw `mean + exp(logvar / 2) · ε` with `ε ~ N(0, I)`.
pub fn sample_gaussian<T: Scalar>(
    prng: &mut Prng,
    mean: &ArrayView2<T>,
    logvar: &ArrayView2<T>,
) -> Result<Array2<T>> {
    if mean.dim() != logvar.dim() {
        return Err(dim_err!("mean {:?} vs logvar {:?}", mean.dim(), logvar.dim()));
    }
    let half = T::lit(0.5);
    let mut out = mean.to_owned();
    Zip::from(&mut out)
        .and(logvar)
        .for_each(|o, &lv| *o += (lv * half).exp() * T::lit(prng.normal()));
    Ok(out)
}
