//! Variational router scored by the negative ELBO.
//!
//! The encoder emits `[mean | logvar]` (each width `k`); one reparameterized
//! sample is decoded per evaluation. The Gaussian likelihood is implemented as
//! the per-row MSE, and the KL term against `N(0, I)` is in closed form.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::nn::{
    gaussian_kl_rows, mse_rows, mse_with_grad, sample_gaussian, Activation, Adam, AdamConfig, DenseNet, Prng,
};

#[derive(Debug, Clone)]
pub struct VaeRouter {
    pub(crate) encoder: DenseNet,
    pub(crate) decoder: DenseNet,
    k: usize,
    optim: Option<(Adam, Adam)>,
    adam: AdamConfig,
    noise: Prng,
}

/// Terms of the negative ELBO for each row.
#[derive(Debug, Clone)]
pub struct ElboTerms {
    pub reconstruction: Array1<f32>,
    pub kl: Array1<f32>,
}

impl ElboTerms {
    pub fn total(&self) -> Array1<f32> {
        &self.reconstruction + &self.kl
    }
}

impl VaeRouter {
    pub fn new(input_dim: usize, hidden: usize, k: usize, adam: AdamConfig, prng: &mut Prng) -> Result<Self> {
        let encoder = DenseNet::mlp(&[input_dim, hidden, 2 * k], Activation::Relu, Activation::Linear, prng)?;
        let decoder = DenseNet::mlp(&[k, hidden, input_dim], Activation::Relu, Activation::Linear, prng)?;
        Self::from_parts(encoder, decoder, adam, prng.next_seed())
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, adam: AdamConfig, noise_seed: u64) -> Result<Self> {
        if encoder.output_dim() % 2 != 0 || encoder.output_dim() / 2 != decoder.input_dim() {
            return Err(Error::Dimension(format!(
                "encoder emits {} values, decoder expects a {}-wide code",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        let k = decoder.input_dim();
        Ok(Self { encoder, decoder, k, optim: None, adam, noise: Prng::new(noise_seed) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    fn split(&self, stats: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        (
            stats.slice(s![.., ..self.k]).to_owned(),
            stats.slice(s![.., self.k..]).to_owned(),
        )
    }

    /// Reconstruction and KL terms with one sample drawn from `prng`.
    pub fn elbo_terms(&self, h: &ArrayView2<f32>, prng: &mut Prng) -> Result<ElboTerms> {
        let stats = self.encoder.predict(h)?;
        let (mean, logvar) = self.split(&stats);
        let z = sample_gaussian(prng, &mean.view(), &logvar.view())?;
        let recon = self.decoder.predict(&z.view())?;
        Ok(ElboTerms {
            reconstruction: mse_rows(h, &recon.view())?,
            kl: gaussian_kl_rows(&mean.view(), &logvar.view())?,
        })
    }

    /// Per-row negative ELBO.
    pub fn score(&self, h: &ArrayView2<f32>, prng: &mut Prng) -> Result<Array1<f32>> {
        Ok(self.elbo_terms(h, prng)?.total())
    }

    /// One Adam step on the mean negative ELBO; returns the pre-update loss.
    pub fn train_step(&mut self, h: &ArrayView2<f32>) -> Result<f32> {
        self.train_step_scaled(h, 1.0)
    }

    /// As [`VaeRouter::train_step`] with the gradient multiplied by `scale`.
    pub fn train_step_scaled(&mut self, h: &ArrayView2<f32>, scale: f32) -> Result<f32> {
        if self.encoder.is_frozen() || self.decoder.is_frozen() {
            return Err(Error::Usage("training a frozen router".into()));
        }
        let kl_weight = scale / h.nrows().max(1) as f32;
        let (stats, enc_cache) = self.encoder.forward(h)?;
        let (mean, logvar) = self.split(&stats);
        let noise = &mut self.noise;
        let eps = Array2::<f32>::from_shape_simple_fn(mean.raw_dim(), || noise.normal() as f32);
        let std = logvar.mapv(|lv| (0.5 * lv).exp());
        let z = &mean + &(&std * &eps);
        let (recon, dec_cache) = self.decoder.forward(&z.view())?;
        let (recon_loss, mut grad_recon) = mse_with_grad(&recon.view(), h)?;
        grad_recon.mapv_inplace(|g| g * scale);
        let kl = gaussian_kl_rows(&mean.view(), &logvar.view())?;
        let loss = recon_loss + kl.sum() / h.nrows().max(1) as f32;

        let dec_back = self.decoder.backward(&dec_cache, &grad_recon)?;
        let grad_z = dec_back.grad_input;
        let mut grad_stats = Array2::<f32>::zeros(stats.raw_dim());
        {
            let (mut g_mean, mut g_logvar) = grad_stats.view_mut().split_at(ndarray::Axis(1), self.k);
            Zip::from(&mut g_mean)
                .and(&grad_z)
                .and(&mean)
                .for_each(|g, &gz, &mu| *g = gz + mu * kl_weight);
            Zip::from(&mut g_logvar)
                .and(&grad_z)
                .and(&std)
                .and(&eps)
                .and(&logvar)
                .for_each(|g, &gz, &sd, &e, &lv| {
                    *g = gz * 0.5 * sd * e + 0.5 * (lv.exp() - 1.0) * kl_weight;
                });
        }
        let enc_grads = self.encoder.param_grads(&enc_cache, &grad_stats)?;
        let dec_grads = dec_back.param_grads.expect("decoder trainable");
        let adam = self.adam;
        let (enc_opt, dec_opt) = self
            .optim
            .get_or_insert_with(|| (Adam::new(&self.encoder, adam), Adam::new(&self.decoder, adam)));
        enc_opt.step(&mut self.encoder, &enc_grads)?;
        dec_opt.step(&mut self.decoder, &dec_grads)?;
        Ok(loss)
    }

    pub fn freeze(&mut self) {
        self.encoder.freeze();
        self.decoder.freeze();
        self.optim = None;
    }

    pub fn is_frozen(&self) -> bool {
        self.encoder.is_frozen()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Encoder emits mean = x, logvar = -60 (deterministic); decoder is identity.
    fn deterministic_identity(dim: usize) -> VaeRouter {
        let mut w = Array2::<f32>::zeros((dim, 2 * dim));
        for i in 0..dim {
            w[[i, i]] = 1.0;
        }
        let mut b = Array1::<f32>::zeros(2 * dim);
        b.slice_mut(s![dim..]).fill(-60.0);
        let enc = DenseNet::from_layers(vec![DenseLayer { weight: w, bias: b, activation: Activation::Linear }]).unwrap();
        let dec = DenseNet::from_layers(vec![DenseLayer {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
            activation: Activation::Linear,
        }])
        .unwrap();
        VaeRouter::from_parts(enc, dec, AdamConfig::default(), 0).unwrap()
    }

    #[test]
    fn prior_matching_posterior_has_zero_kl() {
        let kl = gaussian_kl_rows(&array![[0.0f32, 0.0]].view(), &array![[0.0f32, 0.0]].view()).unwrap();
        assert_eq!(kl[0], 0.0);
    }

    #[test]
    fn perfect_reconstruction_at_origin_scores_zero() {
        // mean = 0 and logvar = 0 at input 0: encoder zero weights, zero bias
        let enc = DenseNet::from_layers(vec![DenseLayer {
            weight: Array2::<f32>::zeros((1, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let dec = DenseNet::from_layers(vec![DenseLayer {
            weight: Array2::<f32>::zeros((1, 1)),
            bias: Array1::zeros(1),
            activation: Activation::Linear,
        }])
        .unwrap();
        let r = VaeRouter::from_parts(enc, dec, AdamConfig::default(), 0).unwrap();
        let e = r.score(&array![[0.0]].view(), &mut Prng::new(1)).unwrap();
        assert_eq!(e[0], 0.0);
    }

    #[test]
    fn unit_mean_kl_is_half() {
        let r = deterministic_identity(1);
        let t = r.elbo_terms(&array![[1.0]].view(), &mut Prng::new(2)).unwrap();
        // logvar = -60 adds 0.5 (e^-60 - 1 + 60); subtract it to isolate the mean term
        let lv_term = 0.5 * ((-60f32).exp() - 1.0 + 60.0);
        assert_abs_diff_eq!(t.kl[0] - lv_term, 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(t.reconstruction[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_never_negative_and_shapes_checked() {
        let mut prng = Prng::new(3);
        let r = VaeRouter::new(6, 8, 2, AdamConfig::default(), &mut prng).unwrap();
        let x = Array2::from_shape_fn((5, 6), |(i, j)| (i as f32 - j as f32) * 0.2);
        let t = r.elbo_terms(&x.view(), &mut prng).unwrap();
        assert!(t.kl.iter().all(|&v| v >= 0.0));
        assert!(matches!(r.score(&array![[1.0f32]].view(), &mut prng), Err(Error::Dimension(_))));
    }

    #[test]
    fn training_reduces_loss() {
        let mut prng = Prng::new(4);
        let mut r = VaeRouter::new(10, 32, 3, AdamConfig::default(), &mut prng).unwrap();
        let x = Array2::from_shape_fn((32, 10), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0);
        let first: f32 = (0..10).map(|_| r.train_step(&x.view()).unwrap()).sum::<f32>() / 10.0;
        for _ in 0..400 {
            r.train_step(&x.view()).unwrap();
        }
        let last: f32 = (0..10).map(|_| r.train_step(&x.view()).unwrap()).sum::<f32>() / 10.0;
        assert!(last < first, "{first} -> {last}");
    }
}
