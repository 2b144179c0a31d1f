//! Tight-bottleneck autoencoder router.
//!
//! `input → hidden (relu) → k (linear)` followed by
//! `k → hidden (relu) → input (linear)`; no normalization layers. The
//! familiarity signal is the per-row reconstruction MSE.

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{mse_rows, mse_with_grad, Activation, Adam, AdamConfig, DenseNet, Prng};

#[derive(Debug, Clone)]
pub struct TbaeRouter {
    pub(crate) encoder: DenseNet,
    pub(crate) decoder: DenseNet,
    k: usize,
    optim: Option<(Adam, Adam)>,
    adam: AdamConfig,
}

impl TbaeRouter {
    pub fn new(input_dim: usize, hidden: usize, k: usize, adam: AdamConfig, prng: &mut Prng) -> Result<Self> {
        let encoder = DenseNet::mlp(&[input_dim, hidden, k], Activation::Relu, Activation::Linear, prng)?;
        let decoder = DenseNet::mlp(&[k, hidden, input_dim], Activation::Relu, Activation::Linear, prng)?;
        Ok(Self::from_parts(encoder, decoder, adam))
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, adam: AdamConfig) -> Self {
        let k = encoder.output_dim();
        Self { encoder, decoder, k, optim: None, adam }
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

    pub fn reconstruct(&self, h: &ArrayView2<f32>) -> Result<ndarray::Array2<f32>> {
        let code = self.encoder.predict(h)?;
        self.decoder.predict(&code.view())
    }

    /// Per-row reconstruction error.
    pub fn score(&self, h: &ArrayView2<f32>) -> Result<Array1<f32>> {
        let recon = self.reconstruct(h)?;
        mse_rows(h, &recon.view())
    }

    /// One Adam step on the reconstruction loss; returns the batch loss
    /// measured before the update.
    pub fn train_step(&mut self, h: &ArrayView2<f32>) -> Result<f32> {
        self.train_step_scaled(h, 1.0)
    }

    /// As [`TbaeRouter::train_step`] with the gradient multiplied by `scale`.
    pub fn train_step_scaled(&mut self, h: &ArrayView2<f32>, scale: f32) -> Result<f32> {
        if self.encoder.is_frozen() || self.decoder.is_frozen() {
            return Err(Error::Usage("training a frozen router".into()));
        }
        let (code, enc_cache) = self.encoder.forward(h)?;
        let (recon, dec_cache) = self.decoder.forward(&code.view())?;
        let (loss, mut grad) = mse_with_grad(&recon.view(), h)?;
        grad.mapv_inplace(|g| g * scale);
        let dec_back = self.decoder.backward(&dec_cache, &grad)?;
        let enc_grads = self.encoder.param_grads(&enc_cache, &dec_back.grad_input)?;
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
    use ndarray::{array, Array2};

    fn identity_router() -> TbaeRouter {
        let eye = |n: usize| DenseLayer {
            weight: Array2::<f32>::eye(n),
            bias: Array1::zeros(n),
            activation: Activation::Linear,
        };
        let enc = DenseNet::from_layers(vec![eye(2)]).unwrap();
        let dec = DenseNet::from_layers(vec![eye(2)]).unwrap();
        TbaeRouter::from_parts(enc, dec, AdamConfig::default())
    }

    #[test]
    fn identity_composition_scores_zero() {
        let r = identity_router();
        let e = r.score(&array![[0.3, -0.7], [1.0, 2.0]].view()).unwrap();
        assert_eq!(e, array![0.0, 0.0]);
    }

    #[test]
    fn hand_reconstruction_error() {
        let mut r = identity_router();
        // zero decoder reconstructs everything as the origin
        r.decoder.layers_mut().unwrap()[0].weight.fill(0.0);
        let e = r.score(&array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(e[0], 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let r = identity_router();
        assert!(matches!(r.score(&array![[1.0, 0.0, 2.0]].view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn frozen_router_refuses_training() {
        let mut r = identity_router();
        r.freeze();
        assert!(matches!(r.train_step(&array![[1.0, 0.0]].view()), Err(Error::Usage(_))));
    }

    #[test]
    fn identical_rows_are_fit_almost_exactly() {
        let mut prng = Prng::new(21);
        let mut r = TbaeRouter::new(16, 32, 2, AdamConfig::default(), &mut prng).unwrap();
        let row = Array1::from_shape_fn(16, |i| ((i as f32) * 0.37).sin() * 0.5);
        let batch = Array2::from_shape_fn((8, 16), |(_, j)| row[j]);
        let mut last = f32::MAX;
        for _ in 0..1500 {
            last = r.train_step(&batch.view()).unwrap();
        }
        assert!(last < 1e-4, "{last}");
    }
}
