use ndarray::{Array2, ArrayView2};

use super::ADAPTER_HIDDEN;
use crate::error::{Error, Result};
use crate::nn::{distill_kl, Activation, Adam, AdamConfig, DenseNet, Prng};

/// Per-task adapter `h → local logits`, trained only by distillation.
#[derive(Debug, Clone)]
pub struct StudentExpert {
    id: usize,
    adapter: DenseNet,
    optim: Option<Adam>,
    digest: Option<String>,
}

impl StudentExpert {
    /// `input_dim → 64 → classes`.
    pub fn new(id: usize, input_dim: usize, classes: usize, adam: AdamConfig, prng: &mut Prng) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("student needs at least one class".into()));
        }
        let adapter =
            DenseNet::mlp(&[input_dim, ADAPTER_HIDDEN, classes], Activation::Relu, Activation::Linear, prng)?;
        let optim = Some(Adam::new(&adapter, adam));
        Ok(Self { id, adapter, optim, digest: None })
    }

    /// Wraps a trained adapter and freezes it, checking `digest` when given.
    pub fn from_frozen(id: usize, mut adapter: DenseNet, digest: Option<&str>) -> Result<Self> {
        adapter.freeze();
        let actual = adapter.digest();
        if let Some(expected) = digest {
            if expected != actual {
                return Err(Error::Integrity(format!("expert {id}: digest {actual} != recorded {expected}")));
            }
        }
        Ok(Self { id, adapter, optim: None, digest: Some(actual) })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn classes(&self) -> usize {
        self.adapter.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.adapter.input_dim()
    }

    pub fn adapter(&self) -> &DenseNet {
        &self.adapter
    }

    pub fn is_frozen(&self) -> bool {
        self.adapter.is_frozen()
    }

    /// Digest recorded at freeze time.
    pub fn frozen_digest(&self) -> Option<&str> {
        self.digest.as_deref()
    }

    /// Digest of the current parameters.
    pub fn digest(&self) -> String {
        self.adapter.digest()
    }

    /// Local logits `z_S`.
    pub fn forward(&self, h: &ArrayView2<f32>) -> Result<Array2<f32>> {
        self.adapter.predict(h)
    }

    /// One Adam step on `beta · T² · KL(softmax(z_T/T) ‖ softmax(z_S/T))`.
    /// `teacher_logits` are constants. Returns the scaled loss.
    pub fn distill_step(
        &mut self,
        h: &ArrayView2<f32>,
        teacher_logits: &ArrayView2<f32>,
        temperature: f32,
        beta: f32,
    ) -> Result<f32> {
        let Some(optim) = self.optim.as_mut().filter(|_| !self.adapter.is_frozen()) else {
            return Err(Error::Usage(format!("expert {} is frozen", self.id)));
        };
        let (z, cache) = self.adapter.forward(h)?;
        let (loss, mut grad) = distill_kl(teacher_logits, &z.view(), temperature)?;
        grad.mapv_inplace(|g| g * beta);
        let grads = self.adapter.param_grads(&cache, &grad)?;
        optim.step(&mut self.adapter, &grads)?;
        Ok(beta * loss)
    }

    /// Freezes the adapter for good and returns its digest.
    pub fn freeze(&mut self) -> Result<String> {
        if self.adapter.is_frozen() {
            return Err(Error::Usage(format!("expert {} is already frozen", self.id)));
        }
        self.adapter.freeze();
        self.optim = None;
        let d = self.adapter.digest();
        self.digest = Some(d.clone());
        Ok(d)
    }
}
