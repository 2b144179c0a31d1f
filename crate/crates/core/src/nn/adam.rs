use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, Scalar};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state bound to one network's parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    config: AdamConfig,
    step: u64,
    first: Gradients<T>,
    second: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &DenseNet<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one bias-corrected Adam update to `net`.
    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != self.first.layers.len() {
            return Err(dim_err!(
                "{} gradient layers for an optimizer over {} layers",
                grads.layers.len(),
                self.first.layers.len()
            ));
        }
        for (i, (g, m)) in grads.layers.iter().zip(&self.first.layers).enumerate() {
            if g.weight.dim() != m.weight.dim() || g.bias.dim() != m.bias.dim() {
                return Err(dim_err!("gradient shape mismatch at layer {i}"));
            }
        }
        let layers = net.layers_mut()?;
        if layers.len() != grads.layers.len() {
            return Err(dim_err!("optimizer was built for a different network"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.dim() != grads.layers[i].weight.dim() {
                return Err(dim_err!("parameter shape mismatch at layer {i}"));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one_b1 = T::lit(1.0 - c.beta1);
        let one_b2 = T::lit(1.0 - c.beta2);
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);

        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (((layer, g), m), v) in layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }

        let finite = layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Domain("non-finite parameter after Adam step".into()));
        }
        Ok(())
    }
}
