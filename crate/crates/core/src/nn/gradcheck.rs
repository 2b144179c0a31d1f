use ndarray::{Array2, ArrayView2};

use super::{cross_entropy_with_logits, distill_kl, mse_with_grad, DenseNet};
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;
/// Magnitude below which analytic and numeric values are compared absolutely.
const FLOOR: f64 = 1e-6;

/// Loss applied to a network output during a gradient check.
#[derive(Debug, Clone)]
pub enum GradCheckLoss {
    Mse { target: Array2<f64> },
    CrossEntropy { labels: Vec<usize> },
    Distill { teacher_logits: Array2<f64>, temperature: f64 },
}

impl GradCheckLoss {
    pub fn eval(&self, output: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
        match self {
            GradCheckLoss::Mse { target } => mse_with_grad(output, &target.view()),
            GradCheckLoss::CrossEntropy { labels } => cross_entropy_with_logits(output, labels),
            GradCheckLoss::Distill { teacher_logits, temperature } => {
                distill_kl(&teacher_logits.view(), output, *temperature)
            }
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(FLOOR);
    (a - n).abs() / scale
}

/// Compares back-propagated gradients (parameters and input) with central
/// finite differences and returns the maximum relative error.
pub fn grad_check(net: &DenseNet<f64>, loss: &GradCheckLoss, batch: &ArrayView2<f64>) -> Result<f64> {
    if net.is_frozen() {
        return Err(Error::Usage("gradient check needs a trainable network".into()));
    }
    let (out, cache) = net.forward(batch)?;
    let (_, grad_out) = loss.eval(&out.view())?;
    let back = net.backward(&cache, &grad_out)?;
    let analytic = back.param_grads.expect("trainable network").flat();

    let eval = |n: &DenseNet<f64>, x: &ArrayView2<f64>| -> Result<f64> {
        let out = n.predict(x)?;
        Ok(loss.eval(&out.view())?.0)
    };

    let mut worst = 0.0f64;
    let params = net.flat_params();
    let mut probe = net.clone();
    for (i, &p) in params.iter().enumerate() {
        probe.set_flat_param(i, p + STEP);
        let up = eval(&probe, batch)?;
        probe.set_flat_param(i, p - STEP);
        let down = eval(&probe, batch)?;
        probe.set_flat_param(i, p);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }

    let mut x = batch.to_owned();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let v = x[[r, c]];
        x[[r, c]] = v + STEP;
        let up = eval(net, &x.view())?;
        x[[r, c]] = v - STEP;
        let down = eval(net, &x.view())?;
        x[[r, c]] = v;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(back.grad_input[[r, c]], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Prng};
    use ndarray::Array1;

    fn random_batch(prng: &mut Prng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || prng.uniform(-1.0, 1.0))
    }

    #[test]
    fn linear_net_mse() {
        let mut prng = Prng::new(1);
        let net = DenseNet::<f64>::mlp(&[4, 3], Activation::Linear, Activation::Linear, &mut prng).unwrap();
        let x = random_batch(&mut prng, 5, 4);
        let target = random_batch(&mut prng, 5, 3);
        let err = grad_check(&net, &GradCheckLoss::Mse { target }, &x.view()).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_net_away_from_kinks() {
        let mut prng = Prng::new(2);
        let mut net = DenseNet::<f64>::mlp(&[3, 6, 2], Activation::Relu, Activation::Linear, &mut prng).unwrap();
        // positive biases keep every hidden unit away from the kink
        net.layers_mut().unwrap()[0].bias.fill(2.0);
        let x = random_batch(&mut prng, 4, 3);
        let err = grad_check(&net, &GradCheckLoss::CrossEntropy { labels: vec![0, 1, 1, 0] }, &x.view()).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_net_zero_input() {
        let net = DenseNet::from_layers(vec![DenseLayer {
            weight: Array2::<f64>::zeros((3, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = Array2::zeros((2, 3));
        let loss = GradCheckLoss::Mse { target: Array2::zeros((2, 2)) };
        assert_eq!(grad_check(&net, &loss, &x.view()).unwrap(), 0.0);
    }

    #[test]
    fn every_activation_and_loss() {
        let acts = [Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh];
        for (seed, &hidden) in acts.iter().enumerate() {
            let mut prng = Prng::new(100 + seed as u64);
            let net =
                DenseNet::<f64>::mlp(&[5, 8, 6, 3], hidden, Activation::Linear, &mut prng).unwrap();
            let x = random_batch(&mut prng, 6, 5);
            let losses = [
                GradCheckLoss::Mse { target: random_batch(&mut prng, 6, 3) },
                GradCheckLoss::CrossEntropy { labels: vec![0, 1, 2, 2, 1, 0] },
                GradCheckLoss::Distill { teacher_logits: random_batch(&mut prng, 6, 3), temperature: 2.0 },
            ];
            for loss in &losses {
                let err = grad_check(&net, loss, &x.view()).unwrap();
                assert!(err < 1e-4, "{hidden:?} {loss:?}: {err}");
            }
        }
    }
}
