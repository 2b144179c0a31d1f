mod common;

use mbrain_core::datasets::{CrowdedManifold, ManifoldConfig, ManifoldTask};
use mbrain_core::inference::{predict_with_ood, resolve_sensitivity, Sensitivity};
use mbrain_core::nn::{distill_kl, grad_check, softmax_t, Activation, DenseNet, GradCheckLoss, Prng};
use mbrain_core::routers::CalibrationStats;
use ndarray::{Array1, Array2, Axis};

const ACTIVATIONS: [Activation; 4] = [Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh];

fn random(rows: usize, cols: usize, p: &mut Prng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || p.normal())
}

#[test]
fn grad_check_every_layer_and_loss() {
    let mut p = Prng::new(11);
    for hidden in ACTIVATIONS {
        for output in ACTIVATIONS {
            let net = DenseNet::<f64>::mlp(&[5, 7, 4], hidden, output, &mut p).unwrap();
            let x = random(6, 5, &mut p);
            let losses = [
                GradCheckLoss::Mse { target: random(6, 4, &mut p) },
                GradCheckLoss::CrossEntropy { labels: vec![0, 1, 2, 3, 1, 2] },
                GradCheckLoss::Distill { teacher_logits: random(6, 4, &mut p), temperature: 2.0 },
            ];
            for loss in &losses {
                let err = grad_check(&net, loss, &x.view()).unwrap();
                assert!(err < 1e-4, "{hidden:?}/{output:?} {loss:?}: {err}");
            }
        }
    }
}

#[test]
fn distillation_scales_with_temperature_squared() {
    let mut p = Prng::new(5);
    for t in [0.5, 1.0, 2.0, 4.0] {
        let zt = random(8, 5, &mut p);
        let zs = random(8, 5, &mut p);
        let (loss, _) = distill_kl(&zt.view(), &zs.view(), t).unwrap();
        let pt = softmax_t(&zt.view(), t).unwrap();
        let ps = softmax_t(&zs.view(), t).unwrap();
        let kl = (&pt * &(pt.mapv(f64::ln) - ps.mapv(f64::ln))).sum() / 8.0;
        assert!((loss / kl - t * t).abs() < 1e-5, "T={t}: {}", loss / kl);
    }
}

#[test]
fn threshold_law_is_exact() {
    let cases: [(&[f64], f64); 3] = [(&[0.1, 0.2, 0.3, 0.4], 0.0), (&[0.1, 0.1001, 0.0999], 0.05), (&[0.02; 5], 0.01)];
    for (errors, m) in cases {
        let s = CalibrationStats::from_errors(errors, m).unwrap();
        assert_eq!(s.tau, s.mu_cal + (3.0 * s.sigma_cal).max(m));
        assert_eq!(s.margin, m);
    }
}

#[test]
fn manifold_centers_differ_by_twice_the_offset() {
    let gen = CrowdedManifold::new(ManifoldConfig::default()).unwrap();
    let d = gen.config().ambient_dim;
    let mean = |task| {
        let mut acc = Array1::<f64>::zeros(d);
        for chunk in 0..10 {
            let x = gen.sample(task, 1000, 100 + chunk);
            acc += &x.mapv(f64::from).sum_axis(Axis(0));
        }
        acc / 10_000.0
    };
    let diff = mean(ManifoldTask::A) - mean(ManifoldTask::B);
    let u = gen.direction().mapv(f64::from);
    let projected = diff.dot(&u) / d as f64;
    assert!((projected - 0.30).abs() < 0.02, "{projected}");
}

#[test]
fn sharpened_gate_follows_the_best_router() {
    let p = common::two_task_pipeline();
    let lib = p.library();
    let s = 10.0 * resolve_sensitivity(lib, Sensitivity::Auto);
    let mut x = common::blob_task(0.0, 40, 9).features;
    x.append(Axis(0), common::blob_task(3.0, 40, 10).features.view()).unwrap();
    let preds = predict_with_ood(lib, &x.view(), Sensitivity::Fixed(s), 3).unwrap();
    for (i, pred) in preds.iter().enumerate() {
        if pred.ood_rejected {
            continue;
        }
        let best = pred.errors.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let rec = &lib.records()[best];
        let z = rec.student.forward(&x.slice(ndarray::s![i..i + 1, ..])).unwrap();
        let local = z.row(0).iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(pred.class, Some(rec.slice.offset + local), "row {i}");
    }
}
