//! Loss primitives and their gradients.
//!
//! Every batch loss is a mean over rows; the returned gradients already carry
//! the `1 / batch` factor so `DenseNet::backward` can simply sum.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{Scalar, LOG_FLOOR};
use crate::error::{dim_err, Error, Result};

fn same_shape<T>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(dim_err!("shapes {:?} and {:?} differ", a.dim(), b.dim()));
    }
    Ok(())
}

fn check_labels<T>(rows: &ArrayView2<T>, labels: &[usize]) -> Result<()> {
    if rows.nrows() != labels.len() {
        return Err(dim_err!("{} rows but {} labels", rows.nrows(), labels.len()));
    }
    let classes = rows.ncols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Row-wise softmax of `logits / temperature`, shift-stabilized.
pub fn softmax_t<T: Scalar>(logits: &ArrayView2<T>, temperature: T) -> Result<Array2<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under row distributions `probs`.
pub fn cross_entropy<T: Scalar>(probs: &ArrayView2<T>, labels: &[usize]) -> Result<T> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let floor = T::lit(LOG_FLOOR);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(floor).ln())
        .sum();
    Ok(total / T::lit(labels.len() as f64))
}

/// Softmax cross-entropy from raw logits; returns the mean loss and its
/// gradient with respect to the logits.
pub fn cross_entropy_with_logits<T: Scalar>(
    logits: &ArrayView2<T>,
    labels: &[usize],
) -> Result<(T, Array2<T>)> {
    check_labels(logits, labels)?;
    let probs = softmax_t(logits, T::one())?;
    let loss = cross_entropy(&probs.view(), labels)?;
    let n = T::lit(labels.len().max(1) as f64);
    let mut grad = probs;
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= T::one();
    }
    grad.mapv_inplace(|g| g / n);
    Ok((loss, grad))
}

pub fn argmax_rows<T: Scalar>(scores: &ArrayView2<T>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(scores: &ArrayView2<T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Result<T> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = x - y;
        total += d * d;
    });
    Ok(total / T::lit(a.len() as f64))
}

/// Per-row mean squared error.
pub fn mse_rows<T: Scalar>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Result<Array1<T>> {
    same_shape(a, b)?;
    let cols = T::lit(a.ncols().max(1) as f64);
    let mut diff = a.to_owned();
    diff -= b;
    diff.mapv_inplace(|d| d * d);
    Ok(diff.sum_axis(Axis(1)).mapv(|s| s / cols))
}

/// `mse(pred, target)` and its gradient with respect to `pred`.
pub fn mse_with_grad<T: Scalar>(pred: &ArrayView2<T>, target: &ArrayView2<T>) -> Result<(T, Array2<T>)> {
    same_shape(pred, target)?;
    let n = T::lit(pred.len().max(1) as f64);
    let mut grad = pred.to_owned();
    grad -= target;
    let loss = grad.iter().map(|&d| d * d).sum::<T>() / n;
    let scale = T::lit(2.0) / n;
    grad.mapv_inplace(|d| d * scale);
    Ok((loss, grad))
}

/// Temperature-scaled distillation loss
/// `T² · mean_rows KL(softmax(z_t / T) ‖ softmax(z_s / T))`
/// and its gradient with respect to the student logits `z_s`.
///
/// Teacher logits enter as constants: no gradient flows back to them.
pub fn distill_kl<T: Scalar>(
    teacher_logits: &ArrayView2<T>,
    student_logits: &ArrayView2<T>,
    temperature: T,
) -> Result<(T, Array2<T>)> {
    same_shape(teacher_logits, student_logits)?;
    let p_t = softmax_t(teacher_logits, temperature)?;
    let p_s = softmax_t(student_logits, temperature)?;
    let floor = T::lit(LOG_FLOOR);
    let rows = T::lit(p_t.nrows().max(1) as f64);
    let mut kl = T::zero();
    Zip::from(&p_t).and(&p_s).for_each(|&pt, &ps| {
        if pt > T::zero() {
            kl += pt * (pt.max(floor).ln() - ps.max(floor).ln());
        }
    });
    let t2 = temperature * temperature;
    let loss = t2 * kl / rows;
    // d/dz_s [T² KL] = T (p_s - p_t)
    let mut grad = p_s;
    grad -= &p_t;
    let scale = temperature / rows;
    grad.mapv_inplace(|g| g * scale);
    Ok((loss, grad))
}

/// Closed-form `KL(N(mean, exp(logvar)) ‖ N(0, I))` per row.
pub fn gaussian_kl_rows<T: Scalar>(mean: &ArrayView2<T>, logvar: &ArrayView2<T>) -> Result<Array1<T>> {
    same_shape(mean, logvar)?;
    let half = T::lit(0.5);
    let mut terms = mean.mapv(|m| m * m);
    Zip::from(&mut terms)
        .and(logvar)
        .for_each(|t, &lv| *t = half * (*t + lv.exp() - T::one() - lv));
    Ok(terms.sum_axis(Axis(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let p = softmax_t(&array![[0.7, 0.7, 0.7, 0.7]].view(), 3.0).unwrap();
        for &v in p.iter() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax_t(&array![[0.0, 3f64.ln()]].view(), 1.0).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 0.75, epsilon = 1e-12);

        let e = std::f64::consts::E;
        let p = softmax_t(&array![[2.0, 0.0]].view(), 2.0).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 0]], 0.7311, epsilon = 1e-4);
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let z = array![[1.0, 2.0]];
        assert!(matches!(softmax_t(&z.view(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(softmax_t(&z.view(), -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let certain = array![[0.0, 1.0, 0.0]];
        assert_eq!(cross_entropy(&certain.view(), &[1]).unwrap(), 0.0);

        let uniform = Array2::from_elem((1, 5), 0.2);
        assert_abs_diff_eq!(cross_entropy(&uniform.view(), &[3]).unwrap(), 5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(5f64.ln(), 1.6094, epsilon = 1e-4);

        let quarter = array![[0.25, 0.75]];
        assert_abs_diff_eq!(cross_entropy(&quarter.view(), &[0]).unwrap(), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = array![[0.5, 0.5]];
        assert!(matches!(cross_entropy(&p.view(), &[2]), Err(Error::Domain(_))));
    }

    #[test]
    fn mse_values() {
        let a = array![[1.0, 0.0]];
        assert_eq!(mse(&a.view(), &a.view()).unwrap(), 0.0);
        assert_eq!(mse(&a.view(), &array![[0.0, 0.0]].view()).unwrap(), 0.5);
        assert_eq!(mse(&array![[3.0]].view(), &array![[1.0]].view()).unwrap(), 4.0);
        assert!(matches!(mse(&a.view(), &array![[1.0]].view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn distill_hand_values() {
        let zt = array![[1.0, 0.0]];
        let zs = array![[0.0, 0.0]];
        let (l1, _) = distill_kl(&zt.view(), &zs.view(), 1.0).unwrap();
        assert_abs_diff_eq!(l1, 0.111, epsilon = 5e-4);
        let (l2, _) = distill_kl(&zt.view(), &zs.view(), 2.0).unwrap();
        assert_abs_diff_eq!(l2, 0.121, epsilon = 5e-4);
        assert_abs_diff_eq!(l2 / 4.0, 0.0303, epsilon = 1e-4);
    }

    #[test]
    fn distill_fixed_point_has_zero_gradient() {
        let z = array![[0.3, -1.2, 2.0], [1.0, 1.0, -0.5]];
        let (loss, grad) = distill_kl(&z.view(), &z.view(), 2.0).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
        assert!(grad.iter().all(|g: &f64| g.abs() < 1e-12));
    }

    #[test]
    fn gaussian_kl_values() {
        let zero = array![[0.0, 0.0]];
        assert_eq!(gaussian_kl_rows(&zero.view(), &zero.view()).unwrap()[0], 0.0);
        let kl = gaussian_kl_rows(&array![[1.0]].view(), &array![[0.0]].view()).unwrap();
        assert_abs_diff_eq!(kl[0], 0.5, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex_and_shift_invariant(
            row in prop::collection::vec(-20.0f64..20.0, 2..8),
            shift in -50.0f64..50.0,
            t in 0.1f64..5.0,
        ) {
            let z = Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            let p = softmax_t(&z.view(), t).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted = z.mapv(|v| v + shift);
            let q = softmax_t(&shifted.view(), t).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn distill_scales_with_temperature_squared(
            zt in prop::collection::vec(-5.0f64..5.0, 4),
            zs in prop::collection::vec(-5.0f64..5.0, 4),
            t in 0.5f64..6.0,
        ) {
            let a = Array2::from_shape_vec((1, 4), zt).unwrap();
            let b = Array2::from_shape_vec((1, 4), zs).unwrap();
            let (loss, _) = distill_kl(&a.view(), &b.view(), t).unwrap();
            let pt = softmax_t(&a.view(), t).unwrap();
            let ps = softmax_t(&b.view(), t).unwrap();
            let kl: f64 = pt.iter().zip(ps.iter()).map(|(p, q)| p * (p / q).ln()).sum();
            prop_assert!(kl >= -1e-12);
            if kl > 1e-9 {
                prop_assert!(((loss / kl) - t * t).abs() < 1e-5);
            }
        }
    }
}
