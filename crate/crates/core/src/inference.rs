//! Blind prediction over the frozen library.
//!
//! Each router scores every input; inputs no router claims are rejected as
//! out of distribution. Otherwise experts are weighted by
//! `w_i ∝ exp(-ε_i · s)` and their local softmax outputs, zero-padded into
//! the global class space, are mixed with those weights.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax_t;
use crate::pipeline::ExpertLibrary;

/// Contiguous block of global class indices owned by one expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSlice {
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalClassSpace {
    pub total: usize,
    pub slices: Vec<ClassSlice>,
}

impl GlobalClassSpace {
    /// Consecutive slices of the given widths.
    pub fn new(widths: impl IntoIterator<Item = usize>) -> Self {
        let mut total = 0;
        let slices = widths
            .into_iter()
            .map(|width| {
                let s = ClassSlice { offset: total, width };
                total += width;
                s
            })
            .collect();
        Self { total, slices }
    }
}

/// How the routing sensitivity `s` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    /// `ln(1000) / min τ`, recomputed from the library.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Sensitivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Sensitivity::Auto);
        }
        s.parse::<f64>()
            .map(Sensitivity::Fixed)
            .map_err(|_| Error::Config(format!("sensitivity must be 'auto' or a number, got '{s}'")))
    }
}

impl std::fmt::Display for Sensitivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sensitivity::Auto => f.write_str("auto"),
            Sensitivity::Fixed(s) => write!(f, "{s}"),
        }
    }
}

/// `w_i = exp(-ε_i s) / Σ_j exp(-ε_j s)`, evaluated relative to the smallest error.
pub fn soft_route_weights(errors: &[f64], s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("sensitivity must be positive, got {s}")));
    }
    if errors.is_empty() {
        return Err(Error::Usage("routing needs at least one expert".into()));
    }
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = errors.iter().map(|&e| (-(e - min) * s).exp()).collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Local softmax of `logits` placed at `slice` in a zero vector of width
/// `space.total`.
pub fn pad_logits_to_global(logits: &ArrayView1<f32>, slice: ClassSlice, space: &GlobalClassSpace) -> Result<Array1<f64>> {
    if slice.offset + slice.width > space.total {
        return Err(Error::Integrity(format!("slice {slice:?} exceeds {} global classes", space.total)));
    }
    if logits.len() != slice.width {
        return Err(Error::Integrity(format!("{} logits for a slice of width {}", logits.len(), slice.width)));
    }
    let row = logits.mapv(|v| v as f64).insert_axis(ndarray::Axis(0));
    let probs = softmax_t(&row.view(), 1.0)?;
    let mut out = Array1::zeros(space.total);
    out.slice_mut(ndarray::s![slice.offset..slice.offset + slice.width]).assign(&probs.row(0));
    Ok(out)
}

/// `ln(1000) / min τ`: an expert trailing the best by `min τ` gets at most
/// a thousandth of its weight.
pub fn resolve_sensitivity(library: &ExpertLibrary, policy: Sensitivity) -> f64 {
    match policy {
        Sensitivity::Fixed(s) => s,
        Sensitivity::Auto => {
            let min_tau = library.records().iter().map(|r| r.stats.tau).fold(f64::INFINITY, f64::min);
            1000f64.ln() / min_tau
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `None` when rejected.
    pub class: Option<usize>,
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per-router errors for this input.
    pub errors: Vec<f64>,
    pub ood_rejected: bool,
}

/// Per-sample routing and consensus for every row of `h`.
pub fn predict_with_ood(
    library: &ExpertLibrary,
    h: &ArrayView2<f32>,
    sensitivity: Sensitivity,
    noise_seed: u64,
) -> Result<Vec<Prediction>> {
    if library.is_empty() {
        return Err(Error::Usage("prediction needs a non-empty library".into()));
    }
    let s = resolve_sensitivity(library, sensitivity);
    let space = library.class_space();
    let errors = library.router_errors(h, noise_seed)?;
    let logits: Vec<_> = library
        .records()
        .iter()
        .map(|r| r.student.forward(h))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(h.nrows());
    for (i, row) in errors.rows().into_iter().enumerate() {
        let eps: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let rejected = library.records().iter().zip(&eps).all(|(r, &e)| r.stats.is_novel(e));
        if rejected {
            out.push(Prediction { class: None, probs: Vec::new(), weights: Vec::new(), errors: eps, ood_rejected: true });
            continue;
        }
        let weights = soft_route_weights(&eps, s)?;
        let mut probs = Array1::<f64>::zeros(space.total);
        for ((r, z), &w) in library.records().iter().zip(&logits).zip(&weights) {
            probs.scaled_add(w, &pad_logits_to_global(&z.row(i), r.slice, &space)?);
        }
        let class = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
            .0;
        out.push(Prediction { class: Some(class), probs: probs.to_vec(), weights, errors: eps, ood_rejected: false });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(soft_route_weights(&[0.7], 5.0).unwrap(), vec![1.0]);
        let w = soft_route_weights(&[0.2, 0.2, 0.2], 3.0).unwrap();
        for v in w {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let w = soft_route_weights(&[0.1, 0.3], 10.0).unwrap();
        assert_abs_diff_eq!(w[0], 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(w[1], 0.1192, epsilon = 1e-4);
        assert!(matches!(soft_route_weights(&[0.1], 0.0), Err(Error::Domain(_))));
        assert!(matches!(soft_route_weights(&[0.1], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn padding_examples() {
        let space = GlobalClassSpace { total: 7, slices: vec![] };
        let slice = ClassSlice { offset: 3, width: 2 };
        let logits = array![0.9f32.ln(), 0.1f32.ln()];
        let p = pad_logits_to_global(&logits.view(), slice, &space).unwrap();
        let expected = [0.0, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0];
        for (a, b) in p.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
        let outside = ClassSlice { offset: 6, width: 2 };
        assert!(matches!(pad_logits_to_global(&logits.view(), outside, &space), Err(Error::Integrity(_))));
    }

    #[test]
    fn uniform_mixture() {
        let space = GlobalClassSpace::new([2, 2]);
        let zero = array![0.0f32, 0.0];
        let mut mix = Array1::<f64>::zeros(4);
        for s in &space.slices {
            mix.scaled_add(0.5, &pad_logits_to_global(&zero.view(), *s, &space).unwrap());
        }
        assert_eq!(mix.to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn global_space_is_contiguous() {
        let space = GlobalClassSpace::new([5, 5, 3]);
        assert_eq!(space.total, 13);
        assert_eq!(space.slices[2], ClassSlice { offset: 10, width: 3 });
    }

    #[test]
    fn sensitivity_parse() {
        assert_eq!("auto".parse::<Sensitivity>().unwrap(), Sensitivity::Auto);
        assert_eq!("43.5".parse::<Sensitivity>().unwrap(), Sensitivity::Fixed(43.5));
        assert!("fast".parse::<Sensitivity>().is_err());
    }

    proptest! {
        #[test]
        fn simplex_and_shift_invariance(
            errs in prop::collection::vec(0.0f64..2.0, 1..8),
            s in 0.1f64..200.0,
            shift in -5.0f64..5.0,
        ) {
            let w = soft_route_weights(&errs, s).unwrap();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = errs.iter().map(|e| e + shift).collect();
            let w2 = soft_route_weights(&shifted, s).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn lowering_an_error_raises_its_weight(
            errs in prop::collection::vec(0.0f64..2.0, 2..8),
            s in 0.1f64..50.0,
            delta in 0.01f64..0.5,
        ) {
            let w = soft_route_weights(&errs, s).unwrap();
            let mut lowered = errs.clone();
            lowered[0] -= delta;
            let w2 = soft_route_weights(&lowered, s).unwrap();
            prop_assert!(w2[0] > w[0] || w[0] == 1.0);
        }

        #[test]
        fn thousandfold_ratio_at_min_tau(tau in 0.001f64..1.0, best in 0.0f64..1.0) {
            // s = ln(1000) / tau: an error larger by tau is down-weighted 1000x
            let s = 1000f64.ln() / tau;
            let w = soft_route_weights(&[best, best + tau], s).unwrap();
            prop_assert!(w[1] / w[0] <= 1e-3 * (1.0 + 1e-9));
        }
    }
}
