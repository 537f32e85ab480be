use ndarray::Array2;
use plreg::model::{self, FeatureMap, Transform};
use proptest::prelude::*;

fn weights(k: usize, p: usize) -> impl Strategy<Value = (Vec<f64>, Array2<f64>)> {
    (
        prop::collection::vec(0.05f64..20.0, p),
        prop::collection::vec(0.01f64..10.0, k * p),
    )
        .prop_map(move |(w, l)| (w, Array2::from_shape_vec((k, p), l).unwrap()))
}

fn sizes() -> impl Strategy<Value = (Vec<f64>, Array2<f64>)> {
    (2usize..6, 1usize..7).prop_flat_map(|(k, p)| weights(k, p))
}

proptest! {
    #[test]
    fn probabilities_form_a_distribution((w, lambda) in sizes()) {
        let probs = model::class_probabilities(&w, lambda.view()).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn rescaling_weights_changes_nothing((w, lambda) in sizes(), exponent in prop::sample::select(vec![-6i32, 0, 6])) {
        let c = 10f64.powi(exponent);
        let base = model::class_probabilities(&w, lambda.view()).unwrap();
        let scaled = model::class_probabilities(&w, lambda.mapv(|v| v * c).view()).unwrap();
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn odds_ignore_other_classes((w, lambda) in (3usize..6, 1usize..6).prop_flat_map(|(k, p)| weights(k, p))) {
        let full = model::class_probabilities(&w, lambda.view()).unwrap();
        let reduced = model::class_probabilities(&w, lambda.slice(ndarray::s![0..2, ..])).unwrap();
        let odds_full = full[0] / full[1];
        let odds_reduced = reduced[0] / reduced[1];
        prop_assert!((odds_full / odds_reduced - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_a_feature_admixture((w, lambda) in sizes()) {
        let probs = model::class_probabilities(&w, lambda.view()).unwrap();
        let pi = model::mixture_weights(&w, lambda.view()).unwrap();
        let mass = lambda.sum_axis(ndarray::Axis(0));
        for (k, &q) in probs.iter().enumerate() {
            let mixed: f64 = pi.iter().enumerate().map(|(j, p)| p * lambda[[k, j]] / mass[j]).sum();
            prop_assert!((mixed - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_feature_boundary_is_the_weight_ratio(l1 in 0.1f64..5.0, l2 in 0.1f64..5.0, m1 in 0.1f64..5.0, m2 in 0.1f64..5.0) {
        // two classes, features [exp(x), exp(-x)]: equal odds at x* = ln((m2-l2)/(l1-m1)) / 2
        let lambda = Array2::from_shape_vec((2, 2), vec![l1, l2, m1, m2]).unwrap();
        prop_assume!((l1 - m1).abs() > 1e-3 && (m2 - l2).abs() > 1e-3);
        let ratio = (m2 - l2) / (l1 - m1);
        prop_assume!(ratio > 0.0);
        let x = 0.5 * ratio.ln();
        let map = FeatureMap::new(vec![Transform::PositiveExp { covariate: 0 }, Transform::NegativeExp { covariate: 0 }]);
        let wx = map.transform(ndarray::aview1(&[x])).unwrap();
        let probs = model::class_probabilities(wx.as_slice().unwrap(), lambda.view()).unwrap();
        prop_assert!((probs[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_columns_do_not_matter((w, lambda) in sizes(), extra in 0.1f64..100.0) {
        let mut wider = Array2::zeros((lambda.nrows(), lambda.ncols() + 1));
        wider.slice_mut(ndarray::s![.., ..lambda.ncols()]).assign(&lambda);
        let mut w2 = w.clone();
        w2.push(extra);
        let a = model::class_probabilities(&w, lambda.view()).unwrap();
        let b = model::class_probabilities(&w2, wider.view()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
