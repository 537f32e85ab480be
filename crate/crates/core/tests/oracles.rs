mod common;

use ndarray::array;
use plreg::Design;

use common::{gauss_legendre, simplex_quadrature};

#[test]
fn legendre_integrates_polynomials() {
    let (x, w) = gauss_legendre(8);
    for deg in 0..15 {
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
        assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14);
    }
}

#[test]
fn quadrature_recovers_prior_without_information() {
    // with all-equal features each label has probability 1/2 whatever the weights
    let design = Design::new(array![[1.0, 1.0]], vec![0], 2).unwrap();
    let q = simplex_quadrature(&design, 1.0, 32);
    let total: f64 = q.mean.iter().sum();
    assert!((total - 1.0).abs() < 1e-10);
    assert!(q.log_evidence < 0.0);
}

#[test]
fn quadrature_evidence_of_single_label_is_a_half() {
    let design = Design::new(array![[2.0]], vec![1], 2).unwrap();
    let q = simplex_quadrature(&design, 1.0, 32);
    assert!((q.log_evidence - 0.5f64.ln()).abs() < 1e-10);
    assert!((q.mean[1] - 2.0 / 3.0).abs() < 1e-10);
}
