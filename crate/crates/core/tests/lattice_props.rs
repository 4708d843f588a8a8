mod common;

use common::confining_poly;
use flab_core::bfunc::symmetric_grid;
use flab_core::{
    build_rates, check_detailed_balance, make_b_function, stationary_measure, validate_b,
    BFunction, BKind, Lattice, Potential,
};
use proptest::prelude::*;
use std::collections::BTreeMap;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detailed_balance_for_random_polynomials(c in confining_poly(), h in 0.05..0.5f64, n in 4usize..60) {
        let u = Potential::polynomial(&c);
        let lat = Lattice::new(h, n.min((4.0 / h) as usize)).unwrap();
        let r = build_rates(&u, &BFunction::scharfetter_gummel(), &lat).unwrap();
        let m = stationary_measure(&u, &lat).unwrap();
        prop_assert!(check_detailed_balance(&r, &m).unwrap() <= 1e-12);
    }

    #[test]
    fn constant_shift_changes_nothing(c in confining_poly(), shift in -50.0..50.0f64) {
        let lat = Lattice::new(0.2, 20).unwrap();
        let b = BFunction::scharfetter_gummel();
        let u = Potential::polynomial(&c);
        let mut cs = c.clone();
        cs[0] += shift;
        let us = Potential::polynomial(&cs);
        let (r, rs) = (build_rates(&u, &b, &lat).unwrap(), build_rates(&us, &b, &lat).unwrap());
        let (m, ms) = (stationary_measure(&u, &lat).unwrap(), stationary_measure(&us, &lat).unwrap());
        for k in 0..lat.len() {
            // Shifting u perturbs the differences at the level of rounding in u itself.
            let tol = 1e-12 * (1.0 + shift.abs());
            prop_assert!((r.alpha[k] - rs.alpha[k]).abs() <= tol * r.alpha[k].max(1.0) / (lat.h * lat.h));
            prop_assert!((m.weights[k] - ms.weights[k]).abs() <= tol.max(1e-14));
        }
    }

    #[test]
    fn interior_rates_positive(c in confining_poly(), h in 0.05..0.5f64) {
        let lat = Lattice::new(h, ((4.0 / h) as usize).min(25)).unwrap();
        let r = build_rates(&Potential::polynomial(&c), &BFunction::scharfetter_gummel(), &lat).unwrap();
        let n = lat.len();
        prop_assert!(r.alpha[..n - 1].iter().all(|&a| a > 0.0));
        prop_assert!(r.beta[1..].iter().all(|&b| b > 0.0));
        prop_assert_eq!(r.alpha[n - 1], 0.0);
        prop_assert_eq!(r.beta[0], 0.0);
    }

    #[test]
    fn weights_sum_to_one(c in confining_poly(), h in 0.05..0.5f64, n in 1usize..80) {
        let lat = Lattice::new(h, n.min((4.0 / h) as usize)).unwrap();
        let m = stationary_measure(&Potential::polynomial(&c), &lat).unwrap();
        prop_assert!((m.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        prop_assert!(m.weights.iter().all(|&w| w > 0.0));
    }
}

#[test]
fn lattice_geometry() {
    let lat = Lattice::new(0.25, 6).unwrap();
    let x = lat.positions();
    assert_eq!(x.len(), 13);
    assert!(x.windows(2).all(|w| (w[1] - w[0] - 0.25).abs() < 1e-15));
    assert_eq!(x[6], 0.0);
    assert!(Lattice::new(-1.0, 3).is_err());
}

#[test]
fn b_function_factory() {
    let none = BTreeMap::new();
    let sg = make_b_function(BKind::ScharfetterGummel, &none).unwrap();
    assert_eq!(sg.eval(0.0), 1.0);
    assert!((sg.eval(0.5) - 0.7707470412683991).abs() < 1e-15);
    let ex = make_b_function(BKind::Exponential, &none).unwrap();
    assert_eq!(ex.eval(0.0), 1.0);
    assert!(!ex.lipschitz_ok());
    let bad = BTreeMap::from([("c0".to_string(), 2.0)]);
    assert!(make_b_function(BKind::Custom, &bad).is_err());
    let trunc = BTreeMap::from([("c1".to_string(), -0.5)]);
    let t = make_b_function(BKind::Custom, &trunc).unwrap();
    let report = validate_b(&t, &symmetric_grid(1.9, 39));
    assert!(!report.log_identity.pass);
}
