#![allow(dead_code)]

use flab_core::{
    build_rates, stationary_measure, BFunction, Lattice, Potential, RateField, StationaryMeasure,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

pub struct Setup {
    pub u: Potential,
    pub b: BFunction,
    pub lat: Lattice,
    pub r: RateField,
    pub m: StationaryMeasure,
}

pub fn setup(u: Potential, lat: Lattice) -> Setup {
    let b = BFunction::scharfetter_gummel();
    let r = build_rates(&u, &b, &lat).unwrap();
    let m = stationary_measure(&u, &lat).unwrap();
    Setup { u, b, lat, r, m }
}

pub fn ou(h: f64, radius: f64) -> Setup {
    setup(
        Potential::quadratic(0.5),
        Lattice::with_radius(h, radius).unwrap(),
    )
}

/// Confining polynomial `c1 x + c2 x^2 + c3 x^3 + c4 x^4` with `c4 > 0`.
pub fn confining_poly() -> impl Strategy<Value = Vec<f64>> {
    (-1.0..1.0f64, -0.5..1.0f64, -0.3..0.3f64, 0.05..0.5f64)
        .prop_map(|(c1, c2, c3, c4)| vec![0.0, c1, c2, c3, c4])
}

/// Second-smallest eigenvalue of `-Q` via a dense symmetric eigensolve of
/// `D^{1/2} Q D^{-1/2}` assembled from the full matrix.
pub fn dense_gap(r: &RateField, m: &StationaryMeasure) -> f64 {
    let n = r.len();
    let q = r.generator_matrix();
    let sw: Vec<f64> = m.log_weights.iter().map(|l| (0.5 * l).exp()).collect();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if q[i][j] != 0.0 {
                s[(i, j)] = -q[i][j] * sw[i] / sw[j];
            }
        }
    }
    let sym = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1]
}

/// Sub-window of `s` restricted to `|x| <= radius`, with reflecting edges.
pub fn reflected_ball(s: &Setup, radius: f64) -> (RateField, StationaryMeasure) {
    let lat = Lattice::with_radius(s.lat.h, radius).unwrap();
    (
        build_rates(&s.u, &s.b, &lat).unwrap(),
        stationary_measure(&s.u, &lat).unwrap(),
    )
}

pub fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}
