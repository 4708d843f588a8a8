mod common;

use common::{confining_poly, dense_gap, ou, reflected_ball, setup, Setup};
use flab_core::{
    certify_all, curvature_estimate, dirichlet_energy, gamma, gamma2_closed,
    local_poincare_constant, mean_var, perturbation_transfer, spectral_gap, symmetrize, BFunction,
    Lattice, PoincareCertificate, Potential,
};
use proptest::prelude::*;

fn gap_of(s: &Setup) -> f64 {
    spectral_gap(&symmetrize(&s.r, &s.m).unwrap()).unwrap().gap
}

/// Random test functions: rough noise plus a smooth polynomial part, so both
/// high and low frequencies are exercised.
fn test_function(n: usize) -> impl Strategy<Value = (Vec<f64>, [f64; 4])> {
    (
        prop::collection::vec(-1.0..1.0f64, n),
        prop::array::uniform4(-2.0..2.0f64),
    )
}

fn assemble(lat: &Lattice, noise: &[f64], c: &[f64; 4], rough: f64) -> Vec<f64> {
    (0..lat.len())
        .map(|k| {
            let x = lat.x(k) / lat.half_width().max(1.0);
            rough * noise[k] + c[0] + c[1] * x + c[2] * x * x + c[3] * (3.0 * x).sin()
        })
        .collect()
}

fn check_poincare(s: &Setup, kappa: f64, f: &[f64]) {
    let (_, var) = mean_var(&s.m, f).unwrap();
    let energy = dirichlet_energy(&s.r, &s.m, f).unwrap();
    assert!(
        kappa * var <= energy * (1.0 + 1e-12) + 1e-300,
        "kappa {kappa}: var {var}, energy {energy}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn curvature_bound_holds_pointwise((noise, c) in test_function(121), rough in 0.0..1.0f64) {
        let s = ou(0.1, 6.0);
        let cert = curvature_estimate(&s.r);
        let f = assemble(&s.lat, &noise, &c, rough);
        let g2 = gamma2_closed(&s.r, &f, &f).unwrap();
        let g = gamma(&s.r, &f, &f).unwrap();
        for k in 2..s.lat.len() - 2 {
            prop_assert!(g2[k] - cert.lambda_tilde * g[k] >= -1e-10, "node {k}: {} < {}", g2[k], cert.lambda_tilde * g[k]);
        }
    }

    #[test]
    fn poincare_holds_for_both_routes((noise, c) in test_function(161), rough in 0.0..1.0f64) {
        let s = ou(0.1, 8.0);
        let set = certify_all(&s.u, &s.b, &s.lat).unwrap();
        prop_assert!(set.curvature_cert.valid && set.lyapunov_cert.valid);
        let f = assemble(&s.lat, &noise, &c, rough);
        for cert in [&set.curvature_cert, &set.lyapunov_cert] {
            check_poincare(&s, cert.kappa, &f);
        }
    }

    #[test]
    fn poincare_holds_for_double_well((noise, c) in test_function(161), rough in 0.0..1.0f64) {
        let s = setup(Potential::double_well(0.25, 0.5), Lattice::with_radius(0.05, 4.0).unwrap());
        let set = certify_all(&s.u, &s.b, &s.lat).unwrap();
        prop_assert!(!set.curvature_cert.valid && set.lyapunov_cert.valid);
        let f = assemble(&s.lat, &noise, &c, rough);
        check_poincare(&s, set.lyapunov_cert.kappa, &f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The pointwise bound holds whatever the sign of the constant.
    #[test]
    fn curvature_bound_for_random_potentials(c in confining_poly(), f in prop::collection::vec(-2.0..2.0f64, 41)) {
        let s = setup(Potential::polynomial(&c), Lattice::new(0.1, 20).unwrap());
        let cert = curvature_estimate(&s.r);
        let g2 = gamma2_closed(&s.r, &f, &f).unwrap();
        let g = gamma(&s.r, &f, &f).unwrap();
        for k in 2..s.lat.len() - 2 {
            let scale = g2[k].abs().max((cert.lambda_tilde * g[k]).abs()).max(1.0);
            prop_assert!(g2[k] - cert.lambda_tilde * g[k] >= -1e-12 * scale);
        }
    }

    #[test]
    fn certified_constants_never_exceed_gap(c in confining_poly(), h in 0.1..0.3f64) {
        let s = setup(Potential::polynomial(&c), Lattice::new(h, (4.0 / h) as usize).unwrap());
        let gap = gap_of(&s);
        let set = certify_all(&s.u, &s.b, &s.lat).unwrap();
        for cert in [&set.curvature_cert, &set.lyapunov_cert] {
            if cert.valid {
                prop_assert!(cert.kappa <= gap + 1e-9, "{:?} {} > {}", cert.method, cert.kappa, gap);
            }
        }
    }
}

#[test]
fn curvature_across_mesh_sizes() {
    let mut prev = 0.0;
    for h in [0.5, 0.2, 0.1, 0.05] {
        let s = ou(h, 8.0);
        let lt = curvature_estimate(&s.r).lambda_tilde;
        assert!(lt >= 0.125, "h={h}: {lt}");
        assert!(lt <= gap_of(&s) + 1e-9);
        assert!(lt > prev, "not increasing at h={h}");
        prev = lt;
    }
    assert!(prev > 0.85 && prev <= 1.0);
}

#[test]
fn curvature_band_on_fine_meshes() {
    let vals: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| curvature_estimate(&ou(h, 8.0).r).lambda_tilde)
        .collect();
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((hi - lo) / hi <= 0.2, "{vals:?}");
}

#[test]
fn lyapunov_on_ou() {
    for h in [0.1, 0.05] {
        let s = ou(h, 8.0);
        let set = certify_all(&s.u, &s.b, &s.lat).unwrap();
        let l = &set.lyapunov;
        assert!(l.valid && l.theta > 0.0, "h={h}");
        // Slack is stored per unit of W, so the bound `<= 1e-12 W` reads as `>= -1e-12`.
        assert!(l.slack.iter().all(|&v| v >= -1e-12), "h={h}");
        assert!(l.kappa <= gap_of(&s) + 1e-9);
    }
}

#[test]
fn lyapunov_rejects_flat() {
    let s = setup(Potential::flat(), Lattice::new(0.1, 40).unwrap());
    let set = certify_all(&s.u, &s.b, &s.lat).unwrap();
    assert!(!set.lyapunov.valid);
    assert!(!set.curvature.valid);
    assert!(!set.best.valid);
}

#[test]
fn local_constant_flat_is_one_eighth() {
    let lat = Lattice::new(0.1, 40).unwrap();
    let l = local_poincare_constant(
        &Potential::flat(),
        &BFunction::scharfetter_gummel(),
        &lat,
        1.0,
    )
    .unwrap();
    assert_eq!(l.kappa_r, 0.125);
}

#[test]
fn local_constant_below_reflected_gap() {
    let s = ou(0.1, 6.0);
    for radius in [2.0, 4.0] {
        let l = local_poincare_constant(&s.u, &s.b, &s.lat, radius).unwrap();
        let (r, m) = reflected_ball(&s, radius);
        let gap = dense_gap(&r, &m);
        assert!(
            l.kappa_r > 0.0 && l.kappa_r <= gap,
            "R={radius}: {} vs {gap}",
            l.kappa_r
        );
    }
}

fn ou_base(lat: &Lattice) -> PoincareCertificate {
    certify_all(
        &Potential::quadratic(0.5),
        &BFunction::scharfetter_gummel(),
        lat,
    )
    .unwrap()
    .best
}

#[test]
fn perturbation_of_ou() {
    let base_u = Potential::quadratic(0.5);
    let s = setup(
        base_u.plus_gaussian_bump(0.5),
        Lattice::with_radius(0.1, 8.0).unwrap(),
    );
    let base = ou_base(&s.lat);
    let p = perturbation_transfer(&base, &base_u, &s.u, &s.b, &s.lat).unwrap();
    assert!(p.valid && p.kappa > 0.0);
    assert!(p.kappa <= gap_of(&s));
}

#[test]
fn zero_perturbation_halves() {
    let u = Potential::quadratic(0.5);
    let lat = Lattice::with_radius(0.1, 8.0).unwrap();
    let base = ou_base(&lat);
    let p = perturbation_transfer(&base, &u, &u, &BFunction::scharfetter_gummel(), &lat).unwrap();
    assert_eq!(p.kappa, base.kappa / 2.0);
}

#[test]
fn perturbation_refuses_invalid_base() {
    let lat = Lattice::new(0.1, 40).unwrap();
    let b = BFunction::scharfetter_gummel();
    let base = certify_all(&Potential::flat(), &b, &lat).unwrap().best;
    assert!(perturbation_transfer(
        &base,
        &Potential::flat(),
        &Potential::quadratic(0.5),
        &b,
        &lat
    )
    .is_err());
}
