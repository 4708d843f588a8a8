//! Poincaré constants with explicit evidence: the curvature route, the
//! Lyapunov plus local-constant route, and transfer across bounded
//! perturbations of the potential.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bfunc::BFunction;
use crate::error::{Error, Result};
use crate::gamma::{gamma2_terms, interior, GAMMA2_MARGIN};
use crate::lattice::{build_rates, check_len, grid_multiple, GridFunction, Lattice, RateField};
use crate::potential::Potential;

/// `b` above this is treated as overflow and the radius is skipped.
pub const B_OVERFLOW: f64 = 1e300;

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureCertificate {
    pub lambda_tilde: f64,
    /// `3 D+beta_i - D+alpha_i`; `NaN` outside the interior.
    pub margin_plus: Vec<f64>,
    /// `D-beta_i - 3 D-alpha_i`; `NaN` outside the interior.
    pub margin_minus: Vec<f64>,
    pub valid: bool,
}

impl CurvatureCertificate {
    /// Storage index where the minimum margin is attained.
    pub fn argmin(&self) -> Option<usize> {
        self.margin_plus
            .iter()
            .zip(&self.margin_minus)
            .enumerate()
            .filter(|(_, (p, m))| p.is_finite() && m.is_finite())
            .min_by(|a, b| a.1 .0.min(*a.1 .1).total_cmp(&b.1 .0.min(*b.1 .1)))
            .map(|(k, _)| k)
    }
}

/// `lambda~ = min_i min(margin_plus_i, margin_minus_i) / 2` over the interior.
pub fn curvature_estimate(r: &RateField) -> CurvatureCertificate {
    let n = r.len();
    let (a, b) = (&r.alpha, &r.beta);
    let mut margin_plus = vec![f64::NAN; n];
    let mut margin_minus = vec![f64::NAN; n];
    let mut min = f64::INFINITY;
    for k in interior(n, GAMMA2_MARGIN) {
        margin_plus[k] = 3.0 * (b[k + 1] - b[k]) - (a[k + 1] - a[k]);
        margin_minus[k] = (b[k] - b[k - 1]) - 3.0 * (a[k] - a[k - 1]);
        min = min.min(margin_plus[k]).min(margin_minus[k]);
    }
    let lambda_tilde = if min.is_finite() { 0.5 * min } else { f64::NAN };
    CurvatureCertificate {
        lambda_tilde,
        margin_plus,
        margin_minus,
        valid: lambda_tilde > 0.0,
    }
}

/// The three nonnegative second-difference terms of `Gamma_2(f, f)` that the
/// curvature constant leaves out. Reported, never folded into `lambda~`.
pub fn curvature_extra_margin(r: &RateField, f: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    let n = f.len();
    let mut out = vec![f64::NAN; n];
    for k in interior(n, GAMMA2_MARGIN) {
        let t = gamma2_terms(r, f, f, k);
        out[k] = t[2] + t[3] + t[4];
    }
    Ok(GridFunction(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalConstant {
    pub kappa_r: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Local constant from the extreme values of `u` and of `B` over the ball.
///
/// `ln_inf_b_plus`, `ln_inf_b_minus` are logs of the infima of `B(u(x+h)-u(x))`
/// and `B(u(x-h)-u(x))`; `u_min`, `u_max` are the extremes of `u` on the ball.
fn local_from_extremes(
    radius: f64,
    u_min: f64,
    u_max: f64,
    ln_inf_b_plus: f64,
    ln_inf_b_minus: f64,
) -> LocalConstant {
    // With pi = e^{-u}: sup pi = e^{-u_min}, inf pi = e^{-u_max}.
    // Plain arithmetic when nothing can overflow, so round cases stay exact.
    if [u_min, u_max, ln_inf_b_plus, ln_inf_b_minus]
        .iter()
        .all(|v| v.abs() < 600.0)
    {
        let four_r2 = 4.0 * radius * radius;
        let sup_pi = (-u_min).exp();
        let c1 = four_r2 * sup_pi / ln_inf_b_plus.exp();
        let c2 = four_r2 * sup_pi / ln_inf_b_minus.exp();
        return LocalConstant {
            kappa_r: (-u_max).exp() / (2.0 * c1.max(c2)),
            c1,
            c2,
        };
    }
    let ln4r2 = (4.0 * radius * radius).ln();
    let ln_c1 = ln4r2 - u_min - ln_inf_b_plus;
    let ln_c2 = ln4r2 - u_min - ln_inf_b_minus;
    let ln_inv_kappa = std::f64::consts::LN_2 + ln_c1.max(ln_c2) + u_max;
    LocalConstant {
        kappa_r: (-ln_inv_kappa).exp(),
        c1: ln_c1.exp(),
        c2: ln_c2.exp(),
    }
}

/// Local Poincaré constant on the ball `|x| <= radius`.
///
/// `C1 = 4 R^2 sup pi / inf B(u(x+h) - u(x))`, `C2` likewise with `-h`, and
/// `1/kappa_R = 2 max(C1, C2) / inf pi`, where `pi = e^{-u}` is left
/// unnormalized. Every node in the ball contributes, edge nodes included.
pub fn local_poincare_constant(
    u: &Potential,
    b: &BFunction,
    lat: &Lattice,
    radius: f64,
) -> Result<LocalConstant> {
    let m = grid_multiple(radius, lat.h)?;
    if m > lat.n_half {
        return Err(Error::RadiusOutsideWindow {
            radius,
            half_width: lat.half_width(),
        });
    }
    let (mut u_min, mut u_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut inf_bp, mut inf_bm) = (f64::INFINITY, f64::INFINITY);
    for i in -(m as i64)..=(m as i64) {
        let x = i as f64 * lat.h;
        let (ux, up, um) = (u.eval(x), u.eval(x + lat.h), u.eval(x - lat.h));
        for (v, at) in [(ux, x), (up, x + lat.h), (um, x - lat.h)] {
            if !v.is_finite() {
                return Err(Error::NonFinitePotential { x: at });
            }
        }
        u_min = u_min.min(ux);
        u_max = u_max.max(ux);
        inf_bp = inf_bp.min(b.eval(up - ux));
        inf_bm = inf_bm.min(b.eval(um - ux));
    }
    Ok(local_from_extremes(
        radius,
        u_min,
        u_max,
        inf_bp.ln(),
        inf_bm.ln(),
    ))
}

/// `kappa = theta kappa_R / (kappa_R + b)`.
pub fn assemble_global(theta: f64, b: f64, kappa_r: f64) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must be positive, got {theta}"
        )));
    }
    if !(kappa_r.is_finite() && kappa_r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa_R must be positive, got {kappa_r}"
        )));
    }
    if !(b >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "b must be nonnegative, got {b}"
        )));
    }
    if b.is_infinite() {
        return Ok(0.0);
    }
    Ok(theta * kappa_r / (kappa_r + b))
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovCertificate {
    pub theta: f64,
    pub b: f64,
    pub radius: f64,
    pub local: Option<LocalConstant>,
    pub kappa: f64,
    /// Per node: `-LW/W - theta` outside the ball, `b/W - LW/W - theta` inside.
    pub slack: Vec<f64>,
    pub valid: bool,
}

/// `LW_i / W_i` for `W = e^{|x|}`, without materializing `W`.
pub fn lyapunov_drift(r: &RateField, lat: &Lattice) -> Result<Vec<f64>> {
    check_len(r.len(), lat.len())?;
    let n = lat.len();
    Ok((0..n)
        .map(|k| {
            let ax = lat.x(k).abs();
            let right = if k + 1 < n {
                r.alpha[k] * (lat.x(k + 1).abs() - ax).exp_m1()
            } else {
                0.0
            };
            let left = if k > 0 {
                r.beta[k] * (lat.x(k - 1).abs() - ax).exp_m1()
            } else {
                0.0
            };
            right + left
        })
        .collect())
}

/// Scans radii `R = h, 2h, ..., (N/2) h` for the drift condition with
/// `W = e^{|x|}` and keeps the one giving the largest assembled constant.
///
/// The local constant is taken from the rates, using `h^2 alpha_i = B(u_{i+1} - u_i)`.
pub fn lyapunov_certificate(
    u: &Potential,
    r: &RateField,
    lat: &Lattice,
) -> Result<LyapunovCertificate> {
    let d = lyapunov_drift(r, lat)?;
    let n = lat.len();
    let nh = lat.n_half;
    let uv: Vec<f64> = (0..n).map(|k| u.eval(lat.x(k))).collect();
    if let Some(k) = uv.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinitePotential { x: lat.x(k) });
    }
    let ln_h2 = 2.0 * lat.h.ln();
    let ln_b_at = |rate: f64| rate.ln() + ln_h2;

    // Outer maximum of d over |i| > m, for every m, by a sweep from the edges inward.
    let mut outer_max = vec![f64::NEG_INFINITY; nh + 1];
    let mut run = f64::NEG_INFINITY;
    for m in (0..nh).rev() {
        run = run.max(d[nh + m + 1]).max(d[nh - m - 1]);
        outer_max[m] = run;
    }

    let mut best: Option<(f64, f64, f64, usize, LocalConstant)> = None;
    let (mut u_min, mut u_max) = (uv[nh], uv[nh]);
    let (mut ln_bp, mut ln_bm) = (ln_b_at(r.alpha[nh]), ln_b_at(r.beta[nh]));
    for m in 1..=nh / 2 {
        for k in [nh - m, nh + m] {
            u_min = u_min.min(uv[k]);
            u_max = u_max.max(uv[k]);
            ln_bp = ln_bp.min(ln_b_at(r.alpha[k]));
            ln_bm = ln_bm.min(ln_b_at(r.beta[k]));
        }
        let theta = -outer_max[m];
        if !(theta > 0.0) {
            continue;
        }
        let mut ln_b = f64::NEG_INFINITY;
        for k in nh - m..=nh + m {
            let excess = d[k] + theta;
            if excess > 0.0 {
                ln_b = ln_b.max(excess.ln() + lat.x(k).abs());
            }
        }
        if ln_b > B_OVERFLOW.ln() {
            continue;
        }
        let b = if ln_b == f64::NEG_INFINITY {
            0.0
        } else {
            ln_b.exp()
        };
        let radius = m as f64 * lat.h;
        let local = local_from_extremes(radius, u_min, u_max, ln_bp, ln_bm);
        if !(local.kappa_r > 0.0) {
            continue;
        }
        let kappa = assemble_global(theta, b, local.kappa_r)?;
        if best.as_ref().is_none_or(|bst| kappa > bst.2) {
            best = Some((theta, b, kappa, m, local));
        }
    }

    Ok(match best {
        Some((theta, b, kappa, m, local)) => {
            let slack = (0..n)
                .map(|k| {
                    let base = -d[k] - theta;
                    if k.abs_diff(nh) <= m {
                        base + b * (-lat.x(k).abs()).exp()
                    } else {
                        base
                    }
                })
                .collect();
            LyapunovCertificate {
                theta,
                b,
                radius: m as f64 * lat.h,
                local: Some(local),
                kappa,
                slack,
                valid: kappa > 0.0,
            }
        }
        None => LyapunovCertificate {
            theta: -outer_max
                .iter()
                .skip(1)
                .take(nh / 2)
                .copied()
                .fold(f64::INFINITY, f64::min),
            b: f64::NAN,
            radius: f64::NAN,
            local: None,
            kappa: 0.0,
            slack: Vec::new(),
            valid: false,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Curvature,
    Lyapunov,
    Perturbation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Curvature => "curvature",
            Method::Lyapunov => "lyapunov",
            Method::Perturbation => "perturbation",
        }
    }
}

/// A Poincaré constant together with the numbers it was assembled from.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareCertificate {
    pub method: Method,
    pub kappa: f64,
    pub valid: bool,
    pub components: BTreeMap<String, f64>,
    pub lattice: Lattice,
    pub potential_tag: String,
    pub b_function_tag: String,
    #[serde(skip)]
    pub diagnostics: Vec<String>,
}

impl PoincareCertificate {
    pub fn from_curvature(
        c: &CurvatureCertificate,
        lat: &Lattice,
        u: &Potential,
        b: &BFunction,
    ) -> Self {
        let mut diagnostics = Vec::new();
        if !c.valid {
            diagnostics.push(format!(
                "curvature: lambda_tilde = {} is not positive",
                c.lambda_tilde
            ));
        }
        Self {
            method: Method::Curvature,
            kappa: c.lambda_tilde,
            valid: c.valid,
            components: BTreeMap::from([("lambda_tilde".to_string(), c.lambda_tilde)]),
            lattice: *lat,
            potential_tag: u.tag().to_string(),
            b_function_tag: b.tag().to_string(),
            diagnostics,
        }
    }

    pub fn from_lyapunov(
        c: &LyapunovCertificate,
        lat: &Lattice,
        u: &Potential,
        b: &BFunction,
    ) -> Self {
        let mut components = BTreeMap::from([
            ("theta".to_string(), c.theta),
            ("b".to_string(), c.b),
            ("R".to_string(), c.radius),
        ]);
        let mut diagnostics =
            vec!["local constant uses the unnormalized density exp(-u) on the ball".to_string()];
        match &c.local {
            Some(l) => {
                components.insert("kappa_R".into(), l.kappa_r);
                components.insert("C1".into(), l.c1);
                components.insert("C2".into(), l.c2);
            }
            None => diagnostics
                .push("lyapunov: no radius gives a positive drift rate theta".to_string()),
        }
        Self {
            method: Method::Lyapunov,
            kappa: c.kappa,
            valid: c.valid,
            components,
            lattice: *lat,
            potential_tag: u.tag().to_string(),
            b_function_tag: b.tag().to_string(),
            diagnostics,
        }
    }
}

/// Carries `base`, certified for `u_tilde`, over to `u`:
/// `kappa = base.kappa / (s1 s2 s3)`.
pub fn perturbation_transfer(
    base: &PoincareCertificate,
    u_tilde: &Potential,
    u: &Potential,
    b: &BFunction,
    lat: &Lattice,
) -> Result<PoincareCertificate> {
    if !base.valid {
        return Err(Error::InvalidCertificate(format!(
            "base {} certificate is not valid",
            base.method.as_str()
        )));
    }
    let r = build_rates(u, b, lat)?;
    let rt = build_rates(u_tilde, b, lat)?;
    let (mut ln_s1, mut ln_s2, mut s3) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    for k in 0..lat.len() {
        let x = lat.x(k);
        let (uk, utk) = (u.eval(x), u_tilde.eval(x));
        // pi / pi~ = exp(u~ - u), unnormalized on both sides.
        ln_s1 = ln_s1.max(utk - uk);
        ln_s2 = ln_s2.max(uk - utk);
        let ra = if r.alpha[k] > 0.0 || rt.alpha[k] > 0.0 {
            rt.alpha[k] / r.alpha[k]
        } else {
            0.0
        };
        let rb = if r.beta[k] > 0.0 || rt.beta[k] > 0.0 {
            rt.beta[k] / r.beta[k]
        } else {
            0.0
        };
        s3 = s3.max(ra + rb);
    }
    let (s1, s2) = (ln_s1.exp(), ln_s2.exp());
    for (name, v) in [("s1", s1), ("s2", s2), ("s3", s3)] {
        if !v.is_finite() || v.is_nan() {
            return Err(Error::NonFiniteRatio { name });
        }
    }
    let kappa = base.kappa / (s1 * s2 * s3);
    Ok(PoincareCertificate {
        method: Method::Perturbation,
        kappa,
        valid: kappa > 0.0 && kappa.is_finite(),
        components: BTreeMap::from([
            ("s1".to_string(), s1),
            ("s2".to_string(), s2),
            ("s3".to_string(), s3),
            ("base_kappa".to_string(), base.kappa),
        ]),
        lattice: *lat,
        potential_tag: u.tag().to_string(),
        b_function_tag: b.tag().to_string(),
        diagnostics: vec![format!(
            "base certificate: {} for {}",
            base.method.as_str(),
            base.potential_tag
        )],
    })
}

/// Everything the two direct routes produced, plus the winner.
#[derive(Debug, Clone)]
pub struct CertificateSet {
    pub curvature: CurvatureCertificate,
    pub lyapunov: LyapunovCertificate,
    pub curvature_cert: PoincareCertificate,
    pub lyapunov_cert: PoincareCertificate,
    pub best: PoincareCertificate,
}

/// Runs both routes and keeps the valid one with the larger constant.
pub fn certify_all(u: &Potential, b: &BFunction, lat: &Lattice) -> Result<CertificateSet> {
    let r = build_rates(u, b, lat)?;
    let curvature = curvature_estimate(&r);
    let lyapunov = lyapunov_certificate(u, &r, lat)?;
    let curvature_cert = PoincareCertificate::from_curvature(&curvature, lat, u, b);
    let lyapunov_cert = PoincareCertificate::from_lyapunov(&lyapunov, lat, u, b);
    let best = match (curvature_cert.valid, lyapunov_cert.valid) {
        (true, true) if lyapunov_cert.kappa > curvature_cert.kappa => lyapunov_cert.clone(),
        (true, _) => curvature_cert.clone(),
        (false, true) => lyapunov_cert.clone(),
        (false, false) => {
            let mut c = curvature_cert.clone();
            c.diagnostics
                .extend(lyapunov_cert.diagnostics.iter().cloned());
            c
        }
    };
    Ok(CertificateSet {
        curvature,
        lyapunov,
        curvature_cert,
        lyapunov_cert,
        best,
    })
}

pub fn best_certificate(
    u: &Potential,
    b: &BFunction,
    lat: &Lattice,
) -> Result<PoincareCertificate> {
    Ok(certify_all(u, b, lat)?.best)
}
