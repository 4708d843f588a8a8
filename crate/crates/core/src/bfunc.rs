//! Flux weights `B(s)` for two-point B-schemes.
//!
//! A weight is admissible when `B(0) = 1`, `B > 0`, `ln B(-s) - ln B(s) = s`,
//! `B` is non-increasing and globally Lipschitz. The log identity is what makes
//! the scheme satisfy detailed balance exactly with respect to `e^{-u}`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Below this magnitude the Scharfetter-Gummel weight uses its Taylor series.
pub const SG_SERIES_CUTOFF: f64 = 1e-5;

const B_ZERO_TOL: f64 = 1e-14;
const LOG_IDENTITY_TOL: f64 = 1e-12;
const DERIV_ZERO_TOL: f64 = 1e-6;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BKind {
    ScharfetterGummel,
    Exponential,
    Custom,
}

impl BKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BKind::ScharfetterGummel => "scharfetter-gummel",
            BKind::Exponential => "exponential",
            BKind::Custom => "custom",
        }
    }
}

impl fmt::Display for BKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scharfetter-gummel" | "sg" => Ok(BKind::ScharfetterGummel),
            "exponential" => Ok(BKind::Exponential),
            "custom" => Ok(BKind::Custom),
            other => Err(Error::UnknownBKind(other.to_string())),
        }
    }
}

#[derive(Clone)]
enum Eval {
    ScharfetterGummel,
    Exponential,
    Closure { eval: ScalarFn, deriv: ScalarFn },
}

/// A flux weight together with its derivative.
#[derive(Clone)]
pub struct BFunction {
    kind: BKind,
    tag: String,
    eval: Eval,
    lipschitz_ok: bool,
}

impl fmt::Debug for BFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BFunction")
            .field("kind", &self.kind)
            .field("tag", &self.tag)
            .field("lipschitz_ok", &self.lipschitz_ok)
            .finish()
    }
}

impl BFunction {
    /// `B(s) = s / (e^s - 1)`.
    pub fn scharfetter_gummel() -> Self {
        Self {
            kind: BKind::ScharfetterGummel,
            tag: BKind::ScharfetterGummel.as_str().to_string(),
            eval: Eval::ScharfetterGummel,
            lipschitz_ok: true,
        }
    }

    /// `B(s) = e^{-s/2}`. Satisfies the log identity but is not globally
    /// Lipschitz, so `lipschitz_ok` is false.
    pub fn exponential() -> Self {
        Self {
            kind: BKind::Exponential,
            tag: BKind::Exponential.as_str().to_string(),
            eval: Eval::Exponential,
            lipschitz_ok: false,
        }
    }

    /// User-supplied weight. Rejected unless `B(0) = 1` to within 1e-14.
    pub fn custom<F, D>(
        tag: impl Into<String>,
        eval: F,
        deriv: D,
        lipschitz_ok: bool,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let b0 = eval(0.0);
        if !((b0 - 1.0).abs() <= B_ZERO_TOL) {
            return Err(Error::BNotNormalized { value: b0 });
        }
        Ok(Self {
            kind: BKind::Custom,
            tag: tag.into(),
            eval: Eval::Closure {
                eval: Arc::new(eval),
                deriv: Arc::new(deriv),
            },
            lipschitz_ok,
        })
    }

    /// Polynomial weight `B(s) = c0 + c1 s + c2 s^2 + ...` (`c0` defaults to 1).
    /// Useful for stress-testing the validator; only degree <= 1 is Lipschitz.
    pub fn polynomial(coeffs: &[f64]) -> Result<Self> {
        let c: Vec<f64> = coeffs.to_vec();
        let dc: Vec<f64> = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        let degree = c.iter().rposition(|&a| a != 0.0).unwrap_or(0);
        let tag = format!(
            "poly({})",
            c.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        Self::custom(
            tag,
            move |s| horner(&c, s),
            move |s| horner(&dc, s),
            degree <= 1,
        )
    }

    pub fn kind(&self) -> BKind {
        self.kind
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn lipschitz_ok(&self) -> bool {
        self.lipschitz_ok
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match &self.eval {
            Eval::ScharfetterGummel => sg(s),
            Eval::Exponential => (-0.5 * s).exp(),
            Eval::Closure { eval, .. } => eval(s),
        }
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        match &self.eval {
            Eval::ScharfetterGummel => sg_deriv(s),
            Eval::Exponential => -0.5 * (-0.5 * s).exp(),
            Eval::Closure { deriv, .. } => deriv(s),
        }
    }
}

/// Builds a weight from a kind name and parameters.
///
/// Builtin kinds take no parameters. `custom` reads polynomial coefficients
/// `c0, c1, ...` from `params` (missing `c0` means 1).
pub fn make_b_function(kind: BKind, params: &BTreeMap<String, f64>) -> Result<BFunction> {
    match kind {
        BKind::ScharfetterGummel | BKind::Exponential => {
            if let Some(key) = params.keys().next() {
                return Err(Error::InvalidArgument(format!(
                    "{kind} takes no parameters, got `{key}`"
                )));
            }
            Ok(if kind == BKind::ScharfetterGummel {
                BFunction::scharfetter_gummel()
            } else {
                BFunction::exponential()
            })
        }
        BKind::Custom => {
            let mut coeffs = vec![1.0];
            for (key, &value) in params {
                let k: usize = key
                    .strip_prefix('c')
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "custom B parameter `{key}` is not of the form c<k>"
                        ))
                    })?;
                if coeffs.len() <= k {
                    coeffs.resize(k + 1, 0.0);
                }
                coeffs[k] = value;
            }
            BFunction::polynomial(&coeffs)
        }
    }
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * s + a)
}

#[inline]
fn sg(s: f64) -> f64 {
    if s.abs() < SG_SERIES_CUTOFF {
        1.0 - 0.5 * s + s * s / 12.0
    } else {
        s / s.exp_m1()
    }
}

#[inline]
fn sg_deriv(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        let s2 = s * s;
        -0.5 + s / 6.0 - s * s2 / 180.0 + s * s2 * s2 / 5040.0
    } else {
        // B'(s) = B(s)/s * (1 - B(-s)), using B(-s) = B(s) + s
        let b = sg(s);
        if b == 0.0 {
            return 0.0;
        }
        b / s * (1.0 - b - s)
    }
}

/// One row of a [`BValidation`] report.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Worst residual found; `inf` when the property cannot be evaluated.
    pub residual: f64,
}

/// Outcome of screening a weight against the admissibility properties.
#[derive(Debug, Clone, Serialize)]
pub struct BValidation {
    pub tag: String,
    pub b_at_zero: PropertyCheck,
    pub positive: PropertyCheck,
    pub log_identity: PropertyCheck,
    pub monotone: PropertyCheck,
    pub derivative_at_zero: PropertyCheck,
    pub lipschitz: PropertyCheck,
}

impl BValidation {
    pub fn checks(&self) -> [&PropertyCheck; 6] {
        [
            &self.b_at_zero,
            &self.positive,
            &self.log_identity,
            &self.monotone,
            &self.derivative_at_zero,
            &self.lipschitz,
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.checks().iter().all(|c| c.pass)
    }
}

/// Screens `b` on `s_grid`. Never fails: violations are reported.
pub fn validate_b(b: &BFunction, s_grid: &[f64]) -> BValidation {
    let b0 = b.eval(0.0);
    let b0_res = (b0 - 1.0).abs();

    let min_b = s_grid
        .iter()
        .map(|&s| b.eval(s))
        .fold(f64::INFINITY, f64::min);
    let positive_res = if min_b.is_nan() {
        f64::INFINITY
    } else {
        (-min_b).max(0.0)
    };

    let mut log_res: f64 = 0.0;
    for &s in s_grid {
        let r = (b.eval(-s).ln() - b.eval(s).ln() - s).abs();
        log_res = if r.is_nan() {
            f64::INFINITY
        } else {
            log_res.max(r)
        };
    }

    let mut sorted = s_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut increase: f64 = 0.0;
    for w in sorted.windows(2) {
        let d = b.eval(w[1]) - b.eval(w[0]);
        increase = if d.is_nan() {
            f64::INFINITY
        } else {
            increase.max(d)
        };
    }

    let step = 1e-5;
    let fd = (b.eval(step) - b.eval(-step)) / (2.0 * step);
    let deriv_res = (fd + 0.5).abs();

    BValidation {
        tag: b.tag().to_string(),
        b_at_zero: PropertyCheck {
            name: "b_at_zero",
            pass: b0_res <= B_ZERO_TOL,
            residual: b0_res,
        },
        positive: PropertyCheck {
            name: "positive",
            pass: min_b > 0.0,
            residual: positive_res,
        },
        log_identity: PropertyCheck {
            name: "log_identity",
            pass: log_res <= LOG_IDENTITY_TOL,
            residual: log_res,
        },
        monotone: PropertyCheck {
            name: "monotone",
            pass: increase <= 0.0,
            residual: increase,
        },
        derivative_at_zero: PropertyCheck {
            name: "derivative_at_zero",
            pass: deriv_res <= DERIV_ZERO_TOL,
            residual: deriv_res,
        },
        lipschitz: PropertyCheck {
            name: "lipschitz",
            pass: b.lipschitz_ok(),
            residual: if b.lipschitz_ok() { 0.0 } else { f64::INFINITY },
        },
    }
}

/// Symmetric grid `-half..=half` with `points` samples (odd counts hit 0).
pub fn symmetric_grid(half: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "grid needs at least two points");
    let n = (points - 1) as f64;
    (0..points)
        .map(|k| -half + 2.0 * half * k as f64 / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sg_values() {
        let b = BFunction::scharfetter_gummel();
        assert_eq!(b.eval(0.0), 1.0);
        // 0.5 / (e^0.5 - 1)
        assert!((b.eval(0.5) - 0.770_747_041_268_399_6).abs() < 1e-15);
        assert!((b.eval(1.5) - 1.5 / (1.5f64.exp() - 1.0)).abs() < 1e-15);
        assert!((b.eval(1.5) - 0.430_826).abs() < 1e-6);
    }

    #[test]
    fn sg_series_branch_is_continuous() {
        let b = BFunction::scharfetter_gummel();
        let below = b.eval(SG_SERIES_CUTOFF * (1.0 - 1e-9));
        let above = b.eval(SG_SERIES_CUTOFF * (1.0 + 1e-9));
        assert!((below - above).abs() < 1e-14);
        let s = 3e-6;
        assert!((b.eval(s) - s / s.exp_m1()).abs() < 1e-15);
    }

    #[test]
    fn sg_derivative_matches_finite_differences() {
        let b = BFunction::scharfetter_gummel();
        for &s in &[
            -30.0f64, -4.0, -0.7, -1e-3, -2e-4, 0.0, 5e-4, 2e-3, 0.3, 2.0, 25.0,
        ] {
            let eps = 1e-6 * (1.0f64).max(s.abs());
            let fd = (b.eval(s + eps) - b.eval(s - eps)) / (2.0 * eps);
            assert!(
                (b.deriv(s) - fd).abs() < 1e-7,
                "s = {s}: {} vs {fd}",
                b.deriv(s)
            );
        }
        assert_eq!(b.deriv(0.0), -0.5);
        assert_eq!(b.deriv(800.0), 0.0);
        assert!((b.deriv(-800.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sg_passes_validation() {
        let report = validate_b(&BFunction::scharfetter_gummel(), &symmetric_grid(20.0, 401));
        assert!(report.all_pass(), "{report:?}");
        assert!(report.log_identity.residual <= 1e-12);
    }

    #[test]
    fn exponential_flags_lipschitz_only() {
        let b = BFunction::exponential();
        assert_eq!(b.eval(0.0), 1.0);
        assert!(!b.lipschitz_ok());
        let report = validate_b(&b, &symmetric_grid(20.0, 401));
        assert!(report.log_identity.pass);
        assert!(report.monotone.pass && report.positive.pass && report.derivative_at_zero.pass);
        assert!(!report.lipschitz.pass);
        assert!(!report.all_pass());
    }

    #[test]
    fn truncated_linear_fails_log_identity() {
        let b = BFunction::polynomial(&[1.0, -0.5]).unwrap();
        assert!(b.lipschitz_ok());
        let report = validate_b(&b, &symmetric_grid(1.9, 39));
        assert!(!report.log_identity.pass);
        // ln((1 + s/2)/(1 - s/2)) - s at s = 1.9 is far from zero
        assert!(report.log_identity.residual > 1.0);
        let wide = validate_b(&b, &symmetric_grid(20.0, 401));
        assert!(!wide.positive.pass);
        assert!(wide.log_identity.residual.is_infinite());
    }

    #[test]
    fn custom_screening_rejects_bad_normalization() {
        let err = BFunction::custom("bad", |s: f64| 2.0 - s, |_| -1.0, true).unwrap_err();
        assert!(matches!(err, Error::BNotNormalized { .. }));
        let mut params = BTreeMap::new();
        params.insert("c0".to_string(), 0.9);
        assert!(make_b_function(BKind::Custom, &params).is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!(
            "scharfetter-gummel".parse::<BKind>().unwrap(),
            BKind::ScharfetterGummel
        );
        assert!(matches!(
            "upwind".parse::<BKind>(),
            Err(Error::UnknownBKind(_))
        ));
        let b = make_b_function(BKind::Exponential, &BTreeMap::new()).unwrap();
        assert_eq!(b.kind(), BKind::Exponential);
        let mut params = BTreeMap::new();
        params.insert("c1".to_string(), -0.5);
        let lin = make_b_function(BKind::Custom, &params).unwrap();
        assert_eq!(lin.eval(1.0), 0.5);
    }
}
