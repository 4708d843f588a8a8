//! Confining potentials `u(x)` with optional analytic derivatives and the
//! structural constants the certificates rely on.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A potential together with whatever structural information is known about it.
#[derive(Clone)]
pub struct Potential {
    tag: String,
    eval: ScalarFn,
    deriv: Option<ScalarFn>,
    deriv2: Option<ScalarFn>,
    /// `(a, M)` with `x u'(x) >= a x^2` for `|x| > M`.
    pub drift_constants: Option<(f64, f64)>,
    /// `lambda` with `u'' >= lambda`.
    pub convexity_lambda: Option<f64>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("tag", &self.tag)
            .field("drift_constants", &self.drift_constants)
            .field("convexity_lambda", &self.convexity_lambda)
            .finish()
    }
}

impl Potential {
    pub fn new<F>(tag: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            tag: tag.into(),
            eval: Arc::new(eval),
            deriv: None,
            deriv2: None,
            drift_constants: None,
            convexity_lambda: None,
        }
    }

    pub fn with_deriv<F>(mut self, deriv: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.deriv = Some(Arc::new(deriv));
        self
    }

    pub fn with_deriv2<F>(mut self, deriv2: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.deriv2 = Some(Arc::new(deriv2));
        self
    }

    pub fn with_drift_constants(mut self, a: f64, m: f64) -> Self {
        self.drift_constants = Some((a, m));
        self
    }

    pub fn with_convexity(mut self, lambda: f64) -> Self {
        self.convexity_lambda = Some(lambda);
        self
    }

    /// `u(x) = c x^2`; the Ornstein-Uhlenbeck benchmark is `c = 1/2`.
    pub fn quadratic(c: f64) -> Self {
        let mut p = Self::new(format!("quadratic({c})"), move |x| c * x * x)
            .with_deriv(move |x| 2.0 * c * x)
            .with_deriv2(move |_| 2.0 * c);
        if c > 0.0 {
            p = p
                .with_drift_constants(2.0 * c, 1e-12)
                .with_convexity(2.0 * c);
        }
        p
    }

    /// `u(x) = c x^4`.
    pub fn quartic(c: f64) -> Self {
        let mut p = Self::new(format!("quartic({c})"), move |x| c * x.powi(4))
            .with_deriv(move |x| 4.0 * c * x.powi(3))
            .with_deriv2(move |x| 12.0 * c * x * x);
        if c > 0.0 {
            // 4c x^4 >= x^2 once x^2 >= 1/(4c)
            p = p.with_drift_constants(1.0, (1.0 / (4.0 * c)).sqrt());
        }
        p
    }

    /// `u(x) = a x^4 - b x^2`, non-convex for `b > 0`.
    pub fn double_well(a: f64, b: f64) -> Self {
        let mut p = Self::new(format!("double_well({a},{b})"), move |x| {
            a * x.powi(4) - b * x * x
        })
        .with_deriv(move |x| 4.0 * a * x.powi(3) - 2.0 * b * x)
        .with_deriv2(move |x| 12.0 * a * x * x - 2.0 * b);
        if a > 0.0 {
            // x u' = 4a x^4 - 2b x^2 >= x^2 once x^2 >= (1 + 2b)/(4a)
            p = p.with_drift_constants(1.0, ((1.0 + 2.0 * b.max(0.0)) / (4.0 * a)).sqrt());
        }
        p
    }

    /// `u(x) = c |x|`. Confining but linear, so the quadratic drift bound fails.
    pub fn abs(c: f64) -> Self {
        Self::new(format!("abs({c})"), move |x: f64| c * x.abs())
            .with_deriv(move |x: f64| c * x.signum() * (x != 0.0) as u8 as f64)
    }

    /// `u(x) = sum_k coeffs[k] x^k`.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c = coeffs.to_vec();
        let dc: Vec<f64> = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        let ddc: Vec<f64> = dc
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        let tag = format!(
            "custom_poly({})",
            c.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        Self::new(tag, move |x| horner(&c, x))
            .with_deriv(move |x| horner(&dc, x))
            .with_deriv2(move |x| horner(&ddc, x))
    }

    pub fn flat() -> Self {
        Self::new("flat", |_| 0.0)
            .with_deriv(|_| 0.0)
            .with_deriv2(|_| 0.0)
    }

    /// Adds `amplitude * exp(-x^2)` to `self`.
    pub fn plus_gaussian_bump(&self, amplitude: f64) -> Self {
        let base = self.eval.clone();
        let mut p = Self::new(format!("{}+bump({amplitude})", self.tag), move |x| {
            base(x) + amplitude * (-x * x).exp()
        });
        if let Some(d) = self.deriv.clone() {
            p = p.with_deriv(move |x| d(x) - 2.0 * amplitude * x * (-x * x).exp());
        }
        p
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    /// `u'(x)`, by central difference when no analytic derivative was supplied.
    pub fn deriv(&self, x: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(x),
            None => {
                let eps = 1e-6 * x.abs().max(1.0);
                (self.eval(x + eps) - self.eval(x - eps)) / (2.0 * eps)
            }
        }
    }

    /// `u''(x)`, by second difference when not supplied.
    pub fn deriv2(&self, x: f64) -> f64 {
        match &self.deriv2 {
            Some(d) => d(x),
            None => {
                let eps = 1e-4 * x.abs().max(1.0);
                (self.eval(x + eps) - 2.0 * self.eval(x) + self.eval(x - eps)) / (eps * eps)
            }
        }
    }

    /// Checks the declared drift and convexity constants on `samples`.
    pub fn check_assumptions(&self, samples: &[f64]) -> PotentialReport {
        let drift_slack = self.drift_constants.map(|(a, m)| {
            samples
                .iter()
                .filter(|x| x.abs() > m)
                .map(|&x| x * self.deriv(x) - a * x * x)
                .fold(f64::INFINITY, f64::min)
        });
        let convexity_slack = self.convexity_lambda.map(|lambda| {
            samples
                .iter()
                .map(|&x| self.deriv2(x) - lambda)
                .fold(f64::INFINITY, f64::min)
        });
        PotentialReport {
            drift_slack,
            convexity_slack,
        }
    }
}

/// Minimum slack of each declared assumption; negative means violated.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialReport {
    pub drift_slack: Option<f64>,
    pub convexity_slack: Option<f64>,
}

impl PotentialReport {
    pub fn ok(&self) -> bool {
        // Second differences carry O(1e-7) noise; allow it.
        self.drift_slack.is_none_or(|s| s >= -1e-9)
            && self.convexity_slack.is_none_or(|s| s >= -1e-6)
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<f64> {
        (-400..=400).map(|k| k as f64 * 0.05).collect()
    }

    #[test]
    fn builtin_assumptions_hold() {
        for p in [
            Potential::quadratic(0.5),
            Potential::quartic(0.25),
            Potential::double_well(0.25, 0.5),
        ] {
            let report = p.check_assumptions(&samples());
            assert!(report.ok(), "{}: {report:?}", p.tag());
        }
    }

    #[test]
    fn false_convexity_claim_is_caught() {
        let p = Potential::double_well(0.25, 0.5).with_convexity(0.1);
        let report = p.check_assumptions(&samples());
        assert!(!report.ok());
        assert!(report.convexity_slack.unwrap() < -1.0);
    }

    #[test]
    fn numeric_derivatives_fall_back() {
        let p = Potential::new("cubic", |x: f64| x.powi(3) / 3.0 + x * x / 2.0);
        assert!((p.deriv(1.5) - (2.25 + 1.5)).abs() < 1e-6);
        assert!((p.deriv2(1.5) - 4.0).abs() < 1e-4);
    }

    #[test]
    fn polynomial_matches_closed_form() {
        let p = Potential::polynomial(&[1.0, 0.0, 0.5, 0.1]);
        assert_eq!(p.eval(2.0), 1.0 + 2.0 + 0.8);
        assert!((p.deriv(2.0) - (2.0 + 1.2)).abs() < 1e-12);
        assert!((p.deriv2(2.0) - (1.0 + 1.2)).abs() < 1e-12);
    }
}
