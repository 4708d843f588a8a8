//! Generator, carré du champ and iterated carré du champ on a rate field.
//!
//! `L` and `Gamma` are defined at every node because the zeroed edge rates
//! kill the missing neighbours. The closed form of `Gamma_2` needs a two-node
//! halo and returns `NaN` within [`GAMMA2_MARGIN`] nodes of either edge.

use crate::error::{Error, Result};
use crate::lattice::{check_len, GridFunction, RateField, StationaryMeasure, EPS_FLOOR};

pub const GENERATOR_MARGIN: usize = 1;
pub const GAMMA2_MARGIN: usize = 2;

/// A rate field paired with the node range on which a stencil is fully defined.
#[derive(Debug, Clone, Copy)]
pub struct OperatorStencil<'a> {
    pub rates: &'a RateField,
    pub interior_margin: usize,
}

impl<'a> OperatorStencil<'a> {
    pub fn generator(rates: &'a RateField) -> Self {
        Self {
            rates,
            interior_margin: GENERATOR_MARGIN,
        }
    }

    pub fn gamma2(rates: &'a RateField) -> Self {
        Self {
            rates,
            interior_margin: GAMMA2_MARGIN,
        }
    }

    /// Storage indices where the stencil is fully defined.
    pub fn interior(&self) -> std::ops::Range<usize> {
        interior(self.rates.len(), self.interior_margin)
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.interior().contains(&k)
    }
}

pub(crate) fn interior(n: usize, margin: usize) -> std::ops::Range<usize> {
    if n > 2 * margin {
        margin..n - margin
    } else {
        0..0
    }
}

#[inline]
fn dp(f: &[f64], k: usize) -> f64 {
    if k + 1 < f.len() {
        f[k + 1] - f[k]
    } else {
        0.0
    }
}

#[inline]
fn dm(f: &[f64], k: usize) -> f64 {
    if k > 0 {
        f[k] - f[k - 1]
    } else {
        0.0
    }
}

/// `(Lf)_i = alpha_i (f_{i+1} - f_i) - beta_i (f_i - f_{i-1})`.
pub fn apply_generator(r: &RateField, f: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    Ok(GridFunction(
        (0..f.len())
            .map(|k| r.alpha[k] * dp(f, k) - r.beta[k] * dm(f, k))
            .collect(),
    ))
}

/// `(L* rho)_i`: inflow from both neighbours minus outflow.
pub fn apply_forward(r: &RateField, rho: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), rho.len())?;
    let n = rho.len();
    Ok(GridFunction(
        (0..n)
            .map(|k| {
                let from_left = if k > 0 {
                    r.alpha[k - 1] * rho[k - 1]
                } else {
                    0.0
                };
                let from_right = if k + 1 < n {
                    r.beta[k + 1] * rho[k + 1]
                } else {
                    0.0
                };
                // Flux form keeps the telescoping sum exact up to rounding.
                (from_left - r.beta[k] * rho[k]) - (r.alpha[k] * rho[k] - from_right)
            })
            .collect(),
    ))
}

/// `Gamma(f, g)_i = alpha_i D+f D+g / 2 + beta_i D-f D-g / 2`.
pub fn gamma(r: &RateField, f: &[f64], g: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    check_len(f.len(), g.len())?;
    Ok(GridFunction(
        (0..f.len())
            .map(|k| {
                0.5 * r.alpha[k] * (dp(f, k) * dp(g, k)) + 0.5 * r.beta[k] * (dm(f, k) * dm(g, k))
            })
            .collect(),
    ))
}

/// The five terms of the closed-form `Gamma_2(f, g)` at storage index `k`.
///
/// Order: the two first-order rate-difference terms, then the forward,
/// backward and mixed second-difference terms. Requires `2 <= k < n - 2`.
pub fn gamma2_terms(r: &RateField, f: &[f64], g: &[f64], k: usize) -> [f64; 5] {
    let (a, b) = (&r.alpha, &r.beta);
    let dpp = |v: &[f64]| v[k + 2] - 2.0 * v[k + 1] + v[k];
    let dmm = |v: &[f64]| v[k] - 2.0 * v[k - 1] + v[k - 2];
    let dpm = |v: &[f64]| v[k + 1] - 2.0 * v[k] + v[k - 1];
    let (dpa, dpb) = (a[k + 1] - a[k], b[k + 1] - b[k]);
    let (dma, dmb) = (a[k] - a[k - 1], b[k] - b[k - 1]);
    [
        0.25 * a[k] * (3.0 * dpb - dpa) * dp(f, k) * dp(g, k),
        0.25 * b[k] * (dmb - 3.0 * dma) * dm(f, k) * dm(g, k),
        0.25 * a[k] * a[k + 1] * dpp(f) * dpp(g),
        0.25 * b[k] * b[k - 1] * dmm(f) * dmm(g),
        0.5 * a[k] * b[k] * dpm(f) * dpm(g),
    ]
}

/// Closed-form `Gamma_2(f, g)`; `NaN` within two nodes of the edges.
pub fn gamma2_closed(r: &RateField, f: &[f64], g: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    check_len(f.len(), g.len())?;
    let n = f.len();
    let mut out = vec![f64::NAN; n];
    for k in interior(n, GAMMA2_MARGIN) {
        out[k] = gamma2_terms(r, f, g, k).iter().sum();
    }
    Ok(GridFunction(out))
}

/// `(L Gamma(f, g) - Gamma(f, Lg) - Gamma(Lf, g)) / 2` by composition.
pub fn gamma2_definitional(r: &RateField, f: &[f64], g: &[f64]) -> Result<GridFunction> {
    let lf = apply_generator(r, f)?;
    let lg = apply_generator(r, g)?;
    let lgam = apply_generator(r, &gamma(r, f, g)?)?;
    let a = gamma(r, f, &lg)?;
    let b = gamma(r, &lf, g)?;
    Ok(GridFunction(
        (0..f.len())
            .map(|k| 0.5 * (lgam[k] - a[k] - b[k]))
            .collect(),
    ))
}

fn check_positive(w: &[f64]) -> Result<()> {
    match w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(idx) => Err(Error::NonPositiveWeight { idx, value: w[idx] }),
        None => Ok(()),
    }
}

/// `Gamma(f^2/W, W) - Gamma(f, f)` via its closed form; nonpositive.
pub fn quotient_defect(r: &RateField, f: &[f64], w: &[f64]) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    check_len(f.len(), w.len())?;
    check_positive(w)?;
    let n = f.len();
    Ok(GridFunction(
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                if k + 1 < n {
                    let num = f[k + 1] * w[k] - f[k] * w[k + 1];
                    s += r.alpha[k] * num * num / (w[k] * w[k + 1]);
                }
                if k > 0 {
                    let num = f[k - 1] * w[k] - f[k] * w[k - 1];
                    s += r.beta[k] * num * num / (w[k] * w[k - 1]);
                }
                -0.5 * s
            })
            .collect(),
    ))
}

/// Same quantity as [`quotient_defect`], by composite trapezoid over the
/// interpolation parameter `s` in `[0, 1]`. Test oracle.
pub fn quotient_defect_quadrature(
    r: &RateField,
    f: &[f64],
    w: &[f64],
    points: usize,
) -> Result<GridFunction> {
    check_len(r.len(), f.len())?;
    check_len(f.len(), w.len())?;
    check_positive(w)?;
    if points < 2 {
        return Err(Error::InvalidArgument(
            "trapezoid needs at least 2 points".into(),
        ));
    }
    let n = f.len();
    let ds = 1.0 / (points - 1) as f64;
    let trap = |g: &dyn Fn(f64) -> f64| {
        let mut acc = 0.5 * (g(0.0) + g(1.0));
        for j in 1..points - 1 {
            acc += g(j as f64 * ds);
        }
        acc * ds
    };
    Ok(GridFunction(
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                if k + 1 < n {
                    let num = f[k + 1] * w[k] - f[k] * w[k + 1];
                    let dw = w[k + 1] - w[k];
                    s += r.alpha[k] * trap(&|t| (num / (w[k] + t * dw)).powi(2));
                }
                if k > 0 {
                    let num = f[k - 1] * w[k] - f[k] * w[k - 1];
                    let dw = w[k] - w[k - 1];
                    s += r.beta[k] * trap(&|t| (num / (w[k] - t * dw)).powi(2));
                }
                -0.5 * s
            })
            .collect(),
    ))
}

/// `|<Gamma(f,f), pi> + <f Lf, pi>| / max(<Gamma(f,f), pi>, eps)`.
pub fn dirichlet_identity_check(r: &RateField, m: &StationaryMeasure, f: &[f64]) -> Result<f64> {
    check_len(m.len(), f.len())?;
    let energy = m.expect(&gamma(r, f, f)?);
    let lf = apply_generator(r, f)?;
    let cross: f64 = m
        .weights
        .iter()
        .zip(f)
        .zip(lf.iter())
        .map(|((w, a), b)| w * a * b)
        .sum();
    Ok((energy + cross).abs() / energy.max(EPS_FLOOR))
}

/// Dirichlet energy `<Gamma(f,f), pi>`.
pub fn dirichlet_energy(r: &RateField, m: &StationaryMeasure, f: &[f64]) -> Result<f64> {
    check_len(m.len(), f.len())?;
    Ok(m.expect(&gamma(r, f, f)?))
}
