//! Truncated uniform lattice, B-scheme jump rates and the stationary measure.
//!
//! Nodes are stored with offset indexing: storage index `k` corresponds to the
//! lattice site `i = k - N` at position `x_i = i h`.

use std::ops::{Deref, DerefMut};

use serde::Serialize;

use crate::bfunc::BFunction;
use crate::error::{Error, Result};
use crate::potential::Potential;

/// Relative tolerance for the detailed-balance identity.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;

/// Floor for relative residual denominators.
pub const EPS_FLOOR: f64 = 1e-300;

/// Window depth used by [`Lattice::auto`]: weight ratio `e^-40` at the edge.
pub const AUTO_DEPTH: f64 = 40.0;

/// Depth at which [`Lattice::auto`] stops widening even if the minimum
/// radius is not reached yet; steep potentials would otherwise underflow.
pub const AUTO_MAX_DEPTH: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lattice {
    pub h: f64,
    #[serde(rename = "N")]
    pub n_half: usize,
}

impl Lattice {
    pub fn new(h: f64, n_half: usize) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "step h = {h} must be positive and finite"
            )));
        }
        Ok(Self { h, n_half })
    }

    /// Lattice covering `[-radius, radius]`; `radius` must be a multiple of `h`.
    pub fn with_radius(h: f64, radius: f64) -> Result<Self> {
        let lat = Self::new(h, 0)?;
        let n = grid_multiple(radius, h)?;
        Ok(Self { n_half: n, ..lat })
    }

    /// Smallest grid-multiple radius `R` with `u(+-R) - min u >= 40` and
    /// `R >= 4/sqrt(lambda)` (or `R >= 16` without a convexity constant).
    /// The radius rule is dropped once the depth reaches [`AUTO_MAX_DEPTH`].
    pub fn auto(u: &Potential, h: f64) -> Result<Self> {
        Self::new(h, 0)?;
        let r_min = match u.convexity_lambda {
            Some(l) if l > 0.0 => 4.0 / l.sqrt(),
            _ => 16.0,
        };
        // Grows outward from the origin; the minimum is tracked along the way.
        let limit = (1e4_f64 / h).ceil() as usize + 1;
        let mut u_min = u.eval(0.0);
        for n in 1..=limit {
            let x = n as f64 * h;
            let (up, um) = (u.eval(x), u.eval(-x));
            if !up.is_finite() {
                return Err(Error::NonFinitePotential { x });
            }
            if !um.is_finite() {
                return Err(Error::NonFinitePotential { x: -x });
            }
            u_min = u_min.min(up).min(um);
            let depth = up.min(um) - u_min;
            if depth >= AUTO_DEPTH && (x + 1e-12 * x >= r_min || depth >= AUTO_MAX_DEPTH) {
                return Ok(Self { h, n_half: n });
            }
        }
        Err(Error::InvalidLattice(format!(
            "potential `{}` does not confine by depth {AUTO_DEPTH} within |x| <= 1e4",
            u.tag()
        )))
    }

    pub fn len(&self) -> usize {
        2 * self.n_half + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.n_half as f64 * self.h
    }

    /// Position of storage index `k`.
    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        (k as f64 - self.n_half as f64) * self.h
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.x(k)).collect()
    }

    /// Storage index of the site `i` (signed), if inside the window.
    pub fn index_of_site(&self, i: i64) -> Option<usize> {
        let k = i + self.n_half as i64;
        (0..self.len() as i64).contains(&k).then_some(k as usize)
    }

    /// Storage index of the node at `x`; `None` unless `x` is a node of the window.
    pub fn index_of_position(&self, x: f64) -> Option<usize> {
        let steps = x / self.h;
        let i = steps.round();
        if !i.is_finite()
            || i.abs() > self.n_half as f64
            || (steps - i).abs() > 1e-9 * i.abs().max(1.0)
        {
            return None;
        }
        self.index_of_site(i as i64)
    }

    /// Evaluates `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction((0..self.len()).map(|k| f(self.x(k))).collect())
    }
}

/// Number of grid steps in `radius`, rejecting off-grid values.
pub fn grid_multiple(radius: f64, h: f64) -> Result<usize> {
    let steps = radius / h;
    let n = steps.round();
    if !(radius.is_finite() && radius > 0.0) || (steps - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::RadiusNotOnGrid { radius, h });
    }
    Ok(n as usize)
}

/// Real values on the lattice nodes.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct GridFunction(pub Vec<f64>);

impl GridFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn indicator(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for GridFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch(a, b))
    }
}

/// Right (`alpha`) and left (`beta`) jump rates per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateField {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl RateField {
    /// Wraps raw rate vectors, enforcing the reflecting boundary convention.
    pub fn from_vectors(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        check_len(alpha.len(), beta.len())?;
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidLattice("empty rate field".into()));
        }
        if alpha[n - 1] != 0.0 || beta[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "reflecting truncation needs alpha at the right edge and beta at the left edge to be zero".into(),
            ));
        }
        for (k, &v) in alpha.iter().chain(beta.iter()).enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "rate entry {} is {v}",
                    k % n
                )));
            }
        }
        Ok(Self { alpha, beta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn total(&self, k: usize) -> f64 {
        self.alpha[k] + self.beta[k]
    }

    pub fn max_total(&self) -> f64 {
        (0..self.len()).map(|k| self.total(k)).fold(0.0, f64::max)
    }

    /// Dense Q-matrix, row `k` holding the rates out of node `k`.
    pub fn generator_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut q = vec![vec![0.0; n]; n];
        for k in 0..n {
            q[k][k] = -self.total(k);
            if k + 1 < n {
                q[k][k + 1] = self.alpha[k];
            }
            if k > 0 {
                q[k][k - 1] = self.beta[k];
            }
        }
        q
    }
}

fn potential_on(u: &Potential, lat: &Lattice) -> Result<Vec<f64>> {
    (0..lat.len())
        .map(|k| {
            let x = lat.x(k);
            let v = u.eval(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinitePotential { x })
            }
        })
        .collect()
}

/// `alpha_i = B(u_{i+1} - u_i)/h^2`, `beta_i = B(u_{i-1} - u_i)/h^2`, zero flux at the edges.
pub fn build_rates(u: &Potential, b: &BFunction, lat: &Lattice) -> Result<RateField> {
    let uv = potential_on(u, lat)?;
    let n = uv.len();
    let inv_h2 = 1.0 / (lat.h * lat.h);
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for k in 0..n {
        if k + 1 < n {
            alpha[k] = inv_h2 * b.eval(uv[k + 1] - uv[k]);
        }
        if k > 0 {
            beta[k] = inv_h2 * b.eval(uv[k - 1] - uv[k]);
        }
    }
    Ok(RateField { alpha, beta })
}

/// Normalized stationary weights with their logarithms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryMeasure {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl StationaryMeasure {
    /// Normalizes unnormalized log weights with log-sum-exp.
    pub fn from_log_weights(logw: &[f64]) -> Result<Self> {
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::WeightUnderflow);
        }
        let log_z = max + logw.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_weights: Vec<f64> = logw.iter().map(|l| l - log_z).collect();
        let weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::WeightUnderflow);
        }
        Ok(Self {
            weights,
            log_weights,
        })
    }

    /// Recovers the measure from the rates alone through
    /// `pi_i / pi_{i-1} = alpha_{i-1} / beta_i`.
    pub fn from_rates(r: &RateField) -> Result<Self> {
        let mut logw = vec![0.0; r.len()];
        for k in 1..r.len() {
            for (idx, value) in [(k - 1, r.alpha[k - 1]), (k, r.beta[k])] {
                if !(value > 0.0) {
                    return Err(Error::NonPositiveWeight { idx, value });
                }
            }
            logw[k] = logw[k - 1] + r.alpha[k - 1].ln() - r.beta[k].ln();
        }
        Self::from_log_weights(&logw)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `<f, pi>`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// `pi_i = exp(-u(x_i))/Z`.
pub fn stationary_measure(u: &Potential, lat: &Lattice) -> Result<StationaryMeasure> {
    let uv = potential_on(u, lat)?;
    let logw: Vec<f64> = uv.iter().map(|v| -v).collect();
    StationaryMeasure::from_log_weights(&logw)
}

/// Max over adjacent pairs of `|alpha_{i-1} pi_{i-1} - beta_i pi_i| / (beta_i pi_i)`.
pub fn check_detailed_balance(r: &RateField, m: &StationaryMeasure) -> Result<f64> {
    check_len(r.len(), m.len())?;
    let mut worst: f64 = 0.0;
    for k in 1..r.len() {
        // Both sides in log space so the comparison survives tiny weights.
        let lhs = r.alpha[k - 1].ln() + m.log_weights[k - 1];
        let rhs = r.beta[k].ln() + m.log_weights[k];
        let rel = if lhs == rhs {
            0.0
        } else {
            (lhs - rhs).exp_m1().abs()
        };
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summability {
    pub value: f64,
    pub tail_fraction: f64,
}

/// `sum (alpha_i + beta_i) pi_i` and the share carried by the outer 10% of nodes.
pub fn summability_report(r: &RateField, m: &StationaryMeasure) -> Result<Summability> {
    check_len(r.len(), m.len())?;
    let n = r.len();
    let tail_nodes = ((n as f64) * 0.1).round() as usize;
    let per_side = tail_nodes.div_ceil(2);
    let mut value = 0.0;
    let mut tail = 0.0;
    for k in 0..n {
        let c = r.total(k) * m.weights[k];
        value += c;
        if k < per_side || k >= n - per_side {
            tail += c;
        }
    }
    let tail_fraction = if value > 0.0 { tail / value } else { 0.0 };
    Ok(Summability {
        value,
        tail_fraction,
    })
}

/// `(<f, pi>, <f^2, pi> - <f, pi>^2)`, the variance via a centered second pass.
pub fn mean_var(m: &StationaryMeasure, f: &[f64]) -> Result<(f64, f64)> {
    check_len(m.len(), f.len())?;
    if f.iter().all(|&v| v == f[0]) {
        return Ok((f[0], 0.0));
    }
    let mean = m.expect(f);
    let var = m
        .weights
        .iter()
        .zip(f)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum::<f64>();
    Ok((mean, var.max(0.0)))
}
