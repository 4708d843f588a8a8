//! Spectral gap of `-L` on `l^2(pi)`.
//!
//! Detailed balance makes `D^{1/2} Q D^{-1/2}` symmetric tridiagonal, so the
//! gap is found by Sturm-sequence bisection in O(n) memory.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gamma::dirichlet_energy;
use crate::lattice::{
    check_detailed_balance, check_len, mean_var, GridFunction, RateField, StationaryMeasure,
};

/// Detailed-balance residual above which symmetrization is refused.
pub const SYMMETRIZE_TOL: f64 = 1e-10;
/// Absolute width of the final bisection bracket.
pub const GAP_TOL: f64 = 1e-10;

/// `S = D^{1/2} Q D^{-1/2}` in tridiagonal storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTridiagonal {
    /// `-(alpha_i + beta_i)`.
    pub diag: Vec<f64>,
    /// `sqrt(alpha_i beta_{i+1})`.
    pub offdiag: Vec<f64>,
    /// `alpha_i beta_{i+1}`, kept unrounded for the Sturm recurrence.
    offdiag_sq: Vec<f64>,
    /// `sqrt(pi_i)`, for mapping eigenvectors back to grid functions.
    sqrt_weights: Vec<f64>,
}

impl SymmetricTridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_weights
    }

    /// `S v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut s = self.diag[k] * v[k];
                if k > 0 {
                    s += self.offdiag[k - 1] * v[k - 1];
                }
                if k + 1 < n {
                    s += self.offdiag[k] * v[k + 1];
                }
                s
            })
            .collect()
    }

    /// Number of eigenvalues of `-S` strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.len();
        let scale = self.offdiag_sq.iter().copied().fold(1.0, f64::max);
        let pivmin = f64::MIN_POSITIVE * scale;
        let mut count = 0;
        let mut q = 0.0;
        for k in 0..n {
            q = (-self.diag[k] - x)
                - if k > 0 {
                    self.offdiag_sq[k - 1] / q
                } else {
                    0.0
                };
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }
}

pub fn symmetrize(r: &RateField, m: &StationaryMeasure) -> Result<SymmetricTridiagonal> {
    let residual = check_detailed_balance(r, m)?;
    if residual > SYMMETRIZE_TOL {
        return Err(Error::DetailedBalance {
            residual,
            tolerance: SYMMETRIZE_TOL,
        });
    }
    let n = r.len();
    let offdiag_sq: Vec<f64> = (0..n.saturating_sub(1))
        .map(|k| r.alpha[k] * r.beta[k + 1])
        .collect();
    Ok(SymmetricTridiagonal {
        diag: (0..n).map(|k| -r.total(k)).collect(),
        offdiag: offdiag_sq.iter().map(|v| v.sqrt()).collect(),
        offdiag_sq,
        sqrt_weights: m.log_weights.iter().map(|l| (0.5 * l).exp()).collect(),
    })
}

/// Off-diagonal through the stationary ratio, `alpha_i sqrt(pi_i / pi_{i+1})`.
pub fn offdiag_via_ratio(r: &RateField, m: &StationaryMeasure) -> Result<Vec<f64>> {
    check_len(r.len(), m.len())?;
    Ok((0..r.len().saturating_sub(1))
        .map(|k| r.alpha[k] * (0.5 * (m.log_weights[k] - m.log_weights[k + 1])).exp())
        .collect())
}

/// Largest `|S_{k,k+1} - S_{k+1,k}|` of the unsymmetrized similarity transform.
pub fn symmetry_residual(r: &RateField, m: &StationaryMeasure) -> Result<f64> {
    check_len(r.len(), m.len())?;
    Ok((0..r.len().saturating_sub(1))
        .map(|k| {
            let half = 0.5 * (m.log_weights[k] - m.log_weights[k + 1]);
            (r.alpha[k] * half.exp() - r.beta[k + 1] * (-half).exp()).abs()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralGap {
    pub gap: f64,
    pub bracket: (f64, f64),
    /// Eigenfunction with `<f, pi> = 0` and `<f^2, pi> = 1`.
    pub eigenfunction: GridFunction,
}

/// Smallest nonzero eigenvalue of `-S` and its eigenfunction.
pub fn spectral_gap(s: &SymmetricTridiagonal) -> Result<SpectralGap> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "a single-node chain has no spectral gap".into(),
        ));
    }
    let mut hi: f64 = (0..n)
        .map(|k| {
            let left = if k > 0 { s.offdiag[k - 1] } else { 0.0 };
            let right = if k + 1 < n { s.offdiag[k] } else { 0.0 };
            -s.diag[k] + left + right
        })
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    for _ in 0..400 {
        if hi - lo <= GAP_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if s.count_below(mid) >= 2 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let gap = 0.5 * (lo + hi);
    let eigenfunction = inverse_iteration(s, gap);
    Ok(SpectralGap {
        gap,
        bracket: (lo, hi),
        eigenfunction,
    })
}

/// One inverse-iteration pass on `(-S - sigma) y = b`, with the zero mode removed.
fn inverse_iteration(s: &SymmetricTridiagonal, sigma: f64) -> GridFunction {
    let n = s.len();
    let sw = &s.sqrt_weights;
    // Deterministic start vector with no special symmetry.
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut b: Vec<f64> = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    project_out(&mut b, sw);
    let sub: Vec<f64> = s.offdiag.iter().map(|e| -e).collect();
    let diag: Vec<f64> = s.diag.iter().map(|d| -d - sigma).collect();
    let mut y = solve_tridiagonal_pivoted(&sub, &diag, &sub, &b);
    project_out(&mut y, sw);
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut f: Vec<f64> = y.iter().zip(sw).map(|(v, w)| v / norm / w).collect();
    if f[n - 1] < 0.0 {
        f.iter_mut().for_each(|v| *v = -*v);
    }
    GridFunction(f)
}

/// Removes the component along `sqrt(pi)`, which has unit Euclidean norm.
fn project_out(v: &mut [f64], sqrt_weights: &[f64]) {
    let c: f64 = v.iter().zip(sqrt_weights).map(|(a, b)| a * b).sum();
    v.iter_mut()
        .zip(sqrt_weights)
        .for_each(|(a, b)| *a -= c * b);
}

/// Solves a tridiagonal system by Gaussian elimination with partial pivoting.
///
/// `sub[k]` is entry `(k+1, k)`, `sup[k]` is entry `(k, k+1)`. A zero pivot is
/// nudged to a tiny value, which is what inverse iteration wants.
pub fn solve_tridiagonal_pivoted(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut du = sup.to_vec();
    du.resize(n.saturating_sub(1), 0.0);
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut dl = sub.to_vec();
    let mut x = rhs.to_vec();
    let tiny = f64::EPSILON
        * d.iter()
            .chain(sub)
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
    for k in 0..n.saturating_sub(1) {
        if d[k].abs() >= dl[k].abs() {
            if d[k] == 0.0 {
                d[k] = tiny;
            }
            let l = dl[k] / d[k];
            dl[k] = l;
            d[k + 1] -= l * du[k];
            x[k + 1] -= l * x[k];
        } else {
            // Swap rows k and k+1.
            let l = d[k] / dl[k];
            d[k] = dl[k];
            dl[k] = l;
            let t = du[k];
            du[k] = d[k + 1];
            d[k + 1] = t - l * d[k + 1];
            if k + 2 < n {
                du2[k] = du[k + 1];
                du[k + 1] *= -l;
            }
            x.swap(k, k + 1);
            x[k + 1] -= l * x[k];
        }
    }
    if n > 0 && d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    for k in (0..n).rev() {
        let mut v = x[k];
        if k + 1 < n {
            v -= du[k] * x[k + 1];
        }
        if k + 2 < n {
            v -= du2[k] * x[k + 2];
        }
        x[k] = v / d[k];
    }
    x
}

/// `<Gamma(f,f), pi> / Var_pi(f)`.
pub fn rayleigh_quotient(r: &RateField, m: &StationaryMeasure, f: &[f64]) -> Result<f64> {
    let (mean, var) = mean_var(m, f)?;
    let second = m.expect(&f.iter().map(|v| v * v).collect::<Vec<_>>());
    if var <= 1e-24 * second.max(mean * mean) || var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(dirichlet_energy(r, m, f)? / var)
}
