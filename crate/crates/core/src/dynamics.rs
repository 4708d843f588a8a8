//! Time integration of the forward (`rho' = L* rho`) and backward (`f' = L f`)
//! equations with conservation and monotonicity monitors.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::Serialize;

use crate::certificates::curvature_estimate;
use crate::error::{Error, Result};
use crate::gamma::dirichlet_energy;
use crate::json::fmt_f64;
use crate::lattice::{check_len, mean_var, GridFunction, RateField, StationaryMeasure, EPS_FLOOR};

/// Explicit stability bound on `dt * max_i (alpha_i + beta_i)`.
pub const RK4_LIMIT: f64 = 0.5;
/// Negative mass below this magnitude is rounding noise and gets clamped.
pub const CLAMP_TOL: f64 = 1e-12;
pub const DEFAULT_LOG_OUTPUTS: usize = 64;
/// Absolute slack in the energy bound, relative to `<f0^2, pi>`.
pub const H1_ROUNDING_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMethod {
    Rk4,
    Trapezoidal,
}

impl TimeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TimeMethod::Rk4 => "rk4",
            TimeMethod::Trapezoidal => "trapezoidal",
        }
    }
}

impl fmt::Display for TimeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(TimeMethod::Rk4),
            "trapezoidal" | "crank-nicolson" => Ok(TimeMethod::Trapezoidal),
            other => Err(Error::InvalidArgument(format!(
                "unknown time method `{other}`"
            ))),
        }
    }
}

/// Default step. Trapezoidal steps are also capped at `2 / max rate`, the
/// largest step for which the update keeps densities nonnegative.
pub fn default_dt(method: TimeMethod, r: &RateField, kappa_estimate: Option<f64>) -> f64 {
    let max_rate = r.max_total().max(EPS_FLOOR);
    match method {
        TimeMethod::Rk4 => 0.4 / max_rate,
        TimeMethod::Trapezoidal => {
            let resolve = kappa_estimate
                .filter(|k| *k > 0.0)
                .map_or(f64::INFINITY, |k| 0.05 / k);
            resolve.min(0.1).min(2.0 / max_rate)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputSchedule {
    /// `n` geometrically spaced times from the first step to the horizon, plus `t = 0`.
    Log(usize),
    /// `n` equal intervals, plus `t = 0`.
    Uniform(usize),
    EveryStep,
}

impl Default for OutputSchedule {
    fn default() -> Self {
        OutputSchedule::Log(DEFAULT_LOG_OUTPUTS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub method: TimeMethod,
    pub dt: f64,
    pub schedule: OutputSchedule,
    pub keep_snapshots: bool,
    /// Burn-in fraction for the fitted variance decay rate.
    pub burn_in: f64,
}

impl EvolveOptions {
    pub fn new(method: TimeMethod, dt: f64) -> Self {
        Self {
            method,
            dt,
            schedule: OutputSchedule::default(),
            keep_snapshots: false,
            burn_in: 0.25,
        }
    }
}

/// Worst per-step violations of the laws the exact semigroup obeys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepMonitor {
    pub max_variance_increase: f64,
    pub max_sup_increase: f64,
    pub min_value: f64,
    /// Mass for forward runs, the `pi`-mean for backward runs.
    pub max_invariant_drift: f64,
    pub clamped_entries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    /// One standard error of the slope.
    pub half_width: f64,
    pub points: usize,
}

/// Output series. Forward runs track `q = rho/pi`: `variance` is `Var_pi(q)`,
/// `mass` is `sum rho`, `min` is `min rho`, `sup_norm` is `max |q|`. Backward
/// runs track `f`: `mass` holds `<f, pi>` and `min` is `min f`.
#[derive(Debug, Clone, Serialize)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<GridFunction>>,
    pub variance_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub min_series: Vec<f64>,
    pub sup_series: Vec<f64>,
    pub fitted_rate: Option<DecayFit>,
    pub monitor: StepMonitor,
    pub dt: f64,
    pub steps: usize,
    pub method: TimeMethod,
    #[serde(skip)]
    pub final_state: GridFunction,
}

impl EvolutionResult {
    /// CSV with columns `t,variance,mass,min_rho,sup_norm` at 17 significant digits.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "variance", "mass", "min_rho", "sup_norm"])?;
        for j in 0..self.times.len() {
            out.write_record([
                fmt_f64(self.times[j]),
                fmt_f64(self.variance_series[j]),
                fmt_f64(self.mass_series[j]),
                fmt_f64(self.min_series[j]),
                fmt_f64(self.sup_series[j]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tridiagonal operator: `sub[k] = A[k][k-1]`, `sup[k] = A[k][k+1]`.
struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    /// Matrix of `L*`.
    fn forward(r: &RateField) -> Self {
        let n = r.len();
        Self {
            sub: (0..n)
                .map(|k| if k > 0 { r.alpha[k - 1] } else { 0.0 })
                .collect(),
            diag: (0..n).map(|k| -r.total(k)).collect(),
            sup: (0..n)
                .map(|k| if k + 1 < n { r.beta[k + 1] } else { 0.0 })
                .collect(),
        }
    }

    /// Matrix of `L`.
    fn backward(r: &RateField) -> Self {
        Self {
            sub: r.beta.clone(),
            diag: (0..r.len()).map(|k| -r.total(k)).collect(),
            sup: r.alpha.clone(),
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for k in 0..n {
            let mut s = self.diag[k] * v[k];
            if k > 0 {
                s += self.sub[k] * v[k - 1];
            }
            if k + 1 < n {
                s += self.sup[k] * v[k + 1];
            }
            out[k] = s;
        }
    }
}

enum Stepper {
    Rk4 {
        a: Tridiag,
        dt: f64,
        k: [Vec<f64>; 4],
        tmp: Vec<f64>,
    },
    /// `(I - dt/2 A) x = (I + dt/2 A) v`, with the Thomas factors precomputed.
    Trapezoidal {
        a: Tridiag,
        half: f64,
        denom: Vec<f64>,
        cprime: Vec<f64>,
        rhs: Vec<f64>,
    },
}

impl Stepper {
    fn new(a: Tridiag, method: TimeMethod, dt: f64) -> Self {
        let n = a.diag.len();
        match method {
            TimeMethod::Rk4 => Stepper::Rk4 {
                a,
                dt,
                k: std::array::from_fn(|_| vec![0.0; n]),
                tmp: vec![0.0; n],
            },
            TimeMethod::Trapezoidal => {
                let half = 0.5 * dt;
                let mut denom = vec![0.0; n];
                let mut cprime = vec![0.0; n];
                for k in 0..n {
                    let b = 1.0 - half * a.diag[k];
                    let lower = if k > 0 {
                        -half * a.sub[k] * cprime[k - 1]
                    } else {
                        0.0
                    };
                    denom[k] = b - lower;
                    cprime[k] = -half * a.sup[k] / denom[k];
                }
                Stepper::Trapezoidal {
                    a,
                    half,
                    denom,
                    cprime,
                    rhs: vec![0.0; n],
                }
            }
        }
    }

    fn step(&mut self, v: &mut [f64]) {
        let n = v.len();
        match self {
            Stepper::Rk4 { a, dt, k, tmp } => {
                let dt = *dt;
                a.apply(v, &mut k[0]);
                for s in 0..n {
                    tmp[s] = v[s] + 0.5 * dt * k[0][s];
                }
                a.apply(tmp, &mut k[1]);
                for s in 0..n {
                    tmp[s] = v[s] + 0.5 * dt * k[1][s];
                }
                a.apply(tmp, &mut k[2]);
                for s in 0..n {
                    tmp[s] = v[s] + dt * k[2][s];
                }
                a.apply(tmp, &mut k[3]);
                for s in 0..n {
                    v[s] += dt / 6.0 * (k[0][s] + 2.0 * k[1][s] + 2.0 * k[2][s] + k[3][s]);
                }
            }
            Stepper::Trapezoidal {
                a,
                half,
                denom,
                cprime,
                rhs,
            } => {
                a.apply(v, rhs);
                for s in 0..n {
                    rhs[s] = v[s] + *half * rhs[s];
                }
                // Forward sweep, then back substitution into v.
                for s in 0..n {
                    let prev = if s > 0 {
                        -*half * a.sub[s] * rhs[s - 1]
                    } else {
                        0.0
                    };
                    rhs[s] = (rhs[s] - prev) / denom[s];
                }
                for s in (0..n).rev() {
                    v[s] = rhs[s] - if s + 1 < n { cprime[s] * v[s + 1] } else { 0.0 };
                }
            }
        }
    }
}

fn check_time(r: &RateField, horizon: f64, dt: f64, method: TimeMethod) -> Result<(usize, f64)> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / steps as f64;
    if method == TimeMethod::Rk4 {
        let product = dt * r.max_total();
        if product > RK4_LIMIT {
            return Err(Error::UnstableStep {
                product,
                limit: RK4_LIMIT,
            });
        }
    }
    Ok((steps, dt))
}

fn output_steps(schedule: OutputSchedule, steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = match schedule {
        OutputSchedule::EveryStep => (0..=steps).collect(),
        OutputSchedule::Uniform(n) => {
            let n = n.max(1);
            (0..=n)
                .map(|j| ((j as f64) * steps as f64 / n as f64).round() as usize)
                .collect()
        }
        OutputSchedule::Log(n) => {
            let n = n.max(2);
            let top = (steps as f64).ln();
            std::iter::once(0)
                .chain((0..n).map(|j| (top * j as f64 / (n - 1) as f64).exp().round() as usize))
                .collect()
        }
    };
    out.iter_mut().for_each(|s| *s = (*s).min(steps));
    out.dedup();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

struct Observables {
    variance: f64,
    invariant: f64,
    min: f64,
    sup: f64,
}

fn observe_forward(rho: &[f64], m: &StationaryMeasure) -> Observables {
    let mass: f64 = rho.iter().sum();
    let q: Vec<f64> = rho
        .iter()
        .zip(&m.log_weights)
        .map(|(r, l)| r * (-l).exp())
        .collect();
    let mean = mass;
    let variance = m
        .weights
        .iter()
        .zip(&q)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum::<f64>();
    Observables {
        variance,
        invariant: mass,
        min: rho.iter().copied().fold(f64::INFINITY, f64::min),
        sup: q.iter().fold(0.0, |a, v| a.max(v.abs())),
    }
}

fn observe_backward(f: &[f64], m: &StationaryMeasure) -> Observables {
    let (mean, variance) = mean_var(m, f).expect("lengths checked");
    Observables {
        variance,
        invariant: mean,
        min: f.iter().copied().fold(f64::INFINITY, f64::min),
        sup: f.iter().fold(0.0, |a, v| a.max(v.abs())),
    }
}

fn run(
    r: &RateField,
    v0: &[f64],
    horizon: f64,
    opts: &EvolveOptions,
    forward: bool,
) -> Result<EvolutionResult> {
    check_len(r.len(), v0.len())?;
    let (steps, dt) = check_time(r, horizon, opts.dt, opts.method)?;
    let m = StationaryMeasure::from_rates(r)?;
    let observe = if forward {
        observe_forward
    } else {
        observe_backward
    };
    let a = if forward {
        Tridiag::forward(r)
    } else {
        Tridiag::backward(r)
    };
    let mut stepper = Stepper::new(a, opts.method, dt);
    let outputs = output_steps(opts.schedule, steps);

    let mut v = v0.to_vec();
    let first = observe(&v, &m);
    let invariant0 = first.invariant;
    let mut monitor = StepMonitor {
        min_value: first.min,
        ..Default::default()
    };
    let mut res = EvolutionResult {
        times: Vec::with_capacity(outputs.len()),
        snapshots: opts.keep_snapshots.then(Vec::new),
        variance_series: Vec::new(),
        mass_series: Vec::new(),
        min_series: Vec::new(),
        sup_series: Vec::new(),
        fitted_rate: None,
        monitor,
        dt,
        steps,
        method: opts.method,
        final_state: GridFunction::default(),
    };
    let record = |res: &mut EvolutionResult, t: f64, v: &[f64], o: &Observables| {
        res.times.push(t);
        res.variance_series.push(o.variance);
        res.mass_series.push(o.invariant);
        res.min_series.push(o.min);
        res.sup_series.push(o.sup);
        if let Some(s) = res.snapshots.as_mut() {
            s.push(GridFunction(v.to_vec()));
        }
    };
    record(&mut res, 0.0, &v, &first);

    let mut prev = first;
    let mut next_out = 1;
    for s in 1..=steps {
        let before: f64 = if forward { v.iter().sum() } else { 0.0 };
        stepper.step(&mut v);
        let t = s as f64 * dt;
        if forward {
            let mut clamped = 0;
            for (idx, x) in v.iter_mut().enumerate() {
                if *x < 0.0 {
                    if *x < -CLAMP_TOL {
                        return Err(Error::NegativeDensity {
                            time: t,
                            idx,
                            value: *x,
                        });
                    }
                    *x = 0.0;
                    clamped += 1;
                }
            }
            if clamped > 0 {
                let after: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x *= before / after);
                monitor.clamped_entries += clamped;
            }
        }
        let o = observe(&v, &m);
        monitor.max_variance_increase = monitor
            .max_variance_increase
            .max(o.variance - prev.variance);
        monitor.max_sup_increase = monitor.max_sup_increase.max(o.sup - prev.sup);
        monitor.min_value = monitor.min_value.min(o.min);
        monitor.max_invariant_drift = monitor
            .max_invariant_drift
            .max((o.invariant - invariant0).abs());
        if next_out < outputs.len() && outputs[next_out] == s {
            record(&mut res, t, &v, &o);
            next_out += 1;
        }
        prev = o;
    }
    res.monitor = monitor;
    res.fitted_rate = fit_decay_rate(&res.times, &res.variance_series, opts.burn_in).ok();
    res.final_state = GridFunction(v);
    Ok(res)
}

/// Advances `rho' = L* rho`; `rho0` must be a probability vector.
pub fn evolve_forward_with(
    r: &RateField,
    rho0: &[f64],
    horizon: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    if let Some(k) = rho0.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidDensity(format!("entry {k} is {}", rho0[k])));
    }
    let mass: f64 = rho0.iter().sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDensity(format!(
            "total mass {mass} differs from 1"
        )));
    }
    run(r, rho0, horizon, opts, true)
}

pub fn evolve_forward(
    r: &RateField,
    rho0: &[f64],
    horizon: f64,
    dt: f64,
    method: TimeMethod,
) -> Result<EvolutionResult> {
    evolve_forward_with(r, rho0, horizon, &EvolveOptions::new(method, dt))
}

/// Advances `f' = L f`.
pub fn evolve_backward_with(
    r: &RateField,
    f0: &[f64],
    horizon: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    if let Some(k) = f0.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial value {k} is not finite"
        )));
    }
    run(r, f0, horizon, opts, false)
}

pub fn evolve_backward(
    r: &RateField,
    f0: &[f64],
    horizon: f64,
    dt: f64,
    method: TimeMethod,
) -> Result<EvolutionResult> {
    evolve_backward_with(r, f0, horizon, &EvolveOptions::new(method, dt))
}

/// Least-squares decay rate of `ln(values)` against `times`, ignoring the
/// first `burn_in` fraction of the time span.
pub fn fit_decay_rate(times: &[f64], values: &[f64], burn_in: f64) -> Result<DecayFit> {
    check_len(times.len(), values.len())?;
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidArgument(format!(
            "burn-in fraction {burn_in} outside [0, 1)"
        )));
    }
    let (t0, t1) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::TooFewPoints { needed: 10, got: 0 }),
    };
    let cut = t0 + burn_in * (t1 - t0);
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (idx, (&t, &v)) in times.iter().zip(values).enumerate() {
        if t + 1e-12 * t.abs() < cut {
            continue;
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveSeries { idx, value: v });
        }
        ts.push(t);
        ys.push(v.ln());
    }
    let n = ts.len();
    if n < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: n });
    }
    let tm = ts.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let rss: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - ym - slope * (t - tm)).powi(2))
        .sum();
    let half_width = (rss / (n - 2) as f64 / sxx).sqrt();
    Ok(DecayFit {
        rate: -slope,
        half_width,
        points: n,
    })
}

/// Relative gap between the centered difference of `<(P_t f)^2, pi>` at
/// `t = dt` and `-2 <Gamma(P_dt f, P_dt f), pi>`, using two RK4 steps.
pub fn dissipation_check(r: &RateField, m: &StationaryMeasure, f: &[f64], dt: f64) -> Result<f64> {
    check_len(m.len(), f.len())?;
    let opts = EvolveOptions {
        schedule: OutputSchedule::EveryStep,
        keep_snapshots: true,
        ..EvolveOptions::new(TimeMethod::Rk4, dt)
    };
    let res = evolve_backward_with(r, f, 2.0 * dt, &opts)?;
    let snaps = res.snapshots.expect("snapshots requested");
    let sq = |g: &[f64]| m.expect(&g.iter().map(|v| v * v).collect::<Vec<_>>());
    let lhs = (sq(&snaps[2]) - sq(&snaps[0])) / (2.0 * res.dt);
    let rhs = -2.0 * dirichlet_energy(r, m, &snaps[1])?;
    Ok((lhs - rhs).abs() / rhs.abs().max(EPS_FLOOR))
}

#[derive(Debug, Clone, Serialize)]
pub struct H1Decay {
    pub measured_rate: f64,
    /// `2 lambda~`.
    pub certified_theta: f64,
    pub pass: bool,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// Smallest `e^{-2 lambda~ t} E(0) (1 + 1e-6) - E(t)` over the outputs.
    pub min_slack: f64,
}

/// Tracks `E(t) = Var(P_t f) + <Gamma(P_t f, P_t f), pi>` against the bound
/// `e^{-2 lambda~ t} E(0)` from the curvature certificate.
pub fn h1_decay_check(
    r: &RateField,
    m: &StationaryMeasure,
    f0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<H1Decay> {
    check_len(m.len(), f0.len())?;
    let cert = curvature_estimate(r);
    if !cert.valid {
        return Err(Error::InvalidCertificate(format!(
            "curvature lambda_tilde = {} is not positive",
            cert.lambda_tilde
        )));
    }
    let opts = EvolveOptions {
        schedule: OutputSchedule::Uniform(100),
        keep_snapshots: true,
        ..EvolveOptions::new(TimeMethod::Trapezoidal, dt)
    };
    let res = evolve_backward_with(r, f0, horizon, &opts)?;
    let snaps = res.snapshots.as_ref().expect("snapshots requested");
    let mut energy = Vec::with_capacity(snaps.len());
    for g in snaps {
        let (_, var) = mean_var(m, g)?;
        energy.push(var + dirichlet_energy(r, m, g)?);
    }
    let theta = 2.0 * cert.lambda_tilde;
    let e0 = energy[0];
    // Rounding floor scaled to the data, so a constant f0 is not failed on noise.
    let floor = H1_ROUNDING_FLOOR * m.expect(&f0.iter().map(|v| v * v).collect::<Vec<_>>());
    let min_slack = res
        .times
        .iter()
        .zip(&energy)
        .map(|(t, e)| (-theta * t).exp() * e0 * (1.0 + 1e-6) + floor - e)
        .fold(f64::INFINITY, f64::min);
    let measured_rate = if e0 <= floor {
        f64::INFINITY
    } else {
        fit_decay_rate(&res.times, &energy, 0.0)?.rate
    };
    Ok(H1Decay {
        measured_rate,
        certified_theta: theta,
        pass: min_slack >= 0.0,
        times: res.times,
        energy,
        min_slack,
    })
}

/// `sum_i f_i g_i`.
pub fn pairing(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum()
}

/// Residual of `<f0, rho_T> = <f_T, rho0>` for matched integrators.
pub fn duality_residual(
    r: &RateField,
    f0: &[f64],
    rho0: &[f64],
    horizon: f64,
    dt: f64,
    method: TimeMethod,
) -> Result<f64> {
    let fwd = evolve_forward(r, rho0, horizon, dt, method)?;
    let bwd = evolve_backward(r, f0, horizon, dt, method)?;
    Ok((pairing(f0, &fwd.final_state) - pairing(&bwd.final_state, rho0)).abs())
}
