//! The six subcommands. Each one resolves the config into core objects, runs
//! one pipeline, writes its artifacts plus `resolved.ini`, and reports whether
//! the outcome was positive.

use std::collections::BTreeMap;

use flab_core::dynamics::{default_dt, DecayFit, StepMonitor};
use flab_core::json::fmt_f64;
use flab_core::lattice::Summability;
use flab_core::stochastic::summarize;
use flab_core::{
    build_rates, certify_all, make_b_function, perturbation_transfer, simulate, spectral_gap, stationary_measure,
    summability_report, symmetric_grid, symmetrize, validate_b, BFunction, EvolveOptions, GridFunction, Lattice,
    OutputSchedule, PoincareCertificate, Potential, RateField, StationaryMeasure, TimeMethod,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{render, ExperimentConfig, Format, PotentialKind, Radius, Schedule};
use crate::output::OutputDir;
use crate::{Context, Outcome, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Certify,
    Gap,
    Evolve,
    Simulate,
    Sweep,
    #[value(name = "validate-b")]
    ValidateB,
}

/// The unperturbed potential and the one actually used (with any bump added).
fn potentials(cfg: &ExperimentConfig) -> (Potential, Potential) {
    let p = &cfg.potential.params;
    let base = match cfg.potential.kind {
        PotentialKind::Quadratic => Potential::quadratic(p[0]),
        PotentialKind::Quartic => Potential::quartic(p[0]),
        PotentialKind::DoubleWell => Potential::double_well(p[0], p[1]),
        PotentialKind::Abs => Potential::abs(p[0]),
        PotentialKind::CustomPoly => Potential::polynomial(p),
    };
    let full = if cfg.potential.bump != 0.0 { base.plus_gaussian_bump(cfg.potential.bump) } else { base.clone() };
    (base, full)
}

fn b_function(cfg: &ExperimentConfig) -> Result<BFunction> {
    let params: BTreeMap<String, f64> =
        cfg.scheme.params.iter().enumerate().map(|(k, v)| (format!("c{k}"), *v)).collect();
    make_b_function(cfg.scheme.b_function, &params).context("scheme.b_function")
}

fn lattice(cfg: &ExperimentConfig, u: &Potential, h: f64) -> Result<Lattice> {
    match cfg.grid.radius {
        Radius::Auto => Lattice::auto(u, h).context("grid.radius = auto"),
        Radius::Value(r) => Lattice::with_radius(h, r).context("grid.radius"),
    }
}

struct Chain {
    u: Potential,
    base: Potential,
    b: BFunction,
    lat: Lattice,
    r: RateField,
    m: StationaryMeasure,
}

fn chain(cfg: &ExperimentConfig) -> Result<Chain> {
    let (base, u) = potentials(cfg);
    let b = b_function(cfg)?;
    let lat = lattice(cfg, &u, cfg.grid.h)?;
    let r = build_rates(&u, &b, &lat).context("rates")?;
    let m = stationary_measure(&u, &lat).context("stationary measure")?;
    Ok(Chain { u, base, b, lat, r, m })
}

fn lattice_note(lat: &Lattice) -> String {
    format!("lattice: h = {}, N = {}, half-width = {}", lat.h, lat.n_half, lat.half_width())
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: OutputDir,
    quiet: bool,
}

impl Ctx<'_> {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        if self.cfg.wants(Format::Json) {
            self.out.json(name, v)?;
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if self.cfg.wants(Format::Csv) {
            self.out.csv(name, header, rows)?;
        }
        Ok(())
    }
}

/// Runs `cmd` and writes everything under `cfg.outputs.dir`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, quiet: bool) -> Result<Outcome> {
    let mut ctx = Ctx { cfg, out: OutputDir::create(&cfg.outputs.dir)?, quiet };
    let (outcome, notes) = match cmd {
        Command::Certify => certify(&mut ctx)?,
        Command::Gap => gap(&mut ctx)?,
        Command::Evolve => evolve(&mut ctx)?,
        Command::Simulate => simulate_cmd(&mut ctx)?,
        Command::Sweep => sweep(&mut ctx)?,
        Command::ValidateB => validate(&mut ctx)?,
    };
    ctx.out.write("resolved.ini", render(cfg, &notes).as_bytes())?;
    for p in ctx.out.written() {
        ctx.say(format!("wrote {}", p.display()));
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct SpectralCheck {
    gap: f64,
    bracket: (f64, f64),
    kappa_below_gap: bool,
}

#[derive(Serialize)]
struct CertifyReport {
    best: PoincareCertificate,
    curvature: PoincareCertificate,
    lyapunov: PoincareCertificate,
    perturbation: Option<PoincareCertificate>,
    spectral: SpectralCheck,
    summability: Summability,
    diagnostics: Vec<String>,
}

fn certify(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let c = chain(ctx.cfg)?;
    let set = certify_all(&c.u, &c.b, &c.lat).context("certificates")?;
    let g = spectral_gap(&symmetrize(&c.r, &c.m).context("symmetrization")?).context("spectral gap")?;
    let mut diagnostics: Vec<String> = Vec::new();
    let mut best = set.best.clone();

    let perturbation = if ctx.cfg.potential.bump != 0.0 {
        let base = certify_all(&c.base, &c.b, &c.lat).context("base certificates")?.best;
        if base.valid {
            let p = perturbation_transfer(&base, &c.base, &c.u, &c.b, &c.lat).context("perturbation transfer")?;
            if p.valid && (!best.valid || p.kappa > best.kappa) {
                best = p.clone();
            }
            Some(p)
        } else {
            diagnostics.push(format!("perturbation: base potential {} has no valid certificate", c.base.tag()));
            None
        }
    } else {
        None
    };
    for cert in [&set.curvature_cert, &set.lyapunov_cert].into_iter().chain(perturbation.as_ref()) {
        diagnostics.extend(cert.diagnostics.iter().map(|d| format!("{}: {d}", cert.method.as_str())));
    }
    diagnostics.dedup();

    let report = CertifyReport {
        spectral: SpectralCheck { gap: g.gap, bracket: g.bracket, kappa_below_gap: !best.valid || best.kappa <= g.gap + 1e-9 },
        summability: summability_report(&c.r, &c.m).context("summability")?,
        best,
        curvature: set.curvature_cert,
        lyapunov: set.lyapunov_cert,
        perturbation,
        diagnostics,
    };
    ctx.json("certificate.json", &report)?;
    let b = &report.best;
    ctx.say(format!(
        "{}: method {} kappa {} valid {}; spectral gap {}",
        b.potential_tag,
        b.method.as_str(),
        fmt_f64(b.kappa),
        b.valid,
        fmt_f64(g.gap)
    ));
    let outcome = if b.valid { Outcome::Success } else { Outcome::Negative };
    Ok((outcome, vec![lattice_note(&c.lat)]))
}

#[derive(Serialize)]
struct GapReport {
    gap: f64,
    bracket: (f64, f64),
    lattice: Lattice,
    potential_tag: String,
    b_function_tag: String,
    summability: Summability,
}

fn gap(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let c = chain(ctx.cfg)?;
    let g = spectral_gap(&symmetrize(&c.r, &c.m).context("symmetrization")?).context("spectral gap")?;
    let rows: Vec<Vec<String>> = (0..c.lat.len())
        .map(|k| vec![fmt_f64(c.lat.x(k)), fmt_f64(g.eigenfunction[k]), fmt_f64(c.m.weights[k])])
        .collect();
    ctx.csv("eigenfunction.csv", &["x", "f", "pi"], &rows)?;
    ctx.json(
        "gap.json",
        &GapReport {
            gap: g.gap,
            bracket: g.bracket,
            lattice: c.lat,
            potential_tag: c.u.tag().to_string(),
            b_function_tag: c.b.tag().to_string(),
            summability: summability_report(&c.r, &c.m).context("summability")?,
        },
    )?;
    ctx.say(format!("spectral gap {}", fmt_f64(g.gap)));
    Ok((Outcome::Success, vec![lattice_note(&c.lat)]))
}

#[derive(Serialize)]
struct EvolveReport {
    method: TimeMethod,
    dt: f64,
    steps: usize,
    horizon: f64,
    start: f64,
    fitted_rate: Option<DecayFit>,
    two_gap: f64,
    two_kappa: Option<f64>,
    monitor: StepMonitor,
}

fn evolve(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let cfg = ctx.cfg;
    let c = chain(cfg)?;
    let t = &cfg.time;
    let k0 = c.lat.index_of_position(t.start).ok_or_else(|| crate::CliError::Core {
        context: "time.start".into(),
        source: flab_core::Error::InvalidArgument(format!(
            "{} is not a node of the lattice (h = {}, half-width {})",
            t.start,
            c.lat.h,
            c.lat.half_width()
        )),
    })?;
    let best = certify_all(&c.u, &c.b, &c.lat).context("certificates")?.best;
    let kappa = best.valid.then_some(best.kappa);
    let gap = spectral_gap(&symmetrize(&c.r, &c.m).context("symmetrization")?).context("spectral gap")?.gap;
    let dt = t.dt.unwrap_or_else(|| default_dt(t.method, &c.r, kappa));
    let schedule = match t.schedule {
        Schedule::Log => OutputSchedule::Log(t.outputs),
        Schedule::Uniform => OutputSchedule::Uniform(t.outputs),
        Schedule::EveryStep => OutputSchedule::EveryStep,
    };
    let opts = EvolveOptions { schedule, ..EvolveOptions::new(t.method, dt) };
    let rho0 = GridFunction::indicator(c.lat.len(), k0);
    let res = flab_core::evolve_forward_with(&c.r, &rho0, t.horizon, &opts).context("forward evolution")?;

    if ctx.cfg.wants(Format::Csv) {
        let mut buf = Vec::new();
        res.write_csv(&mut buf).context("timeseries.csv")?;
        ctx.out.write("timeseries.csv", &buf)?;
    }
    let report = EvolveReport {
        method: res.method,
        dt: res.dt,
        steps: res.steps,
        horizon: t.horizon,
        start: t.start,
        fitted_rate: res.fitted_rate,
        two_gap: 2.0 * gap,
        two_kappa: kappa.map(|k| 2.0 * k),
        monitor: res.monitor,
    };
    ctx.json("evolve.json", &report)?;
    match res.fitted_rate {
        Some(f) => ctx.say(format!(
            "variance decay rate {} +/- {} (2 gap = {})",
            fmt_f64(f.rate),
            fmt_f64(f.half_width),
            fmt_f64(2.0 * gap)
        )),
        None => ctx.say("variance decay rate: not enough positive points to fit"),
    }
    Ok((Outcome::Success, vec![lattice_note(&c.lat), format!("dt = {}, steps = {}", res.dt, res.steps)]))
}

fn simulate_cmd(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let c = chain(ctx.cfg)?;
    let s = &ctx.cfg.sim;
    let e = simulate(&c.r, &c.lat, s.start, s.horizon, s.n_paths, s.seed).context("sim.start")?;
    let summary = summarize(&e, &c.r, &c.lat, &c.m).context("ensemble summary")?;
    ctx.json("ensemble.json", &summary)?;
    ctx.say(format!("{} paths, TV to stationary {}", s.n_paths, fmt_f64(summary.tv_to_stationary)));
    Ok((Outcome::Success, vec![lattice_note(&c.lat)]))
}

#[derive(Serialize)]
struct SweepRow {
    h: f64,
    n_half: usize,
    lambda_tilde: f64,
    theta: f64,
    b: f64,
    radius: f64,
    kappa_r: f64,
    kappa: f64,
    method: &'static str,
    valid: bool,
    gap: f64,
}

#[derive(Serialize)]
struct SweepReport {
    rows: Vec<SweepRow>,
    /// Smallest listed `h` whose best certificate is invalid.
    smallest_failing_h: Option<f64>,
    /// `(max - min) / max` of the valid constants.
    kappa_spread: Option<f64>,
}

fn sweep_row(cfg: &ExperimentConfig, u: &Potential, b: &BFunction, h: f64) -> Result<SweepRow> {
    let lat = lattice(cfg, u, h)?;
    let set = certify_all(u, b, &lat).with_h(h, "certificates")?;
    let r = build_rates(u, b, &lat).with_h(h, "rates")?;
    let m = stationary_measure(u, &lat).with_h(h, "stationary measure")?;
    let gap = spectral_gap(&symmetrize(&r, &m).with_h(h, "symmetrization")?).with_h(h, "spectral gap")?.gap;
    let l = &set.lyapunov;
    Ok(SweepRow {
        h,
        n_half: lat.n_half,
        lambda_tilde: set.curvature.lambda_tilde,
        theta: l.theta,
        b: l.b,
        radius: l.radius,
        kappa_r: l.local.map_or(f64::NAN, |c| c.kappa_r),
        kappa: set.best.kappa,
        method: set.best.method.as_str(),
        valid: set.best.valid,
        gap,
    })
}

trait WithH<T> {
    fn with_h(self, h: f64, what: &str) -> Result<T>;
}

impl<T> WithH<T> for flab_core::Result<T> {
    fn with_h(self, h: f64, what: &str) -> Result<T> {
        self.context(&format!("{what} at h = {h}"))
    }
}

fn sweep(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let cfg = ctx.cfg;
    let (_, u) = potentials(cfg);
    let b = b_function(cfg)?;
    let rows: Vec<SweepRow> =
        cfg.grid.h_list.par_iter().map(|&h| sweep_row(cfg, &u, &b, h)).collect::<Result<_>>()?;

    let smallest_failing_h = rows.iter().filter(|r| !r.valid).map(|r| r.h).min_by(f64::total_cmp);
    let valid: Vec<f64> = rows.iter().filter(|r| r.valid).map(|r| r.kappa).collect();
    let kappa_spread = (!valid.is_empty()).then(|| {
        let (lo, hi) = valid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (hi - lo) / hi
    });
    let header = ["h", "N", "lambda_tilde", "theta", "b", "R", "kappa_R", "kappa", "method", "valid", "gap"];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.h),
                r.n_half.to_string(),
                fmt_f64(r.lambda_tilde),
                fmt_f64(r.theta),
                fmt_f64(r.b),
                fmt_f64(r.radius),
                fmt_f64(r.kappa_r),
                fmt_f64(r.kappa),
                r.method.to_string(),
                r.valid.to_string(),
                fmt_f64(r.gap),
            ]
        })
        .collect();
    ctx.csv("sweep.csv", &header, &table)?;
    for r in &rows {
        ctx.say(format!("h {}: kappa {} ({}), gap {}", r.h, fmt_f64(r.kappa), r.method, fmt_f64(r.gap)));
    }
    let outcome = if smallest_failing_h.is_some() { Outcome::Negative } else { Outcome::Success };
    ctx.json("sweep.json", &SweepReport { rows, smallest_failing_h, kappa_spread })?;
    Ok((outcome, Vec::new()))
}

fn validate(ctx: &mut Ctx) -> Result<(Outcome, Vec<String>)> {
    let b = b_function(ctx.cfg)?;
    let s = &ctx.cfg.scheme;
    let report = validate_b(&b, &symmetric_grid(s.s_max, s.s_points));
    ctx.json("b_report.json", &report)?;
    for check in report.checks() {
        ctx.say(format!("{:<20} {} (residual {})", check.name, if check.pass { "ok" } else { "FAIL" }, fmt_f64(check.residual)));
    }
    let outcome = if report.all_pass() { Outcome::Success } else { Outcome::Negative };
    Ok((outcome, vec![format!("screening grid: {} points on [-{}, {}]", s.s_points, s.s_max, s.s_max)]))
}
