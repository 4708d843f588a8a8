use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flab_cli::config::{parse_str, Radius};
use serde_json::Value;

const OU: &str = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.05\nradius = 8\n";

fn flab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flab")).args(args).output().expect("binary runs")
}

struct Run {
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exited normally")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.text(name)).unwrap()
    }

    fn text(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

fn run_in(dir: &Path, tag: &str, cmd: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.join(format!("{tag}.ini"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(tag);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    Run { output: flab(&args), out }
}

#[test]
fn certify_ou() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), "ou", "certify", OU, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let v = r.json("certificate.json");
    assert_eq!(v["best"]["method"], "curvature");
    let kappa = v["best"]["kappa"].as_f64().unwrap();
    assert!(kappa > 0.85 && kappa <= 1.0, "{kappa}");
    let gap = v["spectral"]["gap"].as_f64().unwrap();
    assert!(gap > 0.95 && gap < 1.05, "{gap}");
    assert_eq!(v["best"]["lattice"]["N"], 160);
    for key in ["method", "kappa", "valid", "components", "lattice", "potential_tag", "b_function_tag"] {
        assert!(v["lyapunov"].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn certify_flat_is_negative() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[potential]\nkind = custom_poly\nparams = 0\n[grid]\nh = 0.1\nradius = 4\n";
    let r = run_in(dir.path(), "flat", "certify", cfg, &[]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
    let v = r.json("certificate.json");
    assert_eq!(v["curvature"]["valid"], false);
    assert_eq!(v["lyapunov"]["valid"], false);
    assert_eq!(v["best"]["valid"], false);
}

#[test]
fn sweep_over_mesh_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{OU}h_list = 0.5, 0.2, 0.1, 0.05\n");
    let r = run_in(dir.path(), "sweep", "sweep", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let csv = r.text("sweep.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "h,N,lambda_tilde,theta,b,R,kappa_R,kappa,method,valid,gap");
    let kappas: Vec<f64> = lines.map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect();
    assert_eq!(kappas.len(), 4);
    // The band holds from h = 0.2 down; h = 0.5 sits well below it.
    let fine = &kappas[1..];
    let (lo, hi) = fine.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &k| (a.min(k), b.max(k)));
    assert!((hi - lo) / hi <= 0.2, "{kappas:?}");
    assert!(r.json("sweep.json")["smallest_failing_h"].is_null());
}

#[test]
fn auto_radius_covers_the_well() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.1\n";
    let r = run_in(dir.path(), "min", "gap", cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let lat = &r.json("gap.json")["lattice"];
    let half = lat["h"].as_f64().unwrap() * lat["N"].as_f64().unwrap();
    assert!(half >= 80f64.sqrt(), "{half}");
    let echo = parse_str(&r.text("resolved.ini")).unwrap();
    assert_eq!(echo.grid.radius, Radius::Auto);
    assert!(r.text("eigenfunction.csv").starts_with("x,f,pi\n"));
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{OU}[scheme]\nb_function = exponential\n[sim]\nseed = 11\n[time]\ndt = 0.01\nmethod = rk4\n");
    let r = run_in(dir.path(), "rt", "gap", &cfg, &["--seed", "99"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let mut expected = parse_str(&cfg).unwrap();
    expected.outputs.dir = r.out.clone();
    expected.sim.seed = 99;
    assert_eq!(parse_str(&r.text("resolved.ini")).unwrap(), expected);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.2\nradius = 4\n[sim]\nn_paths = 3000\nhorizon = 2\n";
    for cmd in ["certify", "simulate", "evolve"] {
        let a = run_in(dir.path(), &format!("{cmd}-a"), cmd, cfg, &["--seed", "5"]);
        let b = run_in(dir.path(), &format!("{cmd}-b"), cmd, cfg, &["--seed", "5"]);
        assert_eq!(a.code(), 0, "{}", a.stderr());
        let name = match cmd {
            "certify" => "certificate.json",
            "simulate" => "ensemble.json",
            _ => "evolve.json",
        };
        assert_eq!(fs::read(a.out.join(name)).unwrap(), fs::read(b.out.join(name)).unwrap(), "{cmd}");
    }
    let c = run_in(dir.path(), "simulate-c", "simulate", cfg, &["--seed", "6"]);
    let a = run_in(dir.path(), "simulate-a", "simulate", cfg, &["--seed", "5"]);
    assert_ne!(a.text("ensemble.json"), c.text("ensemble.json"));
}

#[test]
fn evolve_writes_timeseries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.1\nradius = 8\n[time]\nschedule = uniform\noutputs = 100\n";
    let r = run_in(dir.path(), "ev", "evolve", cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let csv = r.text("timeseries.csv");
    assert!(csv.starts_with("t,variance,mass,min_rho,sup_norm\n"));
    assert_eq!(csv.lines().count(), 102);
    let v = r.json("evolve.json");
    let rate = v["fitted_rate"]["rate"].as_f64().unwrap();
    let two_gap = v["two_gap"].as_f64().unwrap();
    assert!((rate - two_gap).abs() / two_gap <= 0.1, "{rate} vs {two_gap}");
}

#[test]
fn formats_filter_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{OU}[outputs]\nformats = csv\n");
    let r = run_in(dir.path(), "csv", "gap", &cfg, &[]);
    assert_eq!(r.code(), 0);
    assert!(r.out.join("eigenfunction.csv").exists());
    assert!(!r.out.join("gap.json").exists());
    assert!(r.out.join("resolved.ini").exists());
}

#[test]
fn failing_b_screening_is_negative() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{OU}[scheme]\nb_function = custom\nparams = 1, 0.5\n");
    let r = run_in(dir.path(), "b", "validate-b", &cfg, &[]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
    assert_eq!(r.json("b_report.json")["log_identity"]["pass"], false);
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_h = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = -1\n";
    let r = run_in(dir.path(), "neg", "certify", bad_h, &[]);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("grid.h"), "{}", r.stderr());

    let r = run_in(dir.path(), "unk", "certify", "[grid]\nstepsize = 0.1\n", &[]);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("grid.stepsize") && r.stderr().contains("nearest valid"), "{}", r.stderr());

    let off_grid = format!("{OU}[time]\nstart = 2.01\n");
    let r = run_in(dir.path(), "off", "evolve", &off_grid, &[]);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("time.start"), "{}", r.stderr());

    let far = format!("{OU}[sim]\nstart = 1000\n");
    let r = run_in(dir.path(), "far", "simulate", &far, &[]);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("sim.start"), "{}", r.stderr());

    let missing = flab(&["certify", "--config", "/nonexistent/flab.ini"]);
    assert_eq!(missing.status.code(), Some(1));
    let usage = flab(&["frobnicate", "--config", "x.ini"]);
    assert_eq!(usage.status.code(), Some(1));
    let no_config = flab(&["certify"]);
    assert_eq!(no_config.status.code(), Some(1));
}

#[test]
fn concurrent_runs_share_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    fs::write(&cfg, "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.1\nradius = 6\n").unwrap();
    let out = dir.path().join("shared");
    let children: Vec<_> = (0..4)
        .map(|_| {
            Command::new(env!("CARGO_BIN_EXE_flab"))
                .args(["certify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in children {
        assert!(c.wait().unwrap().success());
    }
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(v["best"]["valid"], true);
    let leftovers: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");
}
