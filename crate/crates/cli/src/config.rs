//! Experiment configuration: an INI-like file with `[section]` headers,
//! `key = value` lines and `#` or `;` comments.
//!
//! Every key has a default except `potential.kind`, `potential.params` and
//! `grid.h`. Unknown sections and keys are rejected with the closest valid name.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flab_core::{BKind, TimeMethod};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{name}]{}", hint(.suggestion))]
    UnknownSection { line: usize, name: String, suggestion: Option<String> },
    #[error("line {line}: unknown key `{key}`{}", hint(.suggestion))]
    UnknownKey { line: usize, key: String, suggestion: Option<String> },
    #[error("line {line}: `{key}` is set twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("`{key}`{}: {msg}", at_line(*.line))]
    Invalid { key: String, line: Option<usize>, msg: String },
}

fn hint(s: &Option<String>) -> String {
    s.as_ref().map(|k| format!(" (nearest valid: `{k}`)")).unwrap_or_default()
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

type Result<T> = std::result::Result<T, ConfigError>;

const SCHEMA: &[(&str, &[&str])] = &[
    ("potential", &["kind", "params", "bump"]),
    ("scheme", &["b_function", "params", "s_max", "s_points"]),
    ("grid", &["h", "radius", "h_list"]),
    ("time", &["horizon", "dt", "method", "start", "schedule", "outputs"]),
    ("sim", &["n_paths", "seed", "horizon", "start"]),
    ("outputs", &["dir", "formats"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Quadratic,
    Quartic,
    DoubleWell,
    Abs,
    CustomPoly,
}

impl PotentialKind {
    fn as_str(self) -> &'static str {
        match self {
            PotentialKind::Quadratic => "quadratic",
            PotentialKind::Quartic => "quartic",
            PotentialKind::DoubleWell => "double_well",
            PotentialKind::Abs => "abs",
            PotentialKind::CustomPoly => "custom_poly",
        }
    }
}

impl FromStr for PotentialKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "quadratic" => PotentialKind::Quadratic,
            "quartic" => PotentialKind::Quartic,
            "double_well" => PotentialKind::DoubleWell,
            "abs" => PotentialKind::Abs,
            "custom_poly" => PotentialKind::CustomPoly,
            other => {
                return Err(format!(
                    "unknown potential `{other}`; expected quadratic, quartic, double_well, abs or custom_poly"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Log,
    Uniform,
    EveryStep,
}

impl Schedule {
    fn as_str(self) -> &'static str {
        match self {
            Schedule::Log => "log",
            Schedule::Uniform => "uniform",
            Schedule::EveryStep => "every_step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub params: Vec<f64>,
    /// Amplitude of an added `e^{-x^2}` bump; nonzero enables perturbation transfer.
    pub bump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSpec {
    pub b_function: BKind,
    /// Polynomial coefficients `c0, c1, ...` for the custom kind.
    pub params: Vec<f64>,
    /// Half-width and size of the screening grid used by `validate-b`.
    pub s_max: f64,
    pub s_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub h: f64,
    pub radius: Radius,
    pub h_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpec {
    pub horizon: f64,
    /// `None` means the method's default step.
    pub dt: Option<f64>,
    pub method: TimeMethod,
    /// Position of the initial point mass.
    pub start: f64,
    pub schedule: Schedule,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Starting site index.
    pub start: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    pub scheme: SchemeSpec,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub sim: SimSpec,
    pub outputs: OutputSpec,
}

impl ExperimentConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.outputs.formats.contains(&f)
    }
}

struct Entry {
    value: String,
    line: usize,
}

fn nearest<'a>(name: &str, candidates: impl Iterator<Item = &'a str>) -> Option<String> {
    candidates
        .map(|c| (strsim::normalized_damerau_levenshtein(name, c), c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    // Inline comments need whitespace before the marker.
    let bytes = line.as_bytes();
    for (i, &c) in bytes.iter().enumerate() {
        if (c == b'#' || c == b';') && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

fn lex(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    let mut section: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, msg: "section header is missing `]`".into() })?
                .trim();
            match SCHEMA.iter().find(|(s, _)| *s == name) {
                Some((s, _)) => section = Some(s),
                None => {
                    return Err(ConfigError::UnknownSection {
                        line,
                        name: name.to_string(),
                        suggestion: nearest(name, SCHEMA.iter().map(|(s, _)| *s)),
                    })
                }
            }
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{body}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, msg: "empty key".into() });
        }
        let sec = section.ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("`{key}` appears before any [section]"),
        })?;
        let full = format!("{sec}.{key}");
        let keys = SCHEMA.iter().find(|(s, _)| *s == sec).map_or(&[][..], |(_, k)| *k);
        if !keys.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                suggestion: nearest(key, keys.iter().copied()).map(|k| format!("{sec}.{k}")),
                key: full,
            });
        }
        if out.contains_key(&full) {
            return Err(ConfigError::Duplicate { line, key: full });
        }
        out.insert(full, Entry { value: value.to_string(), line });
    }
    Ok(out)
}

struct Fields(BTreeMap<String, Entry>);

impl Fields {
    fn invalid(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key: key.to_string(), line: self.0.get(key).map(|e| e.line), msg: msg.into() }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|e| e.value.as_str())
    }

    fn parse<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            Some(v) => v.parse().map_err(|e: T::Err| self.invalid(key, format!("cannot parse `{v}`: {e}"))),
            None => default.ok_or_else(|| ConfigError::Missing(key.to_string())),
        }
    }

    fn float(&self, key: &str, default: Option<f64>) -> Result<f64> {
        let v: f64 = self.parse(key, default)?;
        if !v.is_finite() {
            return Err(self.invalid(key, format!("must be finite, got {v}")));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64> {
        let v = self.float(key, default)?;
        if v <= 0.0 {
            return Err(self.invalid(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn floats(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let Some(v) = self.raw(key) else {
            return Ok(default.to_vec());
        };
        split_list(v)
            .map(|item| {
                let x: f64 = item.parse().map_err(|e| self.invalid(key, format!("cannot parse `{item}`: {e}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(self.invalid(key, format!("entries must be finite, got {x}")))
                }
            })
            .collect()
    }

    fn auto_or_positive(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None | Some("auto") => Ok(None),
            Some(_) => self.positive(key, None).map(Some),
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn check_count(f: &Fields, key: &str, got: usize, want: usize, kind: &str) -> Result<()> {
    if got != want {
        return Err(f.invalid(key, format!("{kind} takes {want} parameter(s), got {got}")));
    }
    Ok(())
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let f = Fields(lex(text)?);

    let kind: PotentialKind = f.parse("potential.kind", None)?;
    let params = f.floats("potential.params", &[])?;
    if !f.0.contains_key("potential.params") {
        return Err(ConfigError::Missing("potential.params".into()));
    }
    let pk = "potential.params";
    match kind {
        PotentialKind::Quadratic | PotentialKind::Quartic | PotentialKind::Abs => {
            check_count(&f, pk, params.len(), 1, kind.as_str())?;
            if params[0] <= 0.0 {
                return Err(f.invalid(pk, format!("{} needs a positive coefficient, got {}", kind.as_str(), params[0])));
            }
        }
        PotentialKind::DoubleWell => {
            check_count(&f, pk, params.len(), 2, kind.as_str())?;
            if params[0] <= 0.0 {
                return Err(f.invalid(pk, format!("double_well needs a positive quartic coefficient, got {}", params[0])));
            }
        }
        PotentialKind::CustomPoly => {
            if params.is_empty() {
                return Err(f.invalid(pk, "custom_poly needs at least one coefficient"));
            }
        }
    }
    let potential = PotentialSpec { kind, params, bump: f.float("potential.bump", Some(0.0))? };

    let b_function: BKind = f.parse("scheme.b_function", Some(BKind::ScharfetterGummel))?;
    let b_params = f.floats("scheme.params", &[])?;
    if b_function != BKind::Custom && !b_params.is_empty() {
        return Err(f.invalid("scheme.params", format!("{b_function} takes no parameters")));
    }
    if b_function == BKind::Custom && b_params.is_empty() {
        return Err(f.invalid("scheme.params", "custom B needs coefficients c0, c1, ..."));
    }
    let s_points: usize = f.parse("scheme.s_points", Some(401))?;
    if s_points < 2 {
        return Err(f.invalid("scheme.s_points", format!("need at least 2 points, got {s_points}")));
    }
    let scheme = SchemeSpec { b_function, params: b_params, s_max: f.positive("scheme.s_max", Some(20.0))?, s_points };

    let h = f.positive("grid.h", None)?;
    let radius = match f.auto_or_positive("grid.radius")? {
        None => Radius::Auto,
        Some(r) => Radius::Value(r),
    };
    let h_list = f.floats("grid.h_list", &[0.5, 0.2, 0.1, 0.05])?;
    if h_list.is_empty() {
        return Err(f.invalid("grid.h_list", "needs at least one entry"));
    }
    if let Some(bad) = h_list.iter().find(|v| **v <= 0.0) {
        return Err(f.invalid("grid.h_list", format!("entries must be positive, got {bad}")));
    }
    let grid = GridSpec { h, radius, h_list };

    let schedule = match f.raw("time.schedule").unwrap_or("log") {
        "log" => Schedule::Log,
        "uniform" => Schedule::Uniform,
        "every_step" => Schedule::EveryStep,
        other => return Err(f.invalid("time.schedule", format!("expected log, uniform or every_step, got `{other}`"))),
    };
    let outputs: usize = f.parse("time.outputs", Some(flab_core::dynamics::DEFAULT_LOG_OUTPUTS))?;
    if outputs < 2 {
        return Err(f.invalid("time.outputs", format!("need at least 2 outputs, got {outputs}")));
    }
    let time = TimeSpec {
        horizon: f.positive("time.horizon", Some(8.0))?,
        dt: f.auto_or_positive("time.dt")?,
        method: f.parse("time.method", Some(TimeMethod::Trapezoidal))?,
        start: f.float("time.start", Some(2.0))?,
        schedule,
        outputs,
    };

    let n_paths: usize = f.parse("sim.n_paths", Some(100_000))?;
    if n_paths == 0 {
        return Err(f.invalid("sim.n_paths", "must be positive"));
    }
    let sim = SimSpec {
        n_paths,
        seed: f.parse("sim.seed", Some(0))?,
        horizon: f.positive("sim.horizon", Some(10.0))?,
        start: f.parse("sim.start", Some(0))?,
    };

    let dir = PathBuf::from(f.raw("outputs.dir").unwrap_or("out"));
    if dir.as_os_str().is_empty() {
        return Err(f.invalid("outputs.dir", "must not be empty"));
    }
    let mut formats = Vec::new();
    for item in split_list(f.raw("outputs.formats").unwrap_or("json, csv")) {
        let fmt = match item {
            "json" => Format::Json,
            "csv" => Format::Csv,
            other => return Err(f.invalid("outputs.formats", format!("expected json or csv, got `{other}`"))),
        };
        if !formats.contains(&fmt) {
            formats.push(fmt);
        }
    }
    if formats.is_empty() {
        return Err(f.invalid("outputs.formats", "needs at least one format"));
    }
    formats.sort();

    Ok(ExperimentConfig { potential, scheme, grid, time, sim, outputs: OutputSpec { dir, formats } })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_str(&text)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

/// Every field written out explicitly. `auto` values stay `auto` so the
/// echo parses back to the same structure; `note` lines become comments.
pub fn render(cfg: &ExperimentConfig, notes: &[String]) -> String {
    let mut s = String::new();
    for n in notes {
        let _ = writeln!(s, "# {n}");
    }
    let p = &cfg.potential;
    let _ = writeln!(s, "[potential]\nkind = {}\nparams = {}\nbump = {}\n", p.kind.as_str(), join(&p.params), p.bump);
    let sc = &cfg.scheme;
    let _ = writeln!(s, "[scheme]\nb_function = {}", sc.b_function);
    if !sc.params.is_empty() {
        let _ = writeln!(s, "params = {}", join(&sc.params));
    }
    let _ = writeln!(s, "s_max = {}\ns_points = {}\n", sc.s_max, sc.s_points);
    let g = &cfg.grid;
    let radius = match g.radius {
        Radius::Auto => "auto".to_string(),
        Radius::Value(r) => r.to_string(),
    };
    let _ = writeln!(s, "[grid]\nh = {}\nradius = {radius}\nh_list = {}\n", g.h, join(&g.h_list));
    let t = &cfg.time;
    let dt = t.dt.map_or("auto".to_string(), |v| v.to_string());
    let _ = writeln!(
        s,
        "[time]\nhorizon = {}\ndt = {dt}\nmethod = {}\nstart = {}\nschedule = {}\noutputs = {}\n",
        t.horizon,
        t.method,
        t.start,
        t.schedule.as_str(),
        t.outputs
    );
    let m = &cfg.sim;
    let _ = writeln!(s, "[sim]\nn_paths = {}\nseed = {}\nhorizon = {}\nstart = {}\n", m.n_paths, m.seed, m.horizon, m.start);
    let formats: Vec<&str> = cfg
        .outputs
        .formats
        .iter()
        .map(|f| match f {
            Format::Json => "json",
            Format::Csv => "csv",
        })
        .collect();
    let _ = writeln!(s, "[outputs]\ndir = {}\nformats = {}", cfg.outputs.dir.display(), formats.join(", "));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = 0.1\n";

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_str(MINIMAL).unwrap();
        assert_eq!(c.grid.radius, Radius::Auto);
        assert_eq!(c.scheme.b_function, BKind::ScharfetterGummel);
        assert_eq!(c.time.method, TimeMethod::Trapezoidal);
        assert_eq!(c.time.dt, None);
        assert_eq!(c.grid.h_list, vec![0.5, 0.2, 0.1, 0.05]);
        assert_eq!(c.outputs.formats, vec![Format::Json, Format::Csv]);
    }

    #[test]
    fn negative_h_names_the_key() {
        let e = parse_str("[potential]\nkind = quadratic\nparams = 0.5\n[grid]\nh = -1\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("grid.h") && msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn unknown_key_suggests() {
        let e = parse_str("[grid]\nstepsize = 0.1\n").unwrap_err();
        match &e {
            ConfigError::UnknownKey { line, key, suggestion } => {
                assert_eq!(*line, 2);
                assert_eq!(key, "grid.stepsize");
                assert!(suggestion.as_deref().is_some_and(|s| s.starts_with("grid.")), "{suggestion:?}");
            }
            other => panic!("{other}"),
        }
        assert!(e.to_string().contains("nearest valid"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = parse_str("# header\n[grid\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }));
        let e = parse_str("[grid]\nh 0.1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }));
        let e = parse_str("h = 0.1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        let e = parse_str("[grids]\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownSection { line: 1, .. }));
        let e = parse_str("[grid]\nh = 1\nh = 2\n").unwrap_err();
        assert!(matches!(e, ConfigError::Duplicate { line: 3, .. }));
    }

    #[test]
    fn missing_required() {
        let missing = |text: &str| match parse_str(text) {
            Err(ConfigError::Missing(k)) => k,
            other => panic!("{other:?}"),
        };
        assert_eq!(missing("[grid]\nh = 0.1\n"), "potential.kind");
        assert_eq!(missing("[potential]\nkind = quadratic\n[grid]\nh = 0.1\n"), "potential.params");
        assert_eq!(missing("[potential]\nkind = quadratic\nparams = 0.5\n"), "grid.h");
    }

    #[test]
    fn range_checks() {
        let base = "[potential]\nkind = double_well\nparams = 0.25\n[grid]\nh = 0.1\n";
        assert!(parse_str(base).unwrap_err().to_string().contains("potential.params"));
        let bad = [
            ("[sim]\nn_paths = 0\n", "sim.n_paths"),
            ("[time]\nmethod = euler\n", "time.method"),
            ("[time]\ndt = 0\n", "time.dt"),
            ("[grid]\nradius = -2\n", "grid.radius"),
            ("[outputs]\nformats = xml\n", "outputs.formats"),
            ("[scheme]\nb_function = sg\nparams = 1\n", "scheme.params"),
        ];
        let ok = "[potential]\nkind = quadratic\nparams = 0.5\n";
        for (extra, key) in bad {
            let text = if extra.starts_with("[grid]") {
                format!("{ok}{extra}h = 0.1\n")
            } else {
                format!("{ok}[grid]\nh = 0.1\n{extra}")
            };
            let msg = parse_str(&text).unwrap_err().to_string();
            assert!(msg.contains(key), "{key}: {msg}");
        }
    }

    #[test]
    fn comments_and_lists() {
        let c = parse_str(
            "; leading\n[potential]  # trailing\nkind = custom_poly\nparams = 0, 0, 0.5 # half x^2\n[grid]\nh = 0.2\nradius = 4\n",
        )
        .unwrap();
        assert_eq!(c.potential.params, vec![0.0, 0.0, 0.5]);
        assert_eq!(c.grid.radius, Radius::Value(4.0));
    }

    #[test]
    fn render_round_trips() {
        let mut c = parse_str(MINIMAL).unwrap();
        assert_eq!(parse_str(&render(&c, &["note".into()])).unwrap(), c);
        c.scheme.b_function = BKind::Custom;
        c.scheme.params = vec![1.0, -0.5, 1.0 / 12.0];
        c.time.dt = Some(0.003);
        c.grid.radius = Radius::Value(6.4);
        c.sim.seed = u64::MAX;
        c.sim.start = -3;
        assert_eq!(parse_str(&render(&c, &[])).unwrap(), c);
    }
}
