//! Experiment configuration: an INI-style text format with `[section]`
//! headers, `key = value` pairs, and lists as comma-separated numbers or
//! `(a, b)` tuples. The formal grammar lives in `docs/config-grammar.ebnf`.
//!
//! Parsing is two-phase: a syntax pass that reports the first malformed
//! line with its position, then a validation pass that aggregates every
//! semantic violation instead of stopping at the first.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

/// Grammar-level failure, with 1-based line and column.
#[derive(Debug, Clone)]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at line {}, column {}: {}",
            self.line, self.col, self.message
        )
    }
}

/// Configuration failure: either a syntax error or the full list of
/// semantic violations.
#[derive(Debug)]
pub enum ConfigError {
    Syntax(SyntaxError),
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax(e) => write!(f, "{e}"),
            ConfigError::Invalid(violations) => {
                writeln!(f, "invalid configuration ({} problems):", violations.len())?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
struct RawEntry {
    value: String,
    line: usize,
}

/// Sectioned key-value view of the file, before typing.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, RawEntry>,
}

impl RawConfig {
    /// Parse the INI-style text. Keys are stored as `section.key`;
    /// keys before any header have no section prefix.
    pub fn parse(text: &str) -> Result<Self, SyntaxError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                match rest.find(']') {
                    Some(end) if rest[end + 1..].trim().is_empty() => {
                        let name = rest[..end].trim();
                        if name.is_empty() {
                            return Err(SyntaxError {
                                line: lineno,
                                col: 1,
                                message: "empty section name".into(),
                            });
                        }
                        section = name.to_string();
                        continue;
                    }
                    Some(end) => {
                        return Err(SyntaxError {
                            line: lineno,
                            col: raw_line.find(']').map_or(1, |c| c + 2).max(end + 2),
                            message: "unexpected text after section header".into(),
                        })
                    }
                    None => {
                        return Err(SyntaxError {
                            line: lineno,
                            col: raw_line.len().max(1),
                            message: "unterminated section header".into(),
                        })
                    }
                }
            }
            let eq = match line.find('=') {
                Some(p) => p,
                None => {
                    return Err(SyntaxError {
                        line: lineno,
                        col: 1,
                        message: format!("expected `key = value`, got {line:?}"),
                    })
                }
            };
            let key = line[..eq].trim();
            if key.is_empty() {
                return Err(SyntaxError {
                    line: lineno,
                    col: 1,
                    message: "empty key".into(),
                });
            }
            let value = line[eq + 1..].trim().to_string();
            if value.is_empty() {
                return Err(SyntaxError {
                    line: lineno,
                    col: eq + 2,
                    message: format!("key {key:?} has no value"),
                });
            }
            let full_key = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            entries.insert(
                full_key,
                RawEntry {
                    value,
                    line: lineno,
                },
            );
        }
        Ok(RawConfig { entries })
    }

    /// Apply a `section.key=value` override (inserting if absent).
    pub fn set(&mut self, assignment: &str) -> Result<(), String> {
        let eq = assignment
            .find('=')
            .ok_or_else(|| format!("override {assignment:?} is not of the form key=value"))?;
        let key = assignment[..eq].trim();
        let value = assignment[eq + 1..].trim();
        if key.is_empty() || value.is_empty() {
            return Err(format!("override {assignment:?} has an empty key or value"));
        }
        self.entries.insert(
            key.to_string(),
            RawEntry {
                value: value.to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&RawEntry> {
        self.entries.get(key)
    }

    fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }
}

/// How the time axis is resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeResolution {
    /// Fixed step count over the task horizon.
    Steps(usize),
    /// Fixed step size; per-horizon grids round to it.
    Dt(f64),
}

/// The reaction term, by name.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinSpec {
    Zero,
    Cubic,
    OddPower(u32),
    Saturating,
    Table { file: PathBuf, unchecked: bool },
}

/// Initial state: a sine-mode sum or a nodal table file.
#[derive(Debug, Clone, PartialEq)]
pub enum Y0Spec {
    Modes(Vec<(usize, f64)>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub n: usize,
    pub resolution: TimeResolution,
    pub nonlinearity: NonlinSpec,
    pub y0: Y0Spec,
    pub omega: (f64, f64),
    pub q: f64,
    pub bound_m: f64,
}

/// Which experiment to run, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskConfig {
    Simulate {
        t: f64,
    },
    NullControl {
        t: f64,
        tol: f64,
        e: Vec<(f64, f64)>,
        potential: f64,
    },
    TimeOptimal {
        tol: f64,
        tol_t: f64,
        t_max: f64,
    },
    Improve {
        tol: f64,
        control_file: PathBuf,
    },
    Observability {
        t: f64,
        e: Vec<(f64, f64)>,
        potential: f64,
        n_modes: usize,
        restarts: usize,
    },
    ScalingStudy {
        t: f64,
        e: Vec<(f64, f64)>,
        magnitudes: Vec<f64>,
        n_modes: usize,
        restarts: usize,
    },
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::Simulate { .. } => "simulate",
            TaskConfig::NullControl { .. } => "null-control",
            TaskConfig::TimeOptimal { .. } => "time-optimal",
            TaskConfig::Improve { .. } => "improve",
            TaskConfig::Observability { .. } => "observability",
            TaskConfig::ScalingStudy { .. } => "scaling-study",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub csv: bool,
    pub json: bool,
    pub bin: bool,
}

/// Solver knobs that the config may override.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dual_iters: usize,
    pub dual_levels: usize,
    pub picard_iters: usize,
    pub max_ascent_iters: usize,
}

/// Fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub problem: ProblemConfig,
    pub task: TaskConfig,
    pub output: OutputConfig,
    pub solver: SolverConfig,
}

struct Check<'a> {
    raw: &'a RawConfig,
    violations: Vec<String>,
    used: Vec<String>,
}

impl<'a> Check<'a> {
    fn new(raw: &'a RawConfig) -> Self {
        Check {
            raw,
            violations: Vec::new(),
            used: Vec::new(),
        }
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    fn raw_str(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.raw.get(key).map(|e| e.value.clone())
    }

    fn line_of(&self, key: &str) -> usize {
        self.raw.get(key).map_or(0, |e| e.line)
    }

    fn f64_opt(&mut self, key: &str) -> Option<f64> {
        let value = self.raw_str(key)?;
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                let line = self.line_of(key);
                self.fail(format!(
                    "{key} (line {line}): not a finite number: {value:?}"
                ));
                None
            }
        }
    }

    fn usize_opt(&mut self, key: &str) -> Option<usize> {
        let value = self.raw_str(key)?;
        match value.parse::<usize>() {
            Ok(v) => Some(v),
            _ => {
                let line = self.line_of(key);
                self.fail(format!(
                    "{key} (line {line}): not a nonnegative integer: {value:?}"
                ));
                None
            }
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> u64 {
        match self.raw_str(key) {
            None => default,
            Some(value) => match value.parse::<u64>() {
                Ok(v) => v,
                _ => {
                    let line = self.line_of(key);
                    self.fail(format!("{key} (line {line}): not an integer: {value:?}"));
                    default
                }
            },
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> bool {
        match self.raw_str(key) {
            None => default,
            Some(value) => match value.as_str() {
                "true" => true,
                "false" => false,
                other => {
                    let line = self.line_of(key);
                    self.fail(format!(
                        "{key} (line {line}): expected true or false, got {other:?}"
                    ));
                    default
                }
            },
        }
    }

    fn tuples_opt(&mut self, key: &str) -> Option<Vec<(f64, f64)>> {
        let value = self.raw_str(key)?;
        match parse_tuples(&value) {
            Ok(t) => Some(t),
            Err(msg) => {
                let line = self.line_of(key);
                self.fail(format!("{key} (line {line}): {msg}"));
                None
            }
        }
    }

    fn floats_opt(&mut self, key: &str) -> Option<Vec<f64>> {
        let value = self.raw_str(key)?;
        let mut out = Vec::new();
        for part in value.split(',') {
            match part.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => {
                    let line = self.line_of(key);
                    self.fail(format!("{key} (line {line}): bad number {part:?}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn require<T>(&mut self, key: &str, value: Option<T>) -> Option<T> {
        if value.is_none() && self.raw.get(key).is_none() {
            self.fail(format!("{key}: required key is missing"));
        }
        value
    }
}

fn parse_tuples(value: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    let mut rest = value.trim();
    while !rest.is_empty() {
        if !rest.starts_with('(') {
            return Err(format!("expected `(a, b)` tuple at {rest:?}"));
        }
        let close = rest
            .find(')')
            .ok_or_else(|| format!("unterminated tuple at {rest:?}"))?;
        let inner = &rest[1..close];
        let nums: Vec<&str> = inner.split(',').map(str::trim).collect();
        if nums.len() != 2 {
            return Err(format!("tuple {inner:?} must have exactly two numbers"));
        }
        let a = nums[0]
            .parse::<f64>()
            .map_err(|e| format!("bad number {:?}: {e}", nums[0]))?;
        let b = nums[1]
            .parse::<f64>()
            .map_err(|e| format!("bad number {:?}: {e}", nums[1]))?;
        out.push((a, b));
        rest = rest[close + 1..].trim_start();
        if let Some(stripped) = rest.strip_prefix(',') {
            rest = stripped.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("expected `,` between tuples at {rest:?}"));
        }
    }
    if out.is_empty() {
        return Err("empty tuple list".into());
    }
    Ok(out)
}

const KNOWN_TOPLEVEL: &[&str] = &["seed", "workers"];
const KNOWN_PROBLEM: &[&str] = &[
    "n",
    "n_steps",
    "dt",
    "nonlinearity",
    "power",
    "table_file",
    "table_unchecked",
    "y0_modes",
    "y0_file",
    "omega",
    "q",
    "M",
];
const KNOWN_TASK: &[&str] = &[
    "kind",
    "T",
    "tol",
    "E",
    "tol_T",
    "t_max",
    "a",
    "control_file",
    "n_modes",
    "restarts",
    "a_magnitudes",
];
const KNOWN_OUTPUT: &[&str] = &["directory", "formats"];
const KNOWN_SOLVER: &[&str] = &[
    "dual_iters",
    "dual_levels",
    "picard_iters",
    "max_ascent_iters",
];

/// Validate the raw config for the requested task kind (from the CLI
/// subcommand). All semantic violations are aggregated.
pub fn validate(raw: &RawConfig, kind: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut c = Check::new(raw);

    // unknown keys are violations too: catches typos early
    for key in raw.keys() {
        let ok = match key.split_once('.') {
            None => KNOWN_TOPLEVEL.contains(&key.as_str()),
            Some(("problem", k)) => KNOWN_PROBLEM.contains(&k),
            Some(("task", k)) => KNOWN_TASK.contains(&k),
            Some(("output", k)) => KNOWN_OUTPUT.contains(&k),
            Some(("solver", k)) => KNOWN_SOLVER.contains(&k),
            Some(_) => false,
        };
        if !ok {
            c.fail(format!("unknown key {key:?}"));
        }
    }

    if let Some(declared) = c.raw_str("task.kind") {
        if declared != kind {
            c.fail(format!(
                "task.kind is {declared:?} but the {kind:?} subcommand was invoked"
            ));
        }
    }

    let seed = c.u64_or("seed", 0);
    let workers = {
        let w = c.usize_opt("workers").unwrap_or(1);
        if w == 0 {
            c.fail("workers: must be at least 1");
            1
        } else {
            w
        }
    };

    // [problem]
    let n_raw = c.usize_opt("problem.n");
    let n = match c.require("problem.n", n_raw) {
        Some(v) if v >= 1 => v,
        Some(_) => {
            c.fail("problem.n: must be at least 1");
            1
        }
        None => 1,
    };
    let n_steps = c.usize_opt("problem.n_steps");
    let dt = c.f64_opt("problem.dt");
    let resolution = match (n_steps, dt) {
        (Some(_), Some(_)) => {
            c.fail("problem.n_steps and problem.dt: give exactly one, not both");
            TimeResolution::Steps(1)
        }
        (Some(s), None) => {
            if s == 0 {
                c.fail("problem.n_steps: must be at least 1");
            }
            TimeResolution::Steps(s.max(1))
        }
        (None, Some(d)) => {
            if !(d > 0.0) {
                c.fail("problem.dt: must be positive");
            }
            TimeResolution::Dt(d)
        }
        (None, None) => {
            if raw.get("problem.n_steps").is_none() && raw.get("problem.dt").is_none() {
                c.fail("problem.n_steps or problem.dt: one is required");
            }
            TimeResolution::Steps(1)
        }
    };

    let nonlinearity = match c.raw_str("problem.nonlinearity").as_deref() {
        None => {
            c.fail("problem.nonlinearity: required key is missing");
            NonlinSpec::Zero
        }
        Some("zero") => NonlinSpec::Zero,
        Some("cubic") => NonlinSpec::Cubic,
        Some("saturating") => NonlinSpec::Saturating,
        Some("odd_power") => {
            let p = c.usize_opt("problem.power").unwrap_or(0) as u32;
            if p == 0 || p.is_multiple_of(2) {
                c.fail("problem.power: odd_power needs an odd positive exponent");
                NonlinSpec::Zero
            } else {
                NonlinSpec::OddPower(p)
            }
        }
        Some("table") => match c.raw_str("problem.table_file") {
            Some(f) => NonlinSpec::Table {
                file: PathBuf::from(f),
                unchecked: c.bool_or("problem.table_unchecked", false),
            },
            None => {
                c.fail("problem.table_file: required for nonlinearity = table");
                NonlinSpec::Zero
            }
        },
        Some(other) => {
            c.fail(format!(
                "problem.nonlinearity: unknown kind {other:?} \
                 (zero, cubic, odd_power, saturating, table)"
            ));
            NonlinSpec::Zero
        }
    };

    let y0_modes = c.tuples_opt("problem.y0_modes");
    let y0_file = c.raw_str("problem.y0_file");
    let y0 = match (y0_modes, y0_file) {
        (Some(_), Some(_)) => {
            c.fail("problem.y0_modes and problem.y0_file: give exactly one, not both");
            Y0Spec::Modes(vec![])
        }
        (Some(modes), None) => {
            let mut parsed = Vec::new();
            for (idx, amp) in modes {
                if idx < 1.0 || idx.fract() != 0.0 || idx > n as f64 {
                    c.fail(format!(
                        "problem.y0_modes: mode index {idx} must be an integer in 1..={n}"
                    ));
                } else {
                    parsed.push((idx as usize, amp));
                }
            }
            Y0Spec::Modes(parsed)
        }
        (None, Some(f)) => Y0Spec::File(PathBuf::from(f)),
        (None, None) => {
            c.fail("problem.y0_modes or problem.y0_file: one is required");
            Y0Spec::Modes(vec![])
        }
    };

    let omega_raw = c.tuples_opt("problem.omega");
    let omega = match c.require("problem.omega", omega_raw) {
        Some(t) => {
            if t.len() != 1 {
                c.fail("problem.omega: exactly one interval is supported");
            }
            let (l, r) = t[0];
            if !(l >= 0.0 && l < r && r <= 1.0) {
                c.fail(format!(
                    "problem.omega: ({l}, {r}) is not a non-degenerate subinterval of [0, 1]"
                ));
            }
            (l, r)
        }
        None => (0.0, 1.0),
    };

    let q = c.f64_opt("problem.q").unwrap_or(2.0);
    if !(q >= 2.0) {
        c.fail(format!(
            "problem.q: the norm exponent must satisfy q >= 2 in one space dimension, got {q}"
        ));
    }
    let bound_m = c.f64_opt("problem.M").unwrap_or(1.0);
    if !(bound_m > 0.0) {
        c.fail(format!("problem.M: must be positive, got {bound_m}"));
    }

    // [task]
    let horizon = |c: &mut Check| -> f64 {
        let t_raw = c.f64_opt("task.T");
        match c.require("task.T", t_raw) {
            Some(t) if t > 0.0 => t,
            Some(t) => {
                c.fail(format!("task.T: must be positive, got {t}"));
                1.0
            }
            None => 1.0,
        }
    };
    let tolerance = |c: &mut Check| -> f64 {
        let t = c.f64_opt("task.tol").unwrap_or(1e-3);
        if !(t > 0.0) {
            c.fail(format!("task.tol: must be positive, got {t}"));
            1e-3
        } else {
            t
        }
    };
    let time_set = |c: &mut Check, t: f64| -> Vec<(f64, f64)> {
        match c.tuples_opt("task.E") {
            None => vec![(0.0, t)],
            Some(list) => {
                let mut sorted = list.clone();
                sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                for &(l, r) in &sorted {
                    if !(l >= 0.0 && l < r && r <= t) {
                        c.fail(format!(
                            "task.E: interval ({l}, {r}) is not a non-degenerate \
                             subinterval of (0, {t})"
                        ));
                    }
                }
                for w in sorted.windows(2) {
                    if w[1].0 < w[0].1 {
                        c.fail(format!(
                            "task.E: intervals ({}, {}) and ({}, {}) overlap",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        ));
                    }
                }
                sorted
            }
        }
    };
    let modes_and_restarts = |c: &mut Check| -> (usize, usize) {
        let m = c.usize_opt("task.n_modes").unwrap_or(24);
        if m == 0 || m > n {
            c.fail(format!("task.n_modes: must lie in 1..={n}, got {m}"));
        }
        let r = c.usize_opt("task.restarts").unwrap_or(8);
        (m.clamp(1, n), r)
    };

    let task = match kind {
        "simulate" => TaskConfig::Simulate { t: horizon(&mut c) },
        "null-control" => {
            let t = horizon(&mut c);
            let tol = tolerance(&mut c);
            let e = time_set(&mut c, t);
            let potential = c.f64_opt("task.a").unwrap_or(0.0);
            if potential != 0.0 && nonlinearity != NonlinSpec::Zero {
                c.fail(
                    "task.a: a potential is only meaningful for the linear equation \
                        (problem.nonlinearity = zero)",
                );
            }
            TaskConfig::NullControl {
                t,
                tol,
                e,
                potential,
            }
        }
        "time-optimal" => {
            if !matches!(resolution, TimeResolution::Dt(_)) {
                c.fail("problem.dt: the time-optimal task needs a step size (horizons vary)");
            }
            let tol = tolerance(&mut c);
            let tol_t = c.f64_opt("task.tol_T").unwrap_or(0.01);
            if !(tol_t > 0.0) {
                c.fail(format!("task.tol_T: must be positive, got {tol_t}"));
            }
            let t_max = c.f64_opt("task.t_max").unwrap_or(64.0);
            if !(t_max > 0.0) {
                c.fail(format!("task.t_max: must be positive, got {t_max}"));
            }
            TaskConfig::TimeOptimal { tol, tol_t, t_max }
        }
        "improve" => {
            let tol = tolerance(&mut c);
            let file_raw = c.raw_str("task.control_file");
            match c.require("task.control_file", file_raw) {
                Some(f) => TaskConfig::Improve {
                    tol,
                    control_file: PathBuf::from(f),
                },
                None => TaskConfig::Improve {
                    tol,
                    control_file: PathBuf::new(),
                },
            }
        }
        "observability" => {
            let t = horizon(&mut c);
            let e = time_set(&mut c, t);
            let potential = c.f64_opt("task.a").unwrap_or(0.0);
            let (n_modes, restarts) = modes_and_restarts(&mut c);
            TaskConfig::Observability {
                t,
                e,
                potential,
                n_modes,
                restarts,
            }
        }
        "scaling-study" => {
            let t = horizon(&mut c);
            let e = time_set(&mut c, t);
            let mags_raw = c.floats_opt("task.a_magnitudes");
            let magnitudes = match c.require("task.a_magnitudes", mags_raw) {
                Some(m) => {
                    if m.iter().any(|&v| v < 0.0) {
                        c.fail("task.a_magnitudes: magnitudes must be nonnegative");
                    }
                    if m.windows(2).any(|w| w[0] > w[1]) {
                        c.fail("task.a_magnitudes: magnitudes must be sorted ascending");
                    }
                    m
                }
                None => vec![],
            };
            let (n_modes, restarts) = modes_and_restarts(&mut c);
            TaskConfig::ScalingStudy {
                t,
                e,
                magnitudes,
                n_modes,
                restarts,
            }
        }
        other => {
            c.fail(format!("unknown task kind {other:?}"));
            TaskConfig::Simulate { t: 1.0 }
        }
    };

    // [output]
    let dir_raw = c.raw_str("output.directory");
    let directory = match c.require("output.directory", dir_raw) {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from("out"),
    };
    let mut csv = true;
    let mut json = true;
    let mut bin = false;
    if let Some(formats) = c.raw_str("output.formats") {
        csv = false;
        json = false;
        for f in formats.split(',') {
            match f.trim() {
                "csv" => csv = true,
                "json" => json = true,
                "bin" => bin = true,
                other => c.fail(format!("output.formats: unknown format {other:?}")),
            }
        }
        if !csv || !json {
            c.fail("output.formats: csv and json are mandatory (bin is optional)");
        }
    }

    // [solver]
    let solver = SolverConfig {
        dual_iters: c.usize_opt("solver.dual_iters").unwrap_or(500).max(1),
        dual_levels: c.usize_opt("solver.dual_levels").unwrap_or(6).max(1),
        picard_iters: c.usize_opt("solver.picard_iters").unwrap_or(40).max(1),
        max_ascent_iters: c.usize_opt("solver.max_ascent_iters").unwrap_or(150).max(1),
    };

    if c.violations.is_empty() {
        Ok(ExperimentConfig {
            seed,
            workers,
            problem: ProblemConfig {
                n,
                resolution,
                nonlinearity,
                y0,
                omega,
                q,
                bound_m,
            },
            task,
            output: OutputConfig {
                directory,
                csv,
                json,
                bin,
            },
            solver,
        })
    } else {
        Err(ConfigError::Invalid(c.violations))
    }
}

/// Parse and validate in one step.
pub fn parse_config(text: &str, kind: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw = RawConfig::parse(text).map_err(ConfigError::Syntax)?;
    validate(&raw, kind)
}
