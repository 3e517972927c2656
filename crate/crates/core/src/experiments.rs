//! Monte Carlo harness: configuration, the five experiments, and CSV output.
//!
//! Every trial draws from its own seed, `derive_seed([master, experiment,
//! point, trial])`, so a single trial can be re-run in isolation. Trials
//! within a point run in parallel; results are collected in trial order and
//! reduced with integer sums, so output never depends on scheduling.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::analysis::{self, FormulaId};
use crate::coding::{
    build_key, cache_update, descramble, draw_encoding_vector, ContentStore, DecodePlan, Scheme,
    Slots, DEFAULT_Q,
};
use crate::csvout;
use crate::error::{Error, Result};
use crate::gf2::{BitVector, EchelonBasis};
use crate::netsim::{
    build_topology, plan_local_groups, proactive_gather, reactive_plan, reactive_walk,
    trial_log_row, Direction, Mode, RetrievalResult, Routing, Topology, DEFAULT_C1, DEFAULT_C4,
    DEFAULT_DELTA, TRIAL_LOG_HEADER,
};
use crate::placement::{place_all, LazyPlacement, PlacementConfig};
use crate::seeds::{derive_seed, rng_from_seed, SimRng, GENERATOR_NAME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Hops,
    Hit,
    Security,
    Update,
    CapacityTrend,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Hops,
        ExperimentKind::Hit,
        ExperimentKind::Security,
        ExperimentKind::Update,
        ExperimentKind::CapacityTrend,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Hops => "hops",
            ExperimentKind::Hit => "hit",
            ExperimentKind::Security => "security",
            ExperimentKind::Update => "update",
            ExperimentKind::CapacityTrend => "capacity-trend",
        }
    }

    /// Seed-path component; stable across releases.
    fn id(&self) -> u64 {
        match self {
            ExperimentKind::Hops => 1,
            ExperimentKind::Hit => 2,
            ExperimentKind::Security => 3,
            ExperimentKind::Update => 4,
            ExperimentKind::CapacityTrend => 5,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Parameters of one experiment run.
///
/// Every field can be set from a `key=value` line; see [`ExperimentConfig::set`]
/// for the keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// Cache slots per node, one sweep point each.
    pub slot_values: Vec<usize>,
    /// Cached files accessed, hit experiment only.
    pub l_values: Vec<usize>,
    /// Content counts swept by the security and capacity-trend experiments.
    pub m_sweep: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub routing: Routing,
    pub directions: Vec<Direction>,
    pub independence: bool,
    pub c1: f64,
    pub delta: f64,
    pub c4: f64,
    pub w: f64,
    /// Per-bit probability of a one in skewed contents (security).
    pub skew: f64,
    pub out: PathBuf,
    pub trial_log: bool,
    pub gnuplot: bool,
}

fn inclusive_step(from: usize, to: usize, step: usize) -> Vec<usize> {
    (from..=to).step_by(step).collect()
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        let mut c = Self {
            experiment,
            n: 1000,
            m: 100,
            q: DEFAULT_Q,
            slot_values: inclusive_step(5, 50, 5),
            l_values: Vec::new(),
            m_sweep: Vec::new(),
            trials: 500,
            seed: 1,
            schemes: vec![Scheme::Coded, Scheme::Uncoded],
            routing: Routing::Reactive,
            directions: Direction::ALL.to_vec(),
            independence: false,
            c1: DEFAULT_C1,
            delta: DEFAULT_DELTA,
            c4: DEFAULT_C4,
            w: 1.0,
            skew: 0.9,
            out: PathBuf::from(format!("results/{experiment}.csv")),
            trial_log: false,
            gnuplot: false,
        };
        match experiment {
            ExperimentKind::Hops => {}
            ExperimentKind::Hit => {
                c.slot_values = vec![2, 25];
                c.l_values = inclusive_step(90, 130, 2);
                c.l_values.extend(inclusive_step(150, 1000, 25));
                c.trials = 2000;
            }
            ExperimentKind::Security => {
                c.m = 64;
                c.slot_values = vec![8];
                c.m_sweep = vec![1, 2, 4, 8, 16, 32, 64];
                c.trials = 1000;
                c.schemes = vec![Scheme::Coded];
            }
            ExperimentKind::Update => {
                c.slot_values = vec![25];
                c.trials = 200;
                c.schemes = vec![Scheme::Coded];
            }
            ExperimentKind::CapacityTrend => {
                c.slot_values = vec![4];
                c.m_sweep = vec![32, 64, 128, 256];
                c.trials = 200;
            }
        }
        c
    }

    /// Applies one `key=value` setting. Keys: `experiment n m Q M l m_sweep
    /// trials seed scheme routing direction independence c1 delta c4 W skew
    /// out trial_log gnuplot`. Lists are comma separated; an item `a..b` or
    /// `a..b:step` expands to an inclusive range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |e: String| Error::Config(format!("{key}={value}: {e}"));
        match key.trim() {
            "experiment" => self.experiment = value.parse()?,
            "n" => self.n = parse_num(value).map_err(bad)?,
            "m" => self.m = parse_num(value).map_err(bad)?,
            "Q" | "q" => self.q = parse_num(value).map_err(bad)?,
            "M" => self.slot_values = parse_usize_list(value).map_err(bad)?,
            "l" => self.l_values = parse_usize_list(value).map_err(bad)?,
            "m_sweep" | "m-sweep" => self.m_sweep = parse_usize_list(value).map_err(bad)?,
            "trials" => self.trials = parse_num(value).map_err(bad)?,
            "seed" => self.seed = parse_num(value).map_err(bad)?,
            "scheme" => {
                self.schemes = match value {
                    "both" | "all" => vec![Scheme::Coded, Scheme::Uncoded],
                    _ => split_items(value).map(str::parse).collect::<Result<_>>()?,
                }
            }
            "routing" => self.routing = value.parse()?,
            "direction" => {
                self.directions = match value {
                    "all" => Direction::ALL.to_vec(),
                    _ => split_items(value).map(str::parse).collect::<Result<_>>()?,
                }
            }
            "independence" => self.independence = parse_bool(value).map_err(bad)?,
            "c1" => self.c1 = parse_num(value).map_err(bad)?,
            "delta" => self.delta = parse_num(value).map_err(bad)?,
            "c4" => self.c4 = parse_num(value).map_err(bad)?,
            "W" | "w" => self.w = parse_num(value).map_err(bad)?,
            "skew" => self.skew = parse_num(value).map_err(bad)?,
            "out" => self.out = PathBuf::from(value),
            "trial_log" | "trial-log" => self.trial_log = parse_bool(value).map_err(bad)?,
            "gnuplot" => self.gnuplot = parse_bool(value).map_err(bad)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment. An
    /// `experiment=` line, if present, must agree with `self.experiment`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: no + 1,
                detail: format!("expected key=value, got {line:?}"),
            })?;
            if k.trim() == "experiment" {
                let kind: ExperimentKind = v.parse()?;
                if kind != self.experiment {
                    return Err(Error::Config(format!(
                        "{}: file is for {kind}, running {}",
                        origin.display(),
                        self.experiment
                    )));
                }
                continue;
            }
            self.set(k, v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: no + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Configuration as `key=value` lines, readable by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let schemes: Vec<String> = self.schemes.iter().map(Scheme::to_string).collect();
        let dirs: Vec<&str> = self.directions.iter().map(Direction::code).collect();
        [
            format!("experiment={}", self.experiment),
            format!("n={}", self.n),
            format!("m={}", self.m),
            format!("Q={}", self.q),
            format!("M={}", list(&self.slot_values)),
            format!("l={}", list(&self.l_values)),
            format!("m_sweep={}", list(&self.m_sweep)),
            format!("trials={}", self.trials),
            format!("seed={}", self.seed),
            format!("scheme={}", schemes.join(",")),
            format!("routing={}", self.routing),
            format!("direction={}", dirs.join(",")),
            format!("independence={}", self.independence),
            format!("c1={}", self.c1),
            format!("delta={}", self.delta),
            format!("c4={}", self.c4),
            format!("W={}", self.w),
            format!("skew={}", self.skew),
            format!("out={}", self.out.display()),
            format!("trial_log={}", self.trial_log),
            format!("gnuplot={}", self.gnuplot),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.m == 0 || self.n < 2 {
            return fail(format!(
                "need m >= 1 and n >= 2 (m={}, n={})",
                self.m, self.n
            ));
        }
        if self.q == 0 || !self.q.is_multiple_of(8) {
            return fail(format!(
                "Q must be a positive multiple of 8, got {}",
                self.q
            ));
        }
        if self.slot_values.is_empty() || self.slot_values.contains(&0) {
            return fail("M values must be nonempty and positive".into());
        }
        if self.schemes.is_empty() || self.directions.is_empty() {
            return fail("scheme and direction lists must be nonempty".into());
        }
        for (name, v) in [
            ("c1", self.c1),
            ("delta", self.delta),
            ("c4", self.c4),
            ("W", self.w),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return fail(format!("skew must be in [0,1], got {}", self.skew));
        }
        let max_slots = *self.slot_values.iter().max().expect("nonempty");
        let uncoded = self.schemes.contains(&Scheme::Uncoded);
        match self.experiment {
            ExperimentKind::Hops | ExperimentKind::Hit | ExperimentKind::Update => {
                if (uncoded || self.independence) && max_slots > self.m {
                    return fail(format!("M={max_slots} exceeds m={}", self.m));
                }
            }
            ExperimentKind::Security => {
                if self.m_sweep.is_empty() || self.m_sweep.contains(&0) {
                    return fail("m_sweep must be nonempty and positive".into());
                }
                if self.independence && self.slot_values[0] > self.m {
                    return fail(format!("M={} exceeds m={}", self.slot_values[0], self.m));
                }
            }
            ExperimentKind::CapacityTrend => {
                if self.m_sweep.len() < 2 || self.m_sweep.contains(&0) {
                    return fail("m_sweep needs at least two positive values".into());
                }
                let min_m = *self.m_sweep.iter().min().expect("nonempty");
                if max_slots > min_m {
                    return fail(format!("M={max_slots} exceeds m={min_m}"));
                }
            }
        }
        if self.experiment == ExperimentKind::Hit && self.l_values.is_empty() {
            return fail("l values must be nonempty".into());
        }
        Ok(())
    }
}

fn split_items(s: &str) -> impl Iterator<Item = &str> {
    s.split([',', ' ', '\t'])
        .map(str::trim)
        .filter(|x| !x.is_empty())
}

fn parse_num<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| e.to_string())
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("not a boolean: {other:?}")),
    }
}

pub fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for item in split_items(s) {
        if let Some((a, rest)) = item.split_once("..") {
            let (b, step) = match rest.split_once(':') {
                Some((b, st)) => (b, parse_num::<usize>(st)?),
                None => (rest, 1),
            };
            if step == 0 {
                return Err("range step must be positive".into());
            }
            let (a, b) = (parse_num::<usize>(a)?, parse_num::<usize>(b)?);
            if a > b {
                return Err(format!("empty range {item}"));
            }
            out.extend(inclusive_step(a, b, step));
        } else {
            out.push(parse_num(item)?);
        }
    }
    Ok(out)
}

/// Mean and standard error of integer-valued samples, from exact sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub count: u64,
    pub sum: u128,
    pub sum_sq: u128,
}

impl Tally {
    pub fn push(&mut self, x: u64) {
        self.count += 1;
        self.sum += x as u128;
        self.sum_sq += (x as u128) * (x as u128);
    }

    pub fn merge(&mut self, other: &Tally) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    /// Samples divided by `scale`.
    pub fn estimate_scaled(&self, scale: f64) -> Estimate {
        if self.count == 0 {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
                trials: 0,
            };
        }
        let n = self.count as f64;
        let mean = self.sum as f64 / n;
        let se = if self.count > 1 {
            // Sum of squared deviations, exact up to the final division.
            let ss = self.sum_sq as f64 - (self.sum as f64) * (self.sum as f64) / n;
            (ss.max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: mean / scale,
            se: se / scale,
            trials: self.count,
        }
    }

    pub fn estimate(&self) -> Estimate {
        self.estimate_scaled(1.0)
    }
}

impl FromIterator<u64> for Tally {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut t = Tally::default();
        for x in iter {
            t.push(x);
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub trials: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            se: 0.0,
            trials: 1,
        }
    }
}

/// `|observed - p| <= k * sqrt(p (1 - p) / trials)`; exact equality when the
/// binomial spread is zero.
pub fn within_binomial_sigma(observed: f64, p: f64, trials: u64, k: f64) -> bool {
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    if sigma == 0.0 {
        observed == p
    } else {
        (observed - p).abs() <= k * sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theory {
    pub formula: FormulaId,
    pub value: f64,
    pub upper: Option<f64>,
}

impl Theory {
    pub fn new(formula: FormulaId, value: f64) -> Self {
        Self {
            formula,
            value,
            upper: None,
        }
    }
}

/// One simulated aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportPoint {
    pub series: String,
    pub scheme: Option<Scheme>,
    pub direction: Option<Direction>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub slots: Option<usize>,
    pub l: Option<usize>,
    pub metric: String,
    pub estimate: Estimate,
    pub theory: Option<Theory>,
}

impl ReportPoint {
    fn new(series: impl Into<String>, metric: &str, estimate: Estimate) -> Self {
        Self {
            series: series.into(),
            scheme: None,
            direction: None,
            n: None,
            m: None,
            slots: None,
            l: None,
            metric: metric.into(),
            estimate,
            theory: None,
        }
    }

    fn scheme(mut self, s: Scheme) -> Self {
        self.scheme = Some(s);
        self
    }

    fn direction(mut self, d: Option<Direction>) -> Self {
        self.direction = d;
        self
    }

    fn params(
        mut self,
        n: Option<usize>,
        m: Option<usize>,
        slots: Option<usize>,
        l: Option<usize>,
    ) -> Self {
        self.n = n;
        self.m = m;
        self.slots = slots;
        self.l = l;
        self
    }

    fn theory(mut self, t: Theory) -> Self {
        self.theory = Some(t);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub points: Vec<ReportPoint>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Per-retrieval rows in [`TRIAL_LOG_HEADER`] layout, when enabled.
    pub trial_log: Vec<String>,
    pub duration_secs: f64,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig) -> Self {
        Self {
            config: config.clone(),
            points: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            trial_log: Vec::new(),
            duration_secs: 0.0,
        }
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn point(
        &self,
        series: &str,
        metric: &str,
        pred: impl Fn(&ReportPoint) -> bool,
    ) -> Option<&ReportPoint> {
        self.points
            .iter()
            .find(|p| p.series == series && p.metric == metric && pred(p))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const REPORT_HEADER: &str =
    "experiment,series,scheme,direction,n,m,M,l,metric,mean,se,trials,formula_id,theory,theory_upper";

fn opt_usize(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn report_row(experiment: ExperimentKind, p: &ReportPoint) -> String {
    let (fid, theory, upper) = match &p.theory {
        Some(t) => (
            t.formula.to_string(),
            csvout::float(t.value),
            csvout::opt_float(t.upper),
        ),
        None => Default::default(),
    };
    format!(
        "{experiment},{},{},{},{},{},{},{},{},{},{},{},{fid},{theory},{upper}",
        p.series,
        p.scheme.map(|s| s.to_string()).unwrap_or_default(),
        p.direction.map(|d| d.code()).unwrap_or_default(),
        opt_usize(p.n),
        opt_usize(p.m),
        opt_usize(p.slots),
        opt_usize(p.l),
        p.metric,
        csvout::float(p.estimate.mean),
        csvout::float(p.estimate.se),
        p.estimate.trials,
    )
}

/// The points CSV. Deterministic for a given configuration.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for p in &report.points {
        out.push_str(&report_row(report.config.experiment, p));
        out.push('\n');
    }
    out
}

/// Run metadata as `key=value` lines: configuration, generator, checks,
/// warnings, and wall-clock duration.
pub fn report_metadata(report: &ExperimentReport) -> String {
    let mut out = report.config.to_text();
    out.push_str(&format!("generator={GENERATOR_NAME}\n"));
    out.push_str(&format!("duration_secs={:.3}\n", report.duration_secs));
    for c in &report.checks {
        let verdict = if c.passed { "pass" } else { "fail" };
        out.push_str(&format!("check.{}={verdict} {}\n", c.name, c.detail));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning={w}\n"));
    }
    out
}

fn primary_axis(kind: ExperimentKind) -> (usize, &'static str, &'static str) {
    // (column number in the CSV, axis label, metric plotted)
    match kind {
        ExperimentKind::Hops => (7, "cache size M", "hops"),
        ExperimentKind::Hit => (8, "cached files l", "hit_probability"),
        ExperimentKind::Security => (6, "contents m", "one_frequency"),
        ExperimentKind::Update => (5, "nodes n", "success_rate"),
        ExperimentKind::CapacityTrend => (6, "contents m", "nodes"),
    }
}

/// A gnuplot script plotting the primary metric of every series.
pub fn gnuplot_script(report: &ExperimentReport, csv_name: &str) -> String {
    let (col, label, metric) = primary_axis(report.config.experiment);
    let mut series: Vec<&str> = Vec::new();
    for p in report.points.iter().filter(|p| p.metric == metric) {
        if !series.contains(&p.series.as_str()) {
            series.push(&p.series);
        }
    }
    let plots: Vec<String> = series
        .iter()
        .map(|s| {
            format!(
                "'{csv_name}' using {col}:(strcol(2) eq \"{s}\" && strcol(9) eq \"{metric}\" ? $10 : 1/0):11 \
                 with yerrorlines title \"{s}\""
            )
        })
        .collect();
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel '{label}'\nset ylabel '{metric}'\n\
         set terminal pngcairo size 900,600\nset output '{}.png'\nplot {}\n",
        csv_name.trim_end_matches(".csv"),
        plots.join(", \\\n     ")
    )
}

/// Writes the points CSV to `config.out`, metadata next to it
/// (`<out>.meta`), and optionally the trial log and gnuplot script.
pub fn write_report(report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    let out = &report.config.out;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| Error::io(path, e));
    let sibling = |suffix: &str| {
        let mut s = out.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let mut written = vec![out.clone()];
    write(out, &report_csv(report))?;
    let meta = sibling(".meta");
    write(&meta, &report_metadata(report))?;
    written.push(meta);
    if report.config.trial_log {
        let path = sibling(".trials.csv");
        let mut text = String::from(TRIAL_LOG_HEADER);
        text.push('\n');
        for row in &report.trial_log {
            text.push_str(row);
            text.push('\n');
        }
        write(&path, &text)?;
        written.push(path);
    }
    if report.config.gnuplot {
        let path = sibling(".gp");
        let name = out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        write(&path, &gnuplot_script(report, &name))?;
        written.push(path);
    }
    Ok(written)
}

/// Dispatches on `config.experiment`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    match config.experiment {
        ExperimentKind::Hops => run_hop_experiment(config),
        ExperimentKind::Hit => run_hit_experiment(config),
        ExperimentKind::Security => run_security_experiment(config),
        ExperimentKind::Update => run_update_experiment(config),
        ExperimentKind::CapacityTrend => run_capacity_trend(config),
    }
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != kind {
        return Err(Error::Config(format!(
            "configuration is for {}, not {kind}",
            config.experiment
        )));
    }
    config.validate()
}

/// Runs `f` for trials `0..trials` in parallel, returning results in trial order.
fn par_trials<T: Send>(
    trials: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..trials).into_par_iter().map(f).collect()
}

fn finish(mut report: ExperimentReport, started: Instant) -> ExperimentReport {
    report.duration_secs = started.elapsed().as_secs_f64();
    report
}

// ---------------------------------------------------------------------------
// Single-trial estimators, shared with the test suites.

/// Uniform vectors of `F_2^m` drawn until they span the space.
pub fn spanning_draws<R: Rng + ?Sized>(m: usize, rng: &mut R) -> usize {
    let mut basis = EchelonBasis::new(m);
    let mut draws = 0;
    while !basis.is_full() {
        let v = BitVector::random(m, rng);
        basis.insert(&v).expect("matching length");
        draws += 1;
    }
    draws
}

/// Rank of `l` uniform vectors of `F_2^m`.
pub fn random_rank<R: Rng + ?Sized>(l: usize, m: usize, rng: &mut R) -> usize {
    let mut basis = EchelonBasis::new(m);
    for _ in 0..l {
        let v = BitVector::random(m, rng);
        basis.insert(&v).expect("matching length");
        if basis.is_full() {
            break;
        }
    }
    basis.rank()
}

/// Whether `u` uniform `M`-subsets of `m` contents cover all of them.
pub fn uncoded_covers<R: Rng + ?Sized>(m: usize, slots: usize, u: usize, rng: &mut R) -> bool {
    let mut seen = BitVector::zeros(m);
    let mut count = 0;
    for _ in 0..u {
        for i in index::sample(rng, m, slots) {
            if !seen.get(i) {
                seen.set(i, true);
                count += 1;
            }
        }
        if count == m {
            return true;
        }
    }
    count == m
}

// ---------------------------------------------------------------------------
// Hops.

struct HopTrial {
    /// One result per series, in series order.
    results: Vec<RetrievalResult>,
    seed: u64,
}

struct Network {
    topo: Topology,
    store: ContentStore,
    placement: PlacementConfig,
    requester: usize,
}

fn trial_network(
    config: &ExperimentConfig,
    scheme: Scheme,
    m: usize,
    slots: usize,
    seed: u64,
) -> Result<Network> {
    let topo = build_topology(config.n, config.c1, config.delta, derive_seed(&[seed, 1]))?;
    let store = ContentStore::random(m, config.q, &mut rng_from_seed(derive_seed(&[seed, 2])))?;
    let base = match scheme {
        Scheme::Coded => PlacementConfig::coded(m, slots, derive_seed(&[seed, 3])),
        Scheme::Uncoded => PlacementConfig::uncoded(m, slots, derive_seed(&[seed, 3])),
    };
    let placement = base.with_independence(config.independence && scheme == Scheme::Coded);
    let requester = rng_from_seed(derive_seed(&[seed, 4])).gen_range(0..config.n);
    Ok(Network {
        topo,
        store,
        placement,
        requester,
    })
}

/// Direction chosen uniformly from the configured list, per trial.
fn trial_direction(config: &ExperimentConfig, seed: u64) -> Direction {
    let mut rng = rng_from_seed(derive_seed(&[seed, 5]));
    config.directions[rng.gen_range(0..config.directions.len())]
}

/// Series run for one scheme: `(label, fixed direction)`; `None` draws the
/// direction per trial.
fn hop_series(config: &ExperimentConfig, scheme: Scheme) -> Vec<(String, Option<Direction>)> {
    if config.routing == Routing::Proactive {
        return vec![(scheme.to_string(), None)];
    }
    let mut out = vec![(scheme.to_string(), None)];
    if scheme == Scheme::Coded && config.directions.len() > 1 {
        out.extend(
            config
                .directions
                .iter()
                .map(|&d| (format!("coded-{}", d.code()), Some(d))),
        );
    }
    out
}

/// Mean hops (and transmissions, success rate) of all-contents retrieval
/// against cache size, for each scheme. Coded retrievals are also run per
/// direction on the same networks, so direction series are paired.
pub fn run_hop_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::Hops)?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    let (n, m) = (config.n, config.m);
    let mut point_index = 0u64;
    for &slots in &config.slot_values {
        for &scheme in &config.schemes {
            let series = hop_series(config, scheme);
            let pi = point_index;
            point_index += 1;
            let trials = par_trials(config.trials, |t| {
                let seed = derive_seed(&[config.seed, ExperimentKind::Hops.id(), pi, t as u64]);
                let net = trial_network(config, scheme, m, slots, seed)?;
                let caches = LazyPlacement::new(net.placement, &net.store, n)?;
                let plan = match config.routing {
                    Routing::Proactive => Some(plan_local_groups(&net.topo, m, slots, config.c4)?),
                    Routing::Reactive => None,
                };
                let results = series
                    .iter()
                    .map(|(_, dir)| match &plan {
                        Some(p) => proactive_gather(
                            &net.topo,
                            p,
                            &caches,
                            &net.store,
                            net.requester,
                            Mode::AllContents,
                        ),
                        None => {
                            let d = dir.unwrap_or_else(|| trial_direction(config, seed));
                            reactive_walk(
                                &net.topo,
                                &caches,
                                &net.store,
                                net.requester,
                                d,
                                Mode::AllContents,
                            )
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(HopTrial { results, seed })
            })?;

            for (si, (label, dir)) in series.iter().enumerate() {
                let hops: Tally = trials.iter().map(|t| t.results[si].hops as u64).collect();
                let nodes: Tally = trials
                    .iter()
                    .map(|t| t.results[si].hops as u64 + 1)
                    .collect();
                let tx: Tally = trials
                    .iter()
                    .map(|t| t.results[si].transmissions as u64)
                    .collect();
                let ok: Tally = trials
                    .iter()
                    .map(|t| t.results[si].success as u64)
                    .collect();
                let theory = match scheme {
                    Scheme::Coded => Theory::new(
                        FormulaId::CodedNodes,
                        analysis::expected_nodes_coded_ceil(m, slots),
                    ),
                    Scheme::Uncoded => {
                        let (lo, hi) = analysis::uncoded_expected_nodes_bounds(m, slots)?;
                        Theory {
                            formula: FormulaId::UncodedNodes,
                            value: lo,
                            upper: Some(hi),
                        }
                    }
                };
                let base = |metric: &str, e: Estimate| {
                    ReportPoint::new(label.clone(), metric, e)
                        .scheme(scheme)
                        .direction(*dir)
                        .params(Some(n), Some(m), Some(slots), None)
                };
                report.points.push(base("hops", hops.estimate()));
                let mut nodes_point = base("nodes", nodes.estimate());
                if config.routing == Routing::Reactive {
                    nodes_point = nodes_point.theory(theory);
                }
                report.points.push(nodes_point);
                report.points.push(base("transmissions", tx.estimate()));
                report.points.push(base("success_rate", ok.estimate()));
            }
            if config.trial_log {
                for t in &trials {
                    for r in &t.results {
                        report.trial_log.push(trial_log_row(t.seed, n, m, slots, r));
                    }
                }
            }
        }
    }
    hop_checks(&mut report);
    Ok(finish(report, started))
}

fn hop_checks(report: &mut ExperimentReport) {
    let config = &report.config;
    let mut checks = Vec::new();
    let all_ok = report
        .points
        .iter()
        .filter(|p| p.metric == "success_rate")
        .all(|p| p.estimate.mean == 1.0);
    checks.push(Check::new(
        "retrievals_succeed",
        all_ok,
        "every retrieval decoded",
    ));
    if config.routing == Routing::Reactive
        && config.n == 1000
        && config.m == 100
        && config.slot_values.contains(&25)
    {
        let at25 = |p: &ReportPoint| p.slots == Some(25);
        if let Some(p) = report.point("coded", "hops", at25) {
            checks.push(Check::new(
                "coded_m25_under_5_hops",
                p.estimate.mean < 5.0,
                format!("mean {:.4}", p.estimate.mean),
            ));
        }
        if let Some(p) = report.point("uncoded", "hops", at25) {
            checks.push(Check::new(
                "uncoded_m25_around_20_hops",
                (17.0..=23.0).contains(&p.estimate.mean),
                format!("mean {:.4}, accepted [17, 23]", p.estimate.mean),
            ));
        }
    }
    // Directions: pairwise within two combined standard errors, per M.
    for &slots in &config.slot_values {
        let dirs: Vec<&ReportPoint> = report
            .points
            .iter()
            .filter(|p| p.metric == "hops" && p.slots == Some(slots) && p.direction.is_some())
            .collect();
        if dirs.len() < 2 {
            continue;
        }
        let mut worst: f64 = 0.0;
        for (i, a) in dirs.iter().enumerate() {
            for b in &dirs[i + 1..] {
                let se = (a.estimate.se.powi(2) + b.estimate.se.powi(2)).sqrt();
                let z = if se > 0.0 {
                    (a.estimate.mean - b.estimate.mean).abs() / se
                } else if a.estimate.mean == b.estimate.mean {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
            }
        }
        checks.push(Check::new(
            format!("directions_agree_M{slots}"),
            worst <= 2.0,
            format!("largest pairwise |difference| / se = {worst:.3}"),
        ));
    }
    report.checks.extend(checks);
}

// ---------------------------------------------------------------------------
// Hit probability.

/// All-contents hit probability against the number of cached files `l`
/// accessed through `u = l / M` nodes, with fresh placement per trial.
pub fn run_hit_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::Hit)?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    let m = config.m;
    let mut point_index = 0u64;
    for &slots in &config.slot_values {
        let skipped: Vec<String> = config
            .l_values
            .iter()
            .filter(|&&l| l % slots != 0)
            .map(usize::to_string)
            .collect();
        if !skipped.is_empty() {
            report.warnings.push(format!(
                "M={slots}: skipping l={} (not multiples of M)",
                skipped.join(",")
            ));
        }
        for &l in &config.l_values {
            if l % slots != 0 {
                continue;
            }
            let u = l / slots;
            for &scheme in &config.schemes {
                let pi = point_index;
                point_index += 1;
                let hits = par_trials(config.trials, |t| {
                    let seed = derive_seed(&[config.seed, ExperimentKind::Hit.id(), pi, t as u64]);
                    let mut rng = rng_from_seed(seed);
                    Ok(match scheme {
                        Scheme::Coded => {
                            coded_nodes_full_rank(m, slots, u, config.independence, &mut rng)?
                        }
                        Scheme::Uncoded => uncoded_covers(m, slots, u, &mut rng),
                    })
                })?;
                let tally: Tally = hits.iter().map(|&h| h as u64).collect();
                let theory = match scheme {
                    Scheme::Coded => {
                        Theory::new(FormulaId::CodedHit, analysis::coded_hit_probability(l, m))
                    }
                    Scheme::Uncoded => Theory::new(
                        FormulaId::UncodedHit,
                        analysis::uncoded_hit_probability(m, slots, u)?,
                    ),
                };
                report.points.push(
                    ReportPoint::new(scheme.to_string(), "hit_probability", tally.estimate())
                        .scheme(scheme)
                        .params(None, Some(m), Some(slots), Some(l))
                        .theory(theory),
                );
            }
        }
    }
    hit_checks(&mut report);
    Ok(finish(report, started))
}

/// Whether `u` coded nodes of `M` slots jointly span `F_2^m`.
fn coded_nodes_full_rank(
    m: usize,
    slots: usize,
    u: usize,
    independence: bool,
    rng: &mut SimRng,
) -> Result<bool> {
    let mut basis = EchelonBasis::new(m);
    for _ in 0..u {
        let mut own = independence.then(|| EchelonBasis::new(m));
        let mut placed = 0;
        while placed < slots {
            let v = draw_encoding_vector(m, rng)?;
            if let Some(b) = own.as_mut() {
                if !b.insert(&v)? {
                    continue;
                }
            }
            placed += 1;
            basis.insert(&v)?;
        }
        if basis.is_full() {
            return Ok(true);
        }
    }
    Ok(basis.is_full())
}

fn hit_checks(report: &mut ExperimentReport) {
    let m = report.config.m;
    let below: Vec<&ReportPoint> = report
        .points
        .iter()
        .filter(|p| p.scheme == Some(Scheme::Coded) && p.l.is_some_and(|l| l < m))
        .collect();
    if !below.is_empty() {
        let zero = below.iter().all(|p| p.estimate.mean == 0.0);
        report.checks.push(Check::new(
            "coded_zero_below_m",
            zero,
            format!("{} points with l < m", below.len()),
        ));
    }
    for scheme in [Scheme::Coded, Scheme::Uncoded] {
        let pts: Vec<&ReportPoint> = report
            .points
            .iter()
            .filter(|p| p.scheme == Some(scheme))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let misses: Vec<String> = pts
            .iter()
            .filter(|p| {
                let t = p.theory.expect("hit points carry theory");
                !within_binomial_sigma(p.estimate.mean, t.value, p.estimate.trials, 3.0)
            })
            .map(|p| format!("M={} l={}", p.slots.unwrap_or(0), p.l.unwrap_or(0)))
            .collect();
        report.checks.push(Check::new(
            format!("{scheme}_matches_theory_3sigma"),
            misses.is_empty(),
            if misses.is_empty() {
                format!("{} points", pts.len())
            } else {
                format!("outside 3 sigma at {}", misses.join(" "))
            },
        ));
    }
}

// ---------------------------------------------------------------------------
// Security.

/// (a) encoded-bit frequencies from skewed contents against `m`; (b) key
/// uniqueness and end-to-end decoding on a coded network; (c) bit statistics
/// of last-hop payloads as seen by an observer without keys.
pub fn run_security_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::Security)?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    let q = config.q;
    let exp = ExperimentKind::Security.id();

    // (a)
    let mut deviations = Vec::new();
    for (pi, &m) in config.m_sweep.iter().enumerate() {
        let p = vec![config.skew; m];
        let ones = par_trials(config.trials, |t| {
            let seed = derive_seed(&[config.seed, exp, pi as u64, t as u64]);
            let mut rng = rng_from_seed(seed);
            let store = ContentStore::skewed(q, &p, &mut rng)?;
            let v = draw_encoding_vector(m, &mut rng)?;
            Ok(crate::coding::encode(&v, &store)?.payload.count_ones() as u64)
        })?;
        let tally: Tally = ones.iter().copied().collect();
        let freq = tally.estimate_scaled(q as f64);
        let predicted = 1.0 - analysis::coded_bit_zero_probability(&p)?;
        let dev: Tally = ones.iter().map(|&o| (2 * o).abs_diff(q as u64)).collect();
        let dev = dev.estimate_scaled(2.0 * q as f64);
        deviations.push((m, freq, predicted));
        let params = |pt: ReportPoint| pt.scheme(Scheme::Coded).params(None, Some(m), None, None);
        report.points.push(
            params(ReportPoint::new("skewed", "one_frequency", freq))
                .theory(Theory::new(FormulaId::BitZero, predicted)),
        );
        report
            .points
            .push(params(ReportPoint::new("skewed", "abs_deviation", dev)));
    }
    let misses: Vec<String> = deviations
        .iter()
        .filter(|(_, f, p)| (f.mean - p).abs() > 3.0 * f.se.max(1e-12))
        .map(|(m, f, p)| format!("m={m} observed {:.5} predicted {p:.5}", f.mean))
        .collect();
    report.checks.push(Check::new(
        "bit_frequency_3sigma",
        misses.is_empty(),
        if misses.is_empty() {
            "all m".to_string()
        } else {
            misses.join("; ")
        },
    ));
    let mut monotone = true;
    for w in deviations.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        let (da, db) = ((a.mean - 0.5).abs(), (b.mean - 0.5).abs());
        if db > da + 3.0 * (a.se.powi(2) + b.se.powi(2)).sqrt() {
            monotone = false;
        }
    }
    report.checks.push(Check::new(
        "deviation_shrinks_with_m",
        monotone,
        "|freq - 0.5| non-increasing within 3 combined se",
    ));

    // (b) and (c)
    let slots = config.slot_values[0];
    let m = config.m;
    let net_seed = derive_seed(&[config.seed, exp, 1000]);
    let topo = build_topology(
        config.n,
        config.c1,
        config.delta,
        derive_seed(&[net_seed, 1]),
    )?;
    let store = ContentStore::random(m, q, &mut rng_from_seed(derive_seed(&[net_seed, 2])))?;
    let placement = PlacementConfig::coded(m, slots, derive_seed(&[net_seed, 3]))
        .with_independence(config.independence);
    let caches = place_all(&placement, &store, config.n)?;
    let regime = placement.secrecy_regime();
    report.points.push(
        ReportPoint::new(
            "network",
            "secrecy_regime",
            Estimate::exact(regime as u8 as f64),
        )
        .scheme(Scheme::Coded)
        .params(Some(config.n), Some(m), Some(slots), None),
    );
    report.checks.push(Check::new(
        "secrecy_regime",
        regime,
        format!("m={m} < 2^M with M={slots}"),
    ));

    struct Request {
        requester: usize,
        target: usize,
        success: bool,
        key: Option<Vec<u8>>,
        observed: Option<BitVector>,
    }
    let requests = par_trials(config.trials, |t| {
        let seed = derive_seed(&[config.seed, exp, 2000, t as u64]);
        let mut rng = rng_from_seed(seed);
        let requester = rng.gen_range(0..config.n);
        let target = rng.gen_range(1..=m);
        let direction = Direction::random(&mut rng);
        let result = reactive_walk(
            &topo,
            &caches,
            &store,
            requester,
            direction,
            Mode::Single(target),
        )?;
        let key = build_key(&caches[requester], target)?;
        let plan = reactive_plan(&topo, &caches, &store, requester, direction, target)?;
        let observed = match &plan {
            Some(p) if !key.v_req.is_zero() => Some(p.relay(&caches)?),
            _ => None,
        };
        Ok(Request {
            requester,
            target,
            success: result.success,
            key: (!key.v_req.is_zero()).then(|| key.key_payload.to_bytes()),
            observed,
        })
    })?;

    let ok: Tally = requests.iter().map(|r| r.success as u64).collect();
    report.points.push(
        ReportPoint::new("network", "decode_success", ok.estimate())
            .scheme(Scheme::Coded)
            .params(Some(config.n), Some(m), Some(slots), None),
    );
    report.checks.push(Check::new(
        "end_to_end_decoding",
        ok.sum == ok.count as u128,
        format!("{} of {} retrievals decoded", ok.sum, ok.count),
    ));

    // Identical (requester, target) pairs reuse one key; only distinct
    // requests that need network material are compared.
    let mut distinct = HashSet::new();
    let mut keys = HashSet::new();
    let mut collisions = 0u64;
    for r in &requests {
        let Some(k) = &r.key else { continue };
        if distinct.insert((r.requester, r.target)) && !keys.insert(k.clone()) {
            collisions += 1;
        }
    }
    let pairs = (distinct.len() as f64) * (distinct.len() as f64 - 1.0) / 2.0;
    let expected = pairs * (0.5f64).powi(q as i32);
    report.points.push(
        ReportPoint::new(
            "network",
            "key_collisions",
            Estimate::exact(collisions as f64),
        )
        .scheme(Scheme::Coded)
        .params(Some(config.n), Some(m), Some(slots), None),
    );
    report.points.push(
        ReportPoint::new(
            "network",
            "key_collision_rate",
            Estimate::exact(if pairs > 0.0 {
                collisions as f64 / pairs
            } else {
                0.0
            }),
        )
        .scheme(Scheme::Coded)
        .params(Some(config.n), Some(m), Some(slots), None),
    );
    report.checks.push(Check::new(
        "keys_unique",
        collisions == 0 || expected >= 1.0,
        format!(
            "{collisions} collisions among {} distinct requests, expected {expected:.3e}",
            distinct.len()
        ),
    ));

    let observed: Vec<&BitVector> = requests
        .iter()
        .filter_map(|r| r.observed.as_ref())
        .collect();
    push_observer_stats(&mut report, "last_hop", &observed, config.n, m, slots);

    // Zero target content: the last-hop payload is the key itself.
    let mut payloads: Vec<BitVector> = store.contents().iter().map(|c| c.payload.clone()).collect();
    payloads[0] = BitVector::zeros(q);
    let zero_store = ContentStore::new(q, payloads)?;
    let zero_caches = place_all(&placement, &zero_store, config.n)?;
    let zero_observed = par_trials(config.trials, |t| {
        let seed = derive_seed(&[config.seed, exp, 3000, t as u64]);
        let mut rng = rng_from_seed(seed);
        let requester = rng.gen_range(0..config.n);
        let direction = Direction::random(&mut rng);
        let key = build_key(&zero_caches[requester], 1)?;
        if key.v_req.is_zero() {
            return Ok(None);
        }
        let plan = reactive_plan(&topo, &zero_caches, &zero_store, requester, direction, 1)?;
        plan.map(|p| {
            let s = p.relay(&zero_caches)?;
            Ok((s.xor(&key.key_payload).is_zero(), s))
        })
        .transpose()
    })?;
    let zero_observed: Vec<(bool, BitVector)> = zero_observed.into_iter().flatten().collect();
    let equals_key = zero_observed.iter().all(|(eq, _)| *eq);
    report.checks.push(Check::new(
        "zero_target_payload_is_key",
        equals_key,
        format!("{} requests", zero_observed.len()),
    ));
    let refs: Vec<&BitVector> = zero_observed.iter().map(|(_, s)| s).collect();
    push_observer_stats(&mut report, "zero_target", &refs, config.n, m, slots);

    Ok(finish(report, started))
}

/// Bit one-frequency and nibble-histogram total variation distance from
/// uniform over the observed payloads.
fn push_observer_stats(
    report: &mut ExperimentReport,
    series: &str,
    observed: &[&BitVector],
    n: usize,
    m: usize,
    slots: usize,
) {
    let bits: u64 = observed.iter().map(|s| s.len() as u64).sum();
    let ones: u64 = observed.iter().map(|s| s.count_ones() as u64).sum();
    let mut hist = [0u64; 16];
    for s in observed {
        for byte in s.to_bytes() {
            hist[(byte >> 4) as usize] += 1;
            hist[(byte & 0xF) as usize] += 1;
        }
    }
    let total: u64 = hist.iter().sum();
    let tv = if total == 0 {
        f64::NAN
    } else {
        0.5 * hist
            .iter()
            .map(|&h| (h as f64 / total as f64 - 1.0 / 16.0).abs())
            .sum::<f64>()
    };
    let freq = if bits == 0 {
        f64::NAN
    } else {
        ones as f64 / bits as f64
    };
    let se = if bits == 0 {
        f64::NAN
    } else {
        (0.25 / bits as f64).sqrt()
    };
    let params = |p: ReportPoint| {
        p.scheme(Scheme::Coded)
            .params(Some(n), Some(m), Some(slots), None)
    };
    report.points.push(params(ReportPoint::new(
        series,
        "one_frequency",
        Estimate {
            mean: freq,
            se,
            trials: observed.len() as u64,
        },
    )));
    report.points.push(params(ReportPoint::new(
        series,
        "nibble_tv_distance",
        Estimate {
            mean: tv,
            se: 0.0,
            trials: observed.len() as u64,
        },
    )));
    report.checks.push(Check::new(
        format!("{series}_bits_uniform"),
        bits > 0 && (freq - 0.5).abs() <= 3.0 * se,
        format!("one-frequency {freq:.5} over {bits} bits"),
    ));
}

// ---------------------------------------------------------------------------
// Update.

/// Builds a coded network, records decoding gains for one content at sampled
/// requesters, replaces that content by one broadcast, and re-decodes with
/// the recorded gains.
pub fn run_update_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::Update)?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    let (n, m, q) = (config.n, config.m, config.q);
    let exp = ExperimentKind::Update.id();
    for (pi, &slots) in config.slot_values.iter().enumerate() {
        let seed = derive_seed(&[config.seed, exp, pi as u64]);
        let mut rng = rng_from_seed(derive_seed(&[seed, 6]));
        let topo = build_topology(n, config.c1, config.delta, derive_seed(&[seed, 1]))?;
        let mut store = ContentStore::random(m, q, &mut rng_from_seed(derive_seed(&[seed, 2])))?;
        let placement = PlacementConfig::coded(m, slots, derive_seed(&[seed, 3]))
            .with_independence(config.independence);
        let mut caches = place_all(&placement, &store, n)?;
        let k = rng.gen_range(1..=m);
        let new_payload = BitVector::random(q, &mut rng);
        let scramble_seed: u64 = rng.gen();

        let sampled = config.trials.min(n);
        let requesters: Vec<usize> = index::sample(&mut rng, n, sampled).into_vec();
        let plans: Vec<Option<DecodePlan>> = requesters
            .par_iter()
            .enumerate()
            .map(|(t, &r)| {
                let d = Direction::random(&mut rng_from_seed(derive_seed(&[seed, 7, t as u64])));
                reactive_plan(&topo, &caches, &store, r, d, k)
            })
            .collect::<Result<_>>()?;
        let before = caches.clone();
        let old_payload = store.payload(k)?.clone();
        let update = cache_update(&mut caches, &mut store, k, &new_payload, scramble_seed)?;

        let outcomes: Vec<bool> = plans
            .par_iter()
            .map(|plan| {
                let Some(plan) = plan else { return Ok(false) };
                let got = plan.execute(&caches)?;
                Ok(got == update.scrambled && descramble(&got, scramble_seed) == new_payload)
            })
            .collect::<Result<_>>()?;
        let success: Tally = outcomes.iter().map(|&b| b as u64).collect();

        let broadcast = old_payload.xor(&update.scrambled);
        let mut untouched_identical = true;
        let mut touched_exact = true;
        for (a, b) in before.iter().zip(&caches) {
            let (Slots::Coded(sa), Slots::Coded(sb)) = (&a.slots, &b.slots) else {
                untouched_identical = false;
                continue;
            };
            for (x, y) in sa.iter().zip(sb) {
                if x.vector.get(k - 1) {
                    touched_exact &= y.payload == x.payload.xor(&broadcast) && y.vector == x.vector;
                } else {
                    untouched_identical &= x == y;
                }
            }
        }
        let frac = update.slots_modified as f64 / update.slots_total as f64;
        let frac_se = (0.25 / update.slots_total as f64).sqrt();
        let params = |p: ReportPoint| {
            p.scheme(Scheme::Coded)
                .params(Some(n), Some(m), Some(slots), None)
        };
        report.points.push(params(ReportPoint::new(
            "update",
            "success_rate",
            success.estimate(),
        )));
        report.points.push(params(ReportPoint::new(
            "update",
            "broadcast_bits",
            Estimate::exact(update.broadcast_bits as f64),
        )));
        report.points.push(params(ReportPoint::new(
            "update",
            "broadcasts",
            Estimate::exact(update.broadcasts as f64),
        )));
        report.points.push(params(ReportPoint::new(
            "update",
            "modified_fraction",
            Estimate {
                mean: frac,
                se: frac_se,
                trials: update.slots_total as u64,
            },
        )));

        let tag = format!("M{slots}");
        report.checks.push(Check::new(
            format!("redecode_all_{tag}"),
            success.sum == success.count as u128 && success.count > 0,
            format!("{} of {} requesters", success.sum, success.count),
        ));
        report.checks.push(Check::new(
            format!("single_q_bit_broadcast_{tag}"),
            update.broadcasts == 1 && update.broadcast_bits == q,
            format!(
                "{} broadcast(s) of {} bits",
                update.broadcasts, update.broadcast_bits
            ),
        ));
        report.checks.push(Check::new(
            format!("untouched_slots_identical_{tag}"),
            untouched_identical && touched_exact,
            "slots without the content unchanged; slots with it absorb exactly the broadcast",
        ));
        report.checks.push(Check::new(
            format!("modified_fraction_half_{tag}"),
            (frac - 0.5).abs() <= 3.0 * frac_se,
            format!(
                "{} of {} slots ({frac:.5})",
                update.slots_modified, update.slots_total
            ),
        ));
    }
    Ok(finish(report, started))
}

// ---------------------------------------------------------------------------
// Capacity trend.

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Reactive node counts and proactive transmissions over a sweep of `m` at
/// fixed `M`, converted to per-node throughput.
pub fn run_capacity_trend(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::CapacityTrend)?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    let n = config.n;
    let slots = config.slot_values[0];
    if config.slot_values.len() > 1 {
        report.warnings.push(format!(
            "capacity trend uses only the first M value ({slots})"
        ));
    }
    let exp = ExperimentKind::CapacityTrend.id();
    let mut nodes_by_scheme: Vec<(Scheme, Vec<(f64, f64)>)> = Vec::new();
    let mut point_index = 0u64;
    for &scheme in &config.schemes {
        let mut curve = Vec::new();
        for &m in &config.m_sweep {
            let pi = point_index;
            point_index += 1;
            let trials = par_trials(config.trials, |t| {
                let seed = derive_seed(&[config.seed, exp, pi, t as u64]);
                let net = trial_network(config, scheme, m, slots, seed)?;
                let caches = LazyPlacement::new(net.placement, &net.store, n)?;
                let d = trial_direction(config, seed);
                let reactive = reactive_walk(
                    &net.topo,
                    &caches,
                    &net.store,
                    net.requester,
                    d,
                    Mode::AllContents,
                )?;
                let plan = plan_local_groups(&net.topo, m, slots, config.c4)?;
                let proactive = proactive_gather(
                    &net.topo,
                    &plan,
                    &caches,
                    &net.store,
                    net.requester,
                    Mode::AllContents,
                )?;
                Ok((reactive, proactive))
            })?;
            let nodes: Tally = trials.iter().map(|(r, _)| r.hops as u64 + 1).collect();
            let ptx: Tally = trials.iter().map(|(_, p)| p.transmissions as u64).collect();
            let pok: Tally = trials.iter().map(|(_, p)| p.success as u64).collect();
            let rok: Tally = trials.iter().map(|(r, _)| r.success as u64).collect();
            let e_nodes = nodes.estimate();
            curve.push((m as f64, e_nodes.mean));

            let c2 = (2.0 + config.delta) / config.c1;
            let throughput = analysis::throughput_estimate(
                config.w,
                config.q as f64,
                n,
                e_nodes.mean,
                config.c1,
                c2,
            );
            let law = match scheme {
                Scheme::Coded => FormulaId::CapacityCoded,
                Scheme::Uncoded => FormulaId::CapacityUncoded,
            };
            let node_theory = match scheme {
                Scheme::Coded => Theory::new(
                    FormulaId::CodedNodes,
                    analysis::expected_nodes_coded_ceil(m, slots),
                ),
                Scheme::Uncoded => {
                    let (lo, hi) = analysis::uncoded_expected_nodes_bounds(m, slots)?;
                    Theory {
                        formula: FormulaId::UncodedNodes,
                        value: lo,
                        upper: Some(hi),
                    }
                }
            };
            let base = |metric: &str, e: Estimate| {
                ReportPoint::new(scheme.to_string(), metric, e)
                    .scheme(scheme)
                    .params(Some(n), Some(m), Some(slots), None)
            };
            report
                .points
                .push(base("nodes", e_nodes).theory(node_theory));
            report
                .points
                .push(base("reactive_success_rate", rok.estimate()));
            report
                .points
                .push(
                    base("throughput", Estimate::exact(throughput)).theory(Theory::new(
                        law,
                        analysis::capacity_scaling(scheme, n, m, slots),
                    )),
                );
            report
                .points
                .push(base("proactive_transmissions", ptx.estimate()));
            report
                .points
                .push(base("proactive_success_rate", pok.estimate()));
        }
        nodes_by_scheme.push((scheme, curve));
    }
    capacity_checks(&mut report, &nodes_by_scheme, slots);
    Ok(finish(report, started))
}

fn capacity_checks(
    report: &mut ExperimentReport,
    curves: &[(Scheme, Vec<(f64, f64)>)],
    slots: usize,
) {
    let find = |s: Scheme| curves.iter().find(|(x, _)| *x == s).map(|(_, c)| c.clone());
    let coded = find(Scheme::Coded);
    let uncoded = find(Scheme::Uncoded);
    if let Some(c) = &coded {
        let slope = log_log_slope(c);
        report.points.push(
            ReportPoint::new("coded", "nodes_loglog_slope", Estimate::exact(slope))
                .scheme(Scheme::Coded)
                .params(Some(report.config.n), None, Some(slots), None),
        );
        report.checks.push(Check::new(
            "coded_slope_one",
            (slope - 1.0).abs() <= 0.1,
            format!("slope {slope:.4}, accepted 1 +- 0.1"),
        ));
    }
    if let Some(u) = &uncoded {
        let scaled: Vec<f64> = u
            .iter()
            .map(|&(m, e)| e / (m * m.ln() / slots as f64))
            .collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let spread = scaled
            .iter()
            .map(|s| (s / mean - 1.0).abs())
            .fold(0.0, f64::max);
        report.checks.push(Check::new(
            "uncoded_scales_m_log_m",
            spread <= 0.15,
            format!(
                "E[N] / (m ln m / M) within {:.2}% of its mean",
                100.0 * spread
            ),
        ));
    }
    if let (Some(c), Some(u)) = (&coded, &uncoded) {
        let ratios: Vec<(f64, f64)> = c.iter().zip(u).map(|(a, b)| (a.0, b.1 / a.1)).collect();
        for &(m, r) in &ratios {
            report.points.push(
                ReportPoint::new("ratio", "uncoded_over_coded_nodes", Estimate::exact(r)).params(
                    Some(report.config.n),
                    Some(m as usize),
                    Some(slots),
                    None,
                ),
            );
        }
        let increasing = ratios.windows(2).all(|w| w[1].1 > w[0].1);
        let (m0, r0) = ratios[0];
        let worst = ratios
            .iter()
            .map(|&(m, r)| ((r / r0) / (m.ln() / m0.ln()) - 1.0).abs())
            .fold(0.0, f64::max);
        report.checks.push(Check::new(
            "ratio_grows_like_log_m",
            increasing && worst <= 0.2,
            format!(
                "monotone={increasing}, worst normalized deviation from ln m {:.2}%",
                100.0 * worst
            ),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(parse_usize_list("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(
            parse_usize_list("90..96:2,100").unwrap(),
            vec![90, 92, 94, 96, 100]
        );
        assert_eq!(parse_usize_list("3..5").unwrap(), vec![3, 4, 5]);
        assert!(parse_usize_list("5..3").is_err());
        assert!(parse_usize_list("1..4:0").is_err());
        assert!(parse_usize_list("x").is_err());
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = ExperimentConfig::new(ExperimentKind::Hit);
        c.set("M", "4,8").unwrap();
        c.set("direction", "E,N").unwrap();
        c.set("scheme", "uncoded").unwrap();
        c.set("independence", "yes").unwrap();
        let mut d = ExperimentConfig::new(ExperimentKind::Hit);
        d.apply_text(&c.to_text(), Path::new("cfg")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn config_errors() {
        let mut c = ExperimentConfig::new(ExperimentKind::Hops);
        assert!(c.set("bogus", "1").unwrap_err().is_config());
        assert!(c.set("n", "abc").unwrap_err().is_config());
        c.set("M", "150").unwrap();
        assert!(c.validate().unwrap_err().is_config());
        c.set("scheme", "coded").unwrap();
        assert!(c.validate().is_ok());
        c.set("trials", "0").unwrap();
        assert!(c.validate().is_err());
        let mut h = ExperimentConfig::new(ExperimentKind::Hops);
        assert!(h.apply_text("experiment=hit\n", Path::new("f")).is_err());
        assert!(h.apply_text("n 5\n", Path::new("f")).is_err());
    }

    #[test]
    fn tally_matches_direct_formulas() {
        let xs = [3u64, 5, 7, 7, 10];
        let t: Tally = xs.iter().copied().collect();
        let e = t.estimate();
        let mean = 6.4;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((e.mean - mean).abs() < 1e-12);
        assert!((e.se - (var / 5.0).sqrt()).abs() < 1e-12);
        let mut a: Tally = xs[..2].iter().copied().collect();
        a.merge(&xs[2..].iter().copied().collect());
        assert_eq!(a, t);
    }

    #[test]
    fn binomial_sigma_rule() {
        assert!(within_binomial_sigma(0.0, 0.0, 100, 3.0));
        assert!(!within_binomial_sigma(0.01, 0.0, 100, 3.0));
        assert!(within_binomial_sigma(0.51, 0.5, 10_000, 3.0));
        assert!(!within_binomial_sigma(0.51, 0.5, 100_000, 3.0));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(1.5)))
            .collect();
        assert!((log_log_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_and_rank_helpers() {
        let mut rng = rng_from_seed(3);
        assert!(uncoded_covers(5, 5, 1, &mut rng));
        assert!(!uncoded_covers(10, 3, 3, &mut rng));
        assert_eq!(random_rank(0, 8, &mut rng), 0);
        assert!(random_rank(40, 8, &mut rng) <= 8);
        assert!(spanning_draws(8, &mut rng) >= 8);
    }
}
