//! Command-line front end for the experiment harness.
//!
//! Settings are layered: experiment defaults, then `--config FILE`
//! (`key=value` lines), then flags. Exit status: 0 success, 1 runtime
//! failure, 2 configuration error, 3 a `--check` threshold failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codedcache::experiments::{self, ExperimentConfig, ExperimentKind};
use codedcache::Error;

#[derive(Parser, Debug)]
#[command(
    name = "codedcache",
    version,
    about = "Coded caching experiments for wireless ad hoc networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean hops to retrieve every content, coded vs uncoded.
    Hops(Settings),
    /// Hit probability against the number of cached files accessed.
    Hit(Settings),
    /// Bit statistics, key uniqueness and end-to-end decoding.
    Security(Settings),
    /// Broadcast cache update and re-decoding with old gains.
    Update(Settings),
    /// Node counts and throughput over a sweep of content counts.
    #[command(name = "capacity-trend")]
    CapacityTrend(Settings),
}

#[derive(Args, Debug, Default)]
#[command(rename_all = "verbatim")]
struct Settings {
    /// key=value file applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with status 3 if any acceptance check fails.
    #[arg(long)]
    check: bool,

    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    /// Cache slots per node; repeatable, lists and ranges (`5..50:5`) allowed.
    #[arg(long = "M")]
    slots: Vec<String>,
    /// Cached files accessed (hit experiment); repeatable.
    #[arg(long)]
    l: Vec<String>,
    /// Content size in bits.
    #[arg(long = "Q")]
    q: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// coded, uncoded, both, or a list.
    #[arg(long)]
    scheme: Vec<String>,
    /// reactive or proactive.
    #[arg(long)]
    routing: Option<String>,
    /// E, W, S, N, all, or a list; repeatable.
    #[arg(long)]
    direction: Vec<String>,
    /// Redraw coded vectors until each node's slots are independent.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    independence: Option<String>,
    #[arg(long)]
    c1: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    c4: Option<String>,
    /// Link rate in bits per transmission slot.
    #[arg(long = "W")]
    w: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<String>,
    /// Content counts for security and capacity-trend sweeps; repeatable.
    #[arg(long = "m-sweep")]
    m_sweep: Vec<String>,
    /// Probability of a one in each bit of skewed contents.
    #[arg(long)]
    skew: Option<String>,
    /// Also write per-retrieval rows to `<out>.trials.csv`.
    #[arg(long = "trial-log")]
    trial_log: bool,
    /// Also write a gnuplot script to `<out>.gp`.
    #[arg(long)]
    gnuplot: bool,
}

impl Settings {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut one = |key: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((key, v.clone()));
            }
        };
        one("n", &self.n);
        one("m", &self.m);
        one("Q", &self.q);
        one("trials", &self.trials);
        one("seed", &self.seed);
        one("routing", &self.routing);
        one("independence", &self.independence);
        one("c1", &self.c1);
        one("delta", &self.delta);
        one("c4", &self.c4);
        one("W", &self.w);
        one("out", &self.out);
        one("skew", &self.skew);
        let lists = [
            ("M", &self.slots),
            ("l", &self.l),
            ("scheme", &self.scheme),
            ("direction", &self.direction),
            ("m_sweep", &self.m_sweep),
        ];
        for (key, values) in lists {
            if !values.is_empty() {
                out.push((key, values.join(",")));
            }
        }
        if self.trial_log {
            out.push(("trial_log", "true".into()));
        }
        if self.gnuplot {
            out.push(("gnuplot", "true".into()));
        }
        out
    }
}

fn build_config(kind: ExperimentKind, s: &Settings) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::new(kind);
    if let Some(path) = &s.config {
        config.apply_file(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?;
    }
    for (key, value) in s.overrides() {
        config.set(key, &value)?;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, settings) = match &cli.command {
        Command::Hops(s) => (ExperimentKind::Hops, s),
        Command::Hit(s) => (ExperimentKind::Hit, s),
        Command::Security(s) => (ExperimentKind::Security, s),
        Command::Update(s) => (ExperimentKind::Update, s),
        Command::CapacityTrend(s) => (ExperimentKind::CapacityTrend, s),
    };
    let config = match build_config(kind, settings) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match experiments::run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_config() { 2 } else { 1 });
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    match experiments::write_report(&report) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("duration {:.2}s", report.duration_secs);
    if settings.check && !report.all_checks_pass() {
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
