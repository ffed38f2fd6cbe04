use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use platoon_core::config::{preset, ConfigError, Representation, ScenarioConfig, PRESETS};
use platoon_core::output::{CsvSink, RunReport};
use platoon_core::simulator::{run_scenario, RunOptions, SampleSink, SimError};
use rayon::prelude::*;
use serde::Serialize;

const EXIT_VERDICT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Multi-train platoon simulation with fault estimation and constrained control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(RunArgs),
    /// Check a scenario without running it.
    Validate(Source),
    /// Run several scenarios or seeds in parallel.
    Batch(BatchArgs),
    /// Print a scenario as JSON, e.g. to start a custom scenario file.
    Export(Source),
    /// List built-in presets.
    Presets,
}

#[derive(Args, Clone)]
#[group(required = false, multiple = false)]
struct Source {
    /// Scenario file (JSON).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepresentationArg {
    Composite,
    Plant,
    Both,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Composite => Representation::Composite,
            RepresentationArg::Plant => Representation::Plant,
            RepresentationArg::Both => Representation::Both,
        }
    }
}

#[derive(Args, Clone)]
struct Overrides {
    /// Disturbance seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Integration step (s).
    #[arg(long, value_name = "S")]
    step: Option<f64>,
    /// Horizon (s).
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    /// Disable the Gaussian jerk disturbance.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, value_enum)]
    representation: Option<RepresentationArg>,
    /// Stop at the first constraint violation instead of saturating.
    #[arg(long)]
    abort_on_violation: bool,
    /// Record every N-th step.
    #[arg(long, value_name = "N")]
    decimate: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            c.noise.seed = s;
        }
        if let Some(h) = self.step {
            c.integration.step_s = h;
        }
        if let Some(t) = self.duration {
            c.integration.duration_s = t;
        }
        if self.no_noise {
            c.noise.enabled = false;
        }
        if let Some(r) = self.representation {
            c.integration.representation = r.into();
        }
        if self.abort_on_violation {
            c.abort_on_violation = true;
        }
        if let Some(n) = self.decimate {
            c.integration.record_every = n;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for time series and summaries.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Exit 0 whatever the verdicts.
    #[arg(long)]
    no_verdict: bool,
}

#[derive(Args)]
struct BatchArgs {
    /// Scenario files; repeatable.
    #[arg(long = "config", value_name = "PATH")]
    configs: Vec<PathBuf>,
    /// Built-in scenarios; repeatable.
    #[arg(long = "preset", value_name = "NAME")]
    presets: Vec<String>,
    /// Seeds to run each scenario with, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "U64,...")]
    seeds: Vec<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    no_verdict: bool,
}

#[derive(Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
enum Failure {
    Config { message: String, violations: Vec<platoon_core::controller::Violation> },
    Runtime { message: String },
}

impl Failure {
    fn exit(&self) -> ExitCode {
        eprintln!("{}", serde_json::to_string_pretty(self).expect("failure serializes"));
        ExitCode::from(match self {
            Self::Config { .. } => EXIT_CONFIG,
            Self::Runtime { .. } => EXIT_RUNTIME,
        })
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config { message: e.to_string(), violations: e.violations().to_vec() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => Self::Runtime { message: other.to_string() },
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime { message: e.to_string() }
    }
}

fn load(source: &Source) -> Result<ScenarioConfig, ConfigError> {
    match (&source.config, &source.preset) {
        (Some(path), _) => ScenarioConfig::load(path),
        (None, Some(name)) => preset(name),
        (None, None) => preset(PRESETS[0]),
    }
}

fn run_label(config: &ScenarioConfig, rep: Representation) -> String {
    let rep = match rep {
        Representation::Composite => "composite",
        Representation::Plant => "plant",
        Representation::Both => "both",
    };
    let noise = if config.noise.enabled { format!("seed{}", config.noise.seed) } else { "nonoise".into() };
    format!("{}-{noise}-{rep}", config.name)
}

#[derive(Serialize)]
struct IndexEntry {
    label: String,
    scenario: String,
    seed: u64,
    representation: Representation,
    timeseries: Option<String>,
    summary: Option<String>,
    pass: Option<bool>,
    error: Option<String>,
}

/// Runs a validated scenario, writing `<label>.csv` and `<label>.summary.json` under `out`.
fn execute(config: &ScenarioConfig, out: Option<&Path>) -> Result<Vec<(String, RunReport)>, Failure> {
    config.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let counts = config.topology().map_err(|e| Failure::Runtime { message: e.to_string() })?.carriages_per_train().to_vec();
    let outcomes = run_scenario(config, RunOptions::default(), |rep| {
        Ok(match out {
            Some(dir) => {
                let file = BufWriter::new(File::create(dir.join(format!("{}.csv", run_label(config, rep))))?);
                Some(Box::new(CsvSink::new(file, &counts)?) as Box<dyn SampleSink>)
            }
            None => None,
        })
    })?;
    let mut reports = Vec::new();
    for o in outcomes {
        let label = run_label(config, o.representation);
        let report = RunReport::new(config, o.representation, o.saturation, o.summary);
        if let Some(dir) = out {
            std::fs::write(dir.join(format!("{label}.summary.json")), report.to_json())?;
        }
        reports.push((label, report));
    }
    Ok(reports)
}

fn print_report(label: &str, r: &RunReport) {
    let v = &r.summary.verdicts;
    let mark = |p: bool| if p { "PASS" } else { "FAIL" };
    println!("{label} (config {})", &r.config_hash[..12]);
    println!("  R1 {}: {}", mark(v.r1.pass), v.r1.detail);
    println!("  R2 {}: {}", mark(v.r2.pass), v.r2.detail);
    println!("  R3 {}: {}", mark(v.r3.pass), v.r3.detail);
    for p in &r.summary.pairs {
        println!(
            "  pair {}: x_tilde [{:.3}, {:.3}] m, v_tilde [{:.3}, {:.3}] m/s",
            p.pair, p.x_tilde.min, p.x_tilde.max, p.v_tilde.min, p.v_tilde.max
        );
    }
    if r.summary.event_count > 0 {
        println!("  {} constraint events, {} on q_tilde", r.summary.event_count, r.summary.q_tilde_event_count);
    }
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut config = match load(&args.source) {
        Ok(c) => c,
        Err(e) => return Failure::from(e).exit(),
    };
    args.overrides.apply(&mut config);
    match execute(&config, args.out.as_deref()) {
        Ok(reports) => {
            for (label, r) in &reports {
                print_report(label, r);
            }
            if args.no_verdict || reports.iter().all(|(_, r)| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERDICT)
            }
        }
        Err(f) => f.exit(),
    }
}

fn cmd_validate(source: Source) -> ExitCode {
    match load(&source).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => {
            println!("{}: valid (config {})", c.name, &c.hash()[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => Failure::from(e).exit(),
    }
}

fn cmd_batch(args: BatchArgs) -> ExitCode {
    let mut configs = Vec::new();
    for path in &args.configs {
        match ScenarioConfig::load(path) {
            Ok(c) => configs.push(c),
            Err(e) => return Failure::from(e).exit(),
        }
    }
    for name in &args.presets {
        match preset(name) {
            Ok(c) => configs.push(c),
            Err(e) => return Failure::from(e).exit(),
        }
    }
    if configs.is_empty() {
        configs.push(preset(PRESETS[0]).expect("built-in preset"));
    }
    let mut jobs = Vec::new();
    for base in configs {
        let mut base = base;
        args.overrides.apply(&mut base);
        if args.seeds.is_empty() {
            jobs.push(base);
        } else {
            for &s in &args.seeds {
                let mut c = base.clone();
                c.noise.seed = s;
                jobs.push(c);
            }
        }
    }
    for c in &jobs {
        if let Err(e) = c.validate() {
            return Failure::from(e).exit();
        }
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return Failure::from(e).exit();
    }
    let results: Vec<(ScenarioConfig, Result<Vec<(String, RunReport)>, Failure>)> =
        jobs.into_par_iter().map(|c| { let r = execute(&c, Some(&args.out)); (c, r) }).collect();

    let mut index = Vec::new();
    let (mut all_pass, mut runtime_error) = (true, false);
    for (c, r) in &results {
        match r {
            Ok(reports) => {
                for (label, rep) in reports {
                    print_report(label, rep);
                    all_pass &= rep.pass;
                    index.push(IndexEntry {
                        label: label.clone(),
                        scenario: c.name.clone(),
                        seed: c.noise.seed,
                        representation: rep.representation,
                        timeseries: Some(format!("{label}.csv")),
                        summary: Some(format!("{label}.summary.json")),
                        pass: Some(rep.pass),
                        error: None,
                    });
                }
            }
            Err(f) => {
                runtime_error = true;
                let message = match f {
                    Failure::Config { message, .. } | Failure::Runtime { message } => message.clone(),
                };
                eprintln!("{}: {message}", run_label(c, c.integration.representation));
                index.push(IndexEntry {
                    label: run_label(c, c.integration.representation),
                    scenario: c.name.clone(),
                    seed: c.noise.seed,
                    representation: c.integration.representation,
                    timeseries: None,
                    summary: None,
                    pass: None,
                    error: Some(message),
                });
            }
        }
    }
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    if let Err(e) = std::fs::write(args.out.join("index.json"), text) {
        return Failure::from(e).exit();
    }
    if runtime_error {
        ExitCode::from(EXIT_RUNTIME)
    } else if args.no_verdict || all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERDICT)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(s) => cmd_validate(s),
        Command::Batch(a) => cmd_batch(a),
        Command::Export(s) => match load(&s) {
            Ok(c) => {
                println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => Failure::from(e).exit(),
        },
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
    }
}
