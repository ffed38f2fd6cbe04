//! Time-series CSV and summary documents.
//!
//! Column names use 1-based train and carriage indices: `c{i}_{j}_x_m` for
//! carriage `j` of train `i`, `p{i}_xtilde_m` for train `i` against its
//! predecessor. Numbers carry 17 significant digits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Representation, ScenarioConfig};
use crate::monitor::{Monitor, MonitorSpec, SummaryReport};
use crate::simulator::{CarriageSample, PairSample, Sample, SampleSink, SaturationLog};

pub const CARRIAGE_COLUMNS: [&str; 10] =
    ["x_m", "v_mps", "w_mps2", "tau_N", "u_mps3", "f_eff_Nps", "f_eff_hat_Nps", "e_x_m", "e_v_mps", "e_w_mps2"];
pub const PAIR_COLUMNS: [&str; 4] = ["eps_m", "xtilde_m", "vtilde_mps", "qtilde_mps"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
}

pub fn header(carriages_per_train: &[usize]) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    for (i, &m) in carriages_per_train.iter().enumerate() {
        for j in 0..m {
            h.extend(CARRIAGE_COLUMNS.iter().map(|c| format!("c{}_{}_{c}", i + 1, j + 1)));
        }
    }
    for i in 0..carriages_per_train.len() {
        h.extend(PAIR_COLUMNS.iter().map(|c| format!("p{}_{c}", i + 1)));
    }
    h
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one CSV row per recorded sample.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    row: Vec<String>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W, carriages_per_train: &[usize]) -> std::io::Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(header(carriages_per_train)).map_err(std::io::Error::other)?;
        Ok(Self { writer, row: Vec::new() })
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> SampleSink for CsvSink<W> {
    fn record(&mut self, s: &Sample) -> std::io::Result<()> {
        self.row.clear();
        self.row.push(fmt(s.t));
        for c in &s.carriages {
            self.row.extend(
                [c.x, c.v, c.w, c.tau, c.u, c.f_eff, c.f_eff_hat, c.e_x, c.e_v, c.e_w].into_iter().map(fmt),
            );
        }
        for p in &s.pairs {
            self.row.extend([p.eps, p.x_tilde, p.v_tilde, p.q_tilde].into_iter().map(fmt));
        }
        self.writer.write_record(&self.row).map_err(std::io::Error::other)
    }
}

/// Reads a time series back. Fault-state errors and auxiliary inputs are not
/// in the file and come back as zero.
pub fn read_samples<R: Read>(input: R, carriages_per_train: &[usize]) -> Result<Vec<Sample>, OutputError> {
    let mut out = Vec::new();
    for_each_sample(input, carriages_per_train, |s| out.push(s.clone()))?;
    Ok(out)
}

/// Replays a time series through a fresh monitor.
pub fn rederive_summary<R: Read>(input: R, spec: MonitorSpec) -> Result<SummaryReport, OutputError> {
    let counts = spec.carriages_per_train.clone();
    let mut monitor = Monitor::new(spec);
    for_each_sample(input, &counts, |s| monitor.observe(s))?;
    Ok(monitor.finish())
}

fn for_each_sample<R: Read>(
    input: R,
    carriages_per_train: &[usize],
    mut f: impl FnMut(&Sample),
) -> Result<(), OutputError> {
    let mut reader = csv::Reader::from_reader(input);
    let expected = header(carriages_per_train);
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(OutputError::Header { expected: expected.join(","), found: found.join(",") });
    }
    let n: usize = carriages_per_train.iter().sum();
    let mut sample = Sample {
        t: 0.0,
        carriages: vec![CarriageSample::default(); n],
        pairs: vec![PairSample::default(); carriages_per_train.len()],
    };
    let mut record = csv::StringRecord::new();
    let mut row = 0u64;
    while reader.read_record(&mut record)? {
        row += 1;
        let values: Vec<f64> = record
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| OutputError::Row { row, message: e.to_string() })?;
        sample.t = values[0];
        for (c, chunk) in values[1..1 + 10 * n].chunks_exact(10).enumerate() {
            sample.carriages[c] = CarriageSample {
                x: chunk[0],
                v: chunk[1],
                w: chunk[2],
                tau: chunk[3],
                u: chunk[4],
                f_eff: chunk[5],
                f_eff_hat: chunk[6],
                e_x: chunk[7],
                e_v: chunk[8],
                e_w: chunk[9],
                ..Default::default()
            };
        }
        for (i, chunk) in values[1 + 10 * n..].chunks_exact(4).enumerate() {
            sample.pairs[i] = PairSample { eps: chunk[0], x_tilde: chunk[1], v_tilde: chunk[2], q_tilde: chunk[3] };
        }
        f(&sample);
    }
    Ok(())
}

/// Summary document for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub noise_enabled: bool,
    pub representation: Representation,
    pub step_s: f64,
    pub duration_s: f64,
    pub record_every: usize,
    pub saturation: SaturationLog,
    pub pass: bool,
    pub summary: SummaryReport,
}

impl RunReport {
    pub fn new(
        config: &ScenarioConfig,
        representation: Representation,
        saturation: SaturationLog,
        summary: SummaryReport,
    ) -> Self {
        Self {
            scenario: config.name.clone(),
            config_hash: config.hash(),
            seed: config.noise.seed,
            noise_enabled: config.noise.enabled,
            representation,
            step_s: config.integration.step_s,
            duration_s: config.integration.duration_s,
            record_every: config.integration.record_every,
            saturation,
            pass: summary.verdicts.all_pass(),
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
