//! Scenario files, seed and strategy fan-out, and per-run data export.

mod scenario;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use scenario::{
    locate, parse_scenario, render_scenario, validate_config, validate_text, Issue, ParseError,
    ValidationReport,
};

use crate::engine::{EngineError, Metrics, RunOptions, ScenarioConfig, Simulation, Strategy};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{} is invalid:\n{report}", path.display())]
    Invalid { path: PathBuf, report: ValidationReport },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CliError {
    /// 1 for anything wrong with the inputs, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Invalid { .. } | Self::Manifest(_) => 1,
            Self::Io { .. } | Self::Csv { .. } | Self::Engine(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Seeds given as `7`, `1,4,9` or `1-10`, or a mix of these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed `{t}`: {e}"));
        let mut seeds = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (num(a)?, num(b)?);
                    if b < a {
                        return Err(format!("empty seed range `{part}`"));
                    }
                    seeds.extend(a..=b);
                }
                None => seeds.push(num(part)?),
            }
        }
        if seeds.is_empty() {
            return Err("no seeds given".into());
        }
        Ok(Self(seeds))
    }
}

/// What to run and where to put the results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub trace: bool,
    pub full_horizon: bool,
    /// Interference event probabilities to sweep; the scenario's own when empty.
    pub event_rates: Vec<f64>,
}

impl RunManifest {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            strategies: Strategy::ALL.to_vec(),
            seeds: Vec::new(),
            out: out.into(),
            trace: false,
            full_horizon: false,
            event_rates: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.strategies.is_empty() {
            return Err(CliError::Manifest("at least one strategy is required".into()));
        }
        if let Some(r) = self.event_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(CliError::Manifest(format!("event rate {r} outside [0, 1]")));
        }
        Ok(())
    }
}

/// One simulated (event rate, strategy, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub event_rate: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub stem: String,
    pub metrics: Metrics,
}

/// Means over seeds for one strategy at one event rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub event_rate: f64,
    pub strategy: Strategy,
    pub runs: usize,
    #[serde(rename = "energy_total_J")]
    pub energy_total_j: f64,
    #[serde(rename = "energy_data_J")]
    pub energy_data_j: f64,
    #[serde(rename = "energy_cfg_J")]
    pub energy_cfg_j: f64,
    pub generated: f64,
    pub delivered: f64,
    pub lost: f64,
    pub delivery_ratio: f64,
    /// Largest round trip seen in any run.
    pub max_latency_ms: Option<f64>,
    pub latency_violations: f64,
    pub reconfigs: f64,
    pub deaths: f64,
}

pub fn compare(records: &[RunRecord]) -> Vec<ComparisonRow> {
    let mut keys: Vec<(f64, Strategy)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.event_rate, r.strategy)) {
            keys.push((r.event_rate, r.strategy));
        }
    }
    keys.into_iter()
        .map(|(rate, strategy)| {
            let group: Vec<_> = records
                .iter()
                .filter(|r| r.event_rate == rate && r.strategy == strategy)
                .map(|r| &r.metrics.summary)
                .collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&crate::engine::Summary) -> f64| group.iter().map(|s| f(s)).sum::<f64>() / n;
            let generated = mean(&|s| s.generated as f64);
            let delivered = mean(&|s| s.delivered as f64);
            ComparisonRow {
                event_rate: rate,
                strategy,
                runs: group.len(),
                energy_total_j: mean(&|s| s.energy_total_j),
                energy_data_j: mean(&|s| s.energy_data_j),
                energy_cfg_j: mean(&|s| s.energy_cfg_j),
                generated,
                delivered,
                lost: mean(&|s| s.lost as f64),
                delivery_ratio: if generated > 0.0 { delivered / generated } else { 1.0 },
                max_latency_ms: group.iter().filter_map(|s| s.latency.max_ms).reduce(f64::max),
                latency_violations: mean(&|s| s.latency.violations as f64),
                reconfigs: mean(&|s| s.reconfigs as f64),
                deaths: mean(&|s| s.deaths.len() as f64),
            }
        })
        .collect()
}

pub fn load_scenario(path: &Path) -> Result<(String, ScenarioConfig), CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg = parse_scenario(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((text, cfg))
}

/// Validation report for a scenario file; unreadable files are IO errors.
pub fn validate_file(path: &Path, seeds: &[u64]) -> Result<ValidationReport, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(validate_text(&text, seeds))
}

/// Scenario configuration for one cell of the manifest grid.
pub fn cell_config(base: &ScenarioConfig, m: &RunManifest, rate: f64, strategy: Strategy, seed: u64) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.run.strategy = strategy;
    cfg.run.seed = seed;
    cfg.interference.event_prob = rate;
    cfg.run.full_horizon |= m.full_horizon;
    cfg
}

fn write_run(out: &Path, record: &RunRecord, trace: &[String]) -> Result<(), CliError> {
    let csv_path = out.join(format!("{}.csv", record.stem));
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    record
        .metrics
        .write_csv(io::BufWriter::new(file))
        .map_err(|source| CliError::Csv { path: csv_path, source })?;
    let json_path = out.join(format!("{}.summary.json", record.stem));
    fs::write(&json_path, record.metrics.summary.to_json()).map_err(io_err(&json_path))?;
    if !trace.is_empty() {
        let trace_path = out.join(format!("{}.trace", record.stem));
        fs::write(&trace_path, trace.join("\n") + "\n").map_err(io_err(&trace_path))?;
    }
    Ok(())
}

/// Validates the scenario for every seed, runs the whole grid in parallel and
/// writes one CSV and summary per run plus `comparison.csv`.
pub fn run(m: &RunManifest) -> Result<Vec<RunRecord>, CliError> {
    m.check()?;
    let (text, base) = load_scenario(&m.scenario)?;
    let seeds = if m.seeds.is_empty() { vec![base.run.seed] } else { m.seeds.clone() };
    let rates = if m.event_rates.is_empty() {
        vec![base.interference.event_prob]
    } else {
        m.event_rates.clone()
    };
    let mut probe = base.clone();
    probe.run.full_horizon |= m.full_horizon;
    let report = ValidationReport {
        issues: validate_config(&probe, &seeds)
            .into_iter()
            .map(|finding| Issue {
                line: locate(&text, &finding.field),
                finding,
            })
            .collect(),
    };
    if !report.is_valid() {
        return Err(CliError::Invalid {
            path: m.scenario.clone(),
            report,
        });
    }
    fs::create_dir_all(&m.out).map_err(io_err(&m.out))?;

    let sweep = !m.event_rates.is_empty();
    let mut jobs = Vec::new();
    for &rate in &rates {
        for &strategy in &m.strategies {
            for &seed in &seeds {
                jobs.push((rate, strategy, seed));
            }
        }
    }
    let records = jobs
        .into_par_iter()
        .map(|(rate, strategy, seed)| {
            let cfg = cell_config(&base, m, rate, strategy, seed);
            let out = Simulation::new(&cfg, RunOptions { trace: m.trace })?.run();
            let stem = if sweep {
                format!("rate{rate}-{strategy}-seed{seed}")
            } else {
                format!("{strategy}-seed{seed}")
            };
            let record = RunRecord {
                event_rate: rate,
                strategy,
                seed,
                stem,
                metrics: out.metrics,
            };
            write_run(&m.out, &record, &out.trace)?;
            Ok(record)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let path = m.out.join("comparison.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in compare(&records) {
        w.serialize(row).map_err(|source| CliError::Csv { path: path.clone(), source })?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(records)
}
