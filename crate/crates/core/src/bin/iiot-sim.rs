use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pathrecon::cli::{self, CliError, RunManifest, SeedList};
use pathrecon::engine::Strategy;

/// Simulate PDD, PDD-CR and DistrDataFwd forwarding on an IIoT grid.
#[derive(Debug, Parser)]
#[command(name = "iiot-sim", version)]
struct Args {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Strategies to run, comma separated: pdd, pdd-cr, distr.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Seeds such as `1-10` or `1,4,9`; the scenario's seed by default.
    #[arg(long)]
    seeds: Option<SeedList>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write a per-run message trace.
    #[arg(long)]
    trace: bool,
    /// Simulate the full 2000 hours with unscaled batteries.
    #[arg(long)]
    full_horizon: bool,
    /// Check the scenario and exit.
    #[arg(long)]
    validate_only: bool,
    /// Interference event probabilities to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    event_rates: Vec<f64>,
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let seeds = args.seeds.map(|s| s.0).unwrap_or_default();

    if args.validate_only {
        return match cli::validate_file(&args.scenario, &seeds) {
            Ok(report) if report.is_valid() => {
                println!("{}: valid", args.scenario.display());
                ExitCode::SUCCESS
            }
            Ok(report) => {
                eprintln!("{}:\n{report}", args.scenario.display());
                ExitCode::from(1)
            }
            Err(e) => fail(e),
        };
    }

    let mut m = RunManifest::new(args.scenario, args.out);
    if !args.strategy.is_empty() {
        m.strategies = args.strategy;
    }
    m.seeds = seeds;
    m.trace = args.trace;
    m.full_horizon = args.full_horizon;
    m.event_rates = args.event_rates;

    match cli::run(&m) {
        Ok(records) => {
            for row in cli::compare(&records) {
                println!(
                    "rate {:<6} {:<7} runs {:>3}  energy {:>9.3} J (cfg {:>7.3})  lost {:>10.1}  delivered {:>6.2}%  violations {:>6.1}",
                    row.event_rate,
                    row.strategy,
                    row.runs,
                    row.energy_total_j,
                    row.energy_cfg_j,
                    row.lost,
                    100.0 * row.delivery_ratio,
                    row.latency_violations,
                );
            }
            println!("wrote {} runs to {}", records.len(), m.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
