//! Command-line runner for the memory simulation scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use afcsim::harness::{
    run_all, run_calibrate, run_echo_trace, run_g2, run_pol_sweep, run_tomography,
    run_visibility_scan, suite_hash, ExperimentConfig, RunReport,
};

#[derive(Parser)]
#[command(name = "afcsim", about = "Atomic-frequency-comb memory simulator", version)]
struct Cli {
    /// Monte Carlo seed; overrides the config file value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV/JSON outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Named parameter preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// JSON config file; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Imperfection levels matched to the published bench figures.
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Transmitted and recalled pulse trace.
    Echo,
    /// Stored efficiency vs input half-waveplate setting.
    Polsweep {
        /// Engage the polarization scrambler.
        #[arg(long)]
        scrambler: bool,
    },
    /// Fringe visibilities and fidelities for both scan bases.
    Visibility,
    /// State tomography of the six recalled targets.
    Tomo,
    /// Signal-idler cross-correlation before and after storage.
    G2,
    /// Fit memory depth to the target recall efficiency.
    Calibrate,
    /// Run the full reproduction suite.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, afcsim::AfcError> {
    let mut config = match (&cli.config, cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        (None, Some(Preset::Paper)) => ExperimentConfig::paper_preset(),
        (None, None) => ExperimentConfig::new(),
    };
    if let (Some(Preset::Paper), Some(_)) = (cli.preset, &cli.config) {
        // preset noise levels on top of an explicit config
        config.noise = afcsim::harness::NoiseSettings::paper();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn emit(reports: &[RunReport], cli: &Cli) -> Result<bool, afcsim::AfcError> {
    let mut all_passed = true;
    for r in reports {
        r.write_files(&cli.out_dir)?;
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{:<16} {status}  (hash {})", r.scenario, &r.config_hash[..12]);
        for (k, v) in &r.metrics {
            println!("    {k} = {v:.6e}");
        }
        all_passed &= r.passed;
    }
    Ok(all_passed)
}

fn run(cli: &Cli) -> Result<bool, afcsim::AfcError> {
    let mut config = load_config(cli)?;
    let reports = match &cli.command {
        Command::Echo => vec![run_echo_trace(&config)?],
        Command::Polsweep { scrambler } => {
            config.pol.scrambler_on = *scrambler;
            vec![run_pol_sweep(&config)?]
        }
        Command::Visibility => vec![run_visibility_scan(&config)?],
        Command::Tomo => vec![run_tomography(&config)?],
        Command::G2 => vec![run_g2(&config)?],
        Command::Calibrate => vec![run_calibrate(&config)?],
        Command::All => {
            let reports = run_all(&config)?;
            println!("suite hash {}", suite_hash(&reports));
            reports
        }
    };
    emit(&reports, cli)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more scenario assertions failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
