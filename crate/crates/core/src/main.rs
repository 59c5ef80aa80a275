use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use comp_noma::config::{emit_config, parse_config_file, ExperimentConfig, Preset};
use comp_noma::error::{Error, Result};
use comp_noma::harness::run_sweep_with;
use comp_noma::noma::InterferenceMode;
use comp_noma::output::{emit_csv, format_sig9, summary};
use comp_noma::scenario::{DecodeCase, ScenarioId, Scheme};

/// Monte-Carlo spectral-efficiency sweeps for two-cell CoMP-NOMA.
///
/// Exit codes: 0 ok, 1 configuration error, 2 runtime error.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Scenario 1, 2 or 3.
    #[arg(long)]
    scenario: Option<u8>,
    /// Comma-separated schemes, e.g. JT-NOMA,JT-OMA.
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path; the resolved config is written next to it as `<out>.toml`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenario-3 decode case (1 or 2); both when omitted.
    #[arg(long = "case")]
    case: Option<u8>,
    /// Worker threads, 0 for one per core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = ["negligible", "full"])]
    interference: Option<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let scenario = cli.scenario.map(ScenarioId::try_from).transpose()?;
    let mut c = match (&cli.config, cli.preset, scenario) {
        (Some(path), _, _) => parse_config_file(path)?,
        (None, Some(preset), _) => preset.config(),
        (None, None, Some(id)) => ExperimentConfig::defaults_for(id),
        (None, None, None) => {
            return Err(Error::validation(
                "scenario_id",
                "give --config, --preset or --scenario",
            ));
        }
    };
    if let Some(id) = scenario {
        c.scenario = id;
    }
    if let Some(schemes) = &cli.scheme {
        c.schemes = schemes
            .iter()
            .map(|s| s.parse::<Scheme>())
            .collect::<Result<_>>()?;
    }
    if let Some(t) = cli.trials {
        c.trials = t;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(out) = &cli.out {
        c.output_path = out.clone();
    }
    if let Some(case) = cli.case {
        c.decode_case = Some(match case {
            1 => DecodeCase::Case1,
            2 => DecodeCase::Case2,
            _ => {
                return Err(Error::validation(
                    "decode_case",
                    format!("must be 1 or 2, got {case}"),
                ))
            }
        });
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(mode) = &cli.interference {
        c.interference_mode = if mode == "full" {
            InterferenceMode::Full
        } else {
            InterferenceMode::Negligible
        };
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    let resolved = emit_config(&config);
    if cli.print_config {
        print!("{resolved}");
        return Ok(());
    }
    eprintln!("# resolved configuration\n{resolved}");
    let mut log_path = config.output_path.clone().into_os_string();
    log_path.push(".toml");
    std::fs::write(&log_path, &resolved)?;

    let result = run_sweep_with(&config, |point| {
        let line: Vec<String> = point
            .series
            .iter()
            .map(|s| format!("{}={}", s.series.label(), format_sig9(s.mean_se)))
            .collect();
        eprintln!("{} m: {}", format_sig9(point.sweep_value), line.join(" "));
    })?;
    emit_csv(&result, &config.output_path)?;
    print!("{}", summary(&result));
    eprintln!("wrote {}", config.output_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
