//! `ganvert` batch front-end.

mod artifacts;
mod commands;
mod config;
mod plot;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::ModelSource;
use crate::config::{load_config, AppConfig, Profile};

#[derive(Debug, Parser)]
#[command(name = "ganvert", version, about = "Latent-space history matching of channelised reservoirs")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset grid, schedule and decoder.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// 1 prior, 2 wells, 3 flow, 4 wells and flow.
    #[arg(long, global = true)]
    scenario: Option<u8>,
    /// Ensemble seeds, e.g. `0,1,5` or `0..10`.
    #[arg(long, global = true, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode the reference latent, simulate it and write noisy observations.
    MakeObs,
    /// Evaluate an unconditional ensemble (scenario 1).
    SamplePrior {
        /// Observations JSON; synthesised from the reference when omitted.
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Run the ADAM ensemble for scenarios 2 to 4.
    Invert {
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Single forward run.
    Simulate {
        /// GGRD record with facies (and optionally permeability and porosity).
        #[arg(long, conflicts_with = "homogeneous")]
        model: Option<PathBuf>,
        /// Uniform facies value in [0, 1].
        #[arg(long)]
        homogeneous: Option<f64>,
    },
    /// Ensemble statistics, connectivity, histograms and an optional SLERP probe.
    Analyze {
        /// Directory written by `sample-prior` or `invert`.
        #[arg(long)]
        input: PathBuf,
        /// Points per SLERP leg between the two best members.
        #[arg(long)]
        slerp: Option<usize>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Render a CSV, JSON-lines trace or GGRD grid as SVG.
    Plot {
        input: PathBuf,
        /// SVG path; `<input>.svg` when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long)]
        log_y: bool,
    },
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad range start {a:?}"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad range end {b:?}"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(out))
}

fn resolve(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => AppConfig::default(),
    };
    if let Some(p) = cli.profile {
        cfg.profile = p;
    }
    if let Some(s) = cli.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = &cli.seeds {
        cfg.seeds = s.0.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Ok(v) = std::env::var("GANVERT_THREADS") {
        cfg.threads = Some(v.parse().with_context(|| format!("GANVERT_THREADS={v:?} is not a count"))?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the worker pool")?;
    }
    match cli.command {
        Command::MakeObs => {
            commands::make_obs(&cfg)?;
        }
        Command::SamplePrior { obs } => {
            commands::sample_prior(&cfg, obs.as_deref())?;
        }
        Command::Invert { obs } => {
            commands::invert(&cfg, obs.as_deref())?;
        }
        Command::Simulate { model, homogeneous } => {
            let source = match (model, homogeneous) {
                (Some(p), _) => ModelSource::File(p),
                (None, Some(v)) => ModelSource::Homogeneous(v),
                (None, None) => ModelSource::Reference,
            };
            commands::simulate_cmd(&cfg, source)?;
        }
        Command::Analyze { input, slerp, bins } => {
            let report = commands::analyze(&cfg, &input, slerp, bins)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot { input, output, channel, record, log_y } => {
            let output = output.unwrap_or_else(|| input.with_extension("svg"));
            commands::plot_file(&input, &output, channel, record, log_y)?;
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0,2, 5").unwrap().0, vec![0, 2, 5]);
        assert_eq!(parse_seeds("3..6,9").unwrap().0, vec![3, 4, 5, 9]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
