use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ris_ce::harness::{
    emit_results, format_summary, load_config, run_experiment, summarize, EstimatorKind,
    ExperimentConfig, OutputFormat,
};
use ris_ce::metrics::complexity_formula;

/// Channel estimation experiments for RIS-assisted MIMO uplinks.
#[derive(Debug, Parser)]
#[command(name = "estimate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a TOML config.
    Run(RunArgs),
    /// Run the default scenario and print the NMSE table.
    Demo {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the analytic per-update operation counts.
    Complexity {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// SNR range `start:stop:step` in dB, stop inclusive.
    #[arg(long, conflicts_with = "snr_list")]
    snr: Option<String>,
    /// Comma-separated SNR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_list: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of two_stage, e_als, ls.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
}

fn parse_snr_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("invalid --snr `{spec}`, expected start:stop:step"))?;
    let [start, stop, step] = parts[..] else {
        bail!("invalid --snr `{spec}`, expected start:stop:step");
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        bail!("invalid --snr `{spec}`: step must be positive and stop >= start");
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn apply_overrides(mut cfg: ExperimentConfig, args: &RunArgs) -> Result<ExperimentConfig> {
    if let Some(spec) = &args.snr {
        cfg.snr_grid_db = parse_snr_range(spec)?;
    }
    if let Some(list) = &args.snr_list {
        cfg.snr_grid_db = list.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(names) = &args.estimators {
        cfg.estimators = names
            .iter()
            .map(|n| n.parse::<EstimatorKind>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.output_path = Some(out.clone());
    }
    if let Some(f) = &args.format {
        cfg.format = f.parse::<OutputFormat>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let cfg = apply_overrides(cfg, &args)?;
    let records = run_experiment(&cfg)?;
    let failures = records.iter().filter(|r| r.failed()).count();
    let summary = match &cfg.output_path {
        Some(path) => {
            let summary = emit_results(&records, &cfg, path, cfg.format)
                .with_context(|| format!("writing results to {}", path.display()))?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
            summary
        }
        None => summarize(&records),
    };
    print!("{}", format_summary(&summary));
    if failures > 0 {
        eprintln!("{failures} estimator runs failed; see the failure column");
    }
    Ok(())
}

fn demo(trials: usize, workers: usize, seed: u64) -> Result<()> {
    let cfg = ExperimentConfig {
        trials,
        workers,
        master_seed: seed,
        ..Default::default()
    };
    let records = run_experiment(&cfg)?;
    print!("{}", format_summary(&summarize(&records)));
    Ok(())
}

fn complexity(config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    println!("{:<10} {:<14} {:>16}", "method", "update", "ops");
    for kind in [EstimatorKind::TwoStage, EstimatorKind::EAls] {
        let sys = cfg.system.system(kind.scheme(), 0.0);
        let tally = complexity_formula(kind.scheme(), &sys);
        for (update, count) in &tally.rows {
            println!("{:<10} {:<14} {:>16}", kind.name(), update.name(), count);
        }
        println!(
            "{:<10} {:<14} {:>16}",
            kind.name(),
            "per_iteration",
            tally.per_iteration()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Demo {
            trials,
            workers,
            seed,
        } => demo(trials, workers, seed),
        Command::Complexity { config } => complexity(config.as_deref()),
    }
}
