use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use overlap_reg_cli::commands::{has_failures, summary_table};
use overlap_reg_cli::{run_register, run_synth, run_timing, run_weights, CliError, ExperimentConfig};

/// Overlap-aware point cloud registration benchmarks.
#[derive(Parser)]
#[command(name = "overlap-reg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed override for data generation, downsampling and GMM fitting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// One worker thread and sequential cells, for byte-identical reruns.
    #[arg(long, global = true)]
    single_thread_determinism: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic multi-view suite to disk.
    Synth,
    /// Run the algorithm x overlap-estimation matrix over consecutive frames.
    Register,
    /// Time the per-point weight computation against cloud size.
    Timing,
    /// Dump per-point overlap weights for one frame pair.
    Weights,
    /// Check a config and print it with all defaults applied.
    ValidateConfig,
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &cli.output {
        config.output = out.clone();
    }
    let config = config.resolve();
    config.validate()?;

    let threads = if cli.single_thread_determinism { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let out = config.output.clone();
    let doc = match cli.command {
        Command::ValidateConfig => {
            println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
            return Ok(ExitCode::SUCCESS);
        }
        Command::Synth => run_synth(&config, &out)?,
        Command::Register => {
            let doc = run_register(&config, &out, !cli.single_thread_determinism)?;
            print!("{}", summary_table(&doc));
            doc
        }
        Command::Timing => {
            let doc = run_timing(&config, &out)?;
            if let Some(t) = &doc.timing {
                println!("n,median_ms");
                for s in &t.samples {
                    println!("{},{}", s.points, s.median_ms);
                }
                println!("slope_per_point_ms={:e} r_squared={:.4}", t.slope_per_point_ms, t.r_squared);
            }
            doc
        }
        Command::Weights => run_weights(&config, &out)?,
    };
    log::info!("wrote {} artifacts to {}", doc.artifacts.len() + 1, out.display());
    Ok(if has_failures(&doc) { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVERLAP_REG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
