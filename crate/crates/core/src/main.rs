use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustdet::cli::{cmd_ablate, cmd_gen_data, cmd_run, cmd_verify_theorems};
use robustdet::pipeline::Variant;

#[derive(Parser)]
#[command(name = "robustdet", version, about = "Robust pseudo-label adaptation for detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source and target datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run selected variants over seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, default_value = "source_only,pseudo_label,ours_full,oracle_target")]
        variants: String,
        /// Comma-separated seeds; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the full ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Check the fusion closed forms against numerical minimizers.
    VerifyTheorems {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => cmd_gen_data(&config, &out).map(|s| {
            println!(
                "source: {} scenes, {} objects -> {}",
                s.source_scenes,
                s.source_objects,
                s.source_path.display()
            );
            println!(
                "target: {} scenes, {} objects -> {}",
                s.target_scenes,
                s.target_objects,
                s.target_path.display()
            );
        }),
        Command::Run {
            config,
            out,
            variants,
            seeds,
        } => Variant::parse_list(&variants)
            .and_then(|v| cmd_run(&config, &v, seeds.as_deref(), &out))
            .map(|report| print!("{}", report.to_csv())),
        Command::Ablate { config, out, seeds } => {
            cmd_ablate(&config, seeds.as_deref(), &out).map(|report| print!("{}", report.ablation_table()))
        }
        Command::VerifyTheorems { trials, tolerance } => cmd_verify_theorems(trials, tolerance).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
