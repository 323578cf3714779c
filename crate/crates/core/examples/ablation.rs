//! Full ablation grid on the default shifted world.
//!
//! `cargo run --release --example ablation -- [seeds] [config.toml]` where
//! `seeds` is a count (default 3).

use std::time::Instant;

use robustdet::pipeline::{run_experiment, PipelineConfig, Variant};

fn main() -> robustdet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = match std::env::args().nth(2) {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let seeds: Vec<u64> = (0..n).collect();
    let started = Instant::now();
    let report = run_experiment(&config, &Variant::ALL, &seeds)?;
    print!("{}", report.to_csv());
    println!();
    print!("{}", report.ablation_table());
    println!("{:?}", report.summary().oracle_max_seeds);
    for run in &report.runs {
        for p in &run.phase_reports {
            println!("seed {} phase {} loss {:.4} {:.2}s {:?}", run.seed, p.phase, p.final_loss, p.seconds, p.quality);
        }
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
