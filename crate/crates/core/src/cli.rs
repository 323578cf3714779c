//! Library side of the command-line verbs. Each `cmd_*` returns an error
//! when the requested work did not complete; the binary maps that to a
//! nonzero exit status.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_box, fuse_categorical, tv_distance, CategoricalDistribution};
use crate::geometry::BoundingBox;
use crate::oracle::{oracle_minimize_categorical, oracle_minimize_gaussian, MAX_ITERATIONS};
use crate::pipeline::experiment::{run_experiment, ExperimentReport, Variant};
use crate::pipeline::phases::{derive_seed, streams};
use crate::pipeline::PipelineConfig;
use crate::world::io::save_dataset;
use crate::world::{apply_domain_shift, generate_dataset, DomainTag};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub total_seconds: Option<f64>,
    pub per_seed_seconds: Vec<f64>,
}

/// Record of one run, rewritten when the run starts and when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub outputs: Vec<PathBuf>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub timings: Timings,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    fn write(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&out_dir.join(Self::FILE_NAME), text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenDataSummary {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub source_scenes: usize,
    pub target_scenes: usize,
    pub source_objects: usize,
    pub target_objects: usize,
}

/// Writes `source.jsonl` and `target.jsonl` generated from `config.seed`.
pub fn cmd_gen_data(config_path: &Path, out_dir: &Path) -> Result<GenDataSummary> {
    let config = PipelineConfig::load(config_path)?;
    create_dir(out_dir)?;
    let source = generate_dataset(
        &config.world,
        config.data.source_scenes,
        derive_seed(config.seed, streams::SOURCE_DATA),
        DomainTag::Source,
    )?;
    let target = generate_dataset(
        &apply_domain_shift(&config.world),
        config.data.target_scenes,
        derive_seed(config.seed, streams::TARGET_DATA),
        DomainTag::Target,
    )?;
    let source_path = out_dir.join("source.jsonl");
    let target_path = out_dir.join("target.jsonl");
    save_dataset(&source_path, &source)?;
    save_dataset(&target_path, &target)?;
    Ok(GenDataSummary {
        source_path,
        target_path,
        source_scenes: source.len(),
        target_scenes: target.len(),
        source_objects: source.num_objects(),
        target_objects: target.num_objects(),
    })
}

/// Runs `variants` over `seeds` (the config's list when `None`) and writes
/// `report.csv`, `summary.json` and the manifest into `out_dir`.
pub fn cmd_run(
    config_path: &Path,
    variants: &[Variant],
    seeds: Option<&[u64]>,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    run_with_outputs("run", config_path, variants, seeds, out_dir)
}

/// All six variants. Adds `ablation_table.csv` to the outputs of `cmd_run`.
pub fn cmd_ablate(config_path: &Path, seeds: Option<&[u64]>, out_dir: &Path) -> Result<ExperimentReport> {
    run_with_outputs("ablate", config_path, &Variant::ALL, seeds, out_dir)
}

fn run_with_outputs(
    command: &str,
    config_path: &Path,
    variants: &[Variant],
    seeds: Option<&[u64]>,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    let config = PipelineConfig::load(config_path)?;
    config.validate()?;
    let seeds: Vec<u64> = seeds.map_or_else(|| config.seeds.clone(), <[u64]>::to_vec);
    create_dir(out_dir)?;
    let mut outputs = vec![out_dir.join("report.csv"), out_dir.join("summary.json")];
    if command == "ablate" {
        outputs.push(out_dir.join("ablation_table.csv"));
    }
    let started = Instant::now();
    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: command.to_string(),
        config: config.clone(),
        seeds: seeds.clone(),
        variants: variants.to_vec(),
        outputs: outputs.clone(),
        status: RunStatus::Running,
        error: None,
        timings: Timings {
            started_unix: unix_seconds(),
            finished_unix: None,
            total_seconds: None,
            per_seed_seconds: Vec::new(),
        },
    };
    manifest.write(out_dir)?;

    let result = run_experiment(&config, variants, &seeds).and_then(|report| {
        write_atomic(&outputs[0], report.to_csv().as_bytes())?;
        let summary = serde_json::to_string_pretty(&report.summary()).expect("summary serializes");
        write_atomic(&outputs[1], summary.as_bytes())?;
        if command == "ablate" {
            write_atomic(&outputs[2], report.ablation_table().as_bytes())?;
        }
        Ok(report)
    });
    manifest.timings.finished_unix = Some(unix_seconds());
    manifest.timings.total_seconds = Some(started.elapsed().as_secs_f64());
    match &result {
        Ok(report) => {
            manifest.status = RunStatus::Complete;
            manifest.timings.per_seed_seconds = report.runs.iter().map(|r| r.seconds).collect();
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(out_dir)?;
    result
}

/// One oracle comparison that exceeded the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub enum FailedInstance {
    Categorical { trial: usize, alpha: f64, deviation: f64 },
    Gaussian { trial: usize, alpha: f64, sigma: f64, deviation: f64 },
    SigmaInvariance { trial: usize, deviation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub trials: usize,
    pub max_categorical_tv: f64,
    pub max_gaussian_error: f64,
    /// Largest coordinate difference between oracle minimizers at different sigmas.
    pub max_sigma_spread: f64,
    pub failures: Vec<FailedInstance>,
    pub seconds: f64,
}

pub const GAUSSIAN_SIGMAS: [f64; 3] = [0.1, 1.0, 10.0];
/// Sigma spread is checked at a fixed tolerance: the minimizer does not depend on sigma.
pub const SIGMA_INVARIANCE_TOLERANCE: f64 = 1e-9;

fn random_box<R: Rng + ?Sized>(rng: &mut R) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(-20.0..40.0),
        rng.random_range(-20.0..40.0),
        rng.random_range(0.5..30.0),
        rng.random_range(0.5..30.0),
    )
    .expect("positive size")
}

/// Compares both closed forms against numerical minimizers on `trials`
/// random instances each.
pub fn verify_theorems(trials: usize, tolerance: f64, seed: u64) -> Result<TheoremReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TheoremReport {
        trials,
        max_categorical_tv: 0.0,
        max_gaussian_error: 0.0,
        max_sigma_spread: 0.0,
        failures: Vec::new(),
        seconds: 0.0,
    };
    for trial in 0..trials {
        let classes = rng.random_range(2..=6);
        let mut logits = || -> Vec<f64> { (0..classes).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect() };
        let p1 = CategoricalDistribution::from_logits(logits())?;
        let p2 = CategoricalDistribution::from_logits(logits())?;
        let alpha = rng.random_range(0.0..=100.0);
        let closed = fuse_categorical(&p1, &p2, alpha)?;
        let numeric = oracle_minimize_categorical(&p1, &p2, alpha, MAX_ITERATIONS, 1.0)?;
        let tv = tv_distance(&closed.probabilities(), &numeric.probabilities());
        report.max_categorical_tv = report.max_categorical_tv.max(tv);
        if !(tv < tolerance) {
            report.failures.push(FailedInstance::Categorical {
                trial,
                alpha,
                deviation: tv,
            });
        }
    }
    for trial in 0..trials {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let alpha = rng.random_range(0.0..=100.0);
        let closed = fuse_box(&a, &b, alpha)?.to_array();
        let mut minimizers = Vec::new();
        for sigma in GAUSSIAN_SIGMAS {
            let m = oracle_minimize_gaussian(&a, &b, alpha, sigma)?.to_array();
            let err = m.iter().zip(&closed).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            report.max_gaussian_error = report.max_gaussian_error.max(err);
            if !(err < tolerance) {
                report.failures.push(FailedInstance::Gaussian {
                    trial,
                    alpha,
                    sigma,
                    deviation: err,
                });
            }
            minimizers.push(m);
        }
        let spread = minimizers[1..]
            .iter()
            .flat_map(|m| m.iter().zip(&minimizers[0]).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        report.max_sigma_spread = report.max_sigma_spread.max(spread);
        if !(spread <= SIGMA_INVARIANCE_TOLERANCE) {
            report.failures.push(FailedInstance::SigmaInvariance { trial, deviation: spread });
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// `verify_theorems`, turned into an error when any instance fails.
pub fn cmd_verify_theorems(trials: usize, tolerance: f64) -> Result<TheoremReport> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let report = verify_theorems(trials, tolerance, 0)?;
    println!(
        "categorical: max TV {:.3e}; gaussian: max error {:.3e}, sigma spread {:.3e} ({} trials, {:.2}s)",
        report.max_categorical_tv, report.max_gaussian_error, report.max_sigma_spread, trials, report.seconds
    );
    if report.failures.is_empty() {
        Ok(report)
    } else {
        for f in &report.failures {
            println!("FAILED {f:?}");
        }
        Err(Error::Verification(format!(
            "{} of {} comparisons at or above tolerance {tolerance:e}",
            report.failures.len(),
            trials * (1 + GAUSSIAN_SIGMAS.len())
        )))
    }
}
