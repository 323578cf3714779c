//! Headline checks. Prints one PASS/FAIL line per criterion and fails at
//! the end if any criterion failed. The ablation monotonicity check is soft:
//! small dips are flagged without failing.
//!
//! Runs the full ten-seed ablation twice on `configs/default.toml`, so it
//! takes several minutes in release mode.

mod common;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use common::{arb_fixture, gradient_check, reference_ap, AP_IOU, FD_TOLERANCE, MONOTONE_TRANSFORMS};
use proptest::strategy::{Strategy, ValueTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robustdet::cli::{cmd_ablate, GAUSSIAN_SIGMAS, SIGMA_INVARIANCE_TOLERANCE};
use robustdet::eval::{average_precision, mean_ap};
use robustdet::fusion::{fuse_box, fuse_categorical, tv_distance, AlphaSchedule, CategoricalDistribution};
use robustdet::geometry::BoundingBox;
use robustdet::oracle::{oracle_minimize_categorical, oracle_minimize_gaussian, MAX_ITERATIONS};
use robustdet::pipeline::{
    phase1_mine, phase2_rescore, phase3_robust_retrain, Ablation, ExperimentReport, PipelineConfig, RetrainOptions,
    SeedData, Variant,
};

const ORACLE_TOLERANCE: f64 = 1e-6;
const ORACLE_SECONDS: f64 = 10.0;
const GRADIENT_SECONDS: f64 = 30.0;
const ABLATION_SECONDS: f64 = 300.0;
const SOFT_DIP: f64 = 0.005;

struct Outcome {
    failed: Vec<String>,
    flagged: Vec<String>,
}

impl Outcome {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name.to_string());
        }
    }
}

fn logits(rng: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    (0..classes).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(-20.0..40.0),
        rng.random_range(-20.0..40.0),
        rng.random_range(0.5..30.0),
        rng.random_range(0.5..30.0),
    )
    .unwrap()
}

fn categorical_closed_form(out: &mut Outcome) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let classes = rng.random_range(2..=6);
        let p1 = CategoricalDistribution::from_logits(logits(&mut rng, classes)).unwrap();
        let p2 = CategoricalDistribution::from_logits(logits(&mut rng, classes)).unwrap();
        let alpha = rng.random_range(0.0..=100.0);
        let closed = fuse_categorical(&p1, &p2, alpha).unwrap().probabilities();
        let numeric = oracle_minimize_categorical(&p1, &p2, alpha, MAX_ITERATIONS, 1.0).unwrap().probabilities();
        worst = worst.max(tv_distance(&closed, &numeric));
    }
    let secs = started.elapsed().as_secs_f64();
    out.record(
        "categorical fusion closed form vs numerical KL minimizer",
        worst < ORACLE_TOLERANCE && secs < ORACLE_SECONDS,
        format!("100 triples, max TV {worst:.2e} (< {ORACLE_TOLERANCE:e}), {secs:.2}s (< {ORACLE_SECONDS}s)"),
    );
}

fn gaussian_closed_form(out: &mut Outcome) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst, mut spread): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let alpha = rng.random_range(0.0..=100.0);
        let closed = fuse_box(&a, &b, alpha).unwrap().to_array();
        let per_sigma: Vec<[f64; 4]> = GAUSSIAN_SIGMAS
            .iter()
            .map(|&s| oracle_minimize_gaussian(&a, &b, alpha, s).unwrap().to_array())
            .collect();
        for m in &per_sigma {
            for k in 0..4 {
                worst = worst.max((m[k] - closed[k]).abs());
                spread = spread.max((m[k] - per_sigma[0][k]).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    out.record(
        "box fusion closed form vs numerical minimizer",
        worst < ORACLE_TOLERANCE && spread <= SIGMA_INVARIANCE_TOLERANCE && secs < ORACLE_SECONDS,
        format!(
            "100 triples x sigma {GAUSSIAN_SIGMAS:?}, max error {worst:.2e}, sigma spread {spread:.2e} (<= {SIGMA_INVARIANCE_TOLERANCE:e}), {secs:.2}s"
        ),
    );
}

fn gradients(out: &mut Outcome) {
    let started = Instant::now();
    let linear = gradient_check(None, 50);
    let hidden = gradient_check(Some(6), 50);
    let secs = started.elapsed().as_secs_f64();
    out.record(
        "analytic gradients vs central differences",
        linear < FD_TOLERANCE && hidden < FD_TOLERANCE && secs < GRADIENT_SECONDS,
        format!("50 draws each, worst relative error linear {linear:.2e} hidden {hidden:.2e}, {secs:.2}s"),
    );
}

fn limits(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut zero_exact = true;
    let mut worst_cls: f64 = 0.0;
    let mut worst_box: f64 = 0.0;
    for _ in 0..200 {
        let classes = rng.random_range(2..=6);
        let p1 = CategoricalDistribution::from_logits(logits(&mut rng, classes)).unwrap();
        let p2 = CategoricalDistribution::from_logits(logits(&mut rng, classes)).unwrap();
        zero_exact &= fuse_categorical(&p1, &p2, 0.0).unwrap().probabilities() == p1.probabilities();
        let pinned = fuse_categorical(&p1, &p2, 1e6).unwrap().probabilities();
        worst_cls = worst_cls.max(tv_distance(&pinned, &p2.probabilities()));
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        zero_exact &= fuse_box(&a, &b, 0.0).unwrap() == a;
        let pinned = fuse_box(&a, &b, 1e6).unwrap().to_array();
        for (x, y) in pinned.iter().zip(b.to_array()) {
            worst_box = worst_box.max((x - y).abs());
        }
    }
    out.record(
        "fusion limits at alpha 0 and 1e6",
        zero_exact && worst_cls < 1e-3 && worst_box < 1e-3,
        format!("alpha 0 exact: {zero_exact}; alpha 1e6 max TV {worst_cls:.2e}, max box error {worst_box:.2e} (< 1e-3)"),
    );
}

fn average_precision_reference(out: &mut Outcome) {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut mismatches = 0;
    let fixtures = 500;
    for _ in 0..fixtures {
        let (dets, gt) = arb_fixture(5).new_tree(&mut runner).unwrap().current();
        for class in 1..=2 {
            if average_precision(&dets, &gt, class, AP_IOU).value != reference_ap(&dets, &gt, class).to_f64() {
                mismatches += 1;
            }
        }
    }
    let mut variant = 0;
    for _ in 0..20 {
        let (dets, gt) = arb_fixture(12).new_tree(&mut runner).unwrap().current();
        let base = mean_ap(&dets, &gt, 2, AP_IOU);
        for t in MONOTONE_TRANSFORMS {
            let moved: Vec<_> = dets.iter().map(|d| robustdet::eval::DetectionRecord { score: t(d.score), ..*d }).collect();
            if mean_ap(&moved, &gt, 2, AP_IOU) != base {
                variant += 1;
            }
        }
    }
    out.record(
        "average precision vs exact enumeration",
        mismatches == 0 && variant == 0,
        format!("{fixtures} fixtures x 2 classes, {mismatches} mismatches; 20 fixtures x 3 monotone score maps, {variant} changes"),
    );
}

fn baseline_reduction(out: &mut Outcome, config: &PipelineConfig, report: &ExperimentReport) {
    let run = &report.runs[0];
    let baseline = &run.params.iter().find(|(v, _)| *v == Variant::PseudoLabel).unwrap().1;
    let data = SeedData::generate(config, run.seed).unwrap();
    let (p1, mined, _) = phase1_mine(config, &data).unwrap();
    let (rescored, _) = phase2_rescore(&mined, config, &data).unwrap();
    let options = RetrainOptions {
        ablation: Ablation {
            cls_cor: false,
            box_r: false,
            fn_cor: false,
        },
        alpha: AlphaSchedule::constant(0.0),
        ..RetrainOptions::from_config(config)
    };
    let (ours, _) = phase3_robust_retrain(&rescored, config, &data, &options, Some(&p1)).unwrap();
    out.record(
        "pseudo-label baseline equals the uncorrected pipeline at alpha 0",
        &ours == baseline,
        format!("seed {}: parameters bit-identical: {}", run.seed, &ours == baseline),
    );
}

fn ordering(out: &mut Outcome, report: &ExperimentReport, secs: f64) {
    let mean = |v| report.mean_map(v).unwrap();
    let (full, pl, so) = (mean(Variant::OursFull), mean(Variant::PseudoLabel), mean(Variant::SourceOnly));
    let full_seeds = report.per_seed_map(Variant::OursFull);
    let so_seeds = report.per_seed_map(Variant::SourceOnly);
    let wins = full_seeds.iter().zip(&so_seeds).filter(|(a, b)| a.1 > b.1).count();
    let summary = report.summary();
    let seeds = full_seeds.len();
    let oracle_max = summary.oracle_max_seeds.unwrap_or(0);
    out.record(
        "end-to-end ordering on the shifted world",
        full > pl && pl > so && wins * 10 >= seeds * 8 && oracle_max == seeds && secs < ABLATION_SECONDS,
        format!(
            "mean mAP ours_full {full:.4} > pseudo_label {pl:.4} > source_only {so:.4}; ours_full beats source_only on {wins}/{seeds} seeds; oracle best on {oracle_max}/{seeds}; ablation {secs:.1}s (< {ABLATION_SECONDS}s)"
        ),
    );
}

fn ablation_monotonicity(out: &mut Outcome, report: &ExperimentReport) {
    let steps = [Variant::OursCls, Variant::OursClsBox, Variant::OursFull];
    let maps: Vec<f64> = steps.iter().map(|&v| report.mean_map(v).unwrap()).collect();
    let worst_dip = maps.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let detail = format!(
        "ours_cls {:.4} -> ours_cls_box {:.4} -> ours_full {:.4}, largest dip {worst_dip:.4}",
        maps[0], maps[1], maps[2]
    );
    if worst_dip > 0.0 && worst_dip < SOFT_DIP {
        println!("FLAG ablation monotonicity: {detail} (below {SOFT_DIP}, not a failure)");
        out.flagged.push("ablation monotonicity".into());
    } else {
        out.record("ablation monotonicity", worst_dip == 0.0, detail);
    }
    // the full column chain, informational
    let chain = [Variant::SourceOnly, Variant::PseudoLabel, Variant::OursCls, Variant::OursClsBox, Variant::OursFull];
    let text: Vec<String> = chain.iter().map(|&v| format!("{v} {:.4}", report.mean_map(v).unwrap())).collect();
    println!("INFO method means: {}", text.join(", "));
}

fn shipped_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[test]
fn acceptance() {
    let mut out = Outcome {
        failed: Vec::new(),
        flagged: Vec::new(),
    };
    categorical_closed_form(&mut out);
    gaussian_closed_form(&mut out);
    gradients(&mut out);
    limits(&mut out);
    average_precision_reference(&mut out);

    let config_path = shipped_config();
    let config = PipelineConfig::load(&config_path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let report = cmd_ablate(&config_path, None, &dir.path().join("first")).unwrap();
    let secs = started.elapsed().as_secs_f64();
    assert_eq!(report.runs.len(), config.seeds.len());

    baseline_reduction(&mut out, &config, &report);
    ordering(&mut out, &report, secs);
    ablation_monotonicity(&mut out, &report);

    cmd_ablate(&config_path, None, &dir.path().join("second")).unwrap();
    let first = fs::read(dir.path().join("first/report.csv")).unwrap();
    let second = fs::read(dir.path().join("second/report.csv")).unwrap();
    out.record(
        "ablation rerun is byte-identical",
        first == second,
        format!("report.csv {} bytes, identical: {}", first.len(), first == second),
    );

    assert!(out.failed.is_empty(), "failed: {:?}", out.failed);
}
