//! Trains the detector on labeled source scenes, mines pseudo-labels on the
//! shifted target, and prints a few detections.

use robustdet::detector::detect;
use robustdet::pipeline::{evaluate, phase1_mine, PipelineConfig, SeedData};

fn main() -> robustdet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = PipelineConfig::default();
    config.data.source_scenes = 100;
    config.data.target_scenes = 100;
    config.data.test_scenes = 50;
    config.training.phase1_steps = 1500;

    let data = SeedData::generate(&config, 0)?;
    let (params, pseudo, report) = phase1_mine(&config, &data)?;
    println!("trained {} steps in {:.1}s, final loss {:.4}", report.steps, report.seconds, report.final_loss);
    if let Some(q) = report.quality {
        println!(
            "mined {} pseudo-labels: {} true, {} false, {} objects missed, class accuracy {:.3}",
            pseudo.len(),
            q.true_positives,
            q.false_positives,
            q.false_negatives,
            q.class_accuracy
        );
    }

    let eval = evaluate(&params, &config, &data);
    println!("target test mAP {:.4}, per class {:?}", eval.map, eval.per_class);

    let dets = detect(&params, &data.test_integrals[0], &data.proposals, &config.eval.detect_config());
    println!("\nfirst test scene, truth:");
    for a in &data.target_test.annotations[0] {
        println!("  class {} at ({:.1}, {:.1}, {:.1}, {:.1})", a.class_index, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h);
    }
    println!("detections:");
    for d in dets.iter().take(6) {
        println!(
            "  class {} score {:.3} at ({:.1}, {:.1}, {:.1}, {:.1})",
            d.class_index, d.score, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h
        );
    }
    Ok(())
}
