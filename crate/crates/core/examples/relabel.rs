//! Mines target pseudo-labels, rescores them with the crop classifier, and
//! retrains with each correction switched on in turn.

use robustdet::eval::{iou, DEFAULT_IOU_THRESHOLD};
use robustdet::fusion::argmax;
use robustdet::pipeline::{
    evaluate, phase1_mine, phase2_rescore, phase3_robust_retrain, Ablation, PipelineConfig, PseudoLabelSet, RetrainOptions,
    SeedData,
};

/// Share of mined boxes whose matched object has the detector's class, and
/// the crop classifier's class.
fn class_agreement(pseudo: &PseudoLabelSet, data: &SeedData) -> (f64, f64) {
    let (mut n, mut det, mut aux) = (0.0, 0.0, 0.0);
    for (labels, truth) in pseudo.scenes.iter().zip(&data.target.annotations) {
        for l in labels {
            let Some(t) = truth.iter().find(|t| iou(&t.bbox, &l.bbox) >= DEFAULT_IOU_THRESHOLD) else {
                continue;
            };
            n += 1.0;
            if l.class_index == t.class_index {
                det += 1.0;
            }
            if l.aux_logits.as_deref().map(argmax) == Some(t.class_index) {
                aux += 1.0;
            }
        }
    }
    (det / n, aux / n)
}

fn main() -> robustdet::Result<()> {
    let mut config = PipelineConfig::default();
    config.data.source_scenes = 100;
    config.data.target_scenes = 100;
    config.data.test_scenes = 50;
    config.training.phase1_steps = 1500;
    config.training.phase2_steps = 6000;
    config.training.phase3_steps = 1500;

    let data = SeedData::generate(&config, 1)?;
    let (phase1, pseudo, _) = phase1_mine(&config, &data)?;
    let (rescored, _) = phase2_rescore(&pseudo, &config, &data)?;
    let (det, aux) = class_agreement(&rescored, &data);
    println!("{} pseudo-labels; class right: detector {det:.3}, crop classifier {aux:.3}", rescored.len());
    println!("source only       mAP {:.4}", evaluate(&phase1, &config, &data).map);

    let base = RetrainOptions::from_config(&config);
    let settings = [
        ("pseudo labels", Ablation::NONE),
        ("+ class", Ablation { cls_cor: true, ..Ablation::NONE }),
        ("+ class + box", Ablation { cls_cor: true, box_r: true, fn_cor: false }),
        ("+ all", Ablation::FULL),
    ];
    for (name, ablation) in settings {
        let mut options = RetrainOptions { ablation, ..base };
        if ablation == Ablation::NONE {
            options.alpha = robustdet::fusion::AlphaSchedule::constant(0.0);
        }
        let (params, _) = phase3_robust_retrain(&rescored, &config, &data, &options, Some(&phase1))?;
        println!("{name:<17} mAP {:.4}", evaluate(&params, &config, &data).map);
    }
    Ok(())
}
