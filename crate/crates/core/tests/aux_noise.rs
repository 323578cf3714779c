//! The crop classifier should see through a share of flipped target labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustdet::aux::{crop_features, mine_background_boxes, score, train_aux, AuxTrainConfig, CropSample, Provenance};
use robustdet::detector::IntegralScene;
use robustdet::pipeline::phases::streams;
use robustdet::pipeline::derive_seed;
use robustdet::world::{apply_domain_shift, generate_dataset, DomainTag, WorldConfig};

const FLIP_RATE: f64 = 0.3;

fn run(seed: u64) -> (f64, f64) {
    let world = WorldConfig::default();
    let classes = world.num_classes;
    let source = generate_dataset(&world, 100, derive_seed(seed, streams::SOURCE_DATA), DomainTag::Source).unwrap();
    let target = generate_dataset(&apply_domain_shift(&world), 100, derive_seed(seed, streams::TARGET_DATA), DomainTag::Target).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut source_crops = Vec::new();
    for (scene, anns) in source.scenes.iter().zip(&source.annotations) {
        let integral = IntegralScene::new(scene);
        for a in anns {
            source_crops.push(CropSample {
                pooled_features: crop_features(&integral, &a.bbox),
                label: a.class_index,
                provenance: Provenance::SourceClean,
            });
        }
        let known: Vec<_> = anns.iter().map(|a| a.bbox).collect();
        for b in mine_background_boxes(world.scene_width, world.scene_height, &known, 2, [4, 10], &mut rng) {
            source_crops.push(CropSample {
                pooled_features: crop_features(&integral, &b),
                label: 0,
                provenance: Provenance::MinedBackground,
            });
        }
    }
    let mut target_crops = Vec::new();
    let mut truth = Vec::new();
    for (scene, anns) in target.scenes.iter().zip(&target.annotations) {
        let integral = IntegralScene::new(scene);
        for a in anns {
            let label = if rng.random_bool(FLIP_RATE) {
                (a.class_index + rng.random_range(0..classes - 1)) % classes + 1
            } else {
                a.class_index
            };
            target_crops.push(CropSample {
                pooled_features: crop_features(&integral, &a.bbox),
                label,
                provenance: Provenance::TargetNoisy,
            });
            truth.push(a.class_index);
        }
    }

    let config = AuxTrainConfig::with_default_schedule(6000, 0.5, 32, 0.05);
    let params = train_aux(&source_crops, &target_crops, classes, &config, &mut rng).unwrap();
    let n = truth.len() as f64;
    let noisy = target_crops.iter().zip(&truth).filter(|(c, t)| c.label == **t).count() as f64 / n;
    let corrected = target_crops
        .iter()
        .zip(&truth)
        .filter(|(c, t)| score(&params, &c.pooled_features).argmax() == **t)
        .count() as f64
        / n;
    (noisy, corrected)
}

#[test]
fn corrected_labels_beat_the_flipped_ones() {
    for seed in 0..5 {
        let (noisy, corrected) = run(seed);
        eprintln!("seed {seed}: {noisy:.3} -> {corrected:.3}");
        assert!(corrected > noisy, "seed {seed}: corrected {corrected:.3} vs noisy {noisy:.3}");
    }
}
