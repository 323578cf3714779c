//! Draws source and shifted target scenes, writes them as JSONL and reads
//! them back.
//!
//! `cargo run --example world -- [out_dir]`

use std::path::PathBuf;

use robustdet::world::{apply_domain_shift, generate_dataset, load_dataset, save_dataset, DomainTag, WorldConfig};

fn class_means(data: &robustdet::world::LabeledDataset, class: usize) -> Vec<f64> {
    let dim = data.config.feature_dim;
    let mut sum = vec![0.0; dim];
    let mut n: f64 = 0.0;
    for (scene, anns) in data.scenes.iter().zip(&data.annotations) {
        for a in anns.iter().filter(|a| a.class_index == class) {
            let (x0, y0) = (a.bbox.x.ceil() as usize, a.bbox.y.ceil() as usize);
            let (x1, y1) = ((a.bbox.x + a.bbox.w) as usize, (a.bbox.y + a.bbox.h) as usize);
            for row in y0..y1.min(scene.height) {
                for col in x0..x1.min(scene.width) {
                    for (s, v) in sum.iter_mut().zip(scene.cell(row, col)) {
                        *s += v;
                    }
                    n += 1.0;
                }
            }
        }
    }
    sum.iter().map(|s| s / n.max(1.0)).collect()
}

fn main() -> robustdet::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let world = WorldConfig::default();
    let source = generate_dataset(&world, 50, 1, DomainTag::Source)?;
    let target = generate_dataset(&apply_domain_shift(&world), 50, 2, DomainTag::Target)?;

    for (name, data) in [("source", &source), ("target", &target)] {
        println!("{name}: {} scenes, {} objects", data.len(), data.num_objects());
        for class in 1..=world.num_classes {
            let m: Vec<String> = class_means(data, class).iter().map(|v| format!("{v:+.2}")).collect();
            println!("  class {class} mean cell  [{}]", m.join(" "));
        }
    }

    let path = out.join("target.jsonl");
    save_dataset(&path, &target)?;
    let back = load_dataset(&path)?;
    println!("\nwrote {} and read it back: identical = {}", path.display(), back == target);
    Ok(())
}
