//! AP on a small hand-made scene: how ranking and duplicates move the score.

use robustdet::detector::Annotation;
use robustdet::eval::{average_precision, mean_ap, DetectionRecord, DEFAULT_IOU_THRESHOLD};
use robustdet::geometry::BoundingBox;

fn rec(class_index: usize, score: f64, x: f64, y: f64) -> DetectionRecord {
    DetectionRecord {
        scene_id: 0,
        class_index,
        score,
        bbox: BoundingBox::new(x, y, 4.0, 4.0).unwrap(),
    }
}

fn main() -> robustdet::Result<()> {
    let gt = vec![vec![
        Annotation::new(1, BoundingBox::new(0.0, 0.0, 4.0, 4.0)?),
        Annotation::new(1, BoundingBox::new(10.0, 0.0, 4.0, 4.0)?),
        Annotation::new(2, BoundingBox::new(0.0, 10.0, 4.0, 4.0)?),
    ]];
    let cases = [
        ("both hits first", vec![rec(1, 0.9, 0.0, 0.0), rec(1, 0.8, 10.0, 0.0), rec(1, 0.3, 20.0, 20.0)]),
        ("false positive first", vec![rec(1, 0.95, 20.0, 20.0), rec(1, 0.9, 0.0, 0.0), rec(1, 0.8, 10.0, 0.0)]),
        ("duplicate counts as false", vec![rec(1, 0.9, 0.0, 0.0), rec(1, 0.85, 0.5, 0.0), rec(1, 0.8, 10.0, 0.0)]),
        ("one object missed", vec![rec(1, 0.9, 0.0, 0.0)]),
    ];
    for (name, dets) in cases {
        let ap = average_precision(&dets, &gt, 1, DEFAULT_IOU_THRESHOLD);
        println!("{name:<26} class-1 AP {:.4}", ap.value);
    }

    let mut all = vec![rec(1, 0.9, 0.0, 0.0), rec(1, 0.8, 10.0, 0.0)];
    all.push(rec(2, 0.7, 0.0, 10.5));
    println!("\nmAP over both classes {:.4}", mean_ap(&all, &gt, 2, DEFAULT_IOU_THRESHOLD));
    Ok(())
}
