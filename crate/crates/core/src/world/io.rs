//! Line-delimited JSON dataset files. Layout is documented in FORMAT.md.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainTag, LabeledDataset, WorldConfig};
use crate::detector::{Annotation, Scene};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    domain: DomainTag,
    seed: u64,
    num_scenes: usize,
    config: WorldConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    index: usize,
    width: usize,
    height: usize,
    feature_dim: usize,
    features: Vec<f64>,
    annotations: Vec<Annotation>,
}

/// Only the version is read first so a newer header layout still yields a
/// version error rather than a field error.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format_version: FORMAT_VERSION,
        domain: dataset.domain_tag,
        seed: dataset.seed,
        num_scenes: dataset.scenes.len(),
        config: dataset.config.clone(),
    };
    write_line(&mut out, path, &header)?;
    for (index, (scene, annotations)) in dataset.scenes.iter().zip(&dataset.annotations).enumerate() {
        let record = SceneRecord {
            index,
            width: scene.width,
            height: scene.height,
            feature_dim: scene.feature_dim,
            features: scene.features.clone(),
            annotations: annotations.clone(),
        };
        write_line(&mut out, path, &record)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_line<W: Write, T: Serialize>(out: &mut W, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn parse_error(line: usize, err: serde_json::Error) -> Error {
    Error::Parse {
        line,
        column: err.column(),
        message: err.to_string(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 0,
                message: "empty file, expected a header record".into(),
            })
        }
    };
    let probe: VersionProbe = serde_json::from_str(&first).map_err(|e| parse_error(1, e))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_error(1, e))?;

    let mut scenes = Vec::with_capacity(header.num_scenes);
    let mut annotations = Vec::with_capacity(header.num_scenes);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line).map_err(|e| parse_error(line_no, e))?;
        if rec.index != scenes.len() {
            return Err(Error::Parse {
                line: line_no,
                column: 0,
                message: format!("scene index {} out of order, expected {}", rec.index, scenes.len()),
            });
        }
        let scene = Scene::new(rec.width, rec.height, rec.feature_dim, rec.features).map_err(|e| Error::Parse {
            line: line_no,
            column: 0,
            message: e.to_string(),
        })?;
        scenes.push(scene);
        annotations.push(rec.annotations);
    }
    if scenes.len() != header.num_scenes {
        return Err(Error::Parse {
            line: scenes.len() + 2,
            column: 0,
            message: format!(
                "truncated file: header declares {} scenes, found {}",
                header.num_scenes,
                scenes.len()
            ),
        });
    }
    Ok(LabeledDataset {
        domain_tag: header.domain,
        seed: header.seed,
        config: header.config,
        scenes,
        annotations,
    })
}
