//! Dataset and topology persistence.
//!
//! Datasets are JSON-lines files: a header object on the first line (format
//! version, class count, split tag, inline topology) followed by one object
//! per sample. Topologies can also be stored standalone as a single JSON
//! object. Parse errors report 1-based line numbers.

use super::types::{Dataset, LabeledSample, Motion, SkeletonTopology, Split};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

/// Current dataset file format version.
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    version: u32,
    kind: String,
    class_count: usize,
    split: Split,
    topology: SkeletonTopology,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    label: usize,
    frames: usize,
    positions: Vec<f64>,
}

/// Writes a dataset as JSON lines. The same dataset always produces the same
/// bytes, and `save -> load -> save` is byte-identical.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        version: DATASET_FORMAT_VERSION,
        kind: "dataset".to_string(),
        class_count: dataset.class_count(),
        split: dataset.split(),
        topology: dataset.topology().as_ref().clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in dataset.samples() {
        let line = SampleLine {
            label: s.label,
            frames: s.motion.frames(),
            positions: s.motion.positions().to_vec(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], re-validating every invariant
/// (labels in range, finite coordinates, coordinate counts).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_text = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::Parse { line: 1, msg: "empty dataset file".into() }),
    };
    let header: DatasetHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "unsupported dataset format version {} (expected {})",
                header.version, DATASET_FORMAT_VERSION
            ),
        });
    }
    if header.kind != "dataset" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected kind 'dataset', got '{}'", header.kind),
        });
    }
    // Re-run topology validation rather than trusting the file.
    let topology = Arc::new(SkeletonTopology::new(
        header.topology.joint_count(),
        header.topology.bones().to_vec(),
        header.topology.budget_classes().to_vec(),
    ).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?);

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        if parsed.label >= header.class_count {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "label {} out of range for {} classes",
                    parsed.label, header.class_count
                ),
            });
        }
        let motion = Motion::new(parsed.frames, parsed.positions, Arc::clone(&topology))
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        samples.push(LabeledSample { motion, label: parsed.label });
    }
    Dataset::new(samples, header.class_count, topology, header.split)
}

/// Writes a topology as a single JSON object.
pub fn save_topology(topology: &SkeletonTopology, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, topology)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads and re-validates a topology file.
pub fn load_topology(path: &Path) -> Result<SkeletonTopology> {
    let text = std::fs::read_to_string(path)?;
    let raw: SkeletonTopology =
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    SkeletonTopology::new(raw.joint_count(), raw.bones().to_vec(), raw.budget_classes().to_vec())
}
