//! Versioned JSON checkpoints for base classifiers and BEAT ensembles.
//!
//! Every checkpoint embeds parameter digests; loading recomputes and verifies
//! them, so silent corruption and frozen-base violations surface as
//! [`Error::DigestMismatch`](crate::Error::DigestMismatch).

use super::types::{AppendedHead, Architecture, BaseClassifier, BeatEnsemble};
use crate::autodiff::ParamVector;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Current checkpoint file format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Non-parameter information carried by a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Digest of the topology the model was trained on, when known.
    pub topology_digest: Option<String>,
    /// Tool and version that wrote the file.
    pub created_by: String,
}

impl CheckpointMeta {
    fn new(topology_digest: Option<&str>) -> Self {
        CheckpointMeta {
            topology_digest: topology_digest.map(|s| s.to_string()),
            created_by: format!("beat-core {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadEntry {
    params: serde_json::Value,
    digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    kind: String,
    arch: Architecture,
    meta: CheckpointMeta,
    base_params: serde_json::Value,
    base_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<Vec<HeadEntry>>,
}

fn params_to_value(params: &ParamVector) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&params.to_json()?)?)
}

fn params_from_value(value: &serde_json::Value) -> Result<ParamVector> {
    ParamVector::from_json(&serde_json::to_string(value)?)
}

/// Writes a base-classifier checkpoint.
pub fn save_base(base: &BaseClassifier, topology_digest: Option<&str>, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_FORMAT_VERSION,
        kind: "base".to_string(),
        arch: base.arch().clone(),
        meta: CheckpointMeta::new(topology_digest),
        base_params: params_to_value(base.params())?,
        base_digest: base.digest(),
        heads: None,
    };
    fs::write(path, serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

/// Writes an ensemble checkpoint (frozen base plus every head).
pub fn save_ensemble(
    ensemble: &BeatEnsemble,
    topology_digest: Option<&str>,
    path: &Path,
) -> Result<()> {
    ensemble.verify_frozen()?;
    let heads = ensemble
        .heads()
        .iter()
        .map(|h| {
            Ok(HeadEntry { params: params_to_value(h.params())?, digest: h.params().digest() })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = CheckpointFile {
        version: CHECKPOINT_FORMAT_VERSION,
        kind: "ensemble".to_string(),
        arch: ensemble.base().arch().clone(),
        meta: CheckpointMeta::new(topology_digest),
        base_params: params_to_value(ensemble.base().params())?,
        base_digest: ensemble.base_digest().to_string(),
        heads: Some(heads),
    };
    fs::write(path, serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

fn read_file(path: &Path, expect_kind: &str) -> Result<CheckpointFile> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "unsupported checkpoint format version {} (expected {})",
                file.version, CHECKPOINT_FORMAT_VERSION
            ),
        });
    }
    if file.kind != expect_kind {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected a '{expect_kind}' checkpoint, found '{}'", file.kind),
        });
    }
    Ok(file)
}

fn verified_base(file: &CheckpointFile) -> Result<BaseClassifier> {
    let params = params_from_value(&file.base_params)?;
    if params.digest() != file.base_digest {
        return Err(Error::DigestMismatch(
            "base parameters do not match their stored digest".into(),
        ));
    }
    BaseClassifier::from_parts(file.arch.clone(), params)
}

/// Loads and verifies a base-classifier checkpoint.
pub fn load_base(path: &Path) -> Result<(BaseClassifier, CheckpointMeta)> {
    let file = read_file(path, "base")?;
    Ok((verified_base(&file)?, file.meta))
}

/// Loads and verifies an ensemble checkpoint. The stored base digest is
/// recomputed from the stored base parameters, so a tampered or swapped base
/// (frozen-base violation) fails here.
pub fn load_ensemble(path: &Path) -> Result<(BeatEnsemble, CheckpointMeta)> {
    let file = read_file(path, "ensemble")?;
    let base = verified_base(&file)?;
    let entries = file
        .heads
        .as_ref()
        .ok_or_else(|| Error::Parse { line: 1, msg: "ensemble checkpoint has no heads".into() })?;
    let mut heads = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let params = params_from_value(&entry.params)?;
        if params.digest() != entry.digest {
            return Err(Error::DigestMismatch(format!(
                "head {i} parameters do not match their stored digest"
            )));
        }
        heads.push(AppendedHead::from_params(file.arch.classes, params)?);
    }
    let ensemble = BeatEnsemble::new(base, heads)?;
    Ok((ensemble, file.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::skeleton::{synth_generate, GeneratorConfig};

    fn arch() -> Architecture {
        Architecture { input_dim: 16 * 8 * 3, hidden: vec![8], classes: 4 }
    }

    #[test]
    fn base_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        let base = BaseClassifier::init(arch(), 3).unwrap();
        save_base(&base, Some("topo-digest"), &path).unwrap();
        let (back, meta) = load_base(&path).unwrap();
        assert_eq!(meta.topology_digest.as_deref(), Some("topo-digest"));
        assert_eq!(back.digest(), base.digest());

        let cfg = GeneratorConfig { train_per_class: 2, test_per_class: 1, ..Default::default() };
        let (train, _) = synth_generate(&cfg, 1).unwrap();
        for s in train.samples() {
            assert_eq!(
                base.logits(&s.motion).unwrap(),
                back.logits(&s.motion).unwrap(),
                "checkpoint round trip must preserve logits bit-for-bit"
            );
        }
    }

    #[test]
    fn ensemble_round_trip_preserves_bma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        let base = BaseClassifier::init(arch(), 3).unwrap();
        let heads = (0..3).map(|i| AppendedHead::init(4, i).unwrap()).collect();
        let ens = BeatEnsemble::new(base, heads).unwrap();
        save_ensemble(&ens, None, &path).unwrap();
        let (back, _) = load_ensemble(&path).unwrap();
        assert_eq!(back.member_count(), 3);
        assert_eq!(back.base_digest(), ens.base_digest());

        let cfg = GeneratorConfig { train_per_class: 1, test_per_class: 1, ..Default::default() };
        let (train, _) = synth_generate(&cfg, 2).unwrap();
        let m = &train.samples()[0].motion;
        assert_eq!(ens.predict_bma(m).unwrap(), back.predict_bma(m).unwrap());
    }

    #[test]
    fn tampered_parameters_fail_digest_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        let base = BaseClassifier::init(arch(), 3).unwrap();
        save_base(&base, None, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // Flip one parameter value in the JSON.
        let idx = text.find("\"data\":[").unwrap() + "\"data\":[".len();
        let end = idx + text[idx..].find(',').unwrap();
        let mut tampered = text.clone();
        tampered.replace_range(idx..end, "99.0");
        fs::write(&path, tampered).unwrap();
        assert!(matches!(load_base(&path), Err(Error::DigestMismatch(_))));
    }

    #[test]
    fn kind_and_version_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        let base = BaseClassifier::init(arch(), 3).unwrap();
        save_base(&base, None, &path).unwrap();
        assert!(load_ensemble(&path).is_err(), "a base checkpoint is not an ensemble");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"version\":1", "\"version\":9")).unwrap();
        assert!(load_base(&path).is_err());
    }

    #[test]
    fn wrong_class_count_is_an_architecture_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        let base = BaseClassifier::init(arch(), 3).unwrap();
        save_base(&base, None, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // Claim 5 classes while the stored blocks still have 4 outputs. The
        // digest still matches, so this must surface as an arch error.
        fs::write(&path, text.replace("\"classes\":4", "\"classes\":5")).unwrap();
        assert!(matches!(load_base(&path), Err(Error::ArchMismatch(_))));
    }
}
