//! Engine archives: a directory of JSON members with a checksummed manifest.
//!
//! Layout:
//! ```text
//! manifest.json            format version, fingerprint, config, checksums
//! deterministic.json
//! intent_classifier.json   absent for single-intent engines
//! slot_filler_<intent>.json
//! class_lm.json            absent when no class LM was trained
//! entities.json            value resolution tables
//! resources/gazetteers.json
//! resources/clusters/<n>.tsv
//! timings.json             wall-clock data, excluded from checksums
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::engine::{EngineConfig, NluEngine};
use crate::error::{Error, Result};
use crate::prob::clusters::ClusterLexicon;
use crate::prob::features::FeatureResources;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub fingerprint: String,
    pub seed: u64,
    pub intents: Vec<String>,
    pub config: EngineConfig,
    /// Cluster lexicon names, in feature order.
    pub clusters: Vec<String>,
    /// Member path -> hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Timings {
    training_seconds: f64,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn slot_filler_member(intent: &str) -> String {
    format!("slot_filler_{intent}.json")
}

fn cluster_member(i: usize) -> String {
    format!("resources/clusters/{i}.tsv")
}

/// Write `engine` into directory `path`, creating it if needed.
pub fn save_engine(engine: &NluEngine, path: impl AsRef<Path>) -> Result<()> {
    let root = path.as_ref();
    let mut members: BTreeMap<String, String> = BTreeMap::new();
    members.insert("deterministic.json".into(), to_json(&engine.patterns)?);
    if let Some(m) = &engine.classifier {
        members.insert("intent_classifier.json".into(), to_json(m)?);
    }
    for (intent, model) in &engine.slot_fillers {
        members.insert(slot_filler_member(intent), to_json(model)?);
    }
    if let Some(lm) = &engine.class_lm {
        members.insert("class_lm.json".into(), to_json(lm)?);
    }
    members.insert("entities.json".into(), to_json(&engine.entities)?);
    members.insert(
        "resources/gazetteers.json".into(),
        to_json(&engine.resources.gazetteers)?,
    );
    for (i, lexicon) in engine.resources.clusters.iter().enumerate() {
        members.insert(cluster_member(i), lexicon.to_tsv());
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        fingerprint: engine.fingerprint.clone(),
        seed: engine.seed,
        intents: engine.intents.clone(),
        config: engine.config.clone(),
        clusters: engine.resources.clusters.iter().map(|c| c.name.clone()).collect(),
        checksums: members
            .iter()
            .map(|(name, body)| (name.clone(), sha256(body.as_bytes())))
            .collect(),
    };
    fs::create_dir_all(root.join("resources/clusters"))?;
    for (name, body) in &members {
        fs::write(root.join(name), body)?;
    }
    fs::write(root.join("manifest.json"), to_json(&manifest)?)?;
    fs::write(
        root.join("timings.json"),
        to_json(&Timings {
            training_seconds: engine.training_seconds,
        })?,
    )?;
    Ok(())
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::CorruptArchive(message.into())
}

struct Reader<'a> {
    root: &'a Path,
    checksums: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn text(&self, name: &str) -> Result<String> {
        let expected = self
            .checksums
            .get(name)
            .ok_or_else(|| corrupt(format!("{name} is not listed in the manifest")))?;
        let bytes = fs::read(self.root.join(name)).map_err(|e| corrupt(format!("{name}: {e}")))?;
        if &sha256(&bytes) != expected {
            return Err(corrupt(format!("{name}: checksum mismatch")));
        }
        String::from_utf8(bytes).map_err(|_| corrupt(format!("{name}: not UTF-8")))
    }

    fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_str(&self.text(name)?).map_err(|e| corrupt(format!("{name}: {e}")))
    }

    fn optional<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        if self.checksums.contains_key(name) {
            self.json(name).map(Some)
        } else {
            Ok(None)
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let file = path.as_ref().join("manifest.json");
    let text = fs::read_to_string(&file).map_err(|e| corrupt(format!("manifest.json: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest.json: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("manifest.json: missing format_version"))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| corrupt(format!("manifest.json: {e}")))
}

/// Load an archive, verifying its format version and member checksums.
pub fn load_engine(path: impl AsRef<Path>) -> Result<NluEngine> {
    let root = path.as_ref();
    let manifest = read_manifest(root)?;
    let reader = Reader {
        root,
        checksums: &manifest.checksums,
    };
    let mut slot_fillers = BTreeMap::new();
    for intent in &manifest.intents {
        slot_fillers.insert(intent.clone(), reader.json(&slot_filler_member(intent))?);
    }
    let mut clusters = Vec::new();
    for (i, name) in manifest.clusters.iter().enumerate() {
        clusters.push(ClusterLexicon::from_tsv(name, &reader.text(&cluster_member(i))?)?);
    }
    let training_seconds = fs::read_to_string(root.join("timings.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Timings>(&t).ok())
        .map(|t| t.training_seconds)
        .unwrap_or(0.0);
    let mut config = manifest.config;
    config.clusters = clusters.clone();
    Ok(NluEngine {
        fingerprint: manifest.fingerprint,
        seed: manifest.seed,
        intents: manifest.intents,
        patterns: reader.json("deterministic.json")?,
        classifier: reader.optional("intent_classifier.json")?,
        slot_fillers,
        resources: FeatureResources {
            gazetteers: reader.json("resources/gazetteers.json")?,
            clusters,
        },
        entities: reader.json("entities.json")?,
        class_lm: reader.optional("class_lm.json")?,
        training_seconds,
        config,
    })
}

/// Check that an engine was trained on exactly this dataset.
pub fn verify_fingerprint(engine: &NluEngine, d: &Dataset) -> Result<()> {
    let expected = d.fingerprint();
    if engine.fingerprint != expected {
        return Err(Error::InvalidArgument(format!(
            "engine fingerprint {} does not match dataset fingerprint {expected}",
            engine.fingerprint
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::ReferenceTime;
    use crate::engine::train_engine;
    use crate::fixtures;

    fn engine() -> NluEngine {
        let cfg = EngineConfig {
            clusters: vec![fixtures::toy_clusters()],
            ..EngineConfig::default()
        };
        train_engine(&fixtures::smart_lights(), &cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let e = engine();
        let dir = tempfile::tempdir().unwrap();
        save_engine(&e, dir.path()).unwrap();
        let loaded = load_engine(dir.path()).unwrap();
        assert_eq!(loaded, e);
        verify_fingerprint(&loaded, &fixtures::smart_lights()).unwrap();
        assert!(verify_fingerprint(&loaded, &fixtures::thermostat()).is_err());
        let reference = ReferenceTime::parse("2018-04-18T10:00:00+00:00").unwrap();
        for q in ["set the kitchen lights to blue", "dim the lights in the bedroom a bit", "zzq"] {
            assert_eq!(loaded.parse(q, &reference), e.parse(q, &reference));
        }
    }

    #[test]
    fn truncated_member_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        save_engine(&engine(), dir.path()).unwrap();
        let file = dir.path().join("deterministic.json");
        let text = fs::read_to_string(&file).unwrap();
        fs::write(&file, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_engine(dir.path()), Err(Error::CorruptArchive(_))));
        fs::remove_file(dir.path().join("manifest.json")).unwrap();
        assert!(matches!(load_engine(dir.path()), Err(Error::CorruptArchive(_))));
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_engine(&engine(), dir.path()).unwrap();
        let file = dir.path().join("manifest.json");
        let text = fs::read_to_string(&file).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&file, text).unwrap();
        assert!(matches!(load_engine(dir.path()), Err(Error::VersionMismatch { .. })));
    }
}
