//! Bundled datasets and resources used by tests, examples and the CLI.

use crate::dataset::Dataset;
use crate::prob::clusters::ClusterLexicon;

pub const SMART_LIGHTS_JSON: &str = include_str!("../fixtures/smart_lights.json");
pub const THERMOSTAT_JSON: &str = include_str!("../fixtures/thermostat.json");
pub const HAND_SCORED_JSON: &str = include_str!("../fixtures/hand_scored.json");
pub const HAND_SCORED_EXPECTED_JSON: &str = include_str!("../fixtures/hand_scored_expected.json");
pub const PLANTED_ERRORS_JSON: &str = include_str!("../fixtures/planted_errors.json");
pub const LIGHTS_CLEAN_JSON: &str = include_str!("../fixtures/lights_clean.json");
pub const TOY_CLUSTERS_TSV: &str = include_str!("../resources/toy_brown_clusters.tsv");

fn load(json: &str) -> Dataset {
    Dataset::from_json_str(json, false).expect("bundled dataset is valid")
}

/// Six-intent smart lights assistant, 292 utterances.
pub fn smart_lights() -> Dataset {
    load(SMART_LIGHTS_JSON)
}

/// Thermostat assistant with a temperature builtin slot.
pub fn thermostat() -> Dataset {
    load(THERMOSTAT_JSON)
}

/// Ten-query two-intent fixture with known confusions.
pub fn hand_scored() -> Dataset {
    load(HAND_SCORED_JSON)
}

/// Lights dataset with one mislabeled intent and one missing slot.
pub fn planted_errors() -> Dataset {
    load(PLANTED_ERRORS_JSON)
}

/// The planted-error dataset without the planted errors.
pub fn lights_clean() -> Dataset {
    load(LIGHTS_CLEAN_JSON)
}

/// 200-word toy Brown cluster lexicon.
pub fn toy_clusters() -> ClusterLexicon {
    ClusterLexicon::from_tsv("toy_brown_clusters", TOY_CLUSTERS_TSV).expect("bundled lexicon parses")
}

/// All bundled training datasets by name.
pub fn all_datasets() -> Vec<(&'static str, Dataset)> {
    vec![
        ("smart_lights", smart_lights()),
        ("thermostat", thermostat()),
        ("hand_scored", hand_scored()),
        ("planted_errors", planted_errors()),
        ("lights_clean", lights_clean()),
    ]
}
