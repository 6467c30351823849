use std::collections::BTreeMap;
use std::fs;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slu_core::align::align_utterance;
use slu_core::archive::{load_engine, save_engine};
use slu_core::builtin::ReferenceTime;
use slu_core::dataset::{slot, text, CustomEntity, Dataset, EntityDef, EntityValue, IntentDef, Utterance};
use slu_core::engine::{train_engine, EngineConfig};
use slu_core::eval::{curve_tsv, disambiguate, evaluate_cv, learning_curve, EvalConfig, Verdict};
use slu_core::fixtures;
use slu_core::prob::crf::train_slot_filler;
use slu_core::prob::features::{per_kind_builtin_matches, FeatureConfig, FeatureResources};

fn reference() -> ReferenceTime {
    ReferenceTime::parse("2018-04-18T10:00:00+00:00").unwrap()
}

fn archive_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                if name != "timings.json" {
                    out.insert(name, fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_archives() {
    let d = fixtures::smart_lights();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_engine(&train_engine(&d, &EngineConfig::default(), 5).unwrap(), a.path()).unwrap();
    save_engine(&train_engine(&d, &EngineConfig::default(), 5).unwrap(), b.path()).unwrap();
    let (x, y) = (archive_bytes(a.path()), archive_bytes(b.path()));
    assert!(x.contains_key("manifest.json") && x.contains_key("slot_filler_SetLightColor.json"));
    assert!(x.contains_key("class_lm.json") && x.contains_key("resources/gazetteers.json"));
    assert_eq!(x, y);
}

#[test]
fn parse_parity_after_round_trip() {
    let d = fixtures::smart_lights();
    let engine = train_engine(&d, &EngineConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_engine(&engine, dir.path()).unwrap();
    let loaded = load_engine(dir.path()).unwrap();
    let texts: Vec<String> = d.intents.values().flat_map(|i| i.utterances.iter().map(|u| u.text())).collect();
    for (i, t) in texts.iter().take(100).enumerate() {
        let q = if i % 2 == 0 { t.clone() } else { format!("hey {t} thanks") };
        assert_eq!(engine.parse(&q, &reference()), loaded.parse(&q, &reference()));
    }
}

#[test]
fn smart_lights_generalizes() {
    let engine = train_engine(&fixtures::smart_lights(), &EngineConfig::default(), 42).unwrap();
    let r = engine.parse("set the kitchen lights to blue", &reference());
    assert_eq!(r.intent.intent_name.as_deref(), Some("SetLightColor"));
    let slots: Vec<(&str, &str)> = r.slots.iter().map(|s| (s.slot_name.as_str(), s.raw_value.as_str())).collect();
    assert!(slots.contains(&("room", "kitchen")), "{slots:?}");
    assert!(slots.contains(&("color", "blue")), "{slots:?}");
    for w in r.slots.windows(2) {
        assert!(w[0].range.end <= w[1].range.start);
    }
}

fn room_dataset(rooms: &[String], utterances: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = [
        ("set the ", " lights"),
        ("switch on the ", " lamp please"),
        ("turn off everything in the ", ""),
        ("dim the ", " lights a bit"),
    ];
    let utterances = (0..utterances)
        .map(|_| {
            let (before, after) = templates.choose(&mut rng).unwrap();
            let room = rooms.choose(&mut rng).unwrap();
            let mut chunks = vec![text(before), slot(room, "room", "room")];
            if !after.is_empty() {
                chunks.push(text(after));
            }
            Utterance::from_chunks(chunks)
        })
        .collect();
    Dataset {
        language: "en".into(),
        intents: BTreeMap::from([("Lights".to_string(), IntentDef { utterances })]),
        entities: BTreeMap::from([(
            "room".to_string(),
            EntityDef::Custom(CustomEntity {
                values: rooms
                    .iter()
                    .map(|r| EntityValue {
                        value: r.clone(),
                        synonyms: vec![],
                    })
                    .collect(),
                automatically_extensible: true,
            }),
        )]),
    }
}

#[test]
fn crf_slot_filler_on_room_template() {
    let rooms: Vec<String> = (0..30).map(|i| format!("room{i}")).collect();
    let train = room_dataset(&rooms, 500, 1);
    let test = room_dataset(&rooms, 100, 2);
    let resources = FeatureResources::from_dataset(&train, vec![]);
    let examples: Vec<_> = train.intents["Lights"]
        .utterances
        .iter()
        .map(|u| {
            let a = align_utterance(u);
            let m = per_kind_builtin_matches(&a.nt, &reference());
            (a, m)
        })
        .collect();
    let cfg = FeatureConfig::default();
    let model = train_slot_filler(
        "Lights",
        train.slot_entities("Lights"),
        &examples,
        &cfg,
        &Default::default(),
        &resources,
    );
    let (mut tp, mut total_pred, mut total_gold) = (0, 0, 0);
    for u in &test.intents["Lights"].utterances {
        let a = align_utterance(u);
        let m = per_kind_builtin_matches(&a.nt, &reference());
        let found = model.fill_slots(&a.nt, &m, &cfg, &resources);
        total_pred += found.len();
        total_gold += a.slots.len();
        tp += found
            .iter()
            .filter(|f| a.slots.iter().any(|g| g.tokens == f.tokens && g.entity == f.entity))
            .count();
    }
    let p = tp as f64 / total_pred as f64;
    let r = tp as f64 / total_gold as f64;
    assert!(2.0 * p * r / (p + r) >= 0.95, "p={p} r={r}");
}

#[test]
fn perfect_engine_scores_one() {
    let d = fixtures::lights_clean();
    let report = evaluate_cv(&d, 3, 1, &EvalConfig::default()).unwrap();
    let again = evaluate_cv(&d, 3, 1, &EvalConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    for m in report.intents.values().chain(report.slots.values()) {
        assert!((0.0..=1.0).contains(&m.f1));
    }
    let mut tp = 0;
    let mut fp = 0;
    for c in report.counts.slots.values() {
        tp += c.tp;
        fp += c.fp;
    }
    assert!((report.slot_micro.precision - tp as f64 / (tp + fp) as f64).abs() < 1e-12);
}

#[test]
fn clean_dataset_is_kept() {
    let d = fixtures::lights_clean();
    let report = disambiguate(&d, 3, 3, 0, &EvalConfig::default()).unwrap();
    let changes: Vec<_> = report.changes().collect();
    assert!(changes.is_empty(), "{changes:?}");
    assert!(report.utterances.iter().all(|u| u.verdicts == vec![Verdict::Keep]));
    assert_eq!(report.corrected, d);
}

#[test]
fn planted_errors_are_corrected() {
    let d = fixtures::planted_errors();
    let report = disambiguate(&d, 5, 3, 1, &EvalConfig::default()).unwrap();
    let on = &report.corrected.intents["SwitchLightOn"].utterances;
    assert!(on.iter().all(|u| u.text() != "switch off the lights"));
    let fixed = report.corrected.intents["SetLightBrightness"]
        .utterances
        .iter()
        .find(|u| u.text() == "set the brightness to 60 in the kitchen")
        .unwrap();
    assert_eq!(fixed.slots().len(), 2);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["corrected"]["intents"].is_object());
}

#[test]
fn learning_curve_rows() {
    let d = fixtures::smart_lights();
    let points = learning_curve(&d, &[5], 0, &EvalConfig::default()).unwrap();
    assert_eq!(points.len(), 1);
    let tsv = curve_tsv(&points);
    assert_eq!(tsv.lines().count(), 2);
    assert!(tsv.starts_with("size\tintent_f1\tslot_f1\n"));
    assert!(learning_curve(&d, &[10, 5], 0, &EvalConfig::default()).is_err());
    assert!(learning_curve(&d, &[1000], 0, &EvalConfig::default()).is_err());
}
