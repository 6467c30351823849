use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use slu_core::fixtures;

const REFERENCE: &str = "2018-04-18T10:00:00+00:00";

fn slu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slu"))
        .args(args)
        .args(["--reference-time", REFERENCE])
        .output()
        .expect("run slu")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn json_lines(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("each line is JSON"))
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_parse() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::SMART_LIGHTS_JSON);
    let engine = dir.path().join("eng").to_string_lossy().into_owned();
    let trained = stdout_json(&slu(&["train", "--dataset", &dataset, "--output", &engine]));
    assert_eq!(trained["intents"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("eng/manifest.json").exists());

    let parsed = json_lines(&slu(&["parse", "--engine", &engine, "--query", "set the kitchen lights to blue"]));
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0]["intent"]["intentName"], "SetLightColor");
    let p = parsed[0]["intent"]["probability"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    let slots = parsed[0]["slots"].as_array().unwrap();
    assert!(slots.iter().any(|s| s["slot_name"] == "room" && s["rawValue"] == "kitchen"));
    assert!(slots.iter().all(|s| s["range"]["start"].is_u64() && s["range"]["end"].is_u64()));
}

#[test]
fn thermostat_parse_resolves_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::THERMOSTAT_JSON);
    let engine = dir.path().join("eng").to_string_lossy().into_owned();
    stdout_json(&slu(&["train", "--dataset", &dataset, "--output", &engine]));
    let parsed = json_lines(&slu(&[
        "parse",
        "--engine",
        &engine,
        "--query",
        "Set the temperature to 23°C in the living room",
    ]));
    assert_eq!(parsed[0]["intent"]["intentName"], "SetTemperature");
    let slots = parsed[0]["slots"].as_array().unwrap();
    let temp = slots.iter().find(|s| s["entity"] == "snips/temperature").unwrap();
    assert_eq!(temp["value"]["value"], 23.0);
    assert_eq!(temp["value"]["unit"], "celsius");
}

#[test]
fn usage_errors_exit_one() {
    let out = slu(&["parse", "--query", "hello"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--engine"));
    assert_eq!(slu(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(slu(&["normalize", "--text", "x", "--bogus"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"language\": \"en\", \"intents\": {");
    let out = slu(&["evaluate", "--dataset", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let missing = dir.path().join("nope").to_string_lossy().into_owned();
    assert_eq!(slu(&["parse", "--engine", &missing, "--query", "x"]).status.code(), Some(2));
}

#[test]
fn lenient_accepts_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(fixtures::LIGHTS_CLEAN_JSON).unwrap();
    doc["comment"] = Value::from("extra");
    let path = write(dir.path(), "d.json", &doc.to_string());
    let lm = dir.path().join("lm.json").to_string_lossy().into_owned();
    assert_eq!(slu(&["lm", "train", "--dataset", &path, "--output", &lm]).status.code(), Some(2));
    stdout_json(&slu(&["--lenient", "lm", "train", "--dataset", &path, "--output", &lm]));
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::HAND_SCORED_JSON);
    let report = dir.path().join("r.json");
    let printed = stdout_json(&slu(&[
        "--seed",
        "0",
        "evaluate",
        "--dataset",
        &dataset,
        "--folds",
        "2",
        "--report",
        report.to_str().unwrap(),
    ]));
    let written: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(printed, written);
    for key in ["intents", "slots", "intent_micro", "slot_micro", "counts", "assignments"] {
        assert!(written.get(key).is_some(), "missing {key}");
    }
    let micro = &written["intent_micro"];
    for key in ["precision", "recall", "f1"] {
        let v = micro[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn learning_curve_and_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::SMART_LIGHTS_JSON);
    let tsv = dir.path().join("curve.tsv");
    let points = stdout_json(&slu(&[
        "learning-curve",
        "--dataset",
        &dataset,
        "--sizes",
        "3,6",
        "--tsv",
        tsv.to_str().unwrap(),
    ]));
    assert_eq!(points.as_array().unwrap().len(), 2);
    let table = fs::read_to_string(tsv).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(slu(&["learning-curve", "--dataset", &dataset, "--sizes", "6,3"]).status.code(), Some(2));
}

#[test]
fn disambiguate_writes_corrected_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::PLANTED_ERRORS_JSON);
    let corrected = dir.path().join("fixed.json");
    let report = stdout_json(&slu(&[
        "--seed",
        "1",
        "disambiguate",
        "--dataset",
        &dataset,
        "--repetitions",
        "5",
        "--output",
        corrected.to_str().unwrap(),
    ]));
    let verdicts: Vec<&str> = report["utterances"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|u| u["verdicts"].as_array().unwrap())
        .map(|v| v["verdict"].as_str().unwrap())
        .collect();
    assert!(verdicts.iter().any(|v| *v != "keep"), "{verdicts:?}");
    let reloaded = slu_core::dataset::load_dataset(&corrected).unwrap();
    let reloaded: Value = serde_json::from_str(&reloaded.to_json_pretty()).unwrap();
    assert_eq!(reloaded, report["corrected"]);
    assert_eq!(slu(&["disambiguate", "--dataset", &dataset, "--repetitions", "4"]).status.code(), Some(2));
}

#[test]
fn inject_extends_engine() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::SMART_LIGHTS_JSON);
    let engine = dir.path().join("eng").to_string_lossy().into_owned();
    let updated = dir.path().join("eng2").to_string_lossy().into_owned();
    stdout_json(&slu(&["train", "--dataset", &dataset, "--output", &engine]));
    let before = json_lines(&slu(&["lm", "score", "--model", &engine, "--sentence", "turn on the lights in the conservatory"]));
    assert!(before[0]["logprob"].is_null());
    stdout_json(&slu(&[
        "inject", "--engine", &engine, "--entity", "room", "--values", "conservatory,wine cellar", "--output", &updated,
    ]));
    let after = json_lines(&slu(&["lm", "score", "--model", &updated, "--sentence", "turn on the lights in the conservatory"]));
    assert!(after[0]["logprob"].as_f64().unwrap().is_finite());
    let out = slu(&["inject", "--engine", &engine, "--entity", "snips/number", "--values", "x", "--output", &updated]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lm_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::SMART_LIGHTS_JSON);
    let lm = dir.path().join("lm.json").to_string_lossy().into_owned();
    let lm2 = dir.path().join("lm2.json").to_string_lossy().into_owned();
    stdout_json(&slu(&["lm", "train", "--dataset", &dataset, "--output", &lm]));

    let scores = json_lines(&slu(&[
        "lm", "score", "--model", &lm, "--sentence", "turn on the lights in the kitchen", "--sentence", "zebra",
    ]));
    assert_eq!(scores.len(), 2);
    assert!(scores[0]["logprob"].as_f64().unwrap() < 0.0);
    assert!(scores[1]["logprob"].is_null());
    let with_unk = json_lines(&slu(&["lm", "score", "--model", &lm, "--sentence", "zebra", "--unk"]));
    assert!(with_unk[0]["logprob"].is_f64());

    let corpus = write(dir.path(), "corpus.txt", "turn on the lights in the kitchen\nturn off the lights\n");
    let ppl = stdout_json(&slu(&["lm", "perplexity", "--model", &lm, "--corpus", &corpus]));
    assert!(ppl["perplexity"].as_f64().unwrap() >= 1.0);

    let a = json_lines(&slu(&["lm", "sample", "--model", &lm, "--count", "3"]));
    let b = json_lines(&slu(&["lm", "sample", "--model", &lm, "--count", "3"]));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);

    stdout_json(&slu(&["lm", "inject", "--model", &lm, "--entity", "room", "--values", "conservatory", "--output", &lm2]));
    let injected = json_lines(&slu(&["lm", "score", "--model", &lm2, "--sentence", "turn on the lights in the conservatory"]));
    assert!(injected[0]["logprob"].is_f64());
}

#[test]
fn decode_confusion_network() {
    let dir = tempfile::tempdir().unwrap();
    let cn = r#"{"segments":[
        [{"word":"play","posterior":0.9},{"word":"<eps>","posterior":0.1}],
        [{"word":"<eps>","posterior":0.6},{"word":"the","posterior":0.4}],
        [{"word":"beatles","posterior":0.4},{"word":"beetles","posterior":0.35},{"word":"battles","posterior":0.25}]
    ]}"#;
    let path = write(dir.path(), "cn.json", cn);
    let out = stdout_json(&slu(&["decode-cn", "--input", &path, "--threshold", "0.5"]));
    assert_eq!(out["text"], "play <oov>");
    let expected = (0.9f64 * 0.4).sqrt();
    assert!((out["sentence_confidence"].as_f64().unwrap() - expected).abs() < 1e-12);
    let with_null = stdout_json(&slu(&["decode-cn", "--input", &path, "--threshold", "0", "--include-null"]));
    assert_eq!(with_null["text"], "play beatles");
    assert!((with_null["sentence_confidence"].as_f64().unwrap() - (0.9f64 * 0.6 * 0.4).cbrt()).abs() < 1e-12);

    let bad = write(dir.path(), "bad.json", r#"{"segments":[[{"word":"a","posterior":0.5}]]}"#);
    assert_eq!(slu(&["decode-cn", "--input", &bad]).status.code(), Some(2));
}

#[test]
fn normalize_and_builtin() {
    let n = stdout_json(&slu(&["normalize", "--text", "Set it to 23°C"]));
    let words: Vec<&str> = n["tokens"].as_array().unwrap().iter().map(|t| t["text"].as_str().unwrap()).collect();
    assert_eq!(words, ["set", "it", "to", "twenty", "three", "degrees", "celsius"]);

    let matches = json_lines(&slu(&["builtin", "--text", "wake me tomorrow evening for 2 hours"]));
    let kinds: Vec<&str> = matches.iter().map(|m| m["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["snips/datetime", "snips/duration"]);
    assert_eq!(matches[0]["resolved"]["value"], "2018-04-19T19:00:00+00:00");

    let numbers = json_lines(&slu(&["builtin", "--text", "twenty three or 7th", "--scope", "number"]));
    assert_eq!(numbers.len(), 1);
    assert_eq!(numbers[0]["resolved"]["value"], 23.0);
    assert_eq!(slu(&["builtin", "--text", "x", "--scope", "colour"]).status.code(), Some(2));
}

#[test]
fn same_seed_same_output() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write(dir.path(), "d.json", fixtures::LIGHTS_CLEAN_JSON);
    let a = slu(&["--seed", "7", "evaluate", "--dataset", &dataset, "--folds", "3"]);
    let b = slu(&["--seed", "7", "evaluate", "--dataset", &dataset, "--folds", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
