//! Python bindings. Structured results are returned as plain dicts and lists.

use std::collections::BTreeSet;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use slu_core::archive::{load_engine, save_engine};
use slu_core::builtin::{extract_builtin as extract, BuiltinKind, ReferenceTime};
use slu_core::confnet::{apply_oov_threshold, greedy_decode_with, word_error_rate as wer, ConfusionNetwork};
use slu_core::dataset::{load_dataset_with, validate_dataset};
use slu_core::engine::{train_engine, training_reference, EngineConfig, NluEngine};
use slu_core::eval::{self, EvalConfig, SlotMatching};
use slu_core::lm::{self, ClassLm, ClassLmConfig, EntityModelKind, ScoreMode};
use slu_core::normalize;
use slu_core::Error;

create_exception!(slu, SluError, PyValueError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => SluError::new_err(other.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SluError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn reference(iso: Option<&str>) -> PyResult<ReferenceTime> {
    match iso {
        Some(s) => ReferenceTime::parse(s).map_err(err),
        None => Ok(ReferenceTime::now()),
    }
}

fn eval_config(overlap: bool, reference_time: Option<&str>) -> PyResult<EvalConfig> {
    Ok(EvalConfig {
        engine: EngineConfig::default(),
        slot_matching: if overlap { SlotMatching::Overlap } else { SlotMatching::Exact },
        reference: match reference_time {
            Some(s) => ReferenceTime::parse(s).map_err(err)?,
            None => training_reference(),
        },
    })
}

#[pyclass(module = "slu", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: slu_core::dataset::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (text, lenient = false))]
    fn from_json(text: &str, lenient: bool) -> PyResult<Self> {
        let inner = slu_core::dataset::Dataset::from_json_str(text, lenient).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, lenient = false))]
    fn load(path: &str, lenient: bool) -> PyResult<Self> {
        Ok(Dataset {
            inner: load_dataset_with(path, lenient).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn intents(&self) -> Vec<String> {
        self.inner.intents.keys().cloned().collect()
    }

    #[getter]
    fn entities(&self) -> Vec<String> {
        self.inner.entities.keys().cloned().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.utterance_count()
    }

    /// Validation messages; empty for a valid dataset.
    fn violations(&self) -> Vec<String> {
        validate_dataset(&self.inner).into_iter().map(|v| v.message).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(intents={}, utterances={})",
            self.inner.intents.len(),
            self.inner.utterance_count()
        )
    }
}

#[pyclass(module = "slu", frozen)]
struct Engine {
    inner: NluEngine,
}

#[pymethods]
impl Engine {
    #[staticmethod]
    #[pyo3(signature = (dataset, seed = 42))]
    fn train(py: Python<'_>, dataset: &Dataset, seed: u64) -> PyResult<Self> {
        let d = dataset.inner.clone();
        let inner = py
            .detach(move || train_engine(&d, &EngineConfig::default(), seed))
            .map_err(err)?;
        Ok(Engine { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Engine {
            inner: load_engine(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_engine(&self.inner, path).map_err(err)
    }

    /// Parse result as a dict with `text`, `intent` and `slots`.
    #[pyo3(signature = (query, reference_time = None))]
    fn parse(&self, py: Python<'_>, query: &str, reference_time: Option<&str>) -> PyResult<Py<PyAny>> {
        let r = reference(reference_time)?;
        to_py(py, &self.inner.parse(query, &r))
    }

    /// Name of the parser that handled the query.
    #[pyo3(signature = (query, reference_time = None))]
    fn parser_for(&self, query: &str, reference_time: Option<&str>) -> PyResult<String> {
        let r = reference(reference_time)?;
        let (_, kind) = self.inner.parse_traced(query, &r);
        Ok(format!("{kind:?}").to_lowercase())
    }

    /// New engine with extra values for a custom entity.
    fn inject(&self, entity: &str, values: Vec<String>) -> PyResult<Engine> {
        Ok(Engine {
            inner: self.inner.inject(entity, &values).map_err(err)?,
        })
    }

    #[getter]
    fn intents(&self) -> Vec<String> {
        self.inner.intents.clone()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint.clone()
    }

    fn language_model(&self) -> Option<LanguageModel> {
        self.inner.class_lm.clone().map(|inner| LanguageModel { inner })
    }
}

#[pyclass(module = "slu", frozen)]
struct LanguageModel {
    inner: ClassLm,
}

fn words(sentence: &str) -> Vec<String> {
    normalize::normalize(sentence).tokens.into_iter().map(|t| t.text).collect()
}

#[pymethods]
impl LanguageModel {
    #[staticmethod]
    #[pyo3(signature = (dataset, order = 2, entity_model = "union", entity_order = 2))]
    fn train(dataset: &Dataset, order: usize, entity_model: &str, entity_order: usize) -> PyResult<Self> {
        let entity_model = match entity_model {
            "union" => EntityModelKind::Union,
            "ngram" => EntityModelKind::NGram,
            other => return Err(PyValueError::new_err(format!("unknown entity model '{other}'"))),
        };
        let cfg = ClassLmConfig {
            order,
            entity_model,
            entity_order,
        };
        Ok(LanguageModel {
            inner: ClassLm::from_dataset(&dataset.inner, &cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| SluError::new_err(e.to_string()))?;
        Ok(LanguageModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| SluError::new_err(e.to_string()))
    }

    /// Natural-log probability of a sentence (normalized first); `-inf` when
    /// no derivation exists.
    #[pyo3(signature = (sentence, mode = "sum", unk = false))]
    fn score(&self, sentence: &str, mode: &str, unk: bool) -> PyResult<f64> {
        let mode = match mode {
            "sum" => ScoreMode::Sum,
            "max" => ScoreMode::Max,
            other => return Err(PyValueError::new_err(format!("unknown score mode '{other}'"))),
        };
        let w = words(sentence);
        let refs: Vec<&str> = w.iter().map(String::as_str).collect();
        Ok(self.inner.score(&refs, mode, unk))
    }

    #[pyo3(signature = (sentences, unk = false))]
    fn perplexity(&self, sentences: Vec<String>, unk: bool) -> PyResult<f64> {
        let corpus: Vec<Vec<String>> = sentences.iter().map(|s| words(s)).collect();
        lm::perplexity(&self.inner, &corpus, unk).map_err(err)
    }

    #[pyo3(signature = (seed = 42, max_len = 30))]
    fn sample(&self, seed: u64, max_len: usize) -> String {
        self.inner.sample(seed, max_len).join(" ")
    }

    fn inject(&self, entity: &str, values: Vec<String>) -> PyResult<LanguageModel> {
        let values: Vec<String> = values.iter().map(|v| words(v).join(" ")).collect();
        Ok(LanguageModel {
            inner: self.inner.inject(entity, &values).map_err(err)?,
        })
    }
}

/// Tokens of the normalized text: dicts with `text`, `span`, `kind`.
#[pyfunction]
#[pyo3(signature = (text, verbalize = true))]
fn normalize_text(py: Python<'_>, text: &str, verbalize: bool) -> PyResult<Py<PyAny>> {
    let nt = if verbalize {
        normalize::normalize(text)
    } else {
        normalize::tokenize(text)
    };
    to_py(py, &nt.tokens)
}

#[pyfunction]
fn verbalize_number(n: i64) -> PyResult<Vec<String>> {
    normalize::verbalize_number(n).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (text, scope = None, reference_time = None))]
fn extract_builtin(
    py: Python<'_>,
    text: &str,
    scope: Option<Vec<String>>,
    reference_time: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let kinds: BTreeSet<BuiltinKind> = match scope {
        None => BuiltinKind::ALL.into_iter().collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                let id = if n.contains('/') { n.clone() } else { format!("snips/{n}") };
                BuiltinKind::from_identifier(&id)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown builtin kind '{n}'")))
            })
            .collect::<PyResult<_>>()?,
    };
    let r = reference(reference_time)?;
    to_py(py, &extract(&normalize::normalize(text), &kinds, &r))
}

/// Greedy decode of a confusion network given as JSON.
#[pyfunction]
#[pyo3(signature = (network_json, threshold = 0.5, include_null = false))]
fn decode_confusion_network(
    py: Python<'_>,
    network_json: &str,
    threshold: f64,
    include_null: bool,
) -> PyResult<Py<PyAny>> {
    let cn = ConfusionNetwork::from_json(network_json).map_err(err)?;
    let decoded = apply_oov_threshold(&greedy_decode_with(&cn, include_null).map_err(err)?, threshold);
    to_py(
        py,
        &serde_json::json!({
            "text": decoded.text(),
            "words": decoded.words,
            "sentence_confidence": decoded.sentence_confidence,
        }),
    )
}

#[pyfunction]
fn word_error_rate(hypothesis: Vec<String>, reference: Vec<String>) -> PyResult<f64> {
    wer(&hypothesis, &reference).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (dataset, folds = 5, seed = 42, overlap = false, reference_time = None))]
fn evaluate(
    py: Python<'_>,
    dataset: &Dataset,
    folds: usize,
    seed: u64,
    overlap: bool,
    reference_time: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let cfg = eval_config(overlap, reference_time)?;
    let d = dataset.inner.clone();
    let report = py.detach(move || eval::evaluate_cv(&d, folds, seed, &cfg)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (dataset, sizes, seed = 42))]
fn learning_curve(py: Python<'_>, dataset: &Dataset, sizes: Vec<usize>, seed: u64) -> PyResult<Py<PyAny>> {
    let cfg = eval_config(false, None)?;
    let d = dataset.inner.clone();
    let points = py
        .detach(move || eval::learning_curve(&d, &sizes, seed, &cfg))
        .map_err(err)?;
    to_py(py, &points)
}

/// Majority-vote report; the corrected dataset is returned alongside it.
#[pyfunction]
#[pyo3(signature = (dataset, repetitions = 5, folds = 3, seed = 42))]
fn disambiguate(
    py: Python<'_>,
    dataset: &Dataset,
    repetitions: usize,
    folds: usize,
    seed: u64,
) -> PyResult<(Py<PyAny>, Dataset)> {
    let cfg = eval_config(false, None)?;
    let d = dataset.inner.clone();
    let report = py
        .detach(move || eval::disambiguate(&d, repetitions, folds, seed, &cfg))
        .map_err(err)?;
    let corrected = Dataset {
        inner: report.corrected.clone(),
    };
    Ok((to_py(py, &report)?, corrected))
}

#[pymodule]
fn slu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SluError", m.py().get_type::<SluError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Engine>()?;
    m.add_class::<LanguageModel>()?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(verbalize_number, m)?)?;
    m.add_function(wrap_pyfunction!(extract_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(decode_confusion_network, m)?)?;
    m.add_function(wrap_pyfunction!(word_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(learning_curve, m)?)?;
    m.add_function(wrap_pyfunction!(disambiguate, m)?)?;
    Ok(())
}
