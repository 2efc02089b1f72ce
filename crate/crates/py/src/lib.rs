//! Python bindings: segmentation, span recovery, metrics, LLM output parsing,
//! the synthetic corpus and the sentence-pair detector.
//!
//! Records cross the boundary as JSONL files in the canonical format written
//! by the `nadet` command-line tool, or as plain dicts and tuples.

use std::path::PathBuf;

use nadet::corpus::{
    load_corpus, save_corpus, AdCandidate, AdInsertionRecord, Engine, MetaTopic, Query, SearchResponse, SentencePair,
    Subset,
};
use nadet::encoder::{self, DetectorCheckpoint, EncoderConfig};
use nadet::evaluator::{self, Preprocessor};
use nadet::injector::{self, TemplateBank};
use nadet::llm_detector::{self, DetectionMode};
use nadet::pair_builder::{build_pairs, NeighborPolicy, PairOptions, PairSource};
use nadet::segment::Segmenter;
use nadet::splitter::{self, SplitInput};
use nadet::synthetic::{self, SyntheticConfig};
use nadet::text::CharRange;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: nadet::Error) -> PyErr {
    match e {
        nadet::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        nadet::Error::Training(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn span(r: CharRange) -> (usize, usize) {
    (r.start, r.end)
}

/// Sentence ranges of `text` as `(start, end)` character offsets.
#[pyfunction]
fn segment(text: &str) -> Vec<(usize, usize)> {
    Segmenter::default().segment(text).into_iter().map(span).collect()
}

/// Character range of the text inserted into `original` to give `modified`.
#[pyfunction]
fn extract_insertion_span(original: &str, modified: &str) -> PyResult<(usize, usize)> {
    injector::extract_insertion_span(original, modified).map(span).map_err(to_py)
}

/// Insert a templated ad for `item` into `text`. Returns the modified text,
/// the inserted span and the affected sentence index.
#[pyfunction]
#[pyo3(signature = (text, item, qualities, topic, seed = 0))]
fn template_insert<'py>(
    py: Python<'py>,
    text: &str,
    item: &str,
    qualities: Vec<String>,
    topic: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let topic: MetaTopic = topic.parse().map_err(to_py)?;
    let response = SearchResponse {
        id: "response".into(),
        query_id: "query".into(),
        engine: Engine::Synthetic,
        text: text.into(),
        sentences: Segmenter::default().segment(text),
        language: "en".into(),
    };
    let candidate = AdCandidate {
        id: "candidate".into(),
        topic,
        item: item.into(),
        qualities,
    };
    let record = injector::template_insert_ad(&response, &candidate, seed, &TemplateBank::default(), &Segmenter::default())
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("text", &record.text)?;
    out.set_item("span", span(record.insertion_span))?;
    out.set_item("affected_sentence", record.affected_sentence_index)?;
    Ok(out)
}

/// ROUGE-1 F1 after stopword removal, lemmatization and item stripping.
#[pyfunction]
#[pyo3(signature = (a, b, strip_items = Vec::new()))]
fn rouge1_f1(a: &str, b: &str, strip_items: Vec<String>) -> f64 {
    let items: Vec<&str> = strip_items.iter().map(String::as_str).collect();
    evaluator::rouge1_f1(a, b, &Preprocessor::default(), &items).f1
}

/// Student-t confidence interval of the mean, clamped to [0, 1].
#[pyfunction]
#[pyo3(signature = (scores, level = 0.95))]
fn confidence_interval(scores: Vec<f64>, level: f64) -> PyResult<(f64, f64)> {
    evaluator::confidence_interval(&scores, level).map_err(to_py)
}

/// Parse an LLM detector answer into `{"items": [...], "passages": [...]}`.
/// Raises `ValueError` when the answer follows no known format.
#[pyfunction]
#[pyo3(signature = (raw, mode = "full"))]
fn parse_llm_output<'py>(py: Python<'py>, raw: &str, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "full" => DetectionMode::Full,
        "reduced" => DetectionMode::Reduced,
        other => return Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    };
    let parsed = llm_detector::parse_llm_output(raw, mode).map_err(|e| PyValueError::new_err(e.0))?;
    let out = PyDict::new(py);
    out.set_item("items", parsed.items)?;
    out.set_item("passages", parsed.passages)?;
    Ok(out)
}

/// Build the bundled synthetic corpus and write `queries.jsonl`,
/// `responses.jsonl`, `candidates.jsonl` and `ad_records.jsonl` to `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, queries_per_topic = 110, seed = 7))]
fn synthetic_corpus<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    queries_per_topic: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = SyntheticConfig {
        queries_per_topic,
        seed,
        ..SyntheticConfig::default()
    };
    let corpus = py.detach(|| synthetic::build_synthetic_corpus(&config)).map_err(to_py)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    save_corpus(&corpus.queries, out_dir.join("queries.jsonl")).map_err(to_py)?;
    save_corpus(&corpus.responses, out_dir.join("responses.jsonl")).map_err(to_py)?;
    save_corpus(&corpus.candidates, out_dir.join("candidates.jsonl")).map_err(to_py)?;
    save_corpus(&corpus.ad_records, out_dir.join("ad_records.jsonl")).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("queries", corpus.queries.len())?;
    out.set_item("responses", corpus.responses.len())?;
    out.set_item("candidates", corpus.candidates.len())?;
    out.set_item("ad_records", corpus.ad_records.len())?;
    Ok(out)
}

/// Split a corpus directory written by `synthetic_corpus` (fixed split, or a
/// topic holdout) and write `train.jsonl`, `validation.jsonl` and `test.jsonl`
/// sentence pairs to `out_dir`. Returns the pair count per subset.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out_dir, holdout = None, target_positive_fraction = 0.5, seed = 7))]
fn split_pairs<'py>(
    py: Python<'py>,
    corpus_dir: PathBuf,
    out_dir: PathBuf,
    holdout: Option<&str>,
    target_positive_fraction: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let queries: Vec<Query> = load_corpus(corpus_dir.join("queries.jsonl")).map_err(to_py)?;
    let responses: Vec<SearchResponse> = load_corpus(corpus_dir.join("responses.jsonl")).map_err(to_py)?;
    let candidates: Vec<AdCandidate> = load_corpus(corpus_dir.join("candidates.jsonl")).map_err(to_py)?;
    let ad_records: Vec<AdInsertionRecord> = load_corpus(corpus_dir.join("ad_records.jsonl")).map_err(to_py)?;
    let input = SplitInput {
        queries: &queries,
        responses: &responses,
        ad_records: &ad_records,
        candidates: &candidates,
    };
    let manifest = match holdout {
        None => splitter::build_fixed_split(&input, splitter::FIXED_RATIOS, seed).map_err(to_py)?,
        Some(t) => {
            let topic: MetaTopic = t.parse().map_err(to_py)?;
            splitter::build_topic_holdouts(&input, seed)
                .map_err(to_py)?
                .into_iter()
                .find(|m| m.holdout_topic == Some(topic))
                .ok_or_else(|| PyValueError::new_err(format!("no holdout for {topic}")))?
        }
    };
    let options = PairOptions {
        target_positive_fraction,
        neighbor_policy: NeighborPolicy::default(),
        seed,
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    for subset in Subset::ALL {
        let source = PairSource::from_manifest(&manifest, subset, &responses, &ad_records);
        let pairs = build_pairs(&source, &options).map_err(to_py)?;
        save_corpus(&pairs, out_dir.join(format!("{subset}.jsonl"))).map_err(to_py)?;
        out.set_item(subset.as_str(), pairs.len())?;
    }
    Ok(out)
}

/// Train on `train.jsonl` / `validation.jsonl` in `pairs_dir` and save the
/// best and last checkpoints plus the loss log under `out_dir`.
#[pyfunction]
#[pyo3(signature = (pairs_dir, out_dir, profile = "compact", epochs = None, seed = 7))]
fn train_detector<'py>(
    py: Python<'py>,
    pairs_dir: PathBuf,
    out_dir: PathBuf,
    profile: &str,
    epochs: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = EncoderConfig::profile(profile).map_err(to_py)?;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    config.seed = seed;
    let train: Vec<SentencePair> = load_corpus(pairs_dir.join("train.jsonl")).map_err(to_py)?;
    let validation: Vec<SentencePair> = load_corpus(pairs_dir.join("validation.jsonl")).map_err(to_py)?;
    let outcome = py.detach(|| encoder::train(&train, &validation, &config)).map_err(to_py)?;
    encoder::save_training_run(&out_dir, &outcome).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("best_epoch", outcome.best.best_epoch)?;
    out.set_item("best_validation_loss", outcome.best.best_validation_loss)?;
    out.set_item("validation_losses", outcome.log.iter().map(|e| e.validation_loss).collect::<Vec<_>>())?;
    Ok(out)
}

/// A trained sentence-pair detector.
#[pyclass(module = "nadet_py", frozen)]
struct Detector {
    checkpoint: DetectorCheckpoint,
}

#[pymethods]
impl Detector {
    /// Load a checkpoint directory (`checkpoint.json` + `weights.bin`).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            checkpoint: DetectorCheckpoint::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.checkpoint.config.threshold
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.checkpoint.model.parameter_count()
    }

    /// Probability that `second` was inserted next to `first` as an ad.
    fn score(&self, first: &str, second: &str) -> f64 {
        self.checkpoint.model.score(first, second)
    }

    /// Score every sentence of `text`; returns `is_ad`, `flagged` (sentence
    /// indices), `scores` and `passages` (character ranges).
    #[pyo3(signature = (text, threshold = None))]
    fn detect<'py>(&self, py: Python<'py>, text: &str, threshold: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let segmenter = Segmenter::default();
        let (ranges, scores) = encoder::sentence_scores(&self.checkpoint, text, &segmenter);
        let t = threshold.unwrap_or(self.checkpoint.config.threshold);
        let result = encoder::aggregate_scores("response", "encoder", &scores, t, &ranges);
        let out = PyDict::new(py);
        out.set_item("is_ad", result.is_ad)?;
        out.set_item("flagged", result.flagged_indices())?;
        out.set_item("scores", scores)?;
        out.set_item("passages", result.passages.into_iter().map(span).collect::<Vec<_>>())?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Detector(encoder={:?}, best_epoch={}, threshold={})",
            self.checkpoint.config.base_encoder, self.checkpoint.best_epoch, self.checkpoint.config.threshold
        )
    }
}

#[pymodule]
pub fn nadet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(extract_insertion_span, m)?)?;
    m.add_function(wrap_pyfunction!(template_insert, m)?)?;
    m.add_function(wrap_pyfunction!(rouge1_f1, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(parse_llm_output, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(split_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(train_detector, m)?)?;
    m.add_class::<Detector>()?;
    Ok(())
}
