//! Query sets, response collection through a pluggable search client, and
//! the English / 4–12 sentence retention filter.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{Engine, MetaTopic, Query, SearchResponse};
use crate::error::{ClientError, Error, Result};
use crate::language::LanguageIdentifier;
use crate::llm::map_bounded;
use crate::segment::Segmenter;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    /// Lines dropped because they duplicated an earlier query after normalization.
    pub dropped_duplicates: usize,
}

/// Read one query per line for a single topic. Queries are deduplicated
/// case-insensitively (whitespace collapsed); blank lines are ignored.
pub fn load_query_set(path: impl AsRef<Path>, topic: MetaTopic) -> Result<QuerySet> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set = parse_query_lines(&content, topic);
    if set.queries.is_empty() {
        return Err(Error::precondition(format!("query file {} is empty", path.display())));
    }
    if set.dropped_duplicates > 0 {
        log::warn!(
            "{}: dropped {} duplicate queries",
            path.display(),
            set.dropped_duplicates
        );
    }
    Ok(set)
}

pub fn parse_query_lines(content: &str, topic: MetaTopic) -> QuerySet {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    let mut dropped = 0;
    for line in content.lines() {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if !seen.insert(crate::text::normalize_name(text)) {
            dropped += 1;
            continue;
        }
        queries.push(Query {
            id: format!("{}-{:04}", topic, queries.len()),
            text: text.to_string(),
            topic,
        });
    }
    QuerySet {
        queries,
        dropped_duplicates: dropped,
    }
}

/// Load every `<topic>.txt` file in a directory, in topic order.
pub fn load_query_dir(dir: impl AsRef<Path>) -> Result<Vec<Query>> {
    let dir = dir.as_ref();
    let mut all = Vec::new();
    for topic in MetaTopic::ALL {
        let path = dir.join(format!("{topic}.txt"));
        if path.exists() {
            all.extend(load_query_set(&path, topic)?.queries);
        }
    }
    if all.is_empty() {
        return Err(Error::precondition(format!(
            "no <topic>.txt query files found in {}",
            dir.display()
        )));
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientCapabilities {
    pub engine: Engine,
    pub max_requests_per_minute: Option<u32>,
}

/// A conversational search engine.
pub trait SearchClient: Send + Sync {
    fn capabilities(&self) -> ClientCapabilities;

    /// Fetch the generated response text. Implementations should give up
    /// once `timeout` has elapsed.
    fn fetch(&self, query_text: &str, timeout: Duration) -> Result<String, ClientError>;
}

/// Deterministic client answering from a lookup table.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearchClient {
    pub engine: Option<Engine>,
    pub answers: HashMap<String, String>,
    /// Queries for which every call fails.
    pub failing: HashSet<String>,
}

impl FixtureSearchClient {
    pub fn new(answers: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            engine: None,
            answers: answers.into_iter().collect(),
            failing: HashSet::new(),
        }
    }

    pub fn failing_on(mut self, query: impl Into<String>) -> Self {
        self.failing.insert(query.into());
        self
    }
}

impl SearchClient for FixtureSearchClient {
    fn capabilities(&self) -> ClientCapabilities {
        ClientCapabilities {
            engine: self.engine.unwrap_or(Engine::Synthetic),
            max_requests_per_minute: None,
        }
    }

    fn fetch(&self, query_text: &str, _timeout: Duration) -> Result<String, ClientError> {
        if self.failing.contains(query_text) {
            return Err(ClientError::Request(format!("fixture failure for '{query_text}'")));
        }
        self.answers
            .get(query_text)
            .cloned()
            .ok_or_else(|| ClientError::Request(format!("no fixture answer for '{query_text}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub id: String,
    pub query_id: String,
    pub engine: Engine,
    pub text: String,
}

impl From<&SearchResponse> for RawResponse {
    fn from(r: &SearchResponse) -> Self {
        Self {
            id: r.id.clone(),
            query_id: r.query_id.clone(),
            engine: r.engine,
            text: r.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionFailure {
    pub query_id: String,
    pub repeat: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Collection {
    pub responses: Vec<RawResponse>,
    pub failures: Vec<CollectionFailure>,
}

#[derive(Debug, Clone, Copy)]
pub struct CollectOptions {
    pub repeats: usize,
    pub max_in_flight: usize,
    pub max_retries: usize,
    pub timeout: Duration,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            repeats: 2,
            max_in_flight: 4,
            max_retries: 2,
            timeout: Duration::from_secs(60),
        }
    }
}

struct RateGate {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl RateGate {
    fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let sleep_for = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !sleep_for.is_zero() {
            std::thread::sleep(sleep_for);
        }
    }
}

/// Submit every query `repeats` times. Failures after retries are logged and
/// skipped. Output order is (query order, repeat index).
pub fn collect_responses(
    queries: &[Query],
    client: &dyn SearchClient,
    options: CollectOptions,
) -> Result<Collection> {
    if options.repeats == 0 {
        return Err(Error::precondition("repeats must be at least 1"));
    }
    let caps = client.capabilities();
    let gate = RateGate {
        interval: caps
            .max_requests_per_minute
            .filter(|&r| r > 0)
            .map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
        next: Mutex::new(None),
    };
    let jobs: Vec<(&Query, usize)> = queries
        .iter()
        .flat_map(|q| (0..options.repeats).map(move |r| (q, r)))
        .collect();
    let outcomes = map_bounded(&jobs, options.max_in_flight, |_, (q, repeat)| {
        let mut last_err = ClientError::Request("not attempted".into());
        for _ in 0..=options.max_retries {
            gate.wait();
            match client.fetch(&q.text, options.timeout) {
                Ok(text) => return Ok(text),
                Err(e) => last_err = e,
            }
        }
        log::warn!("query {} repeat {repeat} skipped: {last_err}", q.id);
        Err(last_err)
    });
    let mut out = Collection::default();
    for ((q, repeat), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok(text) => out.responses.push(RawResponse {
                id: format!("{}-{}-{}", q.id, caps.engine, repeat),
                query_id: q.id.clone(),
                engine: caps.engine,
                text,
            }),
            Err(e) => out.failures.push(CollectionFailure {
                query_id: q.id.clone(),
                repeat,
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Language,
    TooShort,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    pub input: usize,
    pub retained: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl RejectionReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub language: &'static str,
    pub min_confidence: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            min_sentences: 4,
            max_sentences: 12,
            language: "en",
            min_confidence: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterOutcome {
    pub retained: Vec<SearchResponse>,
    pub report: RejectionReport,
}

/// Decide retention for a single response. `Ok` carries the segmented response.
pub fn classify_response(
    raw: &RawResponse,
    segmenter: &Segmenter,
    language: &dyn LanguageIdentifier,
    options: &FilterOptions,
) -> std::result::Result<SearchResponse, RejectReason> {
    let (lang, confidence) = language.identify(&raw.text);
    if lang != options.language || confidence < options.min_confidence {
        return Err(RejectReason::Language);
    }
    let sentences = segmenter.segment(&raw.text);
    if sentences.len() < options.min_sentences {
        return Err(RejectReason::TooShort);
    }
    if sentences.len() > options.max_sentences {
        return Err(RejectReason::TooLong);
    }
    Ok(SearchResponse {
        id: raw.id.clone(),
        query_id: raw.query_id.clone(),
        engine: raw.engine,
        text: raw.text.clone(),
        sentences,
        language: lang,
    })
}

pub fn filter_responses(
    raw: &[RawResponse],
    segmenter: &Segmenter,
    language: &dyn LanguageIdentifier,
    options: &FilterOptions,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    out.report.input = raw.len();
    for r in raw {
        match classify_response(r, segmenter, language, options) {
            Ok(resp) => out.retained.push(resp),
            Err(reason) => *out.report.rejected.entry(reason).or_default() += 1,
        }
    }
    out.report.retained = out.retained.len();
    out
}
