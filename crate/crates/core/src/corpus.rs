//! Persistent domain types and their canonical line-delimited serialization.
//!
//! Every record is written as one JSON object per line. Keys are sorted
//! alphabetically at every nesting level and a `record_type` key names the
//! type, so files are self-describing and byte-stable.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{char_len, char_slice, CharRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaTopic {
    Banking,
    Car,
    Gaming,
    Healthcare,
    RealEstate,
    Restaurant,
    Shopping,
    Streaming,
    Vacation,
    Workout,
}

impl MetaTopic {
    pub const ALL: [MetaTopic; 10] = [
        MetaTopic::Banking,
        MetaTopic::Car,
        MetaTopic::Gaming,
        MetaTopic::Healthcare,
        MetaTopic::RealEstate,
        MetaTopic::Restaurant,
        MetaTopic::Shopping,
        MetaTopic::Streaming,
        MetaTopic::Vacation,
        MetaTopic::Workout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetaTopic::Banking => "banking",
            MetaTopic::Car => "car",
            MetaTopic::Gaming => "gaming",
            MetaTopic::Healthcare => "healthcare",
            MetaTopic::RealEstate => "real_estate",
            MetaTopic::Restaurant => "restaurant",
            MetaTopic::Shopping => "shopping",
            MetaTopic::Streaming => "streaming",
            MetaTopic::Vacation => "vacation",
            MetaTopic::Workout => "workout",
        }
    }
}

impl fmt::Display for MetaTopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaTopic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        MetaTopic::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| Error::precondition(format!("unknown meta topic '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Youchat,
    Copilot,
    Synthetic,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Youchat, Engine::Copilot, Engine::Synthetic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Youchat => "youchat",
            Engine::Copilot => "copilot",
            Engine::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| Error::precondition(format!("unknown engine '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Llm,
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn index(self) -> usize {
        match self {
            Subset::Train => 0,
            Subset::Validation => 1,
            Subset::Test => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| Error::precondition(format!("unknown subset '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Fixed,
    TopicHoldout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub topic: MetaTopic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub id: String,
    pub query_id: String,
    pub engine: Engine,
    pub text: String,
    pub sentences: Vec<CharRange>,
    pub language: String,
}

impl SearchResponse {
    pub fn sentence_text(&self, index: usize) -> Option<&str> {
        self.sentences.get(index).map(|r| char_slice(&self.text, *r))
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences
            .iter()
            .map(|r| char_slice(&self.text, *r))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdCandidate {
    pub id: String,
    pub topic: MetaTopic,
    pub item: String,
    pub qualities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdInsertionRecord {
    pub id: String,
    pub base_response_id: String,
    pub candidate_id: String,
    pub text: String,
    pub sentences: Vec<CharRange>,
    pub insertion_span: CharRange,
    pub affected_sentence_index: usize,
    pub generator: Generator,
    pub generator_meta: BTreeMap<String, String>,
}

impl AdInsertionRecord {
    pub fn affected_sentence(&self) -> &str {
        char_slice(&self.text, self.sentences[self.affected_sentence_index])
    }

    pub fn affected_range(&self) -> CharRange {
        self.sentences[self.affected_sentence_index]
    }

    pub fn inserted_text(&self) -> &str {
        char_slice(&self.text, self.insertion_span)
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences
            .iter()
            .map(|r| char_slice(&self.text, *r))
            .collect()
    }

    /// Check the cross-record invariants against the response the ad was inserted into.
    pub fn validate_against_base(&self, base: &SearchResponse) -> Result<()> {
        if base.id != self.base_response_id {
            return Err(Error::validation(
                &self.id,
                format!("base response id {} does not match {}", base.id, self.base_response_id),
            ));
        }
        if base.sentences.len() != self.sentences.len() {
            return Err(Error::validation(&self.id, "sentence count differs from base response"));
        }
        let base_sentences = base.sentence_texts();
        for (i, s) in self.sentence_texts().into_iter().enumerate() {
            if i != self.affected_sentence_index && s != base_sentences[i] {
                return Err(Error::validation(
                    &self.id,
                    format!("sentence {i} outside the affected sentence differs from base"),
                ));
            }
        }
        let rebuilt = rebuild_with_sentence(base, self.affected_sentence_index, self.affected_sentence());
        if rebuilt != self.text {
            return Err(Error::validation(
                &self.id,
                "text is not the base response with only the affected sentence replaced",
            ));
        }
        Ok(())
    }
}

/// The base response text with sentence `index` replaced by `replacement`.
pub fn rebuild_with_sentence(base: &SearchResponse, index: usize, replacement: &str) -> String {
    crate::text::replace_chars(&base.text, base.sentences[index], replacement)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub kind: SplitKind,
    pub holdout_topic: Option<MetaTopic>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Subset>,
}

impl SplitManifest {
    pub fn ids_in(&self, subset: Subset) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == subset)
            .map(|(id, _)| id.as_str())
    }

    pub fn subset_of(&self, id: &str) -> Option<Subset> {
        self.assignment.get(id).copied()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignment.values() {
            c[s.index()] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    /// Ad sentence with its neighbor.
    Inserted,
    /// Same positions taken from the base response.
    Aligned,
    /// Additional clean pair drawn from an original response.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub first: String,
    pub second: String,
    pub label: u8,
    pub source_record_id: String,
    pub position: (usize, usize),
    pub origin: PairOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSentence {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub response_id: String,
    pub detector_id: String,
    pub is_ad: bool,
    pub flagged_sentences: Vec<FlaggedSentence>,
    pub named_items: Option<Vec<String>>,
    /// Located advertising passages (character ranges into the response).
    pub passages: Vec<CharRange>,
    pub metadata: BTreeMap<String, String>,
}

impl DetectionResult {
    pub const ABSTAIN_KEY: &'static str = "abstain";

    pub fn is_abstain(&self) -> bool {
        self.metadata.get(Self::ABSTAIN_KEY).map(String::as_str) == Some("true")
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flagged_sentences.iter().map(|f| f.index).collect()
    }
}

/// A type that can live in a canonical `.jsonl` corpus file.
pub trait Record: Serialize + DeserializeOwned {
    const RECORD_TYPE: &'static str;

    fn record_id(&self) -> String;

    fn validate(&self) -> Result<()>;
}

fn check_ranges(id: &str, text: &str, ranges: &[CharRange]) -> Result<()> {
    let len = char_len(text);
    let mut prev_end = 0;
    for (i, r) in ranges.iter().enumerate() {
        if r.start >= r.end {
            return Err(Error::validation(id, format!("sentence range {i} is empty or inverted")));
        }
        if r.end > len {
            return Err(Error::validation(
                id,
                format!("sentence range {i} ends at {} beyond text length {len}", r.end),
            ));
        }
        if i > 0 && r.start < prev_end {
            return Err(Error::validation(id, format!("sentence range {i} overlaps or is unsorted")));
        }
        prev_end = r.end;
    }
    Ok(())
}

fn non_empty(id: &str, field: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::validation(id, format!("{field} must be non-empty")))
    } else {
        Ok(())
    }
}

impl Record for Query {
    const RECORD_TYPE: &'static str = "query";

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_empty(&self.id, "id", &self.id)?;
        non_empty(&self.id, "text", &self.text)
    }
}

impl Record for SearchResponse {
    const RECORD_TYPE: &'static str = "search_response";

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_empty(&self.id, "id", &self.id)?;
        non_empty(&self.id, "query_id", &self.query_id)?;
        non_empty(&self.id, "language", &self.language)?;
        check_ranges(&self.id, &self.text, &self.sentences)
    }
}

impl Record for AdCandidate {
    const RECORD_TYPE: &'static str = "ad_candidate";

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_empty(&self.id, "id", &self.id)?;
        non_empty(&self.id, "item", &self.item)?;
        if self.qualities.is_empty() || self.qualities.iter().any(|q| q.trim().is_empty()) {
            return Err(Error::validation(&self.id, "qualities must be a non-empty list of phrases"));
        }
        Ok(())
    }
}

impl Record for AdInsertionRecord {
    const RECORD_TYPE: &'static str = "ad_insertion";

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_empty(&self.id, "id", &self.id)?;
        non_empty(&self.id, "base_response_id", &self.base_response_id)?;
        non_empty(&self.id, "candidate_id", &self.candidate_id)?;
        check_ranges(&self.id, &self.text, &self.sentences)?;
        let Some(affected) = self.sentences.get(self.affected_sentence_index) else {
            return Err(Error::validation(
                &self.id,
                format!(
                    "affected_sentence_index {} out of range for {} sentences",
                    self.affected_sentence_index,
                    self.sentences.len()
                ),
            ));
        };
        if self.insertion_span.is_empty() {
            return Err(Error::validation(&self.id, "insertion_span is empty"));
        }
        if !affected.contains_range(&self.insertion_span) {
            return Err(Error::validation(
                &self.id,
                "insertion_span lies outside the affected sentence",
            ));
        }
        Ok(())
    }
}

impl Record for SplitManifest {
    const RECORD_TYPE: &'static str = "split_manifest";

    fn record_id(&self) -> String {
        self.name.clone()
    }

    fn validate(&self) -> Result<()> {
        non_empty(&self.name, "name", &self.name)?;
        match (self.kind, self.holdout_topic) {
            (SplitKind::TopicHoldout, None) => {
                Err(Error::validation(&self.name, "topic holdout manifest without holdout_topic"))
            }
            (SplitKind::Fixed, Some(_)) => {
                Err(Error::validation(&self.name, "fixed manifest must not name a holdout topic"))
            }
            _ => Ok(()),
        }
    }
}

impl Record for SentencePair {
    const RECORD_TYPE: &'static str = "sentence_pair";

    fn record_id(&self) -> String {
        format!(
            "{}:{}-{}:{:?}",
            self.source_record_id, self.position.0, self.position.1, self.origin
        )
    }

    fn validate(&self) -> Result<()> {
        let id = self.record_id();
        if self.position.0.abs_diff(self.position.1) != 1 {
            return Err(Error::validation(id, "pair members are not adjacent"));
        }
        if self.label > 1 {
            return Err(Error::validation(id, "label must be 0 or 1"));
        }
        if (self.label == 1) != (self.origin == PairOrigin::Inserted) {
            return Err(Error::validation(id, "only inserted pairs may carry the ad label"));
        }
        Ok(())
    }
}

impl Record for DetectionResult {
    const RECORD_TYPE: &'static str = "detection_result";

    fn record_id(&self) -> String {
        format!("{}@{}", self.response_id, self.detector_id)
    }

    fn validate(&self) -> Result<()> {
        let has_items = self.named_items.as_ref().is_some_and(|v| !v.is_empty());
        if self.is_ad != (!self.flagged_sentences.is_empty() || has_items) {
            return Err(Error::validation(
                self.record_id(),
                "is_ad must hold exactly when sentences are flagged or items are named",
            ));
        }
        if self
            .flagged_sentences
            .iter()
            .any(|f| !(0.0..=1.0).contains(&f.score))
        {
            return Err(Error::validation(self.record_id(), "flagged score outside [0,1]"));
        }
        Ok(())
    }
}

const TYPE_KEY: &str = "record_type";

/// How unknown keys are treated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    Strict,
    Lenient,
}

/// Canonical one-line serialization of a record (sorted keys, no whitespace).
pub fn to_canonical_line<T: Record>(record: &T) -> Result<String> {
    let mut value = serde_json::to_value(record)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::validation(record.record_id(), "record is not an object"))?;
    obj.insert(TYPE_KEY.to_string(), serde_json::Value::from(T::RECORD_TYPE));
    // serde_json::Map without `preserve_order` is a BTreeMap, so keys come out sorted.
    Ok(serde_json::to_string(&value)?)
}

/// Parse one canonical line (1-based `line` used in errors).
pub fn from_canonical_line<T: Record>(text: &str, line: usize, mode: LoadMode) -> Result<T> {
    let parse_err = |message: String| Error::Parse { line, message };
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    match obj.remove(TYPE_KEY) {
        Some(serde_json::Value::String(t)) if t == T::RECORD_TYPE => {}
        Some(other) => {
            return Err(parse_err(format!(
                "record_type {other} does not match expected {}",
                T::RECORD_TYPE
            )))
        }
        None => return Err(parse_err("missing record_type".into())),
    }
    let keys: Vec<String> = obj.keys().cloned().collect();
    let record: T = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    if mode == LoadMode::Strict {
        let known = serde_json::to_value(&record)?;
        let known = known.as_object().map(|m| m.keys().cloned().collect::<Vec<_>>());
        if let Some(known) = known {
            if let Some(extra) = keys.iter().find(|k| !known.contains(k)) {
                return Err(parse_err(format!("unknown field '{extra}'")));
            }
        }
    }
    Ok(record)
}

/// Validate and write records, one per line. Returns the record count.
pub fn save_corpus<T: Record>(records: &[T], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let mut lines = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        lines.push(to_canonical_line(r)?);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in &lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn load_corpus<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    load_corpus_with(path, LoadMode::Strict)
}

pub fn load_corpus_with<T: Record>(path: impl AsRef<Path>, mode: LoadMode) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = from_canonical_line(&line, i + 1, mode)?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Original / ad-bearing response counts for one engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OrigAd {
    pub original: usize,
    pub ad: usize,
}

/// Responses per meta topic and engine, plus a totals row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub rows: BTreeMap<MetaTopic, BTreeMap<Engine, OrigAd>>,
    pub totals: BTreeMap<Engine, OrigAd>,
}

impl CorpusStats {
    pub fn cell(&self, topic: MetaTopic, engine: Engine) -> OrigAd {
        self.rows
            .get(&topic)
            .and_then(|r| r.get(&engine))
            .copied()
            .unwrap_or_default()
    }

    pub fn total(&self, engine: Engine) -> OrigAd {
        self.totals.get(&engine).copied().unwrap_or_default()
    }

    /// Plain-text table in the Orig./Ad column layout.
    pub fn render(&self) -> String {
        let mut out = String::from("topic");
        for e in Engine::ALL {
            out.push_str(&format!("\t{e}_orig\t{e}_ad"));
        }
        out.push('\n');
        for t in MetaTopic::ALL {
            out.push_str(t.as_str());
            for e in Engine::ALL {
                let c = self.cell(t, e);
                out.push_str(&format!("\t{}\t{}", c.original, c.ad));
            }
            out.push('\n');
        }
        out.push_str("total");
        for e in Engine::ALL {
            let c = self.total(e);
            out.push_str(&format!("\t{}\t{}", c.original, c.ad));
        }
        out.push('\n');
        out
    }
}

pub fn corpus_stats(
    queries: &[Query],
    responses: &[SearchResponse],
    ad_records: &[AdInsertionRecord],
) -> Result<CorpusStats> {
    let topics: HashMap<&str, MetaTopic> =
        queries.iter().map(|q| (q.id.as_str(), q.topic)).collect();
    let mut by_response: HashMap<&str, (MetaTopic, Engine)> = HashMap::new();
    let mut stats = CorpusStats::default();
    for t in MetaTopic::ALL {
        let row = stats.rows.entry(t).or_default();
        for e in Engine::ALL {
            row.insert(e, OrigAd::default());
        }
    }
    for e in Engine::ALL {
        stats.totals.insert(e, OrigAd::default());
    }
    for r in responses {
        let topic = *topics.get(r.query_id.as_str()).ok_or_else(|| {
            Error::validation(&r.id, format!("dangling query reference {}", r.query_id))
        })?;
        by_response.insert(r.id.as_str(), (topic, r.engine));
        stats.rows.get_mut(&topic).unwrap().get_mut(&r.engine).unwrap().original += 1;
        stats.totals.get_mut(&r.engine).unwrap().original += 1;
    }
    for a in ad_records {
        let (topic, engine) = *by_response.get(a.base_response_id.as_str()).ok_or_else(|| {
            Error::validation(&a.id, format!("dangling base response {}", a.base_response_id))
        })?;
        stats.rows.get_mut(&topic).unwrap().get_mut(&engine).unwrap().ad += 1;
        stats.totals.get_mut(&engine).unwrap().ad += 1;
    }
    Ok(stats)
}
