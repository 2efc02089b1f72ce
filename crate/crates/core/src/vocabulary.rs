//! Per-topic controlled vocabularies of ad candidates and per-query shortlists.
//!
//! Vocabularies and selections pass through plain-text review files that an
//! operator edits by hand; nothing here approves a vocabulary on its own.
//!
//! Review file format (`#` lines are comments, one candidate per line):
//!
//! ```text
//! # topic: banking
//! AcmeBank | low fees; friendly branch staff
//! ```
//!
//! Selection file format (one query per line, two candidate ids):
//!
//! ```text
//! banking-0001	banking-c003, banking-c017
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AdCandidate, MetaTopic, Query};
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient, PromptAsset};
use crate::text::normalize_name;

pub const MAX_CANDIDATES_PER_TOPIC: usize = 100;
pub const MIN_PROPOSED: usize = 2;
pub const MAX_PROPOSED: usize = 5;
pub const CHOSEN_PER_QUERY: usize = 2;

/// One parsed draft entry before review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftEntry {
    pub item: String,
    pub qualities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyDraft {
    pub topic: MetaTopic,
    pub entries: Vec<DraftEntry>,
    pub attempts: usize,
    pub warnings: Vec<String>,
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    // "12. name" or "3) name"
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

fn is_list_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with(['-', '*', '•']) || {
        let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
        digits > 0 && matches!(t[digits..].chars().next(), Some('.') | Some(')'))
    }
}

/// Parse `- Item: quality; quality` lines. Lines that are not list entries are ignored.
pub fn parse_draft(output: &str) -> (Vec<DraftEntry>, usize) {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for line in output.lines().filter(|l| is_list_line(l)) {
        let body = strip_bullet(line);
        let split = body
            .split_once(':')
            .or_else(|| body.split_once(" - "))
            .or_else(|| body.split_once('|'));
        match split {
            Some((item, quals)) if !item.trim().is_empty() => {
                let qualities: Vec<String> = quals
                    .split([';', ','])
                    .map(|q| q.trim().trim_end_matches('.').to_string())
                    .filter(|q| !q.is_empty())
                    .collect();
                if qualities.is_empty() {
                    skipped += 1;
                } else {
                    entries.push(DraftEntry {
                        item: item.trim().trim_matches('*').trim().to_string(),
                        qualities,
                    });
                }
            }
            _ => skipped += 1,
        }
    }
    (entries, skipped)
}

/// Ask the model for a draft vocabulary for `topic`, retrying unparseable output.
pub fn propose_vocabulary(
    topic: MetaTopic,
    client: &dyn LlmClient,
    prompt: &PromptAsset,
    max_attempts: usize,
) -> Result<VocabularyDraft> {
    let count = MAX_CANDIDATES_PER_TOPIC.to_string();
    let request = CompletionRequest::new(prompt.render(&[("topic", topic.as_str()), ("count", &count)]));
    let mut warnings = Vec::new();
    for attempt in 1..=max_attempts.max(1) {
        let output = match client.complete(&request) {
            Ok(o) => o,
            Err(e) => {
                warnings.push(format!("attempt {attempt}: {e}"));
                continue;
            }
        };
        let (mut entries, skipped) = parse_draft(&output);
        if entries.is_empty() {
            warnings.push(format!("attempt {attempt}: no list entries in model output"));
            continue;
        }
        if skipped > 0 {
            warnings.push(format!("{skipped} unparseable lines skipped"));
        }
        let mut seen = HashSet::new();
        entries.retain(|e| seen.insert(normalize_name(&e.item)));
        return Ok(VocabularyDraft {
            topic,
            entries,
            attempts: attempt,
            warnings,
        });
    }
    Err(Error::precondition(format!(
        "no parseable vocabulary for {topic} after {max_attempts} attempts: {}",
        warnings.join("; ")
    )))
}

pub fn render_review_file(topic: MetaTopic, entries: &[DraftEntry]) -> String {
    let mut out = format!(
        "# topic: {topic}\n# one candidate per line: <item> | <quality>; <quality>\n# keep at most {MAX_CANDIDATES_PER_TOPIC} lines after review\n"
    );
    for e in entries {
        out.push_str(&format!("{} | {}\n", e.item, e.qualities.join("; ")));
    }
    out
}

pub fn write_review_file(path: impl AsRef<Path>, draft: &VocabularyDraft) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_review_file(draft.topic, &draft.entries)).map_err(|e| Error::io(path, e))
}

/// Parse a reviewed vocabulary file into candidates with ids `<topic>-cNNN`.
pub fn parse_vocabulary(content: &str) -> Result<Vec<AdCandidate>> {
    let mut topic = None;
    let mut out: Vec<AdCandidate> = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in content.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(t) = rest.trim().strip_prefix("topic:") {
                topic = Some(t.trim().parse::<MetaTopic>()?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let topic = topic.ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "candidate before '# topic:' header".into(),
        })?;
        let (item, quals) = line.split_once('|').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "expected '<item> | <qualities>'".into(),
        })?;
        let item = item.trim().to_string();
        if !seen.insert(normalize_name(&item)) {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("duplicate item '{item}'"),
            });
        }
        let candidate = AdCandidate {
            id: format!("{topic}-c{:03}", out.len()),
            topic,
            item,
            qualities: quals
                .split(';')
                .map(|q| q.trim().to_string())
                .filter(|q| !q.is_empty())
                .collect(),
        };
        crate::corpus::Record::validate(&candidate)?;
        out.push(candidate);
    }
    if out.is_empty() {
        return Err(Error::precondition("vocabulary file holds no candidates"));
    }
    if out.len() > MAX_CANDIDATES_PER_TOPIC {
        return Err(Error::precondition(format!(
            "vocabulary holds {} candidates, at most {MAX_CANDIDATES_PER_TOPIC} allowed",
            out.len()
        )));
    }
    Ok(out)
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vec<AdCandidate>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocabulary(&content)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateShortlist {
    pub query_id: String,
    pub topic: MetaTopic,
    pub proposed: Vec<String>,
    pub chosen: Vec<String>,
    /// Fewer than two proposals survived vocabulary matching.
    pub incomplete: bool,
}

/// Ask the model for 2–5 fitting candidates from the query's topic vocabulary.
/// Names that are not in the vocabulary are dropped, not fuzzily matched.
pub fn shortlist_for_query(
    query: &Query,
    vocabulary: &[AdCandidate],
    client: &dyn LlmClient,
    prompt: &PromptAsset,
) -> Result<CandidateShortlist> {
    let topic_vocab: Vec<&AdCandidate> = vocabulary.iter().filter(|c| c.topic == query.topic).collect();
    if topic_vocab.is_empty() {
        return Err(Error::precondition(format!("empty vocabulary for topic {}", query.topic)));
    }
    let listing: String = topic_vocab
        .iter()
        .map(|c| format!("- {} ({})\n", c.item, c.qualities.join(", ")))
        .collect();
    let request = CompletionRequest::new(prompt.render(&[
        ("query", &query.text),
        ("topic", query.topic.as_str()),
        ("vocabulary", &listing),
    ]));
    let output = client.complete(&request)?;
    Ok(shortlist_from_output(query, &topic_vocab, &output))
}

fn shortlist_from_output(query: &Query, topic_vocab: &[&AdCandidate], output: &str) -> CandidateShortlist {
    let by_name: HashMap<String, &str> = topic_vocab
        .iter()
        .map(|c| (normalize_name(&c.item), c.id.as_str()))
        .collect();
    let mut proposed: Vec<String> = Vec::new();
    for line in output.lines() {
        let name = strip_bullet(line);
        // Allow "Name (qualities)" echoes of the listing.
        let name = name.split_once(" (").map_or(name, |(n, _)| n);
        let name = normalize_name(name.trim_end_matches(['.', ',']));
        if name.is_empty() {
            continue;
        }
        match by_name.get(&name) {
            Some(id) if !proposed.iter().any(|p| p == id) => proposed.push(id.to_string()),
            Some(_) => {}
            None => log::debug!("query {}: dropped out-of-vocabulary proposal '{name}'", query.id),
        }
    }
    proposed.truncate(MAX_PROPOSED);
    CandidateShortlist {
        query_id: query.id.clone(),
        topic: query.topic,
        incomplete: proposed.len() < MIN_PROPOSED,
        proposed,
        chosen: Vec::new(),
    }
}

/// Parse selection lines `query_id <TAB or spaces> id, id`.
pub fn parse_selection(content: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (n, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (qid, ids) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "expected '<query_id> <id>, <id>'".into(),
        })?;
        let ids: Vec<String> = ids
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        out.insert(qid.to_string(), ids);
    }
    Ok(out)
}

/// Selection file pre-filled with the first two proposals of each complete shortlist.
pub fn render_selection_template(shortlists: &[CandidateShortlist]) -> String {
    let mut out = String::from("# <query_id>\t<chosen id>, <chosen id>   (edit to choose 2 of the proposed)\n");
    for s in shortlists.iter().filter(|s| !s.incomplete) {
        out.push_str(&format!("# proposed: {}\n", s.proposed.join(", ")));
        out.push_str(&format!("{}\t{}\n", s.query_id, s.proposed.iter().take(2).cloned().collect::<Vec<_>>().join(", ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiversityReport {
    pub distinct_per_topic: BTreeMap<MetaTopic, usize>,
    pub warnings: Vec<String>,
}

pub fn diversity_report(shortlists: &[CandidateShortlist]) -> DiversityReport {
    let mut items: BTreeMap<MetaTopic, BTreeSet<&str>> = BTreeMap::new();
    let mut usage: BTreeMap<MetaTopic, HashMap<&str, usize>> = BTreeMap::new();
    let mut queries: BTreeMap<MetaTopic, usize> = BTreeMap::new();
    for s in shortlists {
        *queries.entry(s.topic).or_default() += 1;
        for c in &s.chosen {
            items.entry(s.topic).or_default().insert(c);
            *usage.entry(s.topic).or_default().entry(c).or_default() += 1;
        }
    }
    let mut report = DiversityReport::default();
    for (topic, set) in &items {
        report.distinct_per_topic.insert(*topic, set.len());
        let n = queries[topic];
        if let Some((item, count)) = usage[topic].iter().max_by_key(|(id, c)| (**c, std::cmp::Reverse(**id))) {
            if n >= 3 && *count * 2 > n {
                report.warnings.push(format!(
                    "{topic}: item {item} chosen for {count} of {n} queries ({} distinct items)",
                    set.len()
                ));
            }
        }
    }
    report
}

/// Attach the operator's choices and check `chosen ⊆ proposed`, two per query.
pub fn finalize_shortlists(
    shortlists: &[CandidateShortlist],
    selection: &BTreeMap<String, Vec<String>>,
) -> Result<(Vec<CandidateShortlist>, DiversityReport)> {
    let mut out = Vec::new();
    for s in shortlists {
        let Some(chosen) = selection.get(&s.query_id) else {
            if s.incomplete {
                continue;
            }
            return Err(Error::validation(&s.query_id, "no selection for query"));
        };
        if chosen.len() != CHOSEN_PER_QUERY {
            return Err(Error::validation(
                &s.query_id,
                format!("expected {CHOSEN_PER_QUERY} chosen candidates, got {}", chosen.len()),
            ));
        }
        if chosen[0] == chosen[1] {
            return Err(Error::validation(&s.query_id, "chosen candidates must differ"));
        }
        if let Some(bad) = chosen.iter().find(|c| !s.proposed.contains(c)) {
            return Err(Error::validation(
                &s.query_id,
                format!("chosen candidate {bad} is not among the proposed"),
            ));
        }
        out.push(CandidateShortlist {
            chosen: chosen.clone(),
            ..s.clone()
        });
    }
    if let Some(extra) = selection.keys().find(|q| !shortlists.iter().any(|s| &s.query_id == *q)) {
        return Err(Error::validation(extra.as_str(), "selection names an unknown query"));
    }
    let report = diversity_report(&out);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok((out, report))
}
