//! Native ad insertion, single-sentence-change validation and span recovery.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{rebuild_with_sentence, AdCandidate, AdInsertionRecord, Generator, MetaTopic, Query, SearchResponse};
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient, PromptAsset};
use crate::segment::Segmenter;
use crate::text::{char_len, char_slice, find_ci, fnv1a, CharRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    MultiSentence,
    NoChange,
    SentenceCountChanged,
    ItemMissing,
    ClientFailure,
    /// The response is too short or no template fits any of its sentences.
    NoFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeVerdict {
    Accept(usize),
    Reject(RejectionReason),
}

/// Accept iff both texts have the same number of sentences and exactly one
/// aligned sentence differs.
pub fn validate_single_sentence_change(
    original: &SearchResponse,
    modified: &str,
    segmenter: &Segmenter,
) -> ChangeVerdict {
    let before = original.sentence_texts();
    let after = segmenter.sentences(modified);
    if before.len() != after.len() {
        return ChangeVerdict::Reject(RejectionReason::SentenceCountChanged);
    }
    let mut differing = before.iter().zip(&after).enumerate().filter(|(_, (a, b))| a != b);
    match (differing.next(), differing.next()) {
        (None, _) => ChangeVerdict::Reject(RejectionReason::NoChange),
        (Some((i, _)), None) => ChangeVerdict::Accept(i),
        (Some(_), Some(_)) => ChangeVerdict::Reject(RejectionReason::MultiSentence),
    }
}

/// Minimal changed region of `modified`: `[p, len(modified) - s)` where `p`
/// and `s` are the longest common prefix and suffix, with `p + s` clamped to
/// the shorter sentence so the two never overlap.
pub fn extract_insertion_span(original: &str, modified: &str) -> Result<CharRange> {
    if original == modified {
        return Err(Error::precondition("sentences are identical; nothing was inserted"));
    }
    let a: Vec<char> = original.chars().collect();
    let b: Vec<char> = modified.chars().collect();
    let limit = a.len().min(b.len());
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(limit - prefix)
        .take_while(|(x, y)| x == y)
        .count();
    Ok(CharRange::new(prefix, b.len() - suffix))
}

/// Build a validated record from a base response and a single rewritten sentence.
fn record_from_sentence(
    base: &SearchResponse,
    candidate: &AdCandidate,
    index: usize,
    new_sentence: &str,
    generator: Generator,
    generator_meta: BTreeMap<String, String>,
    segmenter: &Segmenter,
) -> Result<AdInsertionRecord> {
    let text = rebuild_with_sentence(base, index, new_sentence);
    let sentences = segmenter.segment(&text);
    let original = base
        .sentence_text(index)
        .ok_or_else(|| Error::precondition(format!("sentence {index} out of range")))?;
    let local = extract_insertion_span(original, new_sentence)?;
    let sentence_start = sentences
        .get(index)
        .map(|r| r.start)
        .ok_or_else(|| Error::validation(&base.id, "rewritten text lost the affected sentence"))?;
    let record = AdInsertionRecord {
        id: format!("{}+{}", base.id, candidate.id),
        base_response_id: base.id.clone(),
        candidate_id: candidate.id.clone(),
        text,
        sentences,
        insertion_span: local.shift(sentence_start),
        affected_sentence_index: index,
        generator,
        generator_meta,
    };
    crate::corpus::Record::validate(&record)?;
    record.validate_against_base(base)?;
    Ok(record)
}

/// Ad clause templates with `{item}` and `{quality}` slots. Each is spliced
/// into a sentence just before its closing punctuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    pub version: String,
    pub default: Vec<String>,
    pub per_topic: BTreeMap<MetaTopic, Vec<String>>,
}

const DEFAULT_TEMPLATES: &[&str] = &[
    ", and for those who value {quality}, {item} is a great choice",
    ", and for those who want {quality}, {item} is worth a look",
    "; alternatively, {item} offers {quality} that many people love",
    ", which is why so many people trust {item} for {quality}",
    ", and {item} stands out with {quality} at a fair price",
    ", especially with {item}, known for its {quality}",
    ", and {item} makes this easier thanks to {quality}",
    ", with {item} delivering {quality} for everyone who asks for more",
    ", and for those who need {quality}, {item} has you covered",
    "; alternatively, consider {item} for its {quality}",
];

impl Default for TemplateBank {
    fn default() -> Self {
        Self {
            version: "templates-v1".into(),
            default: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            per_topic: BTreeMap::new(),
        }
    }
}

impl TemplateBank {
    pub fn templates_for(&self, topic: MetaTopic) -> &[String] {
        self.per_topic
            .get(&topic)
            .filter(|t| !t.is_empty())
            .unwrap_or(&self.default)
    }
}

const TRAILING: &[char] = &['.', '!', '?', '…', '"', '\'', ')', ']', '”', '’', '»', ':'];

/// Character index in `sentence` where a clause is spliced in.
fn insertion_point(sentence: &[char]) -> usize {
    let mut k = sentence.len();
    while k > 0 && TRAILING.contains(&sentence[k - 1]) {
        k -= 1;
    }
    k
}

/// Insert a templated ad clause into one sentence. Deterministic for a given
/// `(response, candidate, seed)`. The returned record's span is exactly the
/// inserted clause.
pub fn template_insert_ad(
    response: &SearchResponse,
    candidate: &AdCandidate,
    seed: u64,
    bank: &TemplateBank,
    segmenter: &Segmenter,
) -> Result<AdInsertionRecord> {
    if response.sentences.len() < 4 {
        return Err(Error::precondition(format!(
            "response {} has {} sentences, at least 4 required",
            response.id,
            response.sentences.len()
        )));
    }
    let mix = fnv1a(format!("{}\u{0}{}", response.id, candidate.id).as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix);
    let templates = bank.templates_for(candidate.topic);
    if templates.is_empty() {
        return Err(Error::precondition("template bank is empty"));
    }
    let n = response.sentences.len();
    let first_sentence = rng.gen_range(0..n);
    let first_template = rng.gen_range(0..templates.len());
    let quality = &candidate.qualities[rng.gen_range(0..candidate.qualities.len())];

    for ds in 0..n {
        let index = (first_sentence + ds) % n;
        let original: Vec<char> = response.sentence_text(index).unwrap_or_default().chars().collect();
        let at = insertion_point(&original);
        if at == 0 {
            continue;
        }
        for dt in 0..templates.len() {
            let t = (first_template + dt) % templates.len();
            let clause = templates[t].replace("{item}", &candidate.item).replace("{quality}", quality);
            let clause_chars: Vec<char> = clause.chars().collect();
            // The clause must not blend into the text around it, otherwise the
            // minimal diff would report a shifted span.
            let (Some(first), Some(last)) = (clause_chars.first(), clause_chars.last()) else {
                continue;
            };
            if *last == original[at - 1] || original.get(at) == Some(first) {
                continue;
            }
            let mut new_sentence: String = original[..at].iter().collect();
            new_sentence.push_str(&clause);
            new_sentence.extend(&original[at..]);

            let modified = rebuild_with_sentence(response, index, &new_sentence);
            if validate_single_sentence_change(response, &modified, segmenter) != ChangeVerdict::Accept(index) {
                continue;
            }
            let meta = BTreeMap::from([
                ("bank".to_string(), bank.version.clone()),
                ("quality".to_string(), quality.clone()),
                ("seed".to_string(), seed.to_string()),
                ("template".to_string(), t.to_string()),
            ]);
            let record = record_from_sentence(
                response,
                candidate,
                index,
                &new_sentence,
                Generator::Template,
                meta,
                segmenter,
            )?;
            let start = response.sentences[index].start + at;
            debug_assert_eq!(record.insertion_span, CharRange::new(start, start + clause_chars.len()));
            return Ok(record);
        }
    }
    Err(Error::precondition(format!(
        "no template fits any sentence of response {}",
        response.id
    )))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionRejection {
    pub record_id: String,
    pub reason: RejectionReason,
    pub detail: String,
}

/// Template-insert one ad into every response. The candidate is drawn from the
/// query topic's vocabulary by hashing the response id with `seed`, so the
/// output depends only on the inputs. Responses that cannot take an ad are
/// returned as rejections.
pub fn template_inject_corpus(
    queries: &[Query],
    responses: &[SearchResponse],
    candidates: &[AdCandidate],
    seed: u64,
    bank: &TemplateBank,
    segmenter: &Segmenter,
) -> Result<(Vec<AdInsertionRecord>, Vec<InsertionRejection>)> {
    let topic_of: HashMap<&str, MetaTopic> = queries.iter().map(|q| (q.id.as_str(), q.topic)).collect();
    let mut by_topic: BTreeMap<MetaTopic, Vec<&AdCandidate>> = BTreeMap::new();
    for c in candidates {
        by_topic.entry(c.topic).or_default().push(c);
    }
    let mut records = Vec::with_capacity(responses.len());
    let mut rejections = Vec::new();
    for r in responses {
        let topic = *topic_of
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::validation(&r.id, format!("dangling query reference {}", r.query_id)))?;
        let pool = by_topic
            .get(&topic)
            .ok_or_else(|| Error::precondition(format!("no ad candidates for topic {topic}")))?;
        let pick = (fnv1a(r.id.as_bytes()) ^ seed) as usize % pool.len();
        match template_insert_ad(r, pool[pick], seed, bank, segmenter) {
            Ok(rec) => records.push(rec),
            Err(Error::Precondition(detail)) => rejections.push(InsertionRejection {
                record_id: format!("{}+{}", r.id, pool[pick].id),
                reason: RejectionReason::NoFit,
                detail,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((records, rejections))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertionOutcome {
    Accepted(AdInsertionRecord),
    Rejected(InsertionRejection),
}

/// Ask the model to weave `candidate` into `response`, then keep the output
/// only if exactly one sentence changed and that sentence names the item.
pub fn insert_ad_llm(
    query: &Query,
    response: &SearchResponse,
    candidate: &AdCandidate,
    client: &dyn LlmClient,
    prompt: &PromptAsset,
    segmenter: &Segmenter,
) -> Result<InsertionOutcome> {
    if candidate.topic != query.topic {
        return Err(Error::precondition(format!(
            "candidate {} is from {}, query {} is from {}",
            candidate.id, candidate.topic, query.id, query.topic
        )));
    }
    let record_id = format!("{}+{}", response.id, candidate.id);
    let reject = |reason, detail: String| {
        Ok(InsertionOutcome::Rejected(InsertionRejection {
            record_id: record_id.clone(),
            reason,
            detail,
        }))
    };
    let qualities = candidate.qualities.join("; ");
    let request = CompletionRequest {
        prompt: prompt.render(&[
            ("query", &query.text),
            ("item", &candidate.item),
            ("qualities", &qualities),
            ("response", &response.text),
        ]),
        temperature: 0.0,
    };
    let output = match client.complete(&request) {
        Ok(o) => o,
        Err(e) => return reject(RejectionReason::ClientFailure, e.to_string()),
    };
    let index = match validate_single_sentence_change(response, &output, segmenter) {
        ChangeVerdict::Accept(i) => i,
        ChangeVerdict::Reject(reason) => return reject(reason, String::new()),
    };
    let new_sentence = segmenter.sentences(&output)[index].to_string();
    if find_ci(&new_sentence, &candidate.item).is_none() {
        return reject(
            RejectionReason::ItemMissing,
            format!("sentence {index} does not mention {}", candidate.item),
        );
    }
    let meta = BTreeMap::from([
        ("model".to_string(), client.model_name().to_string()),
        ("prompt".to_string(), prompt.tag()),
    ]);
    let record = record_from_sentence(response, candidate, index, &new_sentence, Generator::Llm, meta, segmenter)?;
    Ok(InsertionOutcome::Accepted(record))
}

/// Try the chosen candidates in order; the first accepted insertion wins.
/// Every rejection is returned for the rejection log.
pub fn insert_with_fallback(
    query: &Query,
    response: &SearchResponse,
    candidates: &[&AdCandidate],
    client: &dyn LlmClient,
    prompt: &PromptAsset,
    segmenter: &Segmenter,
) -> Result<(Option<AdInsertionRecord>, Vec<InsertionRejection>)> {
    let mut rejections = Vec::new();
    for c in candidates {
        match insert_ad_llm(query, response, c, client, prompt, segmenter)? {
            InsertionOutcome::Accepted(r) => return Ok((Some(r), rejections)),
            InsertionOutcome::Rejected(r) => rejections.push(r),
        }
    }
    Ok((None, rejections))
}

pub const DEFAULT_MARKER_PHRASES: &[&str] = &["alternatively", "for those who"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuditScope {
    /// Search the whole affected sentence.
    #[default]
    AffectedSentence,
    /// Search only the inserted characters.
    InsertionSpan,
}

/// Number of records whose affected region contains each phrase (case-insensitive).
pub fn audit_marker_phrases(
    records: &[AdInsertionRecord],
    phrases: &[&str],
    scope: AuditScope,
) -> Result<BTreeMap<String, usize>> {
    if phrases.is_empty() {
        return Err(Error::precondition("phrase list is empty"));
    }
    let mut counts: BTreeMap<String, usize> = phrases.iter().map(|p| (p.to_lowercase(), 0)).collect();
    for r in records {
        let region = match scope {
            AuditScope::AffectedSentence => r.affected_sentence(),
            AuditScope::InsertionSpan => r.inserted_text(),
        }
        .to_lowercase();
        for (phrase, count) in counts.iter_mut() {
            if region.contains(phrase.as_str()) {
                *count += 1;
            }
        }
    }
    Ok(counts)
}

/// Characters of the modified sentence outside the span, i.e. what remains
/// after deleting the insertion.
pub fn remove_span(sentence: &str, span: CharRange) -> String {
    let before = char_slice(sentence, CharRange::new(0, span.start));
    let after = char_slice(sentence, CharRange::new(span.end, char_len(sentence)));
    format!("{before}{after}")
}
