//! Zero-shot ad detection with instruction-tuned LLMs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{DetectionResult, FlaggedSentence};
use crate::error::{Error, Result};
use crate::evaluator::{GroundTruth, Outcome};
use crate::llm::{CompletionRequest, LlmClient, PromptAsset};
use crate::segment::Segmenter;
use crate::text::{find_ci, normalize_name, CharRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Products or brands plus advertising passages.
    Full,
    /// Products or brands only.
    Reduced,
}

#[derive(Clone)]
pub struct LlmDetectorVariant {
    pub id: String,
    pub client: Arc<dyn LlmClient>,
    pub prompt: PromptAsset,
    pub mode: DetectionMode,
}

impl LlmDetectorVariant {
    /// Variant using the bundled prompt for `mode`.
    pub fn new(id: impl Into<String>, client: Arc<dyn LlmClient>, mode: DetectionMode) -> Self {
        let prompt = match mode {
            DetectionMode::Full => crate::llm::assets::detect_full(),
            DetectionMode::Reduced => crate::llm::assets::detect_reduced(),
        };
        Self {
            id: id.into(),
            client,
            prompt,
            mode,
        }
    }
}

impl std::fmt::Debug for LlmDetectorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmDetectorVariant")
            .field("id", &self.id)
            .field("model", &self.client.model_name())
            .field("prompt", &self.prompt.tag())
            .field("mode", &self.mode)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub items: Vec<String>,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure(pub String);

const NEGATIVE_ANSWERS: &[&str] = &[
    "none",
    "no advertising",
    "no advertisement",
    "no advertisements",
    "no ads",
    "no ad",
    "nothing",
    "no products",
    "no brands",
];

fn clean_item(s: &str) -> String {
    normalize_name(s.trim().trim_matches(|c: char| "\"'`*“”‘’.,;:".contains(c)).trim())
}

fn clean_passage(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| "\"'`“”‘’".contains(c))
        .to_string()
}

fn dedup(v: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    v.into_iter().filter(|x| !x.is_empty() && seen.insert(x.clone())).collect()
}

fn strings(v: Option<&Value>) -> Option<Vec<String>> {
    match v {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::Array(a)) => a.iter().map(|x| x.as_str().map(str::to_string)).collect(),
        _ => None,
    }
}

fn parse_structured(raw: &str) -> Option<ParsedOutput> {
    let start = raw.find(['{', '['])?;
    let end = raw.rfind(['}', ']'])?;
    if end < start {
        return None;
    }
    let value: Value = serde_json::from_str(&raw[start..=end]).ok()?;
    match &value {
        Value::Object(map) => {
            if !map.contains_key("items") && !map.contains_key("passages") {
                return None;
            }
            Some(ParsedOutput {
                items: strings(map.get("items"))?,
                passages: strings(map.get("passages"))?,
            })
        }
        Value::Array(_) => Some(ParsedOutput {
            items: strings(Some(&value))?,
            passages: Vec::new(),
        }),
        _ => None,
    }
}

fn bullet(line: &str) -> Option<&str> {
    let l = line.trim_start();
    for p in ["- ", "* ", "• ", "– "] {
        if let Some(rest) = l.strip_prefix(p) {
            return Some(rest);
        }
    }
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &l[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r);
        }
    }
    None
}

fn parse_lines(raw: &str) -> Option<ParsedOutput> {
    let mut out = ParsedOutput::default();
    let mut any = false;
    for line in raw.lines() {
        let Some(content) = bullet(line) else { continue };
        any = true;
        let lowered = content.trim().to_lowercase();
        if let Some(p) = lowered.strip_prefix("passage:") {
            let offset = content.trim().len() - p.len();
            out.passages.push(content.trim()[offset..].to_string());
        } else {
            out.items.push(content.to_string());
        }
    }
    any.then_some(out)
}

fn is_negative(raw: &str) -> bool {
    let lowered = raw.trim().to_lowercase();
    let head: String = lowered
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take(40)
        .collect();
    NEGATIVE_ANSWERS.iter().any(|n| {
        head.strip_prefix(n)
            .is_some_and(|rest| rest.chars().next().is_none_or(|c| !c.is_alphanumeric()))
    })
}

/// Parse a detector answer. Accepts a JSON object (`items`, `passages`) or
/// array, bullet lines (`- name`, `- passage: text`), or an explicit
/// negative answer such as "none". Never panics.
pub fn parse_llm_output(raw: &str, mode: DetectionMode) -> std::result::Result<ParsedOutput, ParseFailure> {
    if raw.trim().is_empty() {
        return Err(ParseFailure("empty output".into()));
    }
    let parsed = parse_structured(raw)
        .or_else(|| parse_lines(raw))
        .or_else(|| is_negative(raw).then(ParsedOutput::default))
        .ok_or_else(|| ParseFailure("output matches neither the structured nor the line grammar".into()))?;
    let items = dedup(
        parsed
            .items
            .iter()
            .map(|i| clean_item(i))
            .filter(|i| !NEGATIVE_ANSWERS.contains(&i.as_str()))
            .collect(),
    );
    let passages = match mode {
        DetectionMode::Full => dedup(parsed.passages.iter().map(|p| clean_passage(p)).collect()),
        DetectionMode::Reduced => Vec::new(),
    };
    Ok(ParsedOutput { items, passages })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub detector_id: String,
    pub response_id: String,
    pub model: String,
    pub prompt_tag: String,
    pub attempt: usize,
    pub prompt: String,
    pub output: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmDetection {
    pub result: DetectionResult,
    pub transcripts: Vec<Transcript>,
}

const REPROMPT_SUFFIX: &str = "\n\nYour previous answer could not be read. Answer only in the format requested above.";

/// Ask one detector about one response. Malformed output is re-prompted once;
/// a second failure yields an abstain result.
pub fn detect_llm(
    variant: &LlmDetectorVariant,
    query: &str,
    response_id: &str,
    response: &str,
    segmenter: &Segmenter,
) -> LlmDetection {
    let prompt = variant.prompt.render(&[("query", query), ("response", response)]);
    let mut transcripts = Vec::new();
    let mut last_problem = String::new();
    for attempt in 1..=2 {
        let text = if attempt == 1 {
            prompt.clone()
        } else {
            format!("{prompt}{REPROMPT_SUFFIX}")
        };
        let reply = variant.client.complete(&CompletionRequest::new(text.clone()));
        let mut transcript = Transcript {
            detector_id: variant.id.clone(),
            response_id: response_id.to_string(),
            model: variant.client.model_name().to_string(),
            prompt_tag: variant.prompt.tag(),
            attempt,
            prompt: text,
            output: None,
            error: None,
        };
        match reply {
            Ok(output) => {
                let parsed = parse_llm_output(&output, variant.mode);
                transcript.output = Some(output);
                transcripts.push(transcript);
                match parsed {
                    Ok(p) => {
                        return LlmDetection {
                            result: result_from_parsed(variant, response_id, response, &p, segmenter),
                            transcripts,
                        }
                    }
                    Err(ParseFailure(why)) => last_problem = why,
                }
            }
            Err(e) => {
                last_problem = e.to_string();
                transcript.error = Some(last_problem.clone());
                transcripts.push(transcript);
            }
        }
    }
    LlmDetection {
        result: abstain(&variant.id, response_id, &last_problem),
        transcripts,
    }
}

pub fn abstain(detector_id: &str, response_id: &str, reason: &str) -> DetectionResult {
    DetectionResult {
        response_id: response_id.to_string(),
        detector_id: detector_id.to_string(),
        is_ad: false,
        flagged_sentences: Vec::new(),
        named_items: Some(Vec::new()),
        passages: Vec::new(),
        metadata: BTreeMap::from([
            (DetectionResult::ABSTAIN_KEY.to_string(), "true".to_string()),
            ("abstain_reason".to_string(), reason.to_string()),
        ]),
    }
}

fn result_from_parsed(
    variant: &LlmDetectorVariant,
    response_id: &str,
    response: &str,
    parsed: &ParsedOutput,
    segmenter: &Segmenter,
) -> DetectionResult {
    let sentences = segmenter.segment(response);
    let mut located = Vec::new();
    let mut unlocated = 0usize;
    for p in &parsed.passages {
        match find_ci(response, p) {
            Some(r) => located.push(r),
            None => unlocated += 1,
        }
    }
    let flagged: BTreeSet<usize> = located
        .iter()
        .flat_map(|r| {
            sentences
                .iter()
                .enumerate()
                .filter(move |(_, s)| s.overlap(r) > 0)
                .map(|(i, _)| i)
        })
        .collect();
    let mut metadata = BTreeMap::new();
    if unlocated > 0 {
        metadata.insert("unlocated_passages".to_string(), unlocated.to_string());
    }
    DetectionResult {
        response_id: response_id.to_string(),
        detector_id: variant.id.clone(),
        is_ad: !parsed.items.is_empty() || !flagged.is_empty(),
        flagged_sentences: flagged.into_iter().map(|index| FlaggedSentence { index, score: 1.0 }).collect(),
        named_items: Some(parsed.items.clone()),
        passages: located,
        metadata,
    }
}

/// Minimum share of the insertion span a returned passage must cover.
pub const DEFAULT_MIN_SPAN_OVERLAP: f64 = 0.5;

/// Credit an LLM answer against ground truth: an ad is found when a named item
/// equals the advertised item (normalized) or a passage covers at least
/// `min_span_overlap` of the insertion span.
pub fn match_to_truth(result: &DetectionResult, truth: &GroundTruth, min_span_overlap: f64) -> Outcome {
    let Some(ad) = &truth.ad else {
        return if result.is_ad { Outcome::Fp } else { Outcome::Tn };
    };
    if !result.is_ad {
        return Outcome::Fn;
    }
    let target = normalize_name(&ad.item);
    let named = result
        .named_items
        .iter()
        .flatten()
        .any(|i| normalize_name(i) == target);
    let span_len = ad.span.len().max(1) as f64;
    let localized = result
        .passages
        .iter()
        .any(|p| p.overlap(&ad.span) as f64 >= min_span_overlap * span_len);
    if named || localized {
        Outcome::Tp
    } else {
        Outcome::Fn
    }
}

pub const MAJORITY_ID: &str = "majority3";

/// Majority of exactly three detectors; abstains count as negative votes.
pub fn majority_vote(results: &[DetectionResult]) -> Result<DetectionResult> {
    if results.len() != 3 {
        return Err(Error::precondition(format!(
            "majority vote needs exactly 3 results, got {}",
            results.len()
        )));
    }
    let id = &results[0].response_id;
    if results.iter().any(|r| &r.response_id != id) {
        return Err(Error::precondition("majority vote over results of different responses"));
    }
    let positive: Vec<&DetectionResult> = results.iter().filter(|r| r.is_ad && !r.is_abstain()).collect();
    let votes: Vec<&str> = results
        .iter()
        .map(|r| {
            if r.is_abstain() {
                "abstain"
            } else if r.is_ad {
                "ad"
            } else {
                "no_ad"
            }
        })
        .collect();
    let is_ad = positive.len() >= 2;
    let mut items = BTreeSet::new();
    let mut flagged: BTreeMap<usize, f64> = BTreeMap::new();
    let mut passages: Vec<CharRange> = Vec::new();
    if is_ad {
        for r in &positive {
            items.extend(r.named_items.iter().flatten().cloned());
            for f in &r.flagged_sentences {
                let e = flagged.entry(f.index).or_insert(0.0);
                *e = e.max(f.score);
            }
            for p in &r.passages {
                if !passages.contains(p) {
                    passages.push(*p);
                }
            }
        }
    }
    passages.sort_by_key(|p| (p.start, p.end));
    Ok(DetectionResult {
        response_id: id.clone(),
        detector_id: MAJORITY_ID.to_string(),
        is_ad,
        flagged_sentences: flagged.into_iter().map(|(index, score)| FlaggedSentence { index, score }).collect(),
        named_items: Some(items.into_iter().collect()),
        passages,
        metadata: BTreeMap::from([
            ("voters".to_string(), results.iter().map(|r| r.detector_id.as_str()).collect::<Vec<_>>().join(",")),
            ("votes".to_string(), votes.join(",")),
        ]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::AdTruth;
    use crate::llm::ScriptedLlmClient;
    use proptest::prelude::*;

    const RESPONSE: &str = "Savings accounts differ a lot. For those who value low fees, AcmeBank is a great choice. Always compare rates.";

    fn variant(outputs: &[&str], mode: DetectionMode) -> (LlmDetectorVariant, Arc<ScriptedLlmClient>) {
        let client = Arc::new(ScriptedLlmClient::new("mock", outputs.iter().map(|s| s.to_string())));
        (LlmDetectorVariant::new("mock-full", client.clone(), mode), client)
    }

    #[test]
    fn structured_output() {
        let p = parse_llm_output(
            r#"Sure! {"items": ["AcmeBank", "Zeta  Pay"], "passages": ["AcmeBank is a great choice"]}"#,
            DetectionMode::Full,
        )
        .unwrap();
        assert_eq!(p.items, vec!["acmebank", "zeta pay"]);
        assert_eq!(p.passages.len(), 1);
        let r = parse_llm_output(r#"{"items": ["AcmeBank"], "passages": ["x"]}"#, DetectionMode::Reduced).unwrap();
        assert!(r.passages.is_empty());
    }

    #[test]
    fn bullet_fallback_and_negatives() {
        assert_eq!(
            parse_llm_output("- AcmeBank", DetectionMode::Reduced).unwrap(),
            ParsedOutput {
                items: vec!["acmebank".into()],
                passages: vec![]
            }
        );
        let p = parse_llm_output("1. AcmeBank\n2) Zeta\n- passage: a great choice", DetectionMode::Full).unwrap();
        assert_eq!(p.items, vec!["acmebank", "zeta"]);
        assert_eq!(p.passages, vec!["a great choice"]);
        for neg in ["none", "None.", "No advertising found.", "no ads", "- none"] {
            assert_eq!(parse_llm_output(neg, DetectionMode::Full).unwrap(), ParsedOutput::default(), "{neg}");
        }
        assert!(parse_llm_output("", DetectionMode::Full).is_err());
        assert!(parse_llm_output("   \n", DetectionMode::Full).is_err());
        assert!(parse_llm_output("The response reads like a normal answer to me.", DetectionMode::Full).is_err());
        assert!(parse_llm_output("nonexistent brands", DetectionMode::Full).is_err());
    }

    #[test]
    fn detection_from_mock() {
        let seg = Segmenter::default();
        let (v, _) = variant(&[r#"{"items": ["AcmeBank"], "passages": ["AcmeBank is a great choice"]}"#], DetectionMode::Full);
        let d = detect_llm(&v, "best savings account", "r1", RESPONSE, &seg);
        assert!(d.result.is_ad);
        assert_eq!(d.result.named_items, Some(vec!["acmebank".to_string()]));
        assert_eq!(d.result.flagged_indices(), vec![1]);
        assert_eq!(d.transcripts.len(), 1);
        crate::corpus::Record::validate(&d.result).unwrap();

        let (v, _) = variant(&["no advertising found"], DetectionMode::Full);
        let d = detect_llm(&v, "q", "r1", RESPONSE, &seg);
        assert!(!d.result.is_ad && !d.result.is_abstain());
    }

    #[test]
    fn prose_twice_abstains_after_one_reprompt() {
        let seg = Segmenter::default();
        let (v, client) = variant(&["I think it is fine.", "Still prose."], DetectionMode::Full);
        let d = detect_llm(&v, "q", "r1", RESPONSE, &seg);
        assert!(d.result.is_abstain() && !d.result.is_ad);
        assert_eq!(d.transcripts.len(), 2);
        let prompts = client.prompts();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].ends_with(REPROMPT_SUFFIX));
        crate::corpus::Record::validate(&d.result).unwrap();

        let (v, _) = variant(&["prose", "- AcmeBank"], DetectionMode::Reduced);
        assert!(detect_llm(&v, "q", "r1", RESPONSE, &seg).result.is_ad);
    }

    #[test]
    fn client_errors_abstain() {
        let client = Arc::new(ScriptedLlmClient::from_results("m", vec![]));
        let v = LlmDetectorVariant::new("x", client, DetectionMode::Full);
        let d = detect_llm(&v, "q", "r", RESPONSE, &Segmenter::default());
        assert!(d.result.is_abstain());
        assert!(d.transcripts.iter().all(|t| t.error.is_some()));
    }

    fn truth(ad: bool) -> GroundTruth {
        GroundTruth {
            response_id: "r".into(),
            sentence_count: 3,
            ad: ad.then(|| AdTruth {
                item: "AcmeBank".into(),
                span: CharRange::new(10, 20),
                affected_sentence: 1,
            }),
        }
    }

    fn answer(is_ad: bool, items: &[&str], passages: Vec<CharRange>) -> DetectionResult {
        DetectionResult {
            response_id: "r".into(),
            detector_id: "d".into(),
            is_ad,
            flagged_sentences: if is_ad && items.is_empty() {
                vec![FlaggedSentence { index: 1, score: 1.0 }]
            } else {
                vec![]
            },
            named_items: Some(items.iter().map(|s| s.to_string()).collect()),
            passages,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn matching_rules() {
        assert_eq!(match_to_truth(&answer(true, &["acmebank"], vec![]), &truth(true), 0.5), Outcome::Tp);
        assert_eq!(
            match_to_truth(&answer(true, &["other"], vec![CharRange::new(14, 30)]), &truth(true), 0.5),
            Outcome::Tp
        );
        assert_eq!(
            match_to_truth(&answer(true, &["other"], vec![CharRange::new(16, 30)]), &truth(true), 0.5),
            Outcome::Fn
        );
        assert_eq!(match_to_truth(&answer(false, &[], vec![]), &truth(true), 0.5), Outcome::Fn);
        assert_eq!(match_to_truth(&answer(true, &["x"], vec![]), &truth(false), 0.5), Outcome::Fp);
        assert_eq!(match_to_truth(&answer(false, &[], vec![]), &truth(false), 0.5), Outcome::Tn);
    }

    fn vote(is_ad: bool, abstained: bool, item: &str) -> DetectionResult {
        if abstained {
            return abstain("a", "r", "bad output");
        }
        let items = [item];
        answer(is_ad, if is_ad { &items[..] } else { &[] }, vec![])
    }

    #[test]
    fn majority_rules() {
        let v = |a: [(bool, bool); 3]| {
            majority_vote(&a.iter().enumerate().map(|(i, &(p, ab))| vote(p, ab, &format!("i{i}"))).collect::<Vec<_>>())
                .unwrap()
        };
        let r = v([(true, false), (true, false), (false, false)]);
        assert!(r.is_ad);
        assert_eq!(r.named_items, Some(vec!["i0".to_string(), "i1".to_string()]));
        assert_eq!(r.detector_id, MAJORITY_ID);
        assert!(!v([(false, false), (false, false), (true, false)]).is_ad);
        assert!(v([(true, false), (false, true), (true, false)]).is_ad);
        assert!(!v([(true, false), (false, true), (false, false)]).is_ad);
        assert!(majority_vote(&[vote(true, false, "a"), vote(true, false, "b")]).is_err());
        let mut other = vote(true, false, "c");
        other.response_id = "elsewhere".into();
        assert!(majority_vote(&[vote(true, false, "a"), vote(true, false, "b"), other]).is_err());
    }

    proptest! {
        #[test]
        fn parsing_is_total(s in "\\PC{0,200}") {
            let _ = parse_llm_output(&s, DetectionMode::Full);
            let _ = parse_llm_output(&s, DetectionMode::Reduced);
        }

        #[test]
        fn vote_is_idempotent_and_bounded(flags in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..30)) {
            // Per response the vote lies between the individual verdicts. Over a
            // set, with v positive votes per response: 2 * majority <= sum(v) <= n + 2 * majority.
            let mut votes_total = 0usize;
            let mut maj = 0usize;
            for (a, b, c) in &flags {
                let rs = [vote(*a, false, "x"), vote(*b, false, "x"), vote(*c, false, "x")];
                let v = rs.iter().filter(|r| r.is_ad).count();
                let m = majority_vote(&rs).unwrap().is_ad;
                prop_assert!(rs.iter().any(|r| r.is_ad == m));
                votes_total += v;
                maj += m as usize;
                let same = majority_vote(&[rs[0].clone(), rs[0].clone(), rs[0].clone()]).unwrap();
                prop_assert_eq!(same.is_ad, rs[0].is_ad);
            }
            prop_assert!(2 * maj <= votes_total && votes_total <= flags.len() + 2 * maj);
        }
    }
}
