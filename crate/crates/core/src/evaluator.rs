//! Detection metrics, confidence intervals, ROUGE-1 corpus validation and
//! error-analysis sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{AdCandidate, AdInsertionRecord, DetectionResult, MetaTopic, SearchResponse};
use crate::error::{Error, Result};
use crate::pair_builder::Fraction;
use crate::text::{find_ci, CharRange};

/// What is known to be advertised in a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdTruth {
    pub item: String,
    pub span: CharRange,
    pub affected_sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub response_id: String,
    pub sentence_count: usize,
    pub ad: Option<AdTruth>,
}

impl GroundTruth {
    pub fn original(response: &SearchResponse) -> Self {
        Self {
            response_id: response.id.clone(),
            sentence_count: response.sentences.len(),
            ad: None,
        }
    }

    pub fn ad_record(record: &AdInsertionRecord, candidate: &AdCandidate) -> Self {
        Self {
            response_id: record.id.clone(),
            sentence_count: record.sentences.len(),
            ad: Some(AdTruth {
                item: candidate.item.clone(),
                span: record.insertion_span,
                affected_sentence: record.affected_sentence_index,
            }),
        }
    }

    pub fn is_ad(&self) -> bool {
        self.ad.is_some()
    }
}

/// Ground truth for every original and ad record of a collection.
pub fn ground_truths(
    responses: &[&SearchResponse],
    ad_records: &[&AdInsertionRecord],
    candidates: &[AdCandidate],
) -> Result<Vec<GroundTruth>> {
    let by_id: HashMap<&str, &AdCandidate> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut out: Vec<GroundTruth> = responses.iter().map(|r| GroundTruth::original(r)).collect();
    for rec in ad_records {
        let cand = by_id
            .get(rec.candidate_id.as_str())
            .ok_or_else(|| Error::precondition(format!("candidate {} of {} unknown", rec.candidate_id, rec.id)))?;
        out.push(GroundTruth::ad_record(rec, cand));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

/// Response-level outcome from the verdict alone.
pub fn verdict_outcome(result: &DetectionResult, truth: &GroundTruth) -> Outcome {
    match (truth.is_ad(), result.is_ad) {
        (true, true) => Outcome::Tp,
        (true, false) => Outcome::Fn,
        (false, true) => Outcome::Fp,
        (false, false) => Outcome::Tn,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Granularity {
    #[default]
    #[serde(rename = "response")]
    Response,
    #[serde(rename = "sentence")]
    Sentence,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Self::Response),
            "sentence" => Ok(Self::Sentence),
            other => Err(Error::precondition(format!("unknown granularity '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn from_outcomes(outcomes: impl IntoIterator<Item = Outcome>) -> Self {
        let mut c = Self::default();
        outcomes.into_iter().for_each(|o| c.add(o));
        c
    }

    /// `tp / (tp + fp)`, undefined when nothing was predicted positive.
    pub fn precision(&self) -> Option<Fraction> {
        (self.tp + self.fp > 0).then(|| Fraction::new(self.tp, self.tp + self.fp))
    }

    /// `tp / (tp + fn)`, undefined when there are no positives.
    pub fn recall(&self) -> Option<Fraction> {
        (self.tp + self.fn_ > 0).then(|| Fraction::new(self.tp, self.tp + self.fn_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrResult {
    pub counts: ConfusionCounts,
    pub precision: Option<Fraction>,
    pub recall: Option<Fraction>,
}

impl PrResult {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        Self {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
        }
    }
}

/// Rounded display value, or "undefined".
pub fn display_metric(value: Option<Fraction>) -> String {
    value.map_or_else(|| "undefined".to_string(), |f| format!("{:.2}", f.value()))
}

/// Precision and recall of detection results against ground truth, judging
/// each response by its verdict.
pub fn compute_pr(results: &[DetectionResult], truths: &[GroundTruth], granularity: Granularity) -> Result<PrResult> {
    compute_pr_with(results, truths, granularity, verdict_outcome)
}

/// As [`compute_pr`], with a custom response-level matching rule.
pub fn compute_pr_with(
    results: &[DetectionResult],
    truths: &[GroundTruth],
    granularity: Granularity,
    matcher: impl Fn(&DetectionResult, &GroundTruth) -> Outcome,
) -> Result<PrResult> {
    let by_id: HashMap<&str, &GroundTruth> = truths.iter().map(|t| (t.response_id.as_str(), t)).collect();
    let mut counts = ConfusionCounts::default();
    for r in results {
        let truth = by_id
            .get(r.response_id.as_str())
            .ok_or_else(|| Error::precondition(format!("no ground truth for response {}", r.response_id)))?;
        match granularity {
            Granularity::Response => counts.add(matcher(r, truth)),
            Granularity::Sentence => {
                let c = sentence_counts(r, truth);
                counts.tp += c.tp;
                counts.fp += c.fp;
                counts.fn_ += c.fn_;
                counts.tn += c.tn;
            }
        }
    }
    Ok(PrResult::from_counts(counts))
}

/// Flagged sentences against the affected sentence of one response.
pub fn sentence_counts(result: &DetectionResult, truth: &GroundTruth) -> ConfusionCounts {
    let flagged: BTreeSet<usize> = result.flagged_indices().into_iter().collect();
    let affected = truth.ad.as_ref().map(|a| a.affected_sentence);
    let mut c = ConfusionCounts::default();
    for i in 0..truth.sentence_count.max(flagged.iter().next_back().map_or(0, |m| m + 1)) {
        c.add(match (Some(i) == affected, flagged.contains(&i)) {
            (true, true) => Outcome::Tp,
            (true, false) => Outcome::Fn,
            (false, true) => Outcome::Fp,
            (false, false) => Outcome::Tn,
        });
    }
    c
}

/// Student-t interval `mean ± t · sd / √n`, clamped to `[0, 1]`.
pub fn confidence_interval(scores: &[f64], level: f64) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::precondition("a confidence interval needs at least 2 scores"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::precondition("confidence level must lie in (0, 1)"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok((mean.clamp(0.0, 1.0), mean.clamp(0.0, 1.0)));
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::precondition(e.to_string()))?
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = t * sd / n.sqrt();
    Ok(((mean - half).clamp(0.0, 1.0), (mean + half).clamp(0.0, 1.0)))
}

const STOPWORDS_V1: &str = include_str!("../assets/stopwords-en-v1.txt");

/// Rule-based English lemmatizer: a few irregular forms plus plural and
/// inflection suffix rules.
pub fn lemmatize(token: &str) -> String {
    const IRREGULAR: &[(&str, &str)] = &[
        ("children", "child"),
        ("people", "person"),
        ("men", "man"),
        ("women", "woman"),
        ("feet", "foot"),
        ("teeth", "tooth"),
        ("mice", "mouse"),
        ("better", "good"),
        ("best", "good"),
        ("was", "be"),
        ("were", "be"),
        ("is", "be"),
        ("are", "be"),
        ("has", "have"),
        ("had", "have"),
    ];
    if let Some((_, l)) = IRREGULAR.iter().find(|(w, _)| *w == token) {
        return l.to_string();
    }
    let n = token.chars().count();
    if n > 4 && token.ends_with("ies") {
        return format!("{}y", &token[..token.len() - 3]);
    }
    if n > 4 && (token.ends_with("sses") || token.ends_with("shes") || token.ends_with("ches") || token.ends_with("xes")) {
        return token[..token.len() - 2].to_string();
    }
    if n > 3 && token.ends_with('s') && !token.ends_with("ss") && !token.ends_with("us") && !token.ends_with("is") {
        return token[..token.len() - 1].to_string();
    }
    token.to_string()
}

/// Tokenizer, stopword filter, advertised-item stripping and lemmatizer.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub stopwords: HashSet<String>,
    pub version: String,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            stopwords: STOPWORDS_V1.split_whitespace().map(str::to_string).collect(),
            version: "stopwords-en-v1+rules-v1".into(),
        }
    }
}

impl Preprocessor {
    pub fn tokens(&self, text: &str, strip_items: &[&str]) -> Vec<String> {
        let mut chars: Vec<char> = text.chars().collect();
        for item in strip_items.iter().filter(|i| !i.trim().is_empty()) {
            loop {
                let hay: String = chars.iter().collect();
                let Some(r) = find_ci(&hay, item) else { break };
                for c in &mut chars[r.start..r.end] {
                    *c = ' ';
                }
            }
        }
        let text: String = chars.into_iter().collect::<String>().to_lowercase();
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !self.stopwords.contains(*t))
            .map(lemmatize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Both token lists were empty; the score is defined as 0.
    pub both_empty: bool,
}

/// ROUGE-1 over token multisets with clipped counts.
pub fn rouge1_tokens(a: &[String], b: &[String]) -> RougeScore {
    if a.is_empty() && b.is_empty() {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            both_empty: true,
        };
    }
    fn count(toks: &[String]) -> HashMap<&str, usize> {
        toks.iter().fold(HashMap::new(), |mut m, t| {
            *m.entry(t.as_str()).or_default() += 1;
            m
        })
    }
    let (ca, cb) = (count(a), count(b));
    let overlap: usize = ca.iter().map(|(t, n)| (*n).min(*cb.get(t).unwrap_or(&0))).sum();
    if overlap == 0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            both_empty: false,
        };
    }
    let precision = overlap as f64 / a.len() as f64;
    let recall = overlap as f64 / b.len() as f64;
    RougeScore {
        precision,
        recall,
        f1: 2.0 * overlap as f64 / (a.len() + b.len()) as f64,
        both_empty: false,
    }
}

pub fn rouge1_f1(a: &str, b: &str, pre: &Preprocessor, strip_items: &[&str]) -> RougeScore {
    rouge1_tokens(&pre.tokens(a, strip_items), &pre.tokens(b, strip_items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalDiversityReport {
    pub same_topic_mean: Option<f64>,
    pub cross_topic_mean: Option<f64>,
    pub same_topic_pairs: usize,
    pub cross_topic_pairs: usize,
    pub warnings: Vec<String>,
}

impl LexicalDiversityReport {
    /// Means on the ×100 scale.
    pub fn scaled(&self) -> (Option<f64>, Option<f64>) {
        (self.same_topic_mean.map(|m| m * 100.0), self.cross_topic_mean.map(|m| m * 100.0))
    }
}

/// Mean ROUGE-1 F1 between affected sentences of ads from the same topic and
/// from different topics. At most `budget` pairs of each kind are sampled.
pub fn lexical_diversity_report(
    records: &[AdInsertionRecord],
    candidates: &[AdCandidate],
    pre: &Preprocessor,
    budget: usize,
    seed: u64,
) -> LexicalDiversityReport {
    let by_id: HashMap<&str, &AdCandidate> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut warnings = Vec::new();
    let known: Vec<(&AdInsertionRecord, &AdCandidate)> = records
        .iter()
        .filter_map(|r| match by_id.get(r.candidate_id.as_str()) {
            Some(c) => Some((r, *c)),
            None => {
                warnings.push(format!("record {} has unknown candidate {}", r.id, r.candidate_id));
                None
            }
        })
        .collect();
    let mut per_topic: BTreeMap<MetaTopic, usize> = BTreeMap::new();
    for (_, c) in &known {
        *per_topic.entry(c.topic).or_default() += 1;
    }
    for (t, n) in &per_topic {
        if *n < 2 {
            warnings.push(format!("topic {t} has {n} record(s); no same-topic pairs"));
        }
    }
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..known.len() {
        for j in i + 1..known.len() {
            if known[i].1.topic == known[j].1.topic {
                same.push((i, j));
            } else {
                cross.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean_of = |pairs: &mut Vec<(usize, usize)>, kind: &str, warnings: &mut Vec<String>| {
        if pairs.is_empty() {
            warnings.push(format!("no {kind} pairs available"));
            return (None, 0);
        }
        if pairs.len() > budget {
            pairs.shuffle(&mut rng);
            pairs.truncate(budget);
        }
        let total: f64 = pairs
            .iter()
            .map(|&(i, j)| {
                let (ra, ca) = known[i];
                let (rb, cb) = known[j];
                let items = [ca.item.as_str(), cb.item.as_str()];
                rouge1_f1(ra.affected_sentence(), rb.affected_sentence(), pre, &items).f1
            })
            .sum();
        (Some(total / pairs.len() as f64), pairs.len())
    };
    let (same_mean, same_n) = mean_of(&mut same, "same-topic", &mut warnings);
    let (cross_mean, cross_n) = mean_of(&mut cross, "cross-topic", &mut warnings);
    LexicalDiversityReport {
        same_topic_mean: same_mean,
        cross_topic_mean: cross_mean,
        same_topic_pairs: same_n,
        cross_topic_pairs: cross_n,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    FalsePositive,
    FalseNegative,
}

/// A misclassified response available for annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorCase {
    pub response_id: String,
    pub query: String,
    pub response: String,
    pub error_type: ErrorType,
}

/// Error cases of every detection result whose outcome is FP or FN.
pub fn error_cases(
    results: &[DetectionResult],
    truths: &[GroundTruth],
    texts: &HashMap<String, (String, String)>,
    matcher: impl Fn(&DetectionResult, &GroundTruth) -> Outcome,
) -> Vec<ErrorCase> {
    let by_id: HashMap<&str, &GroundTruth> = truths.iter().map(|t| (t.response_id.as_str(), t)).collect();
    results
        .iter()
        .filter_map(|r| {
            let truth = by_id.get(r.response_id.as_str())?;
            let error_type = match matcher(r, truth) {
                Outcome::Fp => ErrorType::FalsePositive,
                Outcome::Fn => ErrorType::FalseNegative,
                _ => return None,
            };
            let (query, response) = texts.get(&r.response_id)?.clone();
            Some(ErrorCase {
                response_id: r.response_id.clone(),
                query,
                response,
                error_type,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRow {
    pub row_id: String,
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRow {
    pub row_id: String,
    pub response_id: String,
    pub error_type: ErrorType,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationSample {
    pub sheet: Vec<SheetRow>,
    pub key: Vec<KeyRow>,
    pub warnings: Vec<String>,
}

/// Uniformly sample `n_fp` false positives and `n_fn` false negatives,
/// shuffle them together and hide the error type in a separate key.
pub fn sample_errors(cases: &[ErrorCase], n_fp: usize, n_fn: usize, seed: u64) -> AnnotationSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = AnnotationSample::default();
    let mut chosen: Vec<&ErrorCase> = Vec::new();
    for (kind, wanted, label) in [
        (ErrorType::FalsePositive, n_fp, "false positives"),
        (ErrorType::FalseNegative, n_fn, "false negatives"),
    ] {
        let mut pool: Vec<&ErrorCase> = cases.iter().filter(|c| c.error_type == kind).collect();
        pool.sort_by(|a, b| a.response_id.cmp(&b.response_id));
        if pool.len() < wanted {
            sample
                .warnings
                .push(format!("only {} {label} available, {wanted} requested", pool.len()));
        }
        let take = wanted.min(pool.len());
        let picked = rand::seq::index::sample(&mut rng, pool.len(), take);
        chosen.extend(picked.into_iter().map(|i| pool[i]));
    }
    chosen.shuffle(&mut rng);
    for (k, c) in chosen.into_iter().enumerate() {
        let row_id = format!("row-{:03}", k + 1);
        sample.sheet.push(SheetRow {
            row_id: row_id.clone(),
            query: c.query.clone(),
            response: c.response.clone(),
        });
        sample.key.push(KeyRow {
            row_id,
            response_id: c.response_id.clone(),
            error_type: c.error_type,
        });
    }
    sample
}

impl AnnotationSample {
    /// Write `sheet.jsonl` (query and response only) and `key.jsonl`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines = |rows: Vec<String>| rows.into_iter().map(|l| l + "\n").collect::<String>();
        let sheet = lines(self.sheet.iter().map(serde_json::to_string).collect::<std::result::Result<_, _>>()?);
        let key = lines(self.key.iter().map(serde_json::to_string).collect::<std::result::Result<_, _>>()?);
        let (sp, kp) = (dir.join("sheet.jsonl"), dir.join("key.jsonl"));
        std::fs::write(&sp, sheet).map_err(|e| Error::io(&sp, e))?;
        std::fs::write(&kp, key).map_err(|e| Error::io(&kp, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub test_set: String,
    pub detector: String,
    pub result: PrResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub detector: String,
    pub metric: String,
    pub low: f64,
    pub high: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub granularity: Granularity,
    pub rows: Vec<MetricsRow>,
    pub intervals: Vec<CiRow>,
}

impl MetricsReport {
    /// Build the report, adding Student-t interval rows per detector over the
    /// defined per-test-set scores (detectors with fewer than 2 are skipped).
    pub fn new(granularity: Granularity, rows: Vec<MetricsRow>, level: f64) -> Self {
        let mut by_detector: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &rows {
            let e = by_detector.entry(r.detector.as_str()).or_default();
            if let Some(p) = r.result.precision {
                e.0.push(p.value());
            }
            if let Some(rc) = r.result.recall {
                e.1.push(rc.value());
            }
        }
        let mut intervals = Vec::new();
        for (det, (ps, rs)) in &by_detector {
            for (metric, scores) in [("precision", ps), ("recall", rs)] {
                if let Ok((low, high)) = confidence_interval(scores, level) {
                    intervals.push(CiRow {
                        detector: det.to_string(),
                        metric: metric.into(),
                        low,
                        high,
                        samples: scores.len(),
                    });
                }
            }
        }
        Self {
            granularity,
            rows,
            intervals,
        }
    }

    pub fn render_markdown(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| test set | detector | precision | recall | tp | fp | fn | tn |")?;
        writeln!(f, "|---|---|---|---|---|---|---|---|")?;
        for r in &self.rows {
            let c = r.result.counts;
            writeln!(
                f,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.test_set,
                r.detector,
                display_metric(r.result.precision),
                display_metric(r.result.recall),
                c.tp,
                c.fp,
                c.fn_,
                c.tn
            )?;
        }
        if !self.intervals.is_empty() {
            writeln!(f)?;
            writeln!(f, "| detector | metric | 95% low | 95% high | n |")?;
            writeln!(f, "|---|---|---|---|---|")?;
            for ci in &self.intervals {
                writeln!(f, "| {} | {} | {:.3} | {:.3} | {} |", ci.detector, ci.metric, ci.low, ci.high, ci.samples)?;
            }
        }
        Ok(())
    }
}
