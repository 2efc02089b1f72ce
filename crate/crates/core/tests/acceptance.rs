//! Acceptance suite. Run with `cargo test -p nadet-core --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use nadet::corpus::*;
use nadet::encoder::{self, DetectorCheckpoint, EncoderConfig};
use nadet::evaluator::{self, ConfusionCounts, GroundTruth, Granularity, Preprocessor};
use nadet::ingestion::{classify_response, FilterOptions, RawResponse, RejectReason};
use nadet::injector::{self, extract_insertion_span, template_insert_ad, AuditScope, TemplateBank};
use nadet::language::StopwordIdentifier;
use nadet::llm::FnLlmClient;
use nadet::llm_detector::{self, DetectionMode, LlmDetectorVariant};
use nadet::pair_builder::{build_pairs, label_distribution, NeighborPolicy, PairOptions, PairSource};
use nadet::segment::Segmenter;
use nadet::splitter::{self, SplitInput};
use nadet::synthetic::{self, SyntheticConfig, SyntheticCorpus};
use nadet::text::CharRange;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const CHAR_POOL: &[char] = &[
    'a', 'b', 'c', 'x', 'Z', ' ', ' ', 'é', 'ß', '漢', '字', '😀', '"', '\\', '\n', '\t', '.', ',', '{', '}', '1', '9',
];

fn random_string(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let s: String = (0..n).map(|_| CHAR_POOL[rng.gen_range(0..CHAR_POOL.len())]).collect();
    if s.trim().is_empty() {
        format!("{s}q")
    } else {
        s
    }
}

const WORDS: &[&str] = &[
    "river", "mountain", "quiet", "bright", "coffee", "garden", "window", "travel", "market", "summer", "winter", "number",
    "careful", "simple", "Zürich", "café", "naïve", "東京", "really", "people", "choice", "budget", "weekly", "online",
];

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(3..10);
    let mut words: Vec<String> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
    let mut first: Vec<char> = words[0].chars().collect();
    first[0] = first[0].to_uppercase().next().unwrap();
    words[0] = first.into_iter().collect();
    let end = ['.', '!', '?'][rng.gen_range(0..3)];
    format!("{}{end}", words.join(" "))
}

fn random_response(rng: &mut ChaCha8Rng, id: &str, n: usize) -> SearchResponse {
    let sentences: Vec<String> = (0..n).map(|_| random_sentence(rng)).collect();
    let mut text = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            text.push_str(if rng.gen_bool(0.2) { "\n" } else { " " });
        }
        text.push_str(s);
    }
    SearchResponse {
        id: id.into(),
        query_id: format!("q-{id}"),
        engine: Engine::ALL[rng.gen_range(0..3)],
        sentences: nadet::segment::segment(&text),
        text,
        language: "en".into(),
    }
}

fn random_candidate(rng: &mut ChaCha8Rng, id: &str) -> AdCandidate {
    AdCandidate {
        id: id.into(),
        topic: MetaTopic::ALL[rng.gen_range(0..10)],
        item: format!("{}{}", ["Acme", "Zeta", "Nova", "Ürban", "光"][rng.gen_range(0..5)], rng.gen_range(0..1000)),
        qualities: (0..rng.gen_range(1..4))
            .map(|_| format!("{} {}", WORDS[rng.gen_range(0..WORDS.len())], WORDS[rng.gen_range(0..WORDS.len())]))
            .collect(),
    }
}

fn roundtrip<T: Record + PartialEq + std::fmt::Debug>(records: &[T], dir: &std::path::Path) -> Result<(), String> {
    let path = dir.join(format!("{}.jsonl", T::RECORD_TYPE));
    save_corpus(records, &path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded: Vec<T> = load_corpus(&path).map_err(|e| e.to_string())?;
    check(loaded.as_slice() == records, format!("{} records differ after load", T::RECORD_TYPE))?;
    let again = dir.join(format!("{}-again.jsonl", T::RECORD_TYPE));
    save_corpus(&loaded, &again).map_err(|e| e.to_string())?;
    check(
        std::fs::read(&again).map_err(|e| e.to_string())? == bytes,
        format!("{} re-serialization not byte-identical", T::RECORD_TYPE),
    )
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n = 1000;
    let queries: Vec<Query> = (0..n)
        .map(|i| Query {
            id: format!("q{i}"),
            text: random_string(&mut rng, 1, 40),
            topic: MetaTopic::ALL[rng.gen_range(0..10)],
        })
        .collect();
    let responses: Vec<SearchResponse> = (0..n)
        .map(|i| {
            let k = rng.gen_range(4..9);
            random_response(&mut rng, &format!("r{i}"), k)
        })
        .collect();
    let candidates: Vec<AdCandidate> = (0..n).map(|i| random_candidate(&mut rng, &format!("c{i}"))).collect();
    let seg = Segmenter::default();
    let bank = TemplateBank::default();
    let ads: Vec<AdInsertionRecord> = responses
        .iter()
        .zip(&candidates)
        .map(|(r, c)| template_insert_ad(r, c, 5, &bank, &seg))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let manifests: Vec<SplitManifest> = (0..n)
        .map(|i| {
            let holdout = rng.gen_bool(0.5);
            SplitManifest {
                name: format!("m{i}"),
                kind: if holdout { SplitKind::TopicHoldout } else { SplitKind::Fixed },
                holdout_topic: holdout.then(|| MetaTopic::ALL[rng.gen_range(0..10)]),
                seed: rng.gen(),
                ratios: [rng.gen(), rng.gen(), rng.gen()],
                assignment: (0..rng.gen_range(0..20))
                    .map(|k| (format!("rec{k}-{}", random_string(&mut rng, 1, 5)), Subset::ALL[rng.gen_range(0..3)]))
                    .collect(),
            }
        })
        .collect();
    let pairs: Vec<SentencePair> = (0..n)
        .map(|i| {
            let origin = [PairOrigin::Inserted, PairOrigin::Aligned, PairOrigin::Sampled][rng.gen_range(0..3)];
            let a = rng.gen_range(0..10usize);
            SentencePair {
                first: random_string(&mut rng, 1, 60),
                second: random_string(&mut rng, 1, 60),
                label: (origin == PairOrigin::Inserted) as u8,
                source_record_id: format!("s{i}"),
                position: if rng.gen_bool(0.5) { (a, a + 1) } else { (a + 1, a) },
                origin,
            }
        })
        .collect();
    let results: Vec<DetectionResult> = (0..n)
        .map(|i| {
            let flagged: Vec<FlaggedSentence> = (0..rng.gen_range(0..4))
                .map(|k| FlaggedSentence {
                    index: k * 2,
                    score: rng.gen::<f64>(),
                })
                .collect();
            let items: Option<Vec<String>> = rng
                .gen_bool(0.5)
                .then(|| (0..rng.gen_range(0..3)).map(|_| random_string(&mut rng, 1, 10)).collect());
            let is_ad = !flagged.is_empty() || items.as_ref().is_some_and(|v| !v.is_empty());
            DetectionResult {
                response_id: format!("r{i}"),
                detector_id: ["enc", "gpt", "majority3"][rng.gen_range(0..3)].into(),
                is_ad,
                flagged_sentences: flagged,
                named_items: items,
                passages: (0..rng.gen_range(0..3))
                    .map(|_| {
                        let s = rng.gen_range(0..100);
                        CharRange::new(s, s + rng.gen_range(1..50))
                    })
                    .collect(),
                metadata: (0..rng.gen_range(0..3))
                    .map(|k| (format!("k{k}"), random_string(&mut rng, 0, 10)))
                    .collect(),
            }
        })
        .collect();
    let t = Instant::now();
    roundtrip(&queries, dir.path())?;
    roundtrip(&responses, dir.path())?;
    roundtrip(&candidates, dir.path())?;
    roundtrip(&ads, dir.path())?;
    roundtrip(&manifests, dir.path())?;
    roundtrip(&pairs, dir.path())?;
    roundtrip(&results, dir.path())?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("7 record types x {n} records identical and byte-stable ({secs:.2}s)"))
}

/// Every position where deleting `clause` from `modified` yields `original`.
fn brute_force_positions(original: &[char], modified: &[char], clause: &[char]) -> Vec<usize> {
    if modified.len() != original.len() + clause.len() {
        return Vec::new();
    }
    (0..=original.len())
        .filter(|&p| {
            modified[p..p + clause.len()] == *clause
                && modified[..p] == original[..p]
                && modified[p + clause.len()..] == original[p..]
        })
        .collect()
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seg = Segmenter::default();
    let bank = TemplateBank::default();
    let (mut exact, mut total, mut attempts) = (0, 0, 0);
    while total < 1000 {
        attempts += 1;
        let k = rng.gen_range(4..13);
        let r = random_response(&mut rng, &format!("r{attempts}"), k);
        let c = random_candidate(&mut rng, &format!("c{attempts}"));
        let Ok(rec) = template_insert_ad(&r, &c, rng.gen(), &bank, &seg) else { continue };
        total += 1;
        let template = &bank.default[rec.generator_meta["template"].parse::<usize>().map_err(|e| e.to_string())?];
        let clause: Vec<char> = template
            .replace("{item}", &c.item)
            .replace("{quality}", &rec.generator_meta["quality"])
            .chars()
            .collect();
        let orig: Vec<char> = r.text.chars().collect();
        let modified: Vec<char> = rec.text.chars().collect();
        let positions = brute_force_positions(&orig, &modified, &clause);
        let Some(extracted) = extract_insertion_span(&r.text, &rec.text).ok() else { continue };
        if positions.len() == 1
            && extracted == CharRange::new(positions[0], positions[0] + clause.len())
            && rec.insertion_span == extracted
        {
            exact += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(exact == total && secs < 60.0, format!("{exact}/{total} exact"))?;
    Ok(format!("{exact}/{total} spans recovered exactly ({secs:.2}s)"))
}

fn corpus() -> &'static SyntheticCorpus {
    static CORPUS: std::sync::OnceLock<SyntheticCorpus> = std::sync::OnceLock::new();
    CORPUS.get_or_init(|| synthetic::build_synthetic_corpus(&SyntheticConfig::default()).expect("synthetic corpus"))
}

fn split_input(c: &SyntheticCorpus) -> SplitInput<'_> {
    SplitInput {
        queries: &c.queries,
        responses: &c.responses,
        ad_records: &c.ad_records,
        candidates: &c.candidates,
    }
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let c = corpus();
    let items: BTreeSet<&str> = c.ad_records.iter().map(|a| a.candidate_id.as_str()).collect();
    check(items.len() >= 50 && c.ad_records.len() >= 500, "fixture too small")?;
    let input = split_input(c);
    let fixed = splitter::build_fixed_split(&input, splitter::FIXED_RATIOS, 11).map_err(|e| e.to_string())?;
    let holdouts = splitter::build_topic_holdouts(&input, 11).map_err(|e| e.to_string())?;
    check(holdouts.len() == 10, "expected 10 holdouts")?;
    let mut worst: f64 = 0.0;
    let rep = splitter::verify_manifest(&fixed, &input);
    check(rep.passed(), format!("fixed split violations: {:?}", &rep.violations[..rep.violations.len().min(3)]))?;
    for (p, target) in rep.proportions.iter().zip(splitter::FIXED_RATIOS) {
        worst = worst.max((p - target).abs());
    }
    for h in &holdouts {
        let rep = splitter::verify_manifest(h, &input);
        check(rep.passed(), format!("{} violations: {:?}", h.name, &rep.violations[..rep.violations.len().min(3)]))?;
        let [tr, va, _] = rep.counts;
        let share = tr as f64 / (tr + va) as f64;
        worst = worst.max((share - 0.70 / 0.85).abs());
    }
    check(worst <= 0.02, format!("proportion off by {:.2} pp", worst * 100.0))?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 60.0, "too slow")?;
    Ok(format!(
        "{} items, {} ad records; fixed + 10 holdouts clean; max proportion deviation {:.2} pp ({secs:.2}s)",
        items.len(),
        c.ad_records.len(),
        worst * 100.0
    ))
}

fn criterion_4() -> Verdict {
    let c = corpus();
    let target = 0.25;
    let source = PairSource {
        ad_records: c.ad_records.iter().collect(),
        originals: c.responses.iter().collect(),
        bases: c.responses.iter().map(|r| (r.id.as_str(), r)).collect(),
    };
    let pairs = build_pairs(
        &source,
        &PairOptions {
            target_positive_fraction: target,
            neighbor_policy: NeighborPolicy::PrecedingElseFollowing,
            seed: 4,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut per_record: HashMap<&str, (usize, usize)> = HashMap::new();
    for p in &pairs {
        match p.origin {
            PairOrigin::Inserted => per_record.entry(&p.source_record_id).or_default().0 += 1,
            PairOrigin::Aligned => per_record.entry(&p.source_record_id).or_default().1 += 1,
            PairOrigin::Sampled => {}
        }
    }
    check(per_record.len() == c.ad_records.len(), "some record lacks pairs")?;
    check(per_record.values().all(|&v| v == (1, 1)), "a record has other than one positive and one aligned negative")?;
    let positions: HashMap<(&str, PairOrigin), (usize, usize)> =
        pairs.iter().map(|p| ((p.source_record_id.as_str(), p.origin), p.position)).collect();
    for a in &c.ad_records {
        check(
            positions[&(a.id.as_str(), PairOrigin::Inserted)] == positions[&(a.id.as_str(), PairOrigin::Aligned)],
            "aligned negative at other positions",
        )?;
    }
    let frac = label_distribution(&pairs).map_err(|e| e.to_string())?.value();
    check((frac - target).abs() <= 0.01, format!("positive fraction {frac:.4}"))?;

    // Brute-force adjacency: re-split every source text naively and compare.
    let texts: HashMap<&str, &str> = c
        .responses
        .iter()
        .map(|r| (r.id.as_str(), r.text.as_str()))
        .chain(c.ad_records.iter().map(|a| (a.id.as_str(), a.text.as_str())))
        .collect();
    let base_of: HashMap<&str, &str> = c.ad_records.iter().map(|a| (a.id.as_str(), a.base_response_id.as_str())).collect();
    let mut bad = 0;
    for p in &pairs {
        let text = match p.origin {
            PairOrigin::Inserted | PairOrigin::Sampled => texts[p.source_record_id.as_str()],
            PairOrigin::Aligned => texts[base_of[p.source_record_id.as_str()]],
        };
        let sentences = naive_sentences(text);
        let (i, j) = p.position;
        let ok = i.abs_diff(j) == 1
            && sentences.get(i).map(String::as_str) == Some(p.first.as_str())
            && sentences.get(j).map(String::as_str) == Some(p.second.as_str());
        bad += (!ok) as usize;
    }
    check(bad == 0, format!("{bad} pairs fail adjacency"))?;
    Ok(format!(
        "{} records each with 1 positive + 1 aligned negative; positive fraction {frac:.4} (target {target}); {} pairs adjacent",
        c.ad_records.len(),
        pairs.len()
    ))
}

/// Sentence splitter for the synthetic corpus only: its sentences end with
/// `.`, `!` or `?` (optionally after a closing quote) followed by a space.
fn naive_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let end_here = matches!(chars[i], '.' | '!' | '?') || (chars[i] == '"' && i > 0 && chars[i - 1] == '.');
        let next_is_boundary = i + 1 == chars.len() || (chars[i + 1] == ' ' && !(chars[i] == '.' && chars.get(i + 2) == Some(&'"')));
        if end_here && next_is_boundary && !(chars[i] == '"' && i + 1 < chars.len() && chars[i + 1] != ' ') {
            let s: String = chars[start..=i].iter().collect();
            out.push(s.trim().to_string());
            start = i + 1;
        }
    }
    if start < chars.len() && !chars[start..].iter().collect::<String>().trim().is_empty() {
        out.push(chars[start..].iter().collect::<String>().trim().to_string());
    }
    out
}

fn brute_counts(results: &[DetectionResult], truths: &[GroundTruth], sentence: bool) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in results {
        let t = truths.iter().find(|t| t.response_id == r.response_id).unwrap();
        if !sentence {
            let truth = t.ad.is_some();
            if truth && r.is_ad {
                c.tp += 1
            } else if truth {
                c.fn_ += 1
            } else if r.is_ad {
                c.fp += 1
            } else {
                c.tn += 1
            }
        } else {
            for i in 0..t.sentence_count {
                let flagged = r.flagged_sentences.iter().any(|f| f.index == i);
                let affected = t.ad.as_ref().is_some_and(|a| a.affected_sentence == i);
                match (affected, flagged) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, true) => c.fp += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
    c
}

fn brute_rouge(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut pool: Vec<&String> = b.iter().collect();
    let mut overlap = 0usize;
    for tok in a {
        if let Some(pos) = pool.iter().position(|x| *x == tok) {
            pool.remove(pos);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / a.len() as f64;
    let r = overlap as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = rng.gen_range(1..30);
        let mut results = Vec::new();
        let mut truths = Vec::new();
        for i in 0..n {
            let sentences = rng.gen_range(1..8);
            let ad = rng.gen_bool(0.5).then(|| evaluator::AdTruth {
                item: "x".into(),
                span: CharRange::new(0, 1),
                affected_sentence: rng.gen_range(0..sentences),
            });
            truths.push(GroundTruth {
                response_id: format!("r{i}"),
                sentence_count: sentences,
                ad,
            });
            let flagged: Vec<FlaggedSentence> = (0..sentences)
                .filter(|_| rng.gen_bool(0.3))
                .map(|index| FlaggedSentence { index, score: 0.9 })
                .collect();
            results.push(DetectionResult {
                response_id: format!("r{i}"),
                detector_id: "d".into(),
                is_ad: !flagged.is_empty(),
                flagged_sentences: flagged,
                named_items: None,
                passages: vec![],
                metadata: BTreeMap::new(),
            });
        }
        for (sentence, gran) in [(false, Granularity::Response), (true, Granularity::Sentence)] {
            let got = evaluator::compute_pr(&results, &truths, gran).map_err(|e| e.to_string())?;
            let want = brute_counts(&results, &truths, sentence);
            check(got.counts == want, format!("trial {trial}: counts {:?} vs {:?}", got.counts, want))?;
            let p = (want.tp + want.fp > 0).then(|| (want.tp, want.tp + want.fp));
            let r = (want.tp + want.fn_ > 0).then(|| (want.tp, want.tp + want.fn_));
            check(
                got.precision.map(|f| (f.numerator, f.denominator)) == p
                    && got.recall.map(|f| (f.numerator, f.denominator)) == r,
                format!("trial {trial}: precision/recall mismatch"),
            )?;
        }
    }
    let vocab = ["deal", "cheap", "flight", "hotel", "great", "today", "bank"];
    for _ in 0..100 {
        let toks = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.gen_range(0..12)).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
        };
        let a = toks(&mut rng);
        let b = toks(&mut rng);
        let got = evaluator::rouge1_tokens(&a, &b).f1;
        let want = brute_rouge(&a, &b);
        check((got - want).abs() < 1e-9, format!("rouge {got} vs {want}"))?;
    }
    let (lo, hi) = evaluator::confidence_interval(&[0.8, 0.9, 1.0], 0.95).map_err(|e| e.to_string())?;
    check((lo - 0.652).abs() < 1e-3 && (hi - 1.0).abs() < 1e-3, format!("CI ({lo:.4}, {hi:.4})"))?;
    Ok(format!(
        "1000 P/R trials exact at both granularities; 100 ROUGE-1 lists within 1e-9; CI ({lo:.3}, {hi:.3})"
    ))
}

struct Trained {
    checkpoint: DetectorCheckpoint,
    manifest: SplitManifest,
}

fn holdout_pairs(manifest: &SplitManifest, subset: Subset) -> Vec<SentencePair> {
    let c = corpus();
    build_pairs(
        &PairSource::from_manifest(manifest, subset, &c.responses, &c.ad_records),
        &PairOptions {
            target_positive_fraction: 0.5,
            neighbor_policy: NeighborPolicy::PrecedingElseFollowing,
            seed: 6,
        },
    )
    .expect("pairs")
}

fn test_truths(manifest: &SplitManifest) -> (Vec<(&'static str, &'static str)>, Vec<GroundTruth>) {
    let c = corpus();
    let in_test = |id: &str| manifest.subset_of(id) == Some(Subset::Test);
    let cands: HashMap<&str, &AdCandidate> = c.candidates.iter().map(|x| (x.id.as_str(), x)).collect();
    let mut texts = Vec::new();
    let mut truths = Vec::new();
    for r in c.responses.iter().filter(|r| in_test(&r.id)) {
        texts.push((r.id.as_str(), r.text.as_str()));
        truths.push(GroundTruth::original(r));
    }
    for a in c.ad_records.iter().filter(|a| in_test(&a.id)) {
        texts.push((a.id.as_str(), a.text.as_str()));
        truths.push(GroundTruth::ad_record(a, cands[a.candidate_id.as_str()]));
    }
    (texts, truths)
}

fn evaluate(checkpoint: &DetectorCheckpoint, manifest: &SplitManifest) -> evaluator::PrResult {
    let seg = Segmenter::default();
    let (texts, truths) = test_truths(manifest);
    let results: Vec<DetectionResult> = texts
        .iter()
        .map(|(id, text)| encoder::detect(checkpoint, "encoder", id, text, &seg))
        .collect();
    evaluator::compute_pr(&results, &truths, Granularity::Response).expect("pr")
}

fn criterion_6(trained: &mut Option<Trained>) -> Verdict {
    let t = Instant::now();
    let c = corpus();
    let holdout = MetaTopic::Vacation;
    let manifests = splitter::build_topic_holdouts(&split_input(c), 6).map_err(|e| e.to_string())?;
    let manifest = manifests
        .into_iter()
        .find(|m| m.holdout_topic == Some(holdout))
        .ok_or("holdout missing")?;
    let train = holdout_pairs(&manifest, Subset::Train);
    let validation = holdout_pairs(&manifest, Subset::Validation);
    let config = EncoderConfig { seed: 6, ..EncoderConfig::compact() };
    let outcome = encoder::train(&train, &validation, &config).map_err(|e| e.to_string())?;
    let pr = evaluate(&outcome.best, &manifest);
    let (p, r) = (
        pr.precision.map_or(0.0, |f| f.value()),
        pr.recall.map_or(0.0, |f| f.value()),
    );
    let secs = t.elapsed().as_secs_f64();

    // Informational: the same run with the pretrained-encoder learning rate.
    let reference = EncoderConfig { seed: 6, ..EncoderConfig::reference_compact() };
    let ref_pr = encoder::train(&train, &validation, &reference)
        .map(|o| evaluate(&o.best, &manifest))
        .map_err(|e| e.to_string())?;
    println!(
        "  info: reference learning rate {} gives precision {} recall {}",
        reference.learning_rate,
        evaluator::display_metric(ref_pr.precision),
        evaluator::display_metric(ref_pr.recall)
    );

    *trained = Some(Trained {
        checkpoint: outcome.best,
        manifest,
    });
    let counts = pr.counts;
    check(
        p >= 0.90 && r >= 0.90 && secs <= 1800.0,
        format!("precision {p:.3} recall {r:.3} ({secs:.0}s)"),
    )?;
    Ok(format!(
        "holdout '{holdout}': precision {p:.3}, recall {r:.3} (tp {} fp {} fn {} tn {}), lr {}, batch {}, best epoch {}, {} train pairs ({secs:.1}s)",
        counts.tp,
        counts.fp,
        counts.fn_,
        counts.tn,
        config.learning_rate,
        config.batch_size,
        trained.as_ref().unwrap().checkpoint.best_epoch,
        train.len()
    ))
}

fn criterion_7(trained: &Option<Trained>) -> Verdict {
    let trained = trained.as_ref().ok_or("criterion 6 produced no checkpoint")?;
    let seg = Segmenter::default();
    let (texts, _) = test_truths(&trained.manifest);
    let thresholds = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut violations = 0;
    for (id, text) in &texts {
        let (ranges, scores) = encoder::sentence_scores(&trained.checkpoint, text, &seg);
        let sets: Vec<BTreeSet<usize>> = thresholds
            .iter()
            .map(|&t| {
                encoder::aggregate_scores(id, "encoder", &scores, t, &ranges)
                    .flagged_indices()
                    .into_iter()
                    .collect()
            })
            .collect();
        violations += sets.windows(2).filter(|w| !w[1].is_subset(&w[0])).count();
    }
    check(violations == 0, format!("{violations} violations"))?;
    Ok(format!("{} responses x 5 thresholds: flagged sets nested, 0 violations", texts.len()))
}

fn malformed_outputs() -> Vec<String> {
    let mut out: Vec<String> = vec![
        "".into(),
        "   ".into(),
        "\n\n".into(),
        "I could not find anything unusual.".into(),
        "The response looks fine to me.".into(),
        "{".into(),
        "}".into(),
        "{\"items\": [1, 2]}".into(),
        "{\"items\": \"AcmeBank\"}".into(),
        "{\"passages\": {\"a\": 1}}".into(),
        "{\"unrelated\": true}".into(),
        "[1, 2, 3]".into(),
        "[\"unterminated".into(),
        "null".into(),
        "true".into(),
        "42".into(),
        "```json\n{broken json\n```".into(),
        "Items: AcmeBank".into(),
        "AcmeBank".into(),
        "nonexistent".into(),
        "\u{0}\u{1}\u{2}".into(),
        "😀😀😀".into(),
        "—".into(),
        "-AcmeBank without space".into(),
        "1.AcmeBank".into(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    while out.len() < 50 {
        let s: String = (0..rng.gen_range(1..60))
            .map(|_| ['a', 'Z', ' ', '{', '"', ':', '\u{2603}', 'q', '.', '\u{fffd}'][rng.gen_range(0..10)])
            .collect();
        if llm_detector::parse_llm_output(&s, DetectionMode::Full).is_err() && s.trim() != "" {
            out.push(s);
        }
    }
    out
}

fn criterion_8() -> Verdict {
    let seg = Segmenter::default();
    let outputs = malformed_outputs();
    let lookup: HashMap<String, String> = outputs.iter().enumerate().map(|(i, o)| (format!("resp-{i:02}"), o.clone())).collect();
    let client = Arc::new(FnLlmClient::new("malformed", move |prompt: &str| {
        let key = prompt.split("ID:").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or("");
        Ok(lookup.get(key).cloned().unwrap_or_default())
    }));
    let variant = LlmDetectorVariant::new("malformed", client, DetectionMode::Full);
    let mut abstains = 0;
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        (0..outputs.len())
            .map(|i| {
                let text = format!("ID: resp-{i:02} here. Savings accounts are useful. AcmeBank is great. Compare rates.");
                llm_detector::detect_llm(&variant, "q", &format!("resp-{i:02}"), &text, &seg)
            })
            .collect::<Vec<_>>()
    }));
    let detections = run.map_err(|_| "detector panicked".to_string())?;
    for d in &detections {
        abstains += (d.result.is_abstain() && !d.result.is_ad) as usize;
    }
    check(abstains == 50 && detections.len() == 50, format!("{abstains}/50 abstains"))?;

    // Three detectors that each miss a different third of the ads.
    let n_ads = 30;
    let mut texts: Vec<(String, String)> = Vec::new();
    let mut truths = Vec::new();
    for k in 0..n_ads {
        let id = format!("ad-{k:02}");
        let item = format!("Brand{k:02}");
        let text = format!("Banks differ. For those who value service, {item} is a great choice. Compare rates.");
        let start = text.find(&item).unwrap() - "For those who value service, ".len();
        let span = CharRange::new(start, start + "For those who value service, ".len() + item.len());
        truths.push(GroundTruth {
            response_id: id.clone(),
            sentence_count: 3,
            ad: Some(evaluator::AdTruth {
                item: item.clone(),
                span,
                affected_sentence: 1,
            }),
        });
        texts.push((id, text));
    }
    for k in 0..n_ads {
        let id = format!("orig-{k:02}");
        texts.push((id.clone(), "Banks differ. Service matters. Compare rates.".into()));
        truths.push(GroundTruth {
            response_id: id,
            sentence_count: 3,
            ad: None,
        });
    }
    let variants: Vec<LlmDetectorVariant> = (0..3)
        .map(|d| {
            let client = Arc::new(FnLlmClient::new(format!("mock-{d}"), move |prompt: &str| {
                let brand = prompt.find("Brand").map(|i| &prompt[i..i + 7]);
                Ok(match brand {
                    Some(b) => {
                        let k: usize = b[5..].parse().unwrap_or(0);
                        if k / 10 == d {
                            "no advertising found".to_string()
                        } else {
                            format!("{{\"items\": [\"{b}\"], \"passages\": []}}")
                        }
                    }
                    // Each detector also raises a false alarm on a different original.
                    None if prompt.contains("Service matters") && d == 0 => "- SomeBank".to_string(),
                    None => "none".to_string(),
                })
            }));
            LlmDetectorVariant::new(format!("mock-{d}"), client, DetectionMode::Reduced)
        })
        .collect();
    let mut per_detector: Vec<Vec<DetectionResult>> = vec![Vec::new(); 3];
    let mut majority = Vec::new();
    for (id, text) in &texts {
        let rs: Vec<DetectionResult> = variants
            .iter()
            .map(|v| llm_detector::detect_llm(v, "best bank", id, text, &seg).result)
            .collect();
        for (d, r) in rs.iter().enumerate() {
            per_detector[d].push(r.clone());
        }
        majority.push(llm_detector::majority_vote(&rs).map_err(|e| e.to_string())?);
    }
    let matcher = |r: &DetectionResult, t: &GroundTruth| llm_detector::match_to_truth(r, t, 0.5);
    let recall = |rs: &[DetectionResult]| {
        evaluator::compute_pr_with(rs, &truths, Granularity::Response, matcher)
            .map(|p| p.recall.map_or(0.0, |f| f.value()))
            .map_err(|e| e.to_string())
    };
    let individual: Vec<f64> = per_detector.iter().map(|rs| recall(rs)).collect::<Result<_, _>>()?;
    let vote = recall(&majority)?;
    check(
        individual.iter().all(|&r| vote > r),
        format!("vote recall {vote:.3} vs individual {individual:?}"),
    )?;
    Ok(format!(
        "50 malformed outputs -> 50 abstains, no panic; vote recall {vote:.3} > individual {:?}",
        individual.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
    ))
}

fn criterion_9() -> Verdict {
    let seg = Segmenter::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bank = |t: &str| TemplateBank {
        version: "fixture".into(),
        default: vec![t.into()],
        per_topic: BTreeMap::new(),
    };
    let with_those = bank(", and for those who like {quality}, {item} is ideal");
    let with_alt = bank("; alternatively, {item} gives {quality}");
    let neutral = bank(", and {item} gives {quality}");
    let plan = [(&with_those, 17usize), (&with_alt, 11), (&neutral, 9)];
    let mut records = Vec::new();
    let mut k = 0;
    for (b, count) in plan {
        for _ in 0..count {
            k += 1;
            let mut r = random_response(&mut rng, &format!("r{k}"), 5);
            // A marker phrase outside the affected sentence must not count.
            r.text = format!("{} Alternatively, try later.", r.text);
            r.sentences = nadet::segment::segment(&r.text);
            let c = random_candidate(&mut rng, &format!("c{k}"));
            let rec = loop {
                let rec = template_insert_ad(&r, &c, rng.gen(), b, &seg).map_err(|e| e.to_string())?;
                if rec.affected_sentence_index != r.sentences.len() - 1 {
                    break rec;
                }
            };
            records.push(rec);
        }
    }
    let counts = injector::audit_marker_phrases(&records, injector::DEFAULT_MARKER_PHRASES, AuditScope::AffectedSentence)
        .map_err(|e| e.to_string())?;
    let expected = BTreeMap::from([("alternatively".to_string(), 11), ("for those who".to_string(), 17)]);
    check(counts == expected, format!("audit counts {counts:?}"))?;
    let span_counts = injector::audit_marker_phrases(&records, injector::DEFAULT_MARKER_PHRASES, AuditScope::InsertionSpan)
        .map_err(|e| e.to_string())?;
    check(span_counts == expected, format!("span-scope counts {span_counts:?}"))?;

    let corpus = synthetic::build_synthetic_corpus(&SyntheticConfig {
        queries_per_topic: 20,
        seed: 9,
        bank: synthetic::topic_template_bank(),
    })
    .map_err(|e| e.to_string())?;
    let rep = evaluator::lexical_diversity_report(&corpus.ad_records, &corpus.candidates, &Preprocessor::default(), 5000, 9);
    let (same, cross) = (rep.same_topic_mean.unwrap_or(0.0), rep.cross_topic_mean.unwrap_or(1.0));
    check(same > cross, format!("same {same:.4} cross {cross:.4}"))?;
    let (s100, c100) = rep.scaled();
    Ok(format!(
        "audit reproduces {{alternatively: 11, for those who: 17}} in both scopes; ROUGE-1 same-topic {:.2} > cross-topic {:.2} (x100)",
        s100.unwrap_or(0.0),
        c100.unwrap_or(0.0)
    ))
}

fn criterion_10() -> Verdict {
    let seg = Segmenter::default();
    let lang = StopwordIdentifier::default();
    let opts = FilterOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let bodies = [
        "the bank is open for you and your family",
        "this is one of the best options that you can find",
        "it will be worth the time if you are careful",
        "there are many offers from the local stores",
    ];
    let mut seen = BTreeMap::new();
    for i in 0..2000 {
        let n = [2usize, 3, 4, 5, 11, 12, 13, 14][rng.gen_range(0..8)];
        let mut text = String::new();
        for s in 0..n {
            if s > 0 {
                text.push_str(if rng.gen_bool(0.25) { "\n" } else { " " });
            }
            let body = bodies[rng.gen_range(0..bodies.len())];
            let mut chars = body.chars();
            let first = chars.next().unwrap().to_uppercase().collect::<String>();
            text.push_str(&format!("{first}{}{}", chars.as_str(), ['.', '!', '?'][rng.gen_range(0..3)]));
        }
        check(seg.count(&text) == n, format!("segmenter disagrees on constructed count {n}"))?;
        let raw = RawResponse {
            id: format!("r{i}"),
            query_id: "q".into(),
            engine: Engine::Synthetic,
            text,
        };
        let got = classify_response(&raw, &seg, &lang, &opts);
        let want = if n < 4 {
            Err(RejectReason::TooShort)
        } else if n > 12 {
            Err(RejectReason::TooLong)
        } else {
            Ok(n)
        };
        check(got.as_ref().map(|r| r.sentences.len()).map_err(|e| *e) == want, format!("n={n}: {:?}", got.map(|r| r.sentences.len())))?;
        *seen.entry(n).or_insert(0) += 1;
    }
    Ok(format!("2000 responses with sentence counts {:?} classified exactly", seen.keys().collect::<Vec<_>>()))
}

#[test]
fn acceptance_criteria() {
    let mut trained = None;
    let names = [
        "persistence round-trip",
        "span oracle",
        "split properties",
        "pair construction",
        "metric oracle",
        "synthetic end-to-end detection",
        "threshold monotonicity",
        "LLM detector robustness",
        "marker-phrase audit",
        "filtering exactness",
    ];
    let mut failures = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let t = Instant::now();
        let outcome = match i + 1 {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut trained),
            7 => criterion_7(&trained),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {why}", i + 1);
                failures.push(i + 1);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
