use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use nadet::corpus::*;
use nadet::encoder::{self, DetectorCheckpoint, EncoderConfig};
use nadet::evaluator::{self, GroundTruth, MetricsReport, MetricsRow, Preprocessor};
use nadet::ingestion::{
    collect_responses, filter_responses, load_query_dir, CollectOptions, FilterOptions, FixtureSearchClient, SearchClient,
};
use nadet::injector::{self, AuditScope, TemplateBank};
use nadet::language::StopwordIdentifier;
use nadet::llm::{assets, map_bounded};
use nadet::llm_detector::{self, LlmDetectorVariant, Transcript};
use nadet::pair_builder::{build_pairs, label_distribution, PairOptions, PairSource};
use nadet::segment::Segmenter;
use nadet::splitter::{self, SplitInput};
use nadet::synthetic;
use nadet::vocabulary;
use serde_json::json;

use crate::clients::{build_client, detector_variant, pick_variant};
use crate::config::*;
use crate::workspace::*;

const QUERIES: &str = "queries.jsonl";
const RESPONSES: &str = "responses.jsonl";
const CANDIDATES: &str = "candidates.jsonl";
const AD_RECORDS: &str = "ad_records.jsonl";
const SHORTLISTS: &str = "shortlists.jsonl";
const MANIFESTS: &str = "manifests.jsonl";
const DETECTIONS: &str = "detections.jsonl";
const METRICS: &str = "metrics.json";
const BEST_CHECKPOINT: &str = "best/checkpoint.json";

fn load<T: Record>(run: &mut Run, dir: &Path, file: &str) -> anyhow::Result<Vec<T>> {
    let path = run.input(dir.join(file));
    load_corpus(&path).with_context(|| format!("loading {}", path.display()))
}

fn save<T: Record>(run: &Run, file: &str, records: &[T]) -> anyhow::Result<()> {
    save_corpus(records, run.path(file))?;
    Ok(())
}

fn done(run: Run, config: &Config, summary: serde_json::Value) -> anyhow::Result<()> {
    let dir = run.finish(config, summary.clone())?;
    println!("{}", serde_json::to_string(&summary)?);
    println!("wrote {}", dir.display());
    Ok(())
}

/// Queries, retained responses, candidates and ad records of the latest runs.
struct Corpus {
    queries: Vec<Query>,
    responses: Vec<SearchResponse>,
    candidates: Vec<AdCandidate>,
    ad_records: Vec<AdInsertionRecord>,
}

fn ingest_dir(ws: &Workspace) -> anyhow::Result<PathBuf> {
    ws.require(&["ingest"], RESPONSES, "nadet ingest")
}

fn vocab_dir(ws: &Workspace) -> anyhow::Result<PathBuf> {
    ws.require(&["vocab"], CANDIDATES, "nadet vocab")
}

fn load_full_corpus(ws: &Workspace, run: &mut Run) -> anyhow::Result<Corpus> {
    let ingest = ingest_dir(ws)?;
    let vocab = vocab_dir(ws)?;
    let inject = ws.require(&["inject"], AD_RECORDS, "nadet inject")?;
    Ok(Corpus {
        queries: load(run, &ingest, QUERIES)?,
        responses: load(run, &ingest, RESPONSES)?,
        candidates: load(run, &vocab, CANDIDATES)?,
        ad_records: load(run, &inject, AD_RECORDS)?,
    })
}

fn load_manifest(ws: &Workspace, run: &mut Run, split: SplitName) -> anyhow::Result<SplitManifest> {
    let dir = ws.require(&["split"], MANIFESTS, "nadet split")?;
    let manifests: Vec<SplitManifest> = load(run, &dir, MANIFESTS)?;
    manifests
        .into_iter()
        .find(|m| match split {
            SplitName::Fixed => m.kind == SplitKind::Fixed,
            SplitName::Holdout(t) => m.holdout_topic == Some(t),
        })
        .ok_or_else(|| validation_failure(format!("split {} not found in {}", split.dir_name(), dir.display())))
}

pub fn ingest(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let c = &config.ingest;
    let queries: Vec<Query> = match c.source {
        QuerySource::Synthetic => MetaTopic::ALL
            .into_iter()
            .flat_map(|t| synthetic::synthetic_queries(t, c.queries_per_topic, config.seed))
            .collect(),
        QuerySource::Dir => {
            let dir = c
                .queries_dir
                .as_ref()
                .ok_or_else(|| config_error("ingest.source = \"dir\" needs ingest.queries_dir"))?;
            load_query_dir(dir)?
        }
    };
    let client: Box<dyn SearchClient> = match c.client {
        SearchClientKind::Synthetic => Box::new(synthetic::SyntheticSearchClient::new(&queries, config.seed)),
        SearchClientKind::Fixture => {
            let path = c
                .fixture
                .as_ref()
                .ok_or_else(|| config_error("ingest.client = \"fixture\" needs ingest.fixture"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let answers: HashMap<String, String> =
                serde_json::from_str(&text).map_err(|e| config_error(format!("fixture {}: {e}", path.display())))?;
            let mut client = FixtureSearchClient::new(answers);
            client.engine = Some(c.engine);
            Box::new(client)
        }
    };
    let options = CollectOptions {
        repeats: c.repeats,
        max_in_flight: c.max_in_flight,
        max_retries: c.max_retries,
        timeout: Duration::from_secs(c.timeout_secs),
    };
    let collection = collect_responses(&queries, client.as_ref(), options)?;
    let filtered = filter_responses(
        &collection.responses,
        &Segmenter::default(),
        &StopwordIdentifier::default(),
        &FilterOptions::default(),
    );
    let run = ws.begin(&["ingest"])?;
    save(&run, QUERIES, &queries)?;
    save(&run, RESPONSES, &filtered.retained)?;
    write_json(&run.path("filter_report.json"), &filtered.report)?;
    write_json_lines(&run.path("failures.jsonl"), &collection.failures)?;
    let summary = json!({
        "queries": queries.len(),
        "collected": collection.responses.len(),
        "failures": collection.failures.len(),
        "retained": filtered.report.retained,
        "rejected": filtered.report.rejected,
    });
    done(run, config, summary)
}

pub fn vocab(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let c = &config.vocab;
    match c.source {
        VocabSource::Synthetic => {
            let run = ws.begin(&["vocab"])?;
            let candidates: Vec<AdCandidate> =
                MetaTopic::ALL.into_iter().flat_map(synthetic::synthetic_vocabulary).collect();
            save(&run, CANDIDATES, &candidates)?;
            done(run, config, json!({"source": "synthetic", "candidates": candidates.len()}))
        }
        VocabSource::Reviewed => {
            let dir = c
                .reviewed_dir
                .as_ref()
                .ok_or_else(|| config_error("vocab.source = \"reviewed\" needs vocab.reviewed_dir"))?;
            let mut run = ws.begin(&["vocab"])?;
            let mut candidates = Vec::new();
            let mut per_topic = BTreeMap::new();
            for topic in MetaTopic::ALL {
                let path = dir.join(format!("{topic}.txt"));
                if !path.exists() {
                    continue;
                }
                let parsed = vocabulary::load_vocabulary(run.input(path))?;
                per_topic.insert(topic.to_string(), parsed.len());
                candidates.extend(parsed);
            }
            if candidates.is_empty() {
                return Err(validation_failure(format!("no <topic>.txt vocabulary files in {}", dir.display())));
            }
            save(&run, CANDIDATES, &candidates)?;
            done(run, config, json!({"source": "reviewed", "per_topic": per_topic}))
        }
        VocabSource::Llm => {
            let variant = pick_variant(config, c.llm.as_deref())?;
            let client = build_client(variant)?;
            let prompt = assets::vocabulary();
            let run = ws.begin(&["vocab"])?;
            let drafts = run.path("drafts");
            std::fs::create_dir_all(&drafts)?;
            let mut counts = BTreeMap::new();
            for topic in MetaTopic::ALL {
                let draft = vocabulary::propose_vocabulary(topic, client.as_ref(), &prompt, c.max_attempts)?;
                for w in &draft.warnings {
                    log::warn!("{topic}: {w}");
                }
                vocabulary::write_review_file(drafts.join(format!("{topic}.txt")), &draft)?;
                counts.insert(topic.to_string(), draft.entries.len());
            }
            println!(
                "review the drafts in {}, then run `nadet vocab --source reviewed --reviewed-dir <dir>`",
                drafts.display()
            );
            done(run, config, json!({"source": "llm", "drafts": counts, "prompt": prompt.tag()}))
        }
    }
}

pub fn inject(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    match config.inject.generator {
        GeneratorKind::Template => inject_template(config, ws),
        GeneratorKind::Llm => inject_llm(config, ws),
    }
}

fn inject_template(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let ingest = ingest_dir(ws)?;
    let vocab = vocab_dir(ws)?;
    let mut run = ws.begin(&["inject"])?;
    let queries: Vec<Query> = load(&mut run, &ingest, QUERIES)?;
    let responses: Vec<SearchResponse> = load(&mut run, &ingest, RESPONSES)?;
    let candidates: Vec<AdCandidate> = load(&mut run, &vocab, CANDIDATES)?;
    let bank = match config.inject.bank {
        BankKind::Default => TemplateBank::default(),
        BankKind::Topic => synthetic::topic_template_bank(),
    };
    let (records, rejections) = injector::template_inject_corpus(
        &queries,
        &responses,
        &candidates,
        config.seed,
        &bank,
        &Segmenter::default(),
    )?;
    save(&run, AD_RECORDS, &records)?;
    write_json_lines(&run.path("rejections.jsonl"), &rejections)?;
    let summary = json!({
        "generator": "template",
        "bank": bank.version,
        "ad_records": records.len(),
        "rejected": rejections.len(),
    });
    done(run, config, summary)
}

fn inject_llm(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let variant = pick_variant(config, config.inject.llm.as_deref())?;
    let client = build_client(variant)?;
    let ingest = ingest_dir(ws)?;
    let vocab = vocab_dir(ws)?;
    let mut run = ws.begin(&["inject"])?;
    let queries: Vec<Query> = load(&mut run, &ingest, QUERIES)?;
    let responses: Vec<SearchResponse> = load(&mut run, &ingest, RESPONSES)?;
    let candidates: Vec<AdCandidate> = load(&mut run, &vocab, CANDIDATES)?;
    let limit = config.detect.max_in_flight;

    let Some(selection_path) = config.inject.selection.clone() else {
        // First pass: shortlist candidates and hand the choice to the operator.
        let prompt = assets::shortlist();
        let shortlists: Vec<_> = map_bounded(&queries, limit, |_, q| {
            vocabulary::shortlist_for_query(q, &candidates, client.as_ref(), &prompt)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        write_json_lines(&run.path(SHORTLISTS), &shortlists)?;
        let template = run.path("selection.txt");
        std::fs::write(&template, vocabulary::render_selection_template(&shortlists))?;
        let dir = run.finish(config, json!({"generator": "llm", "shortlists": shortlists.len()}))?;
        return Err(validation_failure(format!(
            "a candidate selection is required: edit {} and rerun with `--selection <file>` (shortlists in {})",
            template.display(),
            dir.display()
        )));
    };

    let shortlist_dir = ws.require(&["inject"], SHORTLISTS, "nadet inject --generator llm")?;
    let shortlists = read_json_lines(&run.input(shortlist_dir.join(SHORTLISTS)))?;
    let selection_text = std::fs::read_to_string(run.input(selection_path.clone()))
        .map_err(|e| config_error(format!("cannot read selection {}: {e}", selection_path.display())))?;
    let selection = vocabulary::parse_selection(&selection_text)?;
    let (finals, diversity) =
        vocabulary::finalize_shortlists(&shortlists, &selection).map_err(|e| validation_failure(e.to_string()))?;
    for w in &diversity.warnings {
        log::warn!("{w}");
    }
    let by_query: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let by_candidate: HashMap<&str, &AdCandidate> = candidates.iter().map(|c| (c.id.as_str(), c)).collect();
    let chosen: HashMap<&str, Vec<&AdCandidate>> = finals
        .iter()
        .map(|s| {
            let picked = s.chosen.iter().filter_map(|id| by_candidate.get(id.as_str()).copied()).collect();
            (s.query_id.as_str(), picked)
        })
        .collect();
    let jobs: Vec<&SearchResponse> = responses.iter().filter(|r| chosen.contains_key(r.query_id.as_str())).collect();
    let prompt = assets::insertion();
    let segmenter = Segmenter::default();
    let outcomes = map_bounded(&jobs, limit, |_, r| {
        injector::insert_with_fallback(
            by_query[r.query_id.as_str()],
            r,
            &chosen[r.query_id.as_str()],
            client.as_ref(),
            &prompt,
            &segmenter,
        )
    });
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for o in outcomes {
        let (record, rejected) = o?;
        records.extend(record);
        rejections.extend(rejected);
    }
    save(&run, AD_RECORDS, &records)?;
    write_json_lines(&run.path("rejections.jsonl"), &rejections)?;
    write_json(&run.path("diversity.json"), &diversity)?;
    let summary = json!({
        "generator": "llm",
        "model": client.model_name(),
        "prompt": prompt.tag(),
        "ad_records": records.len(),
        "rejected": rejections.len(),
    });
    done(run, config, summary)
}

pub fn split(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let mut run = ws.begin(&["split"])?;
    let corpus = load_full_corpus(ws, &mut run)?;
    let input = SplitInput {
        queries: &corpus.queries,
        responses: &corpus.responses,
        ad_records: &corpus.ad_records,
        candidates: &corpus.candidates,
    };
    let mut manifests = vec![splitter::build_fixed_split(&input, config.split.ratios, config.seed)?];
    manifests.extend(splitter::build_topic_holdouts(&input, config.seed)?);
    let reports: Vec<_> = manifests.iter().map(|m| (m.name.clone(), splitter::verify_manifest(m, &input))).collect();
    save(&run, MANIFESTS, &manifests)?;
    write_json(&run.path("verification.json"), &reports.iter().map(|(n, r)| json!({"split": n, "report": r})).collect::<Vec<_>>())?;
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    let summary = json!({
        "splits": manifests.iter().map(|m| json!({"name": m.name, "counts": m.counts()})).collect::<Vec<_>>(),
        "failed_verification": failed,
    });
    done(run, config, summary)?;
    if !failed.is_empty() {
        return Err(validation_failure(format!("split verification failed for: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn pairs(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let split = parse_split_name(&config.pairs.split)?;
    let key = split.dir_name();
    let mut run = ws.begin(&["pairs", &key])?;
    let corpus = load_full_corpus(ws, &mut run)?;
    let manifest = load_manifest(ws, &mut run, split)?;
    let options = PairOptions {
        target_positive_fraction: config.pairs.target_positive_fraction,
        neighbor_policy: config.pairs.neighbor_policy,
        seed: config.seed,
    };
    let mut summary = serde_json::Map::new();
    for subset in Subset::ALL {
        let source = PairSource::from_manifest(&manifest, subset, &corpus.responses, &corpus.ad_records);
        let pairs = build_pairs(&source, &options).map_err(|e| validation_failure(format!("{subset} pairs: {e}")))?;
        let positive = label_distribution(&pairs)?;
        save(&run, &format!("{subset}.jsonl"), &pairs)?;
        summary.insert(
            subset.to_string(),
            json!({"pairs": pairs.len(), "positive_fraction": positive.value()}),
        );
    }
    summary.insert("split".into(), json!(key));
    done(run, config, serde_json::Value::Object(summary))
}

fn encoder_config(config: &Config) -> anyhow::Result<EncoderConfig> {
    let t = &config.train;
    let mut ec = EncoderConfig::profile(&t.profile).map_err(|e| config_error(e.to_string()))?;
    if let Some(e) = t.epochs {
        ec.epochs = e;
    }
    if let Some(b) = t.batch_size {
        ec.batch_size = b;
    }
    if let Some(lr) = t.learning_rate {
        ec.learning_rate = lr;
    }
    ec.seed = config.seed;
    ec.threshold = config.detect.threshold;
    ec.neighbor_policy = config.pairs.neighbor_policy;
    ec.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(ec)
}

pub fn train(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let split = parse_split_name(&config.pairs.split)?;
    let key = split.dir_name();
    let ec = encoder_config(config)?;
    let pairs_dir = ws.require(&["pairs", &key], "train.jsonl", "nadet pairs")?;
    let mut run = ws.begin(&["train", &key])?;
    let train: Vec<SentencePair> = load(&mut run, &pairs_dir, "train.jsonl")?;
    let validation: Vec<SentencePair> = load(&mut run, &pairs_dir, "validation.jsonl")?;
    let outcome = encoder::train(&train, &validation, &ec)?;
    encoder::save_training_run(&run.dir, &outcome)?;
    let summary = json!({
        "split": key,
        "profile": config.train.profile,
        "base_encoder": ec.base_encoder,
        "batch_size": ec.batch_size,
        "learning_rate": ec.learning_rate,
        "epochs": ec.epochs,
        "best_epoch": outcome.best.best_epoch,
        "best_validation_loss": outcome.best.best_validation_loss,
        "train_pairs": train.len(),
        "validation_pairs": validation.len(),
    });
    done(run, config, summary)
}

/// Directory key and display id of the configured detector.
fn detector_key(config: &Config) -> anyhow::Result<String> {
    Ok(match config.detect.detector {
        DetectorKind::Encoder => "encoder".into(),
        DetectorKind::Llm => pick_variant(config, config.detect.variant.as_deref())?.id.clone(),
        DetectorKind::Vote => llm_detector::MAJORITY_ID.into(),
    })
}

fn vote_variants(config: &Config) -> anyhow::Result<Vec<String>> {
    let ids: Vec<String> = if config.detect.vote.is_empty() {
        config.llm.variants.iter().map(|v| v.id.clone()).collect()
    } else {
        config.detect.vote.clone()
    };
    if ids.len() != 3 {
        return Err(config_error(format!(
            "majority vote needs exactly 3 LLM variants, {} configured ({})",
            ids.len(),
            if ids.is_empty() { "none".to_string() } else { ids.join(", ") }
        )));
    }
    Ok(ids)
}

fn require_checkpoint(ws: &Workspace, split: &str) -> anyhow::Result<PathBuf> {
    ws.latest_with(&["train", split], BEST_CHECKPOINT).ok_or_else(|| {
        validation_failure(format!(
            "missing checkpoint for split {split}: run `nadet pairs` and `nadet train` first"
        ))
    })
}

/// Test-subset responses of a split: (response id, query text, response text).
fn test_items(corpus: &Corpus, manifest: &SplitManifest) -> Vec<(String, String, String)> {
    let query_text: HashMap<&str, &str> = corpus.queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let base_query: HashMap<&str, &str> =
        corpus.responses.iter().map(|r| (r.id.as_str(), r.query_id.as_str())).collect();
    let in_test = |id: &str| manifest.subset_of(id) == Some(Subset::Test);
    let originals = corpus
        .responses
        .iter()
        .filter(|r| in_test(&r.id))
        .map(|r| (r.id.clone(), r.query_id.as_str(), r.text.clone()));
    let ads = corpus.ad_records.iter().filter(|a| in_test(&a.id)).map(|a| {
        let q = base_query.get(a.base_response_id.as_str()).copied().unwrap_or("");
        (a.id.clone(), q, a.text.clone())
    });
    originals
        .chain(ads)
        .map(|(id, q, text)| (id, query_text.get(q).copied().unwrap_or("").to_string(), text))
        .collect()
}

fn run_llm(
    variant: &LlmDetectorVariant,
    items: &[(String, String, String)],
    limit: usize,
) -> (Vec<DetectionResult>, Vec<Transcript>) {
    let segmenter = Segmenter::default();
    let detections = map_bounded(items, limit, |_, (id, query, text)| {
        llm_detector::detect_llm(variant, query, id, text, &segmenter)
    });
    let mut results = Vec::with_capacity(detections.len());
    let mut transcripts = Vec::new();
    for d in detections {
        results.push(d.result);
        transcripts.extend(d.transcripts);
    }
    (results, transcripts)
}

pub fn detect(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let split = parse_split_name(&config.pairs.split)?;
    let key = split.dir_name();
    // Resolve the detector before touching data so configuration problems surface first.
    let detector = detector_key(config)?;
    let variants: Vec<LlmDetectorVariant> = match config.detect.detector {
        DetectorKind::Encoder => Vec::new(),
        DetectorKind::Llm => vec![detector_variant(config, &detector)?],
        DetectorKind::Vote => vote_variants(config)?
            .iter()
            .map(|id| detector_variant(config, id))
            .collect::<anyhow::Result<_>>()?,
    };
    let checkpoint_dir = match config.detect.detector {
        DetectorKind::Encoder => Some(require_checkpoint(ws, &key)?),
        _ => None,
    };
    let mut run = ws.begin(&["detect", &key, &detector])?;
    let corpus = load_full_corpus(ws, &mut run)?;
    let manifest = load_manifest(ws, &mut run, split)?;
    let items = test_items(&corpus, &manifest);
    let limit = config.detect.max_in_flight;
    let results = match config.detect.detector {
        DetectorKind::Encoder => {
            let dir = checkpoint_dir.expect("checked above").join("best");
            run.input(dir.join("checkpoint.json"));
            run.input(dir.join("weights.bin"));
            let mut checkpoint = DetectorCheckpoint::load(&dir)?;
            checkpoint.config.threshold = config.detect.threshold;
            let segmenter = Segmenter::default();
            items
                .iter()
                .map(|(id, _, text)| encoder::detect(&checkpoint, &detector, id, text, &segmenter))
                .collect::<Vec<_>>()
        }
        DetectorKind::Llm => {
            let (results, transcripts) = run_llm(&variants[0], &items, limit);
            write_json_lines(&run.path("transcripts.jsonl"), &transcripts)?;
            results
        }
        DetectorKind::Vote => {
            let mut per_variant = Vec::new();
            for v in &variants {
                let (results, transcripts) = run_llm(v, &items, limit);
                save(&run, &format!("detections-{}.jsonl", v.id), &results)?;
                write_json_lines(&run.path(&format!("transcripts-{}.jsonl", v.id)), &transcripts)?;
                per_variant.push(results);
            }
            (0..items.len())
                .map(|i| llm_detector::majority_vote(&[per_variant[0][i].clone(), per_variant[1][i].clone(), per_variant[2][i].clone()]))
                .collect::<nadet::Result<Vec<_>>>()?
        }
    };
    save(&run, DETECTIONS, &results)?;
    let summary = json!({
        "split": key,
        "detector": detector,
        "responses": results.len(),
        "flagged": results.iter().filter(|r| r.is_ad).count(),
        "abstained": results.iter().filter(|r| r.is_abstain()).count(),
    });
    done(run, config, summary)
}

pub fn eval(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let split = parse_split_name(&config.pairs.split)?;
    let key = split.dir_name();
    let detector = detector_key(config)?;
    if config.detect.detector == DetectorKind::Encoder {
        require_checkpoint(ws, &key)?;
    }
    let detect_dir = ws.require(&["detect", &key, &detector], DETECTIONS, "nadet detect")?;
    let mut run = ws.begin(&["eval", &key, &detector])?;
    let corpus = load_full_corpus(ws, &mut run)?;
    let manifest = load_manifest(ws, &mut run, split)?;
    let results: Vec<DetectionResult> = load(&mut run, &detect_dir, DETECTIONS)?;
    let in_test = |id: &str| manifest.subset_of(id) == Some(Subset::Test);
    let originals: Vec<&SearchResponse> = corpus.responses.iter().filter(|r| in_test(&r.id)).collect();
    let ads: Vec<&AdInsertionRecord> = corpus.ad_records.iter().filter(|a| in_test(&a.id)).collect();
    let truths = evaluator::ground_truths(&originals, &ads, &corpus.candidates)?;
    let overlap = config.eval.min_span_overlap;
    let is_llm = config.detect.detector != DetectorKind::Encoder;
    let matcher = |r: &DetectionResult, t: &GroundTruth| {
        if is_llm {
            llm_detector::match_to_truth(r, t, overlap)
        } else {
            evaluator::verdict_outcome(r, t)
        }
    };
    let result = evaluator::compute_pr_with(&results, &truths, config.eval.granularity, matcher)
        .map_err(|e| validation_failure(e.to_string()))?;
    let row = MetricsRow {
        test_set: key.clone(),
        detector: detector.clone(),
        result: result.clone(),
    };
    write_json(&run.path(METRICS), &row)?;
    let report = MetricsReport::new(config.eval.granularity, vec![row], config.report.confidence_level);
    std::fs::write(run.path("metrics.md"), report.render_markdown())?;

    let texts: HashMap<String, (String, String)> =
        test_items(&corpus, &manifest).into_iter().map(|(id, q, t)| (id, (q, t))).collect();
    let cases = evaluator::error_cases(&results, &truths, &texts, matcher);
    let sample = evaluator::sample_errors(
        &cases,
        config.eval.sample_false_positives,
        config.eval.sample_false_negatives,
        config.seed,
    );
    for w in &sample.warnings {
        log::warn!("{w}");
    }
    sample.write(run.path("annotation"))?;
    let c = result.counts;
    let summary = json!({
        "split": key,
        "detector": detector,
        "granularity": config.eval.granularity,
        "tp": c.tp, "fp": c.fp, "fn": c.fn_, "tn": c.tn,
        "precision": evaluator::display_metric(result.precision),
        "recall": evaluator::display_metric(result.recall),
        "abstained": results.iter().filter(|r| r.is_abstain()).count(),
    });
    done(run, config, summary)
}

pub fn audit(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let mut run = ws.begin(&["audit"])?;
    let corpus = load_full_corpus(ws, &mut run)?;
    let phrases: Vec<&str> = config.audit.phrases.iter().map(String::as_str).collect();
    let affected = injector::audit_marker_phrases(&corpus.ad_records, &phrases, AuditScope::AffectedSentence)
        .map_err(|e| config_error(e.to_string()))?;
    let inserted = injector::audit_marker_phrases(&corpus.ad_records, &phrases, AuditScope::InsertionSpan)
        .map_err(|e| config_error(e.to_string()))?;
    let diversity = evaluator::lexical_diversity_report(
        &corpus.ad_records,
        &corpus.candidates,
        &Preprocessor::default(),
        config.audit.pair_budget,
        config.seed,
    );
    let stats = corpus_stats(&corpus.queries, &corpus.responses, &corpus.ad_records)?;
    std::fs::write(run.path("corpus_stats.tsv"), stats.render())?;
    let (same100, cross100) = diversity.scaled();
    let report = json!({
        "ad_records": corpus.ad_records.len(),
        "marker_phrases": {"affected_sentence": affected, "insertion_span": inserted},
        "lexical_diversity": diversity,
        "lexical_diversity_x100": {"same_topic": same100, "cross_topic": cross100},
    });
    write_json(&run.path("audit.json"), &report)?;
    let summary = json!({
        "marker_phrases": affected,
        "same_topic_rouge1": diversity.same_topic_mean,
        "cross_topic_rouge1": diversity.cross_topic_mean,
    });
    done(run, config, summary)
}

pub fn report(config: &Config, ws: &Workspace) -> anyhow::Result<()> {
    let mut run = ws.begin(&["report"])?;
    let mut rows = Vec::new();
    let eval_root = ws.root.join("eval");
    let mut splits: Vec<PathBuf> = std::fs::read_dir(&eval_root)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    splits.sort();
    for split_dir in splits {
        let split = split_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut detectors: Vec<String> = std::fs::read_dir(&split_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().to_string())
            .collect();
        detectors.sort();
        for det in detectors {
            if let Some(dir) = ws.latest_with(&["eval", &split, &det], METRICS) {
                let path = run.input(dir.join(METRICS));
                let row: MetricsRow = serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?;
                rows.push(row);
            }
        }
    }
    if rows.is_empty() {
        return Err(validation_failure("no evaluation results: run `nadet eval` first"));
    }
    let report = MetricsReport::new(config.eval.granularity, rows, config.report.confidence_level);
    std::fs::write(run.path("report.md"), report.render_markdown())?;
    write_json(&run.path("report.json"), &report)?;
    print!("{}", report.render_markdown());
    let summary = json!({"rows": report.rows.len(), "intervals": report.intervals.len()});
    done(run, config, summary)
}
