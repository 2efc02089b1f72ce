//! Sentence-pair ad classifier: a sentence encoder with a linear head,
//! fine-tuned with Adam on binary cross-entropy.
//!
//! The encoder embeds hashed word unigrams and bigrams and mean-pools them.
//! The head sees `[u, v, |u - v|, u * v]` for the encoded pair `(u, v)` and
//! outputs one logit; the probability is its sigmoid.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DetectionResult, FlaggedSentence, SentencePair};
use crate::error::{Error, Result};
use crate::pair_builder::NeighborPolicy;
use crate::segment::Segmenter;
use crate::text::{char_slice, fnv1a};

/// Shape of a built-in encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub buckets: usize,
    pub dim: usize,
}

pub const COMPACT_ENCODER: &str = "hashed-ngram-compact";
pub const LARGE_ENCODER: &str = "hashed-ngram-large";

impl EncoderSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            COMPACT_ENCODER => Ok(Self { buckets: 1 << 14, dim: 64 }),
            LARGE_ENCODER => Ok(Self { buckets: 1 << 15, dim: 128 }),
            other => Err(Error::precondition(format!(
                "unknown base encoder '{other}' (known: {COMPACT_ENCODER}, {LARGE_ENCODER})"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub base_encoder: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    pub neighbor_policy: NeighborPolicy,
}

/// Learning rates for pretrained transformer encoders are far too small for
/// the built-in encoders, which start from random embeddings. The built-in
/// profiles keep the reference batch sizes and epochs and scale the learning
/// rate by this factor.
pub const FROM_SCRATCH_LR_SCALE: f64 = 100.0;

impl EncoderConfig {
    /// Compact reference profile for a pretrained encoder: batch 48,
    /// learning rate 1e-5, 30 epochs.
    pub fn reference_compact() -> Self {
        Self {
            base_encoder: COMPACT_ENCODER.into(),
            batch_size: 48,
            learning_rate: 1e-5,
            epochs: 30,
            seed: 0,
            threshold: 0.5,
            neighbor_policy: NeighborPolicy::PrecedingElseFollowing,
        }
    }

    /// Large reference profile for a pretrained encoder: batch 16,
    /// learning rate 5e-6, 30 epochs.
    pub fn reference_large() -> Self {
        Self {
            base_encoder: LARGE_ENCODER.into(),
            batch_size: 16,
            learning_rate: 5e-6,
            ..Self::reference_compact()
        }
    }

    /// Compact profile for the built-in encoder (learning rate 1e-3).
    pub fn compact() -> Self {
        let mut c = Self::reference_compact();
        c.learning_rate *= FROM_SCRATCH_LR_SCALE;
        c
    }

    /// Large profile for the built-in encoder (learning rate 5e-4).
    pub fn large() -> Self {
        let mut c = Self::reference_large();
        c.learning_rate *= FROM_SCRATCH_LR_SCALE;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "compact" => Ok(Self::compact()),
            "large" => Ok(Self::large()),
            "reference-compact" => Ok(Self::reference_compact()),
            "reference-large" => Ok(Self::reference_large()),
            other => Err(Error::precondition(format!("unknown encoder profile '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        EncoderSpec::from_id(&self.base_encoder)?;
        if self.batch_size < 1 {
            return Err(Error::precondition("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::precondition("learning_rate must lie in (0, 1)"));
        }
        if self.epochs < 1 {
            return Err(Error::precondition("epochs must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::precondition("threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Hashed unigram and bigram features of a sentence.
pub fn features(sentence: &str, buckets: usize) -> Vec<u32> {
    let lowered = sentence.to_lowercase();
    let tokens: Vec<&str> = lowered
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .collect();
    let bucket = |s: &str| (fnv1a(s.as_bytes()) % buckets as u64) as u32;
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        out.push(bucket(&format!("u:{t}")));
    }
    for w in tokens.windows(2) {
        out.push(bucket(&format!("b:{} {}", w[0], w[1])));
    }
    out
}

/// Initial embedding scale of the built-in encoder.
const EMBEDDING_INIT: f32 = 1.0;
const HEAD_INIT: f32 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifier {
    pub spec: EncoderSpec,
    /// `buckets * dim` row-major embedding table, followed by nothing else.
    pub embeddings: Vec<f32>,
    /// `4 * dim` head weights.
    pub head: Vec<f32>,
    pub bias: f32,
}

/// Per-pair intermediate values kept for the backward pass.
struct Forward {
    first: Vec<u32>,
    second: Vec<u32>,
    u: Vec<f32>,
    v: Vec<f32>,
    logit: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 label, computed stably.
fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

impl PairClassifier {
    pub fn init(spec: EncoderSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..spec.buckets * spec.dim)
            .map(|_| rng.gen_range(-EMBEDDING_INIT..EMBEDDING_INIT))
            .collect();
        let head = (0..4 * spec.dim).map(|_| rng.gen_range(-HEAD_INIT..HEAD_INIT)).collect();
        Self {
            spec,
            embeddings,
            head,
            bias: 0.0,
        }
    }

    fn encode_features(&self, feats: &[u32]) -> Vec<f32> {
        let dim = self.spec.dim;
        let mut out = vec![0.0f32; dim];
        if feats.is_empty() {
            return out;
        }
        for &f in feats {
            let row = &self.embeddings[f as usize * dim..(f as usize + 1) * dim];
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let k = feats.len() as f32;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Mean-pooled sentence embedding.
    pub fn encode(&self, sentence: &str) -> Vec<f32> {
        self.encode_features(&features(sentence, self.spec.buckets))
    }

    fn logit(&self, u: &[f32], v: &[f32]) -> f64 {
        let dim = self.spec.dim;
        let (w1, rest) = self.head.split_at(dim);
        let (w2, rest) = rest.split_at(dim);
        let (w3, w4) = rest.split_at(dim);
        let mut z = f64::from(self.bias);
        for d in 0..dim {
            let (a, b) = (u[d], v[d]);
            z += f64::from(w1[d] * a + w2[d] * b + w3[d] * (a - b).abs() + w4[d] * a * b);
        }
        z
    }

    fn forward(&self, first: &str, second: &str) -> Forward {
        let f1 = features(first, self.spec.buckets);
        let f2 = features(second, self.spec.buckets);
        let u = self.encode_features(&f1);
        let v = self.encode_features(&f2);
        let logit = self.logit(&u, &v);
        Forward {
            first: f1,
            second: f2,
            u,
            v,
            logit,
        }
    }

    /// Ad probability for `(first, second)`; `first` is the sentence under test.
    pub fn score(&self, first: &str, second: &str) -> f64 {
        sigmoid(self.forward(first, second).logit).clamp(0.0, 1.0)
    }

    pub fn parameter_count(&self) -> usize {
        self.embeddings.len() + self.head.len() + 1
    }

    /// Accumulate gradients of `scale * BCE` into `grad` (same layout as `params`).
    fn backward(&self, fw: &Forward, label: f64, scale: f64, grad: &mut Gradients) {
        let dim = self.spec.dim;
        let g = (sigmoid(fw.logit) - label) * scale;
        let g32 = g as f32;
        let (w1, rest) = self.head.split_at(dim);
        let (w2, rest) = rest.split_at(dim);
        let (w3, w4) = rest.split_at(dim);
        let mut du = vec![0.0f32; dim];
        let mut dv = vec![0.0f32; dim];
        for d in 0..dim {
            let (a, b) = (fw.u[d], fw.v[d]);
            let sign = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            grad.head[d] += g32 * a;
            grad.head[dim + d] += g32 * b;
            grad.head[2 * dim + d] += g32 * (a - b).abs();
            grad.head[3 * dim + d] += g32 * a * b;
            du[d] = g32 * (w1[d] + sign * w3[d] + b * w4[d]);
            dv[d] = g32 * (w2[d] - sign * w3[d] + a * w4[d]);
        }
        grad.bias += g;
        for (feats, delta) in [(&fw.first, &du), (&fw.second, &dv)] {
            if feats.is_empty() {
                continue;
            }
            let k = feats.len() as f32;
            for &f in feats.iter() {
                let row = &mut grad.embeddings[f as usize * dim..(f as usize + 1) * dim];
                for (r, x) in row.iter_mut().zip(delta.iter()) {
                    *r += x / k;
                }
                grad.touched.push(f);
            }
        }
    }
}

struct Gradients {
    embeddings: Vec<f32>,
    head: Vec<f32>,
    bias: f64,
    touched: Vec<u32>,
}

impl Gradients {
    fn zeros(model: &PairClassifier) -> Self {
        Self {
            embeddings: vec![0.0; model.embeddings.len()],
            head: vec![0.0; model.head.len()],
            bias: 0.0,
            touched: Vec::new(),
        }
    }

    fn clear(&mut self, dim: usize) {
        for &f in &self.touched {
            self.embeddings[f as usize * dim..(f as usize + 1) * dim].fill(0.0);
        }
        self.touched.clear();
        self.head.fill(0.0);
        self.bias = 0.0;
    }
}

/// Adam with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8) and bias correction.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(lr: f64, params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    fn update(&mut self, model: &mut PairClassifier, grad: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        let n_emb = model.embeddings.len();
        let n_head = model.head.len();
        let apply = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        };
        let (m_emb, m_rest) = self.m.split_at_mut(n_emb);
        let (v_emb, v_rest) = self.v.split_at_mut(n_emb);
        for i in 0..n_emb {
            apply(&mut model.embeddings[i], grad.embeddings[i], &mut m_emb[i], &mut v_emb[i]);
        }
        for i in 0..n_head {
            apply(&mut model.head[i], grad.head[i], &mut m_rest[i], &mut v_rest[i]);
        }
        apply(&mut model.bias, grad.bias as f32, &mut m_rest[n_head], &mut v_rest[n_head]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorCheckpoint {
    pub config: EncoderConfig,
    pub model: PairClassifier,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: DetectorCheckpoint,
    pub last: DetectorCheckpoint,
    pub log: Vec<EpochLog>,
}

/// 1-based epoch with the smallest validation loss (earliest on ties).
pub fn best_epoch(validation_losses: &[f64]) -> Option<usize> {
    validation_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
            Some((_, b)) if b <= l => best,
            _ => Some((i, l)),
        })
        .map(|(i, _)| i + 1)
}

pub fn mean_loss(model: &PairClassifier, pairs: &[SentencePair]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|p| bce_with_logit(model.forward(&p.first, &p.second).logit, f64::from(p.label)))
        .sum();
    total / pairs.len().max(1) as f64
}

/// Fine-tune on `train`, select the epoch with the lowest validation loss.
pub fn train(train: &[SentencePair], validation: &[SentencePair], config: &EncoderConfig) -> Result<TrainOutcome> {
    train_with_progress(train, validation, config, |_| {})
}

pub fn train_with_progress(
    train: &[SentencePair],
    validation: &[SentencePair],
    config: &EncoderConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::precondition("training set is empty"));
    }
    if validation.is_empty() {
        return Err(Error::precondition("validation set is empty"));
    }
    let train_sources: HashSet<&str> = train.iter().map(|p| p.source_record_id.as_str()).collect();
    if let Some(p) = validation.iter().find(|p| train_sources.contains(p.source_record_id.as_str())) {
        return Err(Error::precondition(format!(
            "record {} contributes pairs to both training and validation",
            p.source_record_id
        )));
    }
    let spec = EncoderSpec::from_id(&config.base_encoder)?;
    let mut model = PairClassifier::init(spec, config.seed);
    let mut grad = Gradients::zeros(&model);
    let mut adam = Adam::new(config.learning_rate, model.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, PairClassifier)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.clear(spec.dim);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &train[i];
                let fw = model.forward(&p.first, &p.second);
                let loss = bce_with_logit(fw.logit, f64::from(p.label));
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {b}, pair {} (logit {})",
                        p.source_record_id, fw.logit
                    )));
                }
                epoch_loss += loss;
                model.backward(&fw, f64::from(p.label), scale, &mut grad);
            }
            adam.update(&mut model, &grad);
        }
        let validation_loss = mean_loss(&model, validation);
        if !validation_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            validation_loss,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, validation loss {:.5}",
            entry.train_loss,
            entry.validation_loss
        );
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, l, _)| validation_loss < *l) {
            best = Some((epoch, validation_loss, model.clone()));
        }
    }
    let (best_epoch, best_loss, best_model) = best.expect("at least one epoch");
    let last_loss = log.last().map(|l| l.validation_loss).unwrap_or(best_loss);
    Ok(TrainOutcome {
        best: DetectorCheckpoint {
            config: config.clone(),
            model: best_model,
            best_epoch,
            best_validation_loss: best_loss,
        },
        last: DetectorCheckpoint {
            config: config.clone(),
            model,
            best_epoch: config.epochs,
            best_validation_loss: last_loss,
        },
        log,
    })
}

pub fn score_pair(checkpoint: &DetectorCheckpoint, pair: &SentencePair) -> f64 {
    checkpoint.model.score(&pair.first, &pair.second)
}

/// Response verdict from per-sentence scores: a sentence is flagged when its
/// score is strictly above the threshold, the response is an ad when any
/// sentence is flagged.
pub fn aggregate_scores(
    response_id: &str,
    detector_id: &str,
    scores: &[f64],
    threshold: f64,
    sentence_ranges: &[crate::text::CharRange],
) -> DetectionResult {
    let flagged: Vec<FlaggedSentence> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > threshold)
        .map(|(index, score)| FlaggedSentence { index, score: *score })
        .collect();
    DetectionResult {
        response_id: response_id.to_string(),
        detector_id: detector_id.to_string(),
        is_ad: !flagged.is_empty(),
        passages: flagged
            .iter()
            .filter_map(|f| sentence_ranges.get(f.index).copied())
            .collect(),
        flagged_sentences: flagged,
        named_items: None,
        metadata: BTreeMap::new(),
    }
}

/// Per-sentence ad scores, each sentence paired with its neighbor(s) the same
/// way training pairs were built. A lone sentence is paired with itself.
pub fn sentence_scores(checkpoint: &DetectorCheckpoint, text: &str, segmenter: &Segmenter) -> (Vec<crate::text::CharRange>, Vec<f64>) {
    let ranges = segmenter.segment(text);
    let sentences: Vec<&str> = ranges.iter().map(|r| char_slice(text, *r)).collect();
    let n = sentences.len();
    let scores = (0..n)
        .map(|i| {
            let neighbors = checkpoint.config.neighbor_policy.neighbors(i, n);
            if neighbors.is_empty() {
                checkpoint.model.score(sentences[i], sentences[i])
            } else {
                neighbors
                    .into_iter()
                    .map(|j| checkpoint.model.score(sentences[i], sentences[j]))
                    .fold(0.0, f64::max)
            }
        })
        .collect();
    (ranges, scores)
}

pub fn detect(
    checkpoint: &DetectorCheckpoint,
    detector_id: &str,
    response_id: &str,
    text: &str,
    segmenter: &Segmenter,
) -> DetectionResult {
    let (ranges, scores) = sentence_scores(checkpoint, text, segmenter);
    aggregate_scores(response_id, detector_id, &scores, checkpoint.config.threshold, &ranges)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: u32,
    config: EncoderConfig,
    spec: EncoderSpec,
    best_epoch: usize,
    best_validation_loss: f64,
    weights_file: String,
    parameter_count: usize,
}

const WEIGHTS_FILE: &str = "weights.bin";
const META_FILE: &str = "checkpoint.json";

impl DetectorCheckpoint {
    /// Write `checkpoint.json` and little-endian f32 `weights.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta {
            format: 1,
            config: self.config.clone(),
            spec: self.model.spec,
            best_epoch: self.best_epoch,
            best_validation_loss: self.best_validation_loss,
            weights_file: WEIGHTS_FILE.into(),
            parameter_count: self.model.parameter_count(),
        };
        let meta_path = dir.join(META_FILE);
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
        let path = dir.join(WEIGHTS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let all = self
            .model
            .embeddings
            .iter()
            .chain(self.model.head.iter())
            .chain(std::iter::once(&self.model.bias));
        for x in all {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META_FILE);
        let meta: CheckpointMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        if meta.best_epoch > meta.config.epochs {
            return Err(Error::validation(
                dir.display().to_string(),
                "best_epoch exceeds configured epochs",
            ));
        }
        let path = dir.join(&meta.weights_file);
        let mut bytes = Vec::new();
        BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&path, e))?;
        let n_emb = meta.spec.buckets * meta.spec.dim;
        let n_head = 4 * meta.spec.dim;
        if bytes.len() != 4 * (n_emb + n_head + 1) || meta.parameter_count != n_emb + n_head + 1 {
            return Err(Error::validation(
                path.display().to_string(),
                "weights file size does not match encoder shape",
            ));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            config: meta.config,
            model: PairClassifier {
                spec: meta.spec,
                embeddings: floats[..n_emb].to_vec(),
                head: floats[n_emb..n_emb + n_head].to_vec(),
                bias: floats[n_emb + n_head],
            },
            best_epoch: meta.best_epoch,
            best_validation_loss: meta.best_validation_loss,
        })
    }
}

/// Write `best/`, `last/` and `training_log.jsonl` into `dir`.
pub fn save_training_run(dir: impl AsRef<Path>, outcome: &TrainOutcome) -> Result<()> {
    let dir = dir.as_ref();
    outcome.best.save(dir.join("best"))?;
    outcome.last.save(dir.join("last"))?;
    let path = dir.join("training_log.jsonl");
    let mut out = String::new();
    for e in &outcome.log {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PairOrigin;

    fn p(first: &str, second: &str, label: u8, src: &str) -> SentencePair {
        SentencePair {
            first: first.into(),
            second: second.into(),
            label,
            source_record_id: src.into(),
            position: (1, 0),
            origin: if label == 1 { PairOrigin::Inserted } else { PairOrigin::Aligned },
        }
    }

    fn small_config(lr: f64) -> EncoderConfig {
        EncoderConfig {
            batch_size: 8,
            learning_rate: lr,
            epochs: 30,
            seed: 3,
            ..EncoderConfig::compact()
        }
    }

    #[test]
    fn reference_profiles() {
        let c = EncoderConfig::reference_compact();
        assert_eq!((c.batch_size, c.learning_rate, c.epochs), (48, 1e-5, 30));
        let l = EncoderConfig::reference_large();
        assert_eq!((l.batch_size, l.learning_rate, l.epochs), (16, 5e-6, 30));
        let bc = EncoderConfig::compact();
        assert_eq!((bc.batch_size, bc.epochs), (48, 30));
        assert!((bc.learning_rate - 1e-3).abs() < 1e-15);
        let bl = EncoderConfig::large();
        assert_eq!((bl.batch_size, bl.epochs), (16, 30));
        assert!((bl.learning_rate - 5e-4).abs() < 1e-15);
        for p in [c, l, bc, bl] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn config_invariants() {
        let bad = |f: fn(&mut EncoderConfig)| {
            let mut c = EncoderConfig::compact();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.batch_size = 0));
        assert!(bad(|c| c.learning_rate = 1.0));
        assert!(bad(|c| c.learning_rate = 0.0));
        assert!(bad(|c| c.epochs = 0));
        assert!(bad(|c| c.base_encoder = "bert".into()));
    }

    #[test]
    fn best_epoch_is_argmin() {
        assert_eq!(best_epoch(&[0.7, 0.4, 0.5]), Some(2));
        assert_eq!(best_epoch(&[0.3, 0.3]), Some(1));
        assert_eq!(best_epoch(&[]), None);
    }

    #[test]
    fn bce_matches_naive_formula() {
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0), (-0.1, 1.0)] {
            let p = sigmoid(z);
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(z, y) - naive).abs() < 1e-12);
        }
    }

    /// Central finite differences on a few parameters against the analytic gradient.
    #[test]
    fn gradient_matches_finite_differences() {
        let spec = EncoderSpec { buckets: 64, dim: 4 };
        let mut model = PairClassifier::init(spec, 11);
        model.head.iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * ((i % 7) as f32 - 3.0));
        model.bias = 0.2;
        let (a, b) = ("great deals for those who travel", "flights are cheap");
        let fw = model.forward(a, b);
        let mut grad = Gradients::zeros(&model);
        model.backward(&fw, 1.0, 1.0, &mut grad);
        let loss = |m: &PairClassifier| bce_with_logit(m.forward(a, b).logit, 1.0);
        let h = 1e-3f32;
        for i in [0usize, 5, 9, 14] {
            let mut plus = model.clone();
            plus.head[i] += h;
            let mut minus = model.clone();
            minus.head[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * f64::from(h));
            assert!((numeric - f64::from(grad.head[i])).abs() < 1e-3, "head {i}: {numeric} vs {}", grad.head[i]);
        }
        let f = features(a, spec.buckets)[0] as usize;
        for d in 0..spec.dim {
            let idx = f * spec.dim + d;
            let mut plus = model.clone();
            plus.embeddings[idx] += h;
            let mut minus = model.clone();
            minus.embeddings[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * f64::from(h));
            assert!((numeric - f64::from(grad.embeddings[idx])).abs() < 1e-3, "emb {d}: {numeric} vs {}", grad.embeddings[idx]);
        }
        let mut plus = model.clone();
        plus.bias += h;
        let mut minus = model.clone();
        minus.bias -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * f64::from(h));
        assert!((numeric - grad.bias).abs() < 1e-3);
    }

    fn toy_pairs() -> Vec<SentencePair> {
        let topics = ["loans", "cars", "games", "hotels", "shoes"];
        let mut out = Vec::new();
        for i in 0..25 {
            let t = topics[i % 5];
            out.push(p(
                &format!("Many people compare {t} before deciding, and for those who want value, Brand{i} is a great choice."),
                &format!("Prices for {t} change every season."),
                1,
                &format!("ad{i}"),
            ));
            out.push(p(
                &format!("Many people compare {t} before deciding number {i}."),
                &format!("Prices for {t} change every season."),
                0,
                &format!("orig{i}"),
            ));
        }
        out
    }

    #[test]
    fn overfit_probe_reaches_full_training_accuracy() {
        let pairs = toy_pairs();
        let val = vec![p("Holdout sentence.", "Other sentence.", 0, "val")];
        let outcome = train(&pairs, &val, &small_config(1e-3)).unwrap();
        let model = &outcome.last.model;
        let correct = pairs
            .iter()
            .filter(|x| (model.score(&x.first, &x.second) > 0.5) == (x.label == 1))
            .count();
        assert_eq!(correct, pairs.len());
        assert_eq!(outcome.log.len(), 30);
    }

    #[test]
    fn all_positive_scores_drift_up() {
        let pairs: Vec<SentencePair> = toy_pairs().into_iter().filter(|x| x.label == 1).take(10).collect();
        let val = vec![p("Holdout sentence.", "Other sentence.", 1, "val")];
        let before = PairClassifier::init(EncoderSpec::from_id(COMPACT_ENCODER).unwrap(), 3);
        let mean = |m: &PairClassifier| pairs.iter().map(|x| m.score(&x.first, &x.second)).sum::<f64>() / pairs.len() as f64;
        let mut cfg = small_config(1e-3);
        cfg.epochs = 1;
        let one = train(&pairs, &val, &cfg).unwrap().last.model;
        cfg.epochs = 10;
        let ten = train(&pairs, &val, &cfg).unwrap().last.model;
        assert!(mean(&before) < mean(&one) && mean(&one) < mean(&ten));
        // The overfitted model ranks a training positive above a training negative.
        let neg = &toy_pairs()[1];
        assert!(ten.score(&pairs[0].first, &pairs[0].second) > ten.score(&neg.first, &neg.second));
    }

    #[test]
    fn scores_are_probabilities_and_deterministic() {
        let m = PairClassifier::init(EncoderSpec { buckets: 256, dim: 8 }, 1);
        for (a, b) in [("", ""), ("A sentence.", "Another one."), ("x", "y z")] {
            let s = m.score(a, b);
            assert!((0.0..=1.0).contains(&s));
            assert_eq!(s, m.score(a, b));
        }
    }

    #[test]
    fn rejects_overlapping_sources_and_empty_sets() {
        let pairs = toy_pairs();
        assert!(train(&pairs, &[], &small_config(1e-3)).is_err());
        assert!(train(&pairs, &pairs[..1], &small_config(1e-3)).is_err());
    }

    #[test]
    fn aggregation_uses_strict_threshold() {
        let ranges = crate::segment::segment("A. B. C.");
        let r = aggregate_scores("r", "enc", &[0.1, 0.95, 0.2], 0.5, &ranges);
        assert!(r.is_ad);
        assert_eq!(r.flagged_sentences, vec![FlaggedSentence { index: 1, score: 0.95 }]);
        assert_eq!(r.passages, vec![ranges[1]]);
        let r = aggregate_scores("r", "enc", &[0.1, 0.2, 0.3], 0.5, &ranges);
        assert!(!r.is_ad && r.flagged_sentences.is_empty());
        let r = aggregate_scores("r", "enc", &[0.5], 0.5, &ranges);
        assert!(!r.is_ad);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_scores() {
        let pairs = toy_pairs();
        let val = vec![p("Holdout sentence.", "Other sentence.", 0, "val")];
        let mut cfg = small_config(1e-3);
        cfg.epochs = 3;
        let outcome = train(&pairs, &val, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_training_run(dir.path(), &outcome).unwrap();
        let loaded = DetectorCheckpoint::load(dir.path().join("best")).unwrap();
        assert_eq!(loaded, outcome.best);
        for x in &pairs {
            assert!((score_pair(&loaded, x) - score_pair(&outcome.best, x)).abs() < 1e-6);
        }
        let log = std::fs::read_to_string(dir.path().join("training_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 3);
    }

    #[test]
    fn single_sentence_response_scores_against_itself() {
        let cp = DetectorCheckpoint {
            config: EncoderConfig::compact(),
            model: PairClassifier::init(EncoderSpec { buckets: 64, dim: 4 }, 2),
            best_epoch: 1,
            best_validation_loss: 0.0,
        };
        let seg = Segmenter::default();
        let (_, scores) = sentence_scores(&cp, "Only one sentence here.", &seg);
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0], cp.model.score("Only one sentence here.", "Only one sentence here."));
    }
}
