//! Labeled sentence pairs for classifier training.
//!
//! Each ad record yields one positive pair (ad sentence, neighbor) and one
//! aligned negative taken from the same positions of the base response.
//! Extra negatives are drawn from adjacent sentences of original responses
//! until the requested label distribution is reached.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AdInsertionRecord, PairOrigin, SearchResponse, SentencePair, SplitManifest, Subset};
use crate::error::{Error, Result};

pub use crate::segment::{segment, Segmenter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborPolicy {
    /// The preceding sentence, or the following one for the first sentence.
    #[default]
    PrecedingElseFollowing,
    /// Both immediate neighbors (where they exist).
    Both,
}

impl NeighborPolicy {
    pub fn neighbors(self, index: usize, count: usize) -> Vec<usize> {
        if count < 2 {
            return Vec::new();
        }
        match self {
            NeighborPolicy::PrecedingElseFollowing => {
                vec![if index == 0 { 1 } else { index - 1 }]
            }
            NeighborPolicy::Both => {
                let mut v = Vec::with_capacity(2);
                if index > 0 {
                    v.push(index - 1);
                }
                if index + 1 < count {
                    v.push(index + 1);
                }
                v
            }
        }
    }
}

/// Exact positive fraction `positives / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Self { numerator, denominator }
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Response-level share of ad-bearing responses: `ads / (ads + originals)`.
pub fn response_label_distribution(ad_records: usize, originals: usize) -> Fraction {
    Fraction::new(ad_records as u64, (ad_records + originals) as u64)
}

pub fn label_distribution(pairs: &[SentencePair]) -> Result<Fraction> {
    if pairs.is_empty() {
        return Err(Error::precondition("no pairs"));
    }
    let pos = pairs.iter().filter(|p| p.label == 1).count();
    Ok(Fraction::new(pos as u64, pairs.len() as u64))
}

#[derive(Debug, Clone, Copy)]
pub struct PairOptions {
    /// Desired fraction of positive pairs, in `(0, 0.5]`.
    pub target_positive_fraction: f64,
    pub neighbor_policy: NeighborPolicy,
    pub seed: u64,
}

/// Records of one subset plus every response an ad record may refer to.
#[derive(Debug, Clone, Default)]
pub struct PairSource<'a> {
    pub ad_records: Vec<&'a AdInsertionRecord>,
    pub originals: Vec<&'a SearchResponse>,
    pub bases: HashMap<&'a str, &'a SearchResponse>,
}

impl<'a> PairSource<'a> {
    pub fn from_manifest(
        manifest: &SplitManifest,
        subset: Subset,
        responses: &'a [SearchResponse],
        ad_records: &'a [AdInsertionRecord],
    ) -> Self {
        let in_subset = |id: &str| manifest.subset_of(id) == Some(subset);
        Self {
            ad_records: ad_records.iter().filter(|a| in_subset(&a.id)).collect(),
            originals: responses.iter().filter(|r| in_subset(&r.id)).collect(),
            bases: responses.iter().map(|r| (r.id.as_str(), r)).collect(),
        }
    }
}

fn pair(first: &str, second: &str, label: u8, source: &str, position: (usize, usize), origin: PairOrigin) -> SentencePair {
    SentencePair {
        first: first.to_string(),
        second: second.to_string(),
        label,
        source_record_id: source.to_string(),
        position,
        origin,
    }
}

pub fn build_pairs(source: &PairSource<'_>, options: &PairOptions) -> Result<Vec<SentencePair>> {
    let f = options.target_positive_fraction;
    if !(f > 0.0 && f <= 0.5) {
        return Err(Error::precondition(format!(
            "target positive fraction {f} unreachable: aligned negatives cap it at 0.5"
        )));
    }
    let mut pairs = Vec::new();
    let mut used: HashSet<(&str, usize, usize)> = HashSet::new();
    let mut records = source.ad_records.clone();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    for rec in &records {
        let base = source.bases.get(rec.base_response_id.as_str()).ok_or_else(|| {
            Error::precondition(format!("base response {} of {} missing", rec.base_response_id, rec.id))
        })?;
        let ad_sentences = rec.sentence_texts();
        let base_sentences = base.sentence_texts();
        let i = rec.affected_sentence_index;
        let neighbors = options.neighbor_policy.neighbors(i, ad_sentences.len());
        if neighbors.is_empty() {
            return Err(Error::precondition(format!("record {} has no neighbor sentence", rec.id)));
        }
        for j in neighbors {
            pairs.push(pair(ad_sentences[i], ad_sentences[j], 1, &rec.id, (i, j), PairOrigin::Inserted));
            pairs.push(pair(base_sentences[i], base_sentences[j], 0, &rec.id, (i, j), PairOrigin::Aligned));
            used.insert((base.id.as_str(), i, j));
        }
    }
    let positives = pairs.len() / 2;
    let needed_negatives = (positives as f64 * (1.0 - f) / f).round() as usize;
    let extra = needed_negatives.saturating_sub(positives);

    let mut originals = source.originals.clone();
    originals.sort_by(|a, b| a.id.cmp(&b.id));
    let mut pool: Vec<(&SearchResponse, usize, usize)> = Vec::new();
    for r in originals {
        let n = r.sentences.len();
        for i in 0..n {
            for j in options.neighbor_policy.neighbors(i, n) {
                if !used.contains(&(r.id.as_str(), i, j)) {
                    pool.push((r, i, j));
                }
            }
        }
    }
    if extra > pool.len() {
        let max = positives as f64 / (2 * positives + pool.len()) as f64;
        return Err(Error::precondition(format!(
            "target positive fraction {f} needs {extra} sampled negatives but only {} original pairs exist; maximum achievable fraction is {max:.4}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), extra).into_vec();
    picked.sort_unstable();
    for k in picked {
        let (r, i, j) = pool[k];
        let s = r.sentence_texts();
        pairs.push(pair(s[i], s[j], 0, &r.id, (i, j), PairOrigin::Sampled));
    }
    Ok(pairs)
}
