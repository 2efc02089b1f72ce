//! Leakage-free train/validation/test splits.
//!
//! Records advertising the same item (same candidate id) always land in the
//! same subset. Originals follow their query so that query text is shared
//! across subsets as little as possible.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{AdCandidate, AdInsertionRecord, MetaTopic, Query, SearchResponse, SplitKind, SplitManifest, Subset};
use crate::error::{Error, Result};

pub const FIXED_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];
/// Largest share of ad records a single item may hold before a split is refused.
pub const MAX_GROUP_SHARE: f64 = 0.72;

/// Everything a split is computed from.
#[derive(Debug, Clone, Copy)]
pub struct SplitInput<'a> {
    pub queries: &'a [Query],
    pub responses: &'a [SearchResponse],
    pub ad_records: &'a [AdInsertionRecord],
    pub candidates: &'a [AdCandidate],
}

#[derive(Debug, Clone)]
struct Unit {
    id: String,
    query_id: String,
    topic: MetaTopic,
    item: Option<String>,
}

fn index_units(input: &SplitInput<'_>) -> Result<Vec<Unit>> {
    let topic_of: HashMap<&str, MetaTopic> = input.queries.iter().map(|q| (q.id.as_str(), q.topic)).collect();
    let query_of: HashMap<&str, &str> = input
        .responses
        .iter()
        .map(|r| (r.id.as_str(), r.query_id.as_str()))
        .collect();
    let candidates: HashSet<&str> = input.candidates.iter().map(|c| c.id.as_str()).collect();
    let mut units = Vec::with_capacity(input.responses.len() + input.ad_records.len());
    for r in input.responses {
        let topic = *topic_of
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::validation(&r.id, format!("unknown query {}", r.query_id)))?;
        units.push(Unit {
            id: r.id.clone(),
            query_id: r.query_id.clone(),
            topic,
            item: None,
        });
    }
    for a in input.ad_records {
        let qid = *query_of
            .get(a.base_response_id.as_str())
            .ok_or_else(|| Error::validation(&a.id, format!("unknown base response {}", a.base_response_id)))?;
        if !candidates.contains(a.candidate_id.as_str()) {
            return Err(Error::validation(&a.id, format!("unresolvable candidate {}", a.candidate_id)));
        }
        units.push(Unit {
            id: a.id.clone(),
            query_id: qid.to_string(),
            topic: topic_of[qid],
            item: Some(a.candidate_id.clone()),
        });
    }
    Ok(units)
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::precondition(format!("ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

/// How ties between equally-hungry subsets are broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    /// Largest deficit, then fewest shared queries, then seeded order.
    Greedy,
    /// Fill subsets in order from a shuffled group list (baseline).
    Random,
}

struct Assigner {
    ratios: [f64; 3],
    order: [usize; 3],
    counts: [usize; 3],
    queries: [HashSet<String>; 3],
}

impl Assigner {
    fn new(ratios: [f64; 3], rng: &mut ChaCha8Rng) -> Self {
        let mut order = [0, 1, 2];
        order.shuffle(rng);
        Self {
            ratios,
            order,
            counts: [0; 3],
            queries: Default::default(),
        }
    }

    fn choose(&self, total: usize, group_queries: &BTreeSet<&str>) -> usize {
        let deficit = |s: usize| self.ratios[s] * total as f64 - self.counts[s] as f64;
        let shared = |s: usize| group_queries.iter().filter(|q| self.queries[s].contains(**q)).count();
        let mut best: Option<usize> = None;
        for &s in &self.order {
            if self.ratios[s] <= 0.0 {
                continue;
            }
            best = Some(match best {
                None => s,
                Some(b) => {
                    let (ds, db) = (deficit(s), deficit(b));
                    if ds > db + 1e-9 || ((ds - db).abs() <= 1e-9 && shared(s) < shared(b)) {
                        s
                    } else {
                        b
                    }
                }
            });
        }
        best.expect("at least one subset has a positive ratio")
    }

    fn place(&mut self, subset: usize, size: usize, group_queries: &BTreeSet<&str>) {
        self.counts[subset] += size;
        self.queries[subset].extend(group_queries.iter().map(|q| q.to_string()));
    }
}

fn assign(units: &[Unit], ratios: [f64; 3], seed: u64, placement: Placement) -> Result<BTreeMap<String, Subset>> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<String, Subset> = BTreeMap::new();

    // Phase 1: item groups of ad records.
    let mut groups: BTreeMap<&str, Vec<&Unit>> = BTreeMap::new();
    for u in units {
        if let Some(item) = &u.item {
            groups.entry(item.as_str()).or_default().push(u);
        }
    }
    let ad_total: usize = groups.values().map(Vec::len).sum();
    if let Some((item, g)) = groups.iter().find(|(_, g)| g.len() as f64 > MAX_GROUP_SHARE * ad_total as f64) {
        return Err(Error::precondition(format!(
            "item {item} holds {} of {ad_total} ad records; split ratios are unachievable",
            g.len()
        )));
    }
    let mut groups: Vec<Vec<&Unit>> = groups.into_values().collect();
    groups.shuffle(&mut rng);
    if placement == Placement::Greedy {
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    }
    let mut assigner = Assigner::new(ratios, &mut rng);
    let mut filled = 0usize;
    for g in &groups {
        let qs: BTreeSet<&str> = g.iter().map(|u| u.query_id.as_str()).collect();
        let s = match placement {
            Placement::Greedy => assigner.choose(ad_total, &qs),
            Placement::Random => {
                let mut acc = 0.0;
                let mut pick = 2;
                for (s, r) in ratios.iter().enumerate() {
                    acc += r * ad_total as f64;
                    if (filled as f64) < acc - 1e-9 {
                        pick = s;
                        break;
                    }
                }
                pick
            }
        };
        filled += g.len();
        assigner.place(s, g.len(), &qs);
        for u in g {
            assignment.insert(u.id.clone(), Subset::ALL[s]);
        }
    }

    // Phase 2: originals of queries that carry ads follow the query's majority.
    let mut votes: HashMap<&str, [usize; 3]> = HashMap::new();
    for u in units.iter().filter(|u| u.item.is_some()) {
        votes.entry(u.query_id.as_str()).or_default()[assignment[&u.id].index()] += 1;
    }
    let mut orphans: BTreeMap<&str, Vec<&Unit>> = BTreeMap::new();
    for u in units.iter().filter(|u| u.item.is_none()) {
        match votes.get(u.query_id.as_str()) {
            Some(v) => {
                let s = assigner
                    .order
                    .iter()
                    .copied()
                    .max_by_key(|&s| (v[s], std::cmp::Reverse(assigner.order.iter().position(|&o| o == s))))
                    .unwrap();
                assigner.counts[s] += 1;
                assignment.insert(u.id.clone(), Subset::ALL[s]);
            }
            None => orphans.entry(u.query_id.as_str()).or_default().push(u),
        }
    }

    // Phase 3: queries without any ad, grouped by query, balanced over the whole corpus.
    let mut orphans: Vec<(&str, Vec<&Unit>)> = orphans.into_iter().collect();
    orphans.shuffle(&mut rng);
    orphans.sort_by_key(|(_, g)| std::cmp::Reverse(g.len()));
    for (q, g) in orphans {
        let qs = BTreeSet::from([q]);
        let s = assigner.choose(units.len(), &qs);
        assigner.place(s, g.len(), &qs);
        for u in g {
            assignment.insert(u.id.clone(), Subset::ALL[s]);
        }
    }
    Ok(assignment)
}

/// The fixed grouped split (default ratios 70/15/15).
pub fn build_fixed_split(input: &SplitInput<'_>, ratios: [f64; 3], seed: u64) -> Result<SplitManifest> {
    let units = index_units(input)?;
    Ok(SplitManifest {
        name: "fixed".into(),
        kind: SplitKind::Fixed,
        holdout_topic: None,
        seed,
        ratios,
        assignment: assign(&units, ratios, seed, Placement::Greedy)?,
    })
}

/// Grouped assignment that ignores deficits and query overlap; a baseline
/// for judging the greedy tie-breaking.
pub fn random_grouped_split(input: &SplitInput<'_>, ratios: [f64; 3], seed: u64) -> Result<SplitManifest> {
    let units = index_units(input)?;
    Ok(SplitManifest {
        name: "random-grouped".into(),
        kind: SplitKind::Fixed,
        holdout_topic: None,
        seed,
        ratios,
        assignment: assign(&units, ratios, seed, Placement::Random)?,
    })
}

/// Train/validation ratios inside a holdout, keeping the fixed split's 70:15.
pub fn holdout_ratios() -> [f64; 3] {
    let tv = FIXED_RATIOS[0] + FIXED_RATIOS[1];
    [FIXED_RATIOS[0] / tv, FIXED_RATIOS[1] / tv, 0.0]
}

/// One manifest per meta topic, that topic being the test set.
pub fn build_topic_holdouts(input: &SplitInput<'_>, seed: u64) -> Result<Vec<SplitManifest>> {
    let units = index_units(input)?;
    let present: BTreeSet<MetaTopic> = units.iter().map(|u| u.topic).collect();
    let missing: Vec<&str> = MetaTopic::ALL
        .iter()
        .filter(|t| !present.contains(t))
        .map(|t| t.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::precondition(format!("topics absent from corpus: {}", missing.join(", "))));
    }
    let ratios = holdout_ratios();
    MetaTopic::ALL
        .iter()
        .map(|&topic| {
            let rest: Vec<Unit> = units.iter().filter(|u| u.topic != topic).cloned().collect();
            let mut assignment = assign(&rest, ratios, seed, Placement::Greedy)?;
            for u in units.iter().filter(|u| u.topic == topic) {
                assignment.insert(u.id.clone(), Subset::Test);
            }
            Ok(SplitManifest {
                name: format!("holdout-{topic}"),
                kind: SplitKind::TopicHoldout,
                holdout_topic: Some(topic),
                seed,
                ratios,
                assignment,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    MissingRecord { record_id: String },
    UnknownRecord { record_id: String },
    ItemLeakage { item: String, subsets: Vec<Subset> },
    HoldoutImpurity { record_id: String },
    MissingHoldoutTopic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestReport {
    pub violations: Vec<Violation>,
    /// Queries whose records appear in more than one subset.
    pub query_overlap: usize,
    pub counts: [usize; 3],
    pub proportions: [f64; 3],
}

impl ManifestReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Independent checker: re-derives items, queries and topics from the raw
/// records and checks coverage, item atomicity and holdout purity.
pub fn verify_manifest(manifest: &SplitManifest, input: &SplitInput<'_>) -> ManifestReport {
    let mut violations = Vec::new();
    let query_topic: HashMap<&String, &MetaTopic> = input.queries.iter().map(|q| (&q.id, &q.topic)).collect();
    let response_query: HashMap<&String, &String> = input.responses.iter().map(|r| (&r.id, &r.query_id)).collect();

    // (record id, query id, item)
    let mut expected: Vec<(&String, Option<&String>, Option<&String>)> = Vec::new();
    for r in input.responses {
        expected.push((&r.id, Some(&r.query_id), None));
    }
    for a in input.ad_records {
        expected.push((&a.id, response_query.get(&a.base_response_id).copied(), Some(&a.candidate_id)));
    }

    let known: HashSet<&String> = expected.iter().map(|e| e.0).collect();
    for (id, _, _) in &expected {
        if !manifest.assignment.contains_key(*id) {
            violations.push(Violation::MissingRecord { record_id: (*id).clone() });
        }
    }
    for id in manifest.assignment.keys() {
        if !known.contains(id) {
            violations.push(Violation::UnknownRecord { record_id: id.clone() });
        }
    }

    let mut item_subsets: BTreeMap<&String, BTreeSet<Subset>> = BTreeMap::new();
    let mut query_subsets: HashMap<&String, BTreeSet<Subset>> = HashMap::new();
    for (id, query, item) in &expected {
        let Some(subset) = manifest.assignment.get(*id) else { continue };
        if let Some(item) = item {
            item_subsets.entry(item).or_default().insert(*subset);
        }
        if let Some(q) = query {
            query_subsets.entry(q).or_default().insert(*subset);
        }
    }
    for (item, subsets) in item_subsets {
        if subsets.len() > 1 {
            violations.push(Violation::ItemLeakage {
                item: item.clone(),
                subsets: subsets.into_iter().collect(),
            });
        }
    }

    if manifest.kind == SplitKind::TopicHoldout {
        match manifest.holdout_topic {
            None => violations.push(Violation::MissingHoldoutTopic),
            Some(topic) => {
                for (id, query, _) in &expected {
                    let Some(subset) = manifest.assignment.get(*id) else { continue };
                    let in_topic = query.and_then(|q| query_topic.get(q)).is_some_and(|t| **t == topic);
                    if in_topic != (*subset == Subset::Test) {
                        violations.push(Violation::HoldoutImpurity { record_id: (*id).clone() });
                    }
                }
            }
        }
    }

    let mut counts = [0usize; 3];
    for s in manifest.assignment.values() {
        counts[match s {
            Subset::Train => 0,
            Subset::Validation => 1,
            Subset::Test => 2,
        }] += 1;
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    ManifestReport {
        violations,
        query_overlap: query_subsets.values().filter(|s| s.len() > 1).count(),
        counts,
        proportions: counts.map(|c| c as f64 / total),
    }
}
