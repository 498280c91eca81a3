//! Attribute-specific search: learn one weight vector from a query plus
//! user-supplied positive and negative examples, then rerank the database by
//! reweighted distance to the query.
//!
//! Query file: blank-line separated records of `TAG<TAB>id` lines, one
//! `QUERY` line followed by any number of `POS` and `NEG` lines:
//!
//! ```text
//! QUERY<TAB>img_17
//! POS<TAB>img_3
//! NEG<TAB>img_40
//! ```
//!
//! Ranking output: `rank<TAB>id<TAB>distance` with six decimals.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{learn, LearnResult};
use crate::loss::LossVariant;
use crate::par;
use crate::rng::{self, Stream};
use crate::store::FeatureStore;
use crate::types::{sqdist_unchecked, HyperParams, Triplet, WeightVector};

/// Default cut-off for mean precision curves.
pub const DEFAULT_PRECISION_DEPTH: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub query_id: String,
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
}

/// A [`SearchQuery`] resolved to row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQuery {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl ResolvedQuery {
    fn is_example(&self, i: usize) -> bool {
        i == self.query || self.positives.contains(&i) || self.negatives.contains(&i)
    }
}

impl SearchQuery {
    pub fn resolve(&self, store: &FeatureStore) -> Result<ResolvedQuery> {
        if self.positive_ids.is_empty() {
            return Err(Error::InvalidQuery(format!(
                "query `{}` has no positive examples",
                self.query_id
            )));
        }
        if self.negative_ids.is_empty() {
            return Err(Error::InvalidQuery(format!(
                "query `{}` has no negative examples",
                self.query_id
            )));
        }
        let mut all: Vec<&str> = vec![self.query_id.as_str()];
        all.extend(self.positive_ids.iter().map(String::as_str));
        all.extend(self.negative_ids.iter().map(String::as_str));
        let idx = store.resolve(&all)?;
        let mut seen = HashSet::new();
        for (id, i) in all.iter().zip(&idx) {
            if !seen.insert(*i) {
                return Err(Error::InvalidQuery(format!(
                    "id `{id}` appears more than once in query `{}`",
                    self.query_id
                )));
            }
        }
        let k = self.positive_ids.len();
        Ok(ResolvedQuery {
            query: idx[0],
            positives: idx[1..1 + k].to_vec(),
            negatives: idx[1 + k..].to_vec(),
        })
    }

    /// Keeps the first `k_pos` positives and `k_neg` negatives.
    pub fn truncated(&self, k_pos: usize, k_neg: usize) -> SearchQuery {
        SearchQuery {
            query_id: self.query_id.clone(),
            positive_ids: self.positive_ids.iter().take(k_pos).cloned().collect(),
            negative_ids: self.negative_ids.iter().take(k_neg).cloned().collect(),
        }
    }
}

/// Every (query, positive, negative) combination, positive-major.
pub fn build_query_triplets(store: &FeatureStore, q: &SearchQuery) -> Result<Vec<Triplet>> {
    Ok(resolved_triplets(&q.resolve(store)?))
}

fn resolved_triplets(r: &ResolvedQuery) -> Vec<Triplet> {
    let mut out = Vec::with_capacity(r.positives.len() * r.negatives.len());
    for &p in &r.positives {
        for &n in &r.negatives {
            out.push(Triplet::new(r.query, p, n));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub distance: f64,
}

/// Database ids ordered by non-decreasing distance, ties by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (r, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{:.6}", r + 1, e.id, e.distance);
        }
        out
    }
}

/// Ranks every row except `exclude` by reweighted distance to `query`.
pub fn rank_database(
    store: &FeatureStore,
    w: &WeightVector,
    query: usize,
    exclude: impl Fn(usize) -> bool,
) -> RankedResult {
    let xq = store.row(query);
    let mut scored: Vec<(f64, usize)> = (0..store.len())
        .filter(|&i| !exclude(i))
        .map(|i| (sqdist_unchecked(w.as_slice(), xq, store.row(i)), i))
        .collect();
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| store.id(a.1).cmp(store.id(b.1)))
    });
    RankedResult {
        entries: scored
            .into_iter()
            .map(|(distance, i)| RankedEntry {
                id: store.id(i).to_string(),
                distance,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub learned: LearnResult,
    pub ranking: RankedResult,
}

/// Learns a weight vector on all query triplets jointly and reranks the
/// database (every row except the query and its examples).
pub fn search(store: &FeatureStore, q: &SearchQuery, hp: &HyperParams) -> Result<SearchOutcome> {
    let r = q.resolve(store)?;
    let triplets = resolved_triplets(&r);
    let learned = learn(store, &triplets, hp, LossVariant::TwoMarginFull)?;
    let ranking = rank_database(store, &learned.w, r.query, |i| r.is_example(i));
    Ok(SearchOutcome { learned, ranking })
}

/// Plain squared-Euclidean ranking over the same database as [`search`].
pub fn baseline_search(store: &FeatureStore, q: &SearchQuery) -> Result<RankedResult> {
    let r = q.resolve(store)?;
    Ok(rank_database(
        store,
        &WeightVector::ones(store.dim()),
        r.query,
        |i| r.is_example(i),
    ))
}

/// Mean of precision-at-hit over every relevant item.
pub fn average_precision(ranking: &RankedResult, relevant: &HashSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, id) in ranking.ids().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Precision at ranks `1..=depth`; positions past the end count as misses.
pub fn precision_at(ranking: &RankedResult, relevant: &HashSet<String>, depth: usize) -> Vec<f64> {
    let mut hits = 0usize;
    let mut ids = ranking.ids();
    (1..=depth)
        .map(|r| {
            if let Some(id) = ids.next() {
                if relevant.contains(id) {
                    hits += 1;
                }
            }
            hits as f64 / r as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub map: f64,
    pub mean_precision: Vec<f64>,
    pub average_precisions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEval {
    pub ours: MethodMetrics,
    pub baseline: MethodMetrics,
    /// Queries whose learner did not meet its stopping rule.
    pub non_converged: usize,
}

/// Database rows sharing the query's attribute.
fn relevant_ids(store: &FeatureStore, r: &ResolvedQuery) -> Result<HashSet<String>> {
    let labels = store.require_labels()?;
    let attr = labels[r.query].attribute;
    Ok((0..store.len())
        .filter(|&i| !r.is_example(i) && labels[i].attribute == attr)
        .map(|i| store.id(i).to_string())
        .collect())
}

/// MAP and mean precision over `queries` for the learned reweighting and for
/// the all-ones baseline. Queries run in parallel and reduce in order.
pub fn evaluate_search(
    store: &FeatureStore,
    queries: &[SearchQuery],
    hp: &HyperParams,
    depth: usize,
) -> Result<SearchEval> {
    store.require_labels()?;
    if queries.is_empty() {
        return Err(Error::InvalidQuery("no queries to evaluate".into()));
    }
    struct PerQuery {
        ap: f64,
        prec: Vec<f64>,
        base_ap: f64,
        base_prec: Vec<f64>,
        converged: bool,
    }
    let results = par::map_slice(queries, |q| -> Result<PerQuery> {
        let r = q.resolve(store)?;
        let relevant = relevant_ids(store, &r)?;
        let out = search(store, q, hp)?;
        let base = baseline_search(store, q)?;
        Ok(PerQuery {
            ap: average_precision(&out.ranking, &relevant)?,
            prec: precision_at(&out.ranking, &relevant, depth),
            base_ap: average_precision(&base, &relevant)?,
            base_prec: precision_at(&base, &relevant, depth),
            converged: out.learned.converged,
        })
    });
    let results: Vec<PerQuery> = results.into_iter().collect::<Result<_>>()?;
    let n = results.len() as f64;
    let summarize = |aps: Vec<f64>, precs: Vec<&Vec<f64>>| {
        let mut mean_precision = vec![0.0; depth];
        for p in precs {
            for (m, v) in mean_precision.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        MethodMetrics {
            map: aps.iter().sum::<f64>() / n,
            mean_precision,
            average_precisions: aps,
        }
    };
    Ok(SearchEval {
        ours: summarize(
            results.iter().map(|r| r.ap).collect(),
            results.iter().map(|r| &r.prec).collect(),
        ),
        baseline: summarize(
            results.iter().map(|r| r.base_ap).collect(),
            results.iter().map(|r| &r.base_prec).collect(),
        ),
        non_converged: results.iter().filter(|r| !r.converged).count(),
    })
}

/// Draws `n` queries, each with `k_pos` positives (same attribute, other
/// category) and `k_neg` negatives (same category, other attribute).
/// Queries whose combination cannot supply enough examples are skipped.
pub fn sample_queries(
    store: &FeatureStore,
    n: usize,
    k_pos: usize,
    k_neg: usize,
    seed: u64,
) -> Result<Vec<SearchQuery>> {
    let labels = store.require_labels()?;
    let mut rng = rng::stream(seed, Stream::Queries);
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for &q in &order {
        if out.len() == n {
            break;
        }
        let lq = labels[q];
        let pos_pool: Vec<usize> = (0..store.len())
            .filter(|&i| labels[i].attribute == lq.attribute && labels[i].category != lq.category)
            .collect();
        let neg_pool: Vec<usize> = (0..store.len())
            .filter(|&i| labels[i].category == lq.category && labels[i].attribute != lq.attribute)
            .collect();
        if pos_pool.len() < k_pos || neg_pool.len() < k_neg {
            continue;
        }
        let pos: Vec<usize> = pos_pool.choose_multiple(&mut rng, k_pos).copied().collect();
        let neg: Vec<usize> = neg_pool.choose_multiple(&mut rng, k_neg).copied().collect();
        out.push(SearchQuery {
            query_id: store.id(q).to_string(),
            positive_ids: pos.iter().map(|&i| store.id(i).to_string()).collect(),
            negative_ids: neg.iter().map(|&i| store.id(i).to_string()).collect(),
        });
    }
    if out.len() < n {
        return Err(Error::Insufficient(format!(
            "only {} of {n} queries could be sampled",
            out.len()
        )));
    }
    Ok(out)
}

pub fn parse_queries(text: &str, path: &Path) -> Result<Vec<SearchQuery>> {
    let mut out = Vec::new();
    let mut cur: Option<SearchQuery> = None;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            out.extend(cur.take());
            continue;
        }
        let (tag, id) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno + 1, "expected TAG<TAB>id".into()))?;
        let id = id.trim().to_string();
        match tag.trim() {
            "QUERY" => {
                if cur.is_some() {
                    return Err(err(lineno + 1, "second QUERY line in one record".into()));
                }
                cur = Some(SearchQuery {
                    query_id: id,
                    positive_ids: Vec::new(),
                    negative_ids: Vec::new(),
                });
            }
            "POS" | "NEG" => {
                let q = cur
                    .as_mut()
                    .ok_or_else(|| err(lineno + 1, "POS/NEG before QUERY".into()))?;
                if tag.trim() == "POS" {
                    q.positive_ids.push(id);
                } else {
                    q.negative_ids.push(id);
                }
            }
            other => return Err(err(lineno + 1, format!("unknown tag `{other}`"))),
        }
    }
    out.extend(cur);
    Ok(out)
}

pub fn load_queries(path: &Path) -> Result<Vec<SearchQuery>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_queries(&text, path)
}

pub fn format_queries(queries: &[SearchQuery]) -> String {
    let mut out = String::new();
    for (i, q) in queries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "QUERY\t{}", q.query_id);
        for p in &q.positive_ids {
            let _ = writeln!(out, "POS\t{p}");
        }
        for n in &q.negative_ids {
            let _ = writeln!(out, "NEG\t{n}");
        }
    }
    out
}
