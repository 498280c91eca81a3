//! Unsupervised attribute discovery from category labels only.
//!
//! 1. Sample triplets: for each ordered category pair `(A, B)`, every
//!    `a in A`, `b in B` closer than `theta1` becomes a (query, positive)
//!    pair, completed by the `m` members of `A` furthest from `a`.
//! 2. Learn one weight vector per triplet.
//! 3. Complete-linkage clustering under
//!    `d(w_i, w_j) = max(S(w_i, t_j), S(w_j, t_i))`, stopping once the
//!    closest clusters are further apart than `theta2`; clusters smaller than
//!    `min_cluster_size` are discarded.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::learn;
use crate::loss::{check_dims, triplet_loss_unchecked, LossVariant};
use crate::par;
use crate::rng::{self, Stream};
use crate::store::FeatureStore;
use crate::types::{sqdist, HyperParams, Triplet, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletWeight {
    pub triplet: Triplet,
    pub w: WeightVector,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub triplets: Vec<Triplet>,
    /// Distinct (query, positive) pairs that passed the threshold.
    pub pairs: usize,
    /// Categories with fewer than `m + 1` members; all available negatives used.
    pub short_categories: Vec<u32>,
}

/// Samples discovery triplets. `cap` bounds the number of (query, positive)
/// pairs kept per ordered category pair, chosen with `seed`.
pub fn sample_triplets(
    store: &FeatureStore,
    hp: &HyperParams,
    cap: Option<usize>,
    seed: u64,
) -> Result<SampleReport> {
    let cats = store.by_category()?;
    if cats.len() < 2 {
        return Err(Error::Insufficient(format!(
            "discovery needs at least 2 categories, found {}",
            cats.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Triplets);
    let mut report = SampleReport::default();
    for (&ca, members_a) in &cats {
        if members_a.len() < hp.m + 1 {
            report.short_categories.push(ca);
        }
    }
    // Negatives depend only on the query; compute once per row.
    let mut negatives: HashMap<usize, Vec<usize>> = HashMap::new();
    for (&ca, members_a) in &cats {
        for (&cb, members_b) in &cats {
            if ca == cb {
                continue;
            }
            let mut pairs = Vec::new();
            for &a in members_a {
                for &b in members_b {
                    if sqdist(store.row(a), store.row(b)).sqrt() < hp.theta1 {
                        pairs.push((a, b));
                    }
                }
            }
            if let Some(cap) = cap {
                if pairs.len() > cap {
                    let mut keep = index::sample(&mut rng, pairs.len(), cap).into_vec();
                    keep.sort_unstable();
                    pairs = keep.into_iter().map(|i| pairs[i]).collect();
                }
            }
            report.pairs += pairs.len();
            for (a, b) in pairs {
                let negs = negatives
                    .entry(a)
                    .or_insert_with(|| furthest_in(store, a, members_a, hp.m));
                report
                    .triplets
                    .extend(negs.iter().map(|&n| Triplet::new(a, b, n)));
            }
        }
    }
    Ok(report)
}

/// Up to `m` members furthest from `query`, by descending distance then index.
fn furthest_in(store: &FeatureStore, query: usize, members: &[usize], m: usize) -> Vec<usize> {
    let xq = store.row(query);
    let mut cand: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&i| i != query)
        .map(|&i| (sqdist(xq, store.row(i)), i))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(m).map(|(_, i)| i).collect()
}

/// Learns one weight vector per triplet, in parallel, preserving order.
pub fn learn_weights(
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
) -> Result<Vec<TripletWeight>> {
    par::map_slice(triplets, |&t| {
        learn(store, &[t], hp, LossVariant::TwoMarginFull).map(|r| TripletWeight {
            triplet: t,
            w: r.w,
            converged: r.converged,
        })
    })
    .into_iter()
    .collect()
}

/// `max(S(w_i, t_j), S(w_j, t_i))`.
pub fn pair_distance(
    wi: &TripletWeight,
    wj: &TripletWeight,
    store: &FeatureStore,
    hp: &HyperParams,
) -> Result<f64> {
    check_dims(&wi.w, store)?;
    check_dims(&wj.w, store)?;
    wi.triplet.validate(store.len())?;
    wj.triplet.validate(store.len())?;
    Ok(pair_distance_unchecked(wi, wj, store, hp))
}

fn pair_distance_unchecked(
    wi: &TripletWeight,
    wj: &TripletWeight,
    store: &FeatureStore,
    hp: &HyperParams,
) -> f64 {
    let a = triplet_loss_unchecked(LossVariant::TwoMarginFull, wi.w.as_slice(), store, wj.triplet, hp);
    let b = triplet_loss_unchecked(LossVariant::TwoMarginFull, wj.w.as_slice(), store, wi.triplet, hp);
    a.max(b)
}

/// Symmetric distance matrix stored as its strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CondensedMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Self {
        let rows = par::map_range(n, |i| ((i + 1)..n).map(|j| f(i, j)).collect::<Vec<f64>>());
        CondensedMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.data[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.data[self.offset(j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let o = self.offset(a, b);
        self.data[o] = v;
    }
}

/// Largest triplet count clustered in one run; the distance matrix holds
/// about `n * n / 2` values.
pub const MAX_CLUSTER_TRIPLETS: usize = 16_384;

fn check_cluster_size(n: usize) -> Result<()> {
    if n > MAX_CLUSTER_TRIPLETS {
        return Err(Error::TooLarge(format!(
            "{n} triplets exceed the clustering limit of {MAX_CLUSTER_TRIPLETS}; \
             lower theta1 or cap the pairs per category pair"
        )));
    }
    Ok(())
}

/// Pairwise discovery distances, filled in parallel.
pub fn distance_matrix(
    weights: &[TripletWeight],
    store: &FeatureStore,
    hp: &HyperParams,
) -> Result<CondensedMatrix> {
    check_cluster_size(weights.len())?;
    for w in weights {
        check_dims(&w.w, store)?;
        w.triplet.validate(store.len())?;
    }
    Ok(CondensedMatrix::from_fn(weights.len(), |i, j| {
        pair_distance_unchecked(&weights[i], &weights[j], store, hp)
    }))
}

/// Complete-linkage agglomeration that stops once the closest pair of
/// clusters is further apart than `threshold`.
///
/// A cluster is identified by its smallest member index; at each step the
/// pair with the smallest distance merges, ties going to the lexicographically
/// lowest `(a, b)` pair. Returns clusters sorted by smallest member, members
/// ascending.
pub fn complete_linkage(dist: &CondensedMatrix, threshold: f64) -> Vec<Vec<usize>> {
    let n = dist.len();
    let mut d = dist.clone();
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // nn[a] = best b > a among active clusters.
    let scan = |d: &CondensedMatrix, active: &[bool], a: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (b, _) in active.iter().enumerate().skip(a + 1).filter(|(_, &on)| on) {
            let v = d.get(a, b);
            if best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, b));
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|a| scan(&d, &active, a)).collect();

    loop {
        let mut pick: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            if let Some((v, b)) = nn[a] {
                if pick.is_none_or(|(pv, _, _)| v < pv) {
                    pick = Some((v, a, b));
                }
            }
        }
        let Some((v, i, j)) = pick else { break };
        if v > threshold {
            break;
        }
        // merge j into i (i < j)
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        for (k, _) in active.iter().enumerate().filter(|(_, &on)| on) {
            if k != i {
                let merged = d.get(i, k).max(d.get(j, k));
                d.set(i, k, merged);
            }
        }
        nn[j] = None;
        nn[i] = scan(&d, &active, i);
        for a in 0..n {
            if a != i && active[a] {
                if let Some((_, b)) = nn[a] {
                    if b == i || b == j {
                        nn[a] = scan(&d, &active, a);
                    }
                }
            }
        }
    }

    let mut out: Vec<Vec<usize>> = (0..n)
        .filter(|&a| active[a])
        .map(|a| {
            let mut m = std::mem::take(&mut members[a]);
            m.sort_unstable();
            m
        })
        .collect();
    out.sort_by_key(|m| m[0]);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Kept clusters of triplet indices.
    pub clusters: Vec<Vec<usize>>,
    /// Triplet indices from clusters below the size floor.
    pub discarded: Vec<usize>,
}

/// Splits raw clusters into kept and discarded by `min_size`.
pub fn filter_clusters(raw: Vec<Vec<usize>>, min_size: usize) -> ClusterSet {
    let mut set = ClusterSet::default();
    for c in raw {
        if c.len() >= min_size {
            set.clusters.push(c);
        } else {
            set.discarded.extend(c);
        }
    }
    set.discarded.sort_unstable();
    set
}

pub fn complete_linkage_cluster(
    weights: &[TripletWeight],
    store: &FeatureStore,
    hp: &HyperParams,
) -> Result<ClusterSet> {
    let dist = distance_matrix(weights, store, hp)?;
    Ok(filter_clusters(
        complete_linkage(&dist, hp.theta2),
        hp.min_cluster_size,
    ))
}

/// The attribute a triplet entails: shared by query and positive, else the
/// positive's.
pub fn triplet_attribute(store: &FeatureStore, t: Triplet) -> Result<u32> {
    let labels = store.require_labels()?;
    let (lq, lp) = (labels[t.q], labels[t.p]);
    Ok(if lq.attribute == lp.attribute {
        lq.attribute
    } else {
        lp.attribute
    })
}

/// Modal attribute frequency over size, per kept cluster.
pub fn cluster_purity(
    clusters: &ClusterSet,
    weights: &[TripletWeight],
    store: &FeatureStore,
) -> Result<Vec<(u32, f64)>> {
    store.require_labels()?;
    clusters
        .clusters
        .iter()
        .map(|c| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &i in c {
                *counts.entry(triplet_attribute(store, weights[i].triplet)?).or_default() += 1;
            }
            let (attr, top) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(a, n)| (*a, *n))
                .unwrap_or((0, 0));
            Ok((attr, top as f64 / c.len().max(1) as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: usize,
    pub size: usize,
    /// `(query, positive, negative)` image ids.
    pub members: Vec<[String; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modal_attribute: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub triplets_sampled: usize,
    pub pairs_sampled: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub short_categories: Vec<u32>,
    pub kept_clusters: usize,
    pub discarded_triplets: usize,
    pub cluster_sizes: Vec<usize>,
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub sample: SampleReport,
    pub weights: Vec<TripletWeight>,
    pub clusters: ClusterSet,
}

/// Sampling, learning and clustering in one call.
pub fn discover(
    store: &FeatureStore,
    hp: &HyperParams,
    cap: Option<usize>,
    seed: u64,
) -> Result<Discovery> {
    let sample = sample_triplets(store, hp, cap, seed)?;
    check_cluster_size(sample.triplets.len())?;
    let weights = learn_weights(store, &sample.triplets, hp)?;
    let clusters = complete_linkage_cluster(&weights, store, hp)?;
    Ok(Discovery {
        sample,
        weights,
        clusters,
    })
}

impl Discovery {
    /// Summary plus per-cluster records; purity only when labels carry
    /// attributes.
    pub fn report(&self, store: &FeatureStore, with_purity: bool) -> Result<DiscoveryReport> {
        let purity = if with_purity {
            Some(cluster_purity(&self.clusters, &self.weights, store)?)
        } else {
            None
        };
        let converged = self.weights.iter().filter(|w| w.converged).count();
        let clusters = self
            .clusters
            .clusters
            .iter()
            .enumerate()
            .map(|(id, c)| ClusterRecord {
                id,
                size: c.len(),
                members: c
                    .iter()
                    .map(|&i| {
                        let t = self.weights[i].triplet;
                        [
                            store.id(t.q).to_string(),
                            store.id(t.p).to_string(),
                            store.id(t.n).to_string(),
                        ]
                    })
                    .collect(),
                purity: purity.as_ref().map(|p| p[id].1),
                modal_attribute: purity.as_ref().map(|p| p[id].0),
            })
            .collect();
        Ok(DiscoveryReport {
            triplets_sampled: self.sample.triplets.len(),
            pairs_sampled: self.sample.pairs,
            converged,
            convergence_rate: if self.weights.is_empty() {
                1.0
            } else {
                converged as f64 / self.weights.len() as f64
            },
            short_categories: self.sample.short_categories.clone(),
            kept_clusters: self.clusters.clusters.len(),
            discarded_triplets: self.clusters.discarded.len(),
            cluster_sizes: self.clusters.clusters.iter().map(Vec::len).collect(),
            clusters,
        })
    }
}
