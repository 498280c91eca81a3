//! Visual analogy answering: `I1 : I2 :: I3 : ?`.
//!
//! For every candidate `k` two weight vectors are learned, one on
//! `(I1, I2, k)` (category context) and one on `(I1, I3, k)` (property
//! context). The candidate score is how badly those weights separate the
//! held-out third image:
//! `S(w_c, I1, I2, I3) + S(w_p, I1, I3, I2)`, lower is better.
//!
//! The subtraction baseline ranks by the cosine between the normalized
//! differences `x1 - x2` and `x3 - xk`, higher is better.
//!
//! Questions file: `i1<TAB>i2<TAB>i3<TAB>correct;ids`. The answer pool is a
//! separate file with one id per line.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::learn;
use crate::loss::{triplet_loss_unchecked, LossVariant};
use crate::par;
use crate::rng::{self, Stream};
use crate::store::{FeatureStore, Label};
use crate::types::{HyperParams, Triplet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyQuestion {
    pub i1: String,
    pub i2: String,
    pub i3: String,
    pub answer_pool: Vec<String>,
    pub correct: Vec<String>,
    /// Attribute family of the varying property, when known.
    pub family: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<AnalogyQuestion>,
    pub answer_pool: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Sum of both context scores.
    Ours,
    /// Category-context score only.
    OursWc,
    /// Property-context score only.
    OursWp,
    /// Cosine of feature differences.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::OursWc, Method::OursWp, Method::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::OursWc => "ours-wc",
            Method::OursWp => "ours-wp",
            Method::Baseline => "baseline",
        }
    }

    pub fn needs_learning(self) -> bool {
        self != Method::Baseline
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param("method", format!("unknown method `{s}`")))
    }
}

/// Builds analogy questions from labels.
///
/// `answer_per_combo` images of every (category, attribute) combination go
/// to the shared answer pool; question images come from the rest. Each
/// instantiation type is an ordered choice of categories `c1 != c2` and
/// properties `p1 != p2` from one family, with all four combinations present;
/// `per_type` questions are drawn per type.
pub fn generate_questions(
    store: &FeatureStore,
    families: &[Vec<u32>],
    per_type: usize,
    answer_per_combo: usize,
    seed: u64,
) -> Result<QuestionSet> {
    let combos = store.by_combo()?;
    let mut rng = rng::stream(seed, Stream::Questions);

    let mut pool_of: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    let mut rest_of: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (label, rows) in &combos {
        if rows.len() <= answer_per_combo {
            return Err(Error::Insufficient(format!(
                "combination (category {}, attribute {}) has {} image(s); need more than {}",
                label.category,
                label.attribute,
                rows.len(),
                answer_per_combo
            )));
        }
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        let rest = rows.split_off(answer_per_combo);
        rows.sort_unstable();
        pool_of.insert(*label, rows);
        rest_of.insert(*label, rest);
    }
    let answer_pool: Vec<usize> = pool_of.values().flatten().copied().collect();
    let pool_ids: Vec<String> = answer_pool.iter().map(|&i| store.id(i).to_string()).collect();

    let categories: Vec<u32> = store.by_category()?.keys().copied().collect();
    let lab = |category, attribute| Label {
        category,
        attribute,
    };
    let mut questions = Vec::new();
    for (fi, family) in families.iter().enumerate() {
        for &p1 in family {
            for &p2 in family {
                if p1 == p2 {
                    continue;
                }
                for &c1 in &categories {
                    for &c2 in &categories {
                        if c1 == c2 {
                            continue;
                        }
                        let (Some(r1), Some(r2), Some(r3), Some(ans)) = (
                            rest_of.get(&lab(c1, p1)),
                            rest_of.get(&lab(c1, p2)),
                            rest_of.get(&lab(c2, p1)),
                            pool_of.get(&lab(c2, p2)),
                        ) else {
                            continue;
                        };
                        let correct: Vec<String> =
                            ans.iter().map(|&i| store.id(i).to_string()).collect();
                        for _ in 0..per_type {
                            let pick = |r: &Vec<usize>, rng: &mut _| {
                                store.id(*r.choose(rng).expect("non-empty")).to_string()
                            };
                            questions.push(AnalogyQuestion {
                                i1: pick(r1, &mut rng),
                                i2: pick(r2, &mut rng),
                                i3: pick(r3, &mut rng),
                                answer_pool: pool_ids.clone(),
                                correct: correct.clone(),
                                family: Some(fi),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(QuestionSet {
        questions,
        answer_pool: pool_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ResolvedQuestion {
    i1: usize,
    i2: usize,
    i3: usize,
}

impl AnalogyQuestion {
    fn resolve(&self, store: &FeatureStore) -> Result<(ResolvedQuestion, Vec<usize>)> {
        let idx = store.resolve(&[&self.i1, &self.i2, &self.i3])?;
        if idx[0] == idx[1] || idx[0] == idx[2] || idx[1] == idx[2] {
            return Err(Error::InvalidQuery("question images must be distinct".into()));
        }
        let pool = store.resolve(&self.answer_pool)?;
        if pool.iter().any(|i| idx.contains(i)) {
            return Err(Error::InvalidQuery(
                "question images may not be in the answer pool".into(),
            ));
        }
        let pool_set: HashSet<&str> = self.answer_pool.iter().map(String::as_str).collect();
        if let Some(c) = self.correct.iter().find(|c| !pool_set.contains(c.as_str())) {
            return Err(Error::InvalidQuery(format!(
                "correct answer `{c}` is not in the answer pool"
            )));
        }
        Ok((
            ResolvedQuestion {
                i1: idx[0],
                i2: idx[1],
                i3: idx[2],
            },
            pool,
        ))
    }
}

/// Both context scores for one candidate. `None` marks a diverged learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub wc: Option<f64>,
    pub wp: Option<f64>,
    pub converged: bool,
}

impl CandidateScore {
    /// `wc + weight_p * wp`; `None` if either side diverged.
    pub fn combined(&self, weight_p: f64) -> Option<f64> {
        Some(self.wc? + weight_p * self.wp?)
    }

    pub fn for_method(&self, method: Method) -> Option<f64> {
        match method {
            Method::Ours => self.combined(1.0),
            Method::OursWc => self.wc,
            Method::OursWp => self.wp,
            Method::Baseline => None,
        }
    }
}

fn score_resolved(
    store: &FeatureStore,
    q: ResolvedQuestion,
    k: usize,
    hp: &HyperParams,
) -> CandidateScore {
    let mut converged = true;
    let mut branch = |pos: usize, held_out: usize| -> Option<f64> {
        match learn(store, &[Triplet::new(q.i1, pos, k)], hp, LossVariant::TwoMarginFull) {
            Ok(r) => {
                converged &= r.converged;
                Some(triplet_loss_unchecked(
                    LossVariant::TwoMarginFull,
                    r.w.as_slice(),
                    store,
                    Triplet::new(q.i1, pos, held_out),
                    hp,
                ))
            }
            Err(_) => {
                converged = false;
                None
            }
        }
    };
    let wc = branch(q.i2, q.i3);
    let wp = branch(q.i3, q.i2);
    CandidateScore { wc, wp, converged }
}

/// Scores candidate `k` of `quest`; lower combined score is better.
pub fn score_candidate(
    store: &FeatureStore,
    quest: &AnalogyQuestion,
    k: &str,
    hp: &HyperParams,
) -> Result<CandidateScore> {
    let (q, _) = quest.resolve(store)?;
    if !quest.answer_pool.iter().any(|a| a == k) {
        return Err(Error::InvalidQuery(format!("candidate `{k}` is not in the answer pool")));
    }
    let k = store.resolve(&[k])?[0];
    Ok(score_resolved(store, q, k, hp))
}

fn normalized_diff(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let d: Vec<f64> = a.iter().zip(b).map(|(a, b)| a - b).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n > 0.0).then(|| d.into_iter().map(|v| v / n).collect())
}

fn baseline_resolved(store: &FeatureStore, q: ResolvedQuestion, k: usize) -> Option<f64> {
    let t12 = normalized_diff(store.row(q.i1), store.row(q.i2))?;
    let t3k = normalized_diff(store.row(q.i3), store.row(k))?;
    let dot: f64 = t12.iter().zip(&t3k).map(|(a, b)| a * b).sum();
    let n1 = t12.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = t3k.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Cosine between `T(I1, I2)` and `T(I3, Ik)`; higher is better. `None` when
/// either difference vanishes.
pub fn baseline_score(store: &FeatureStore, quest: &AnalogyQuestion, k: &str) -> Result<Option<f64>> {
    let (q, _) = quest.resolve(store)?;
    let k = store.resolve(&[k])?[0];
    Ok(baseline_resolved(store, q, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: String,
    /// `None` for excluded (diverged or degenerate) candidates, ranked last.
    pub score: Option<f64>,
}

/// Orders candidates best-first. `lower_is_better` flips the direction;
/// `None` scores go last and ties break by id.
fn order_candidates(
    store: &FeatureStore,
    pool: &[usize],
    scores: &[Option<f64>],
    lower_is_better: bool,
) -> Vec<RankedCandidate> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| {
        let key = |i: usize| scores[i].filter(|v| v.is_finite());
        let ord = match (key(a), key(b)) {
            (Some(x), Some(y)) if lower_is_better => x.total_cmp(&y),
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        ord.then_with(|| store.id(pool[a]).cmp(store.id(pool[b])))
    });
    idx.into_iter()
        .map(|i| RankedCandidate {
            id: store.id(pool[i]).to_string(),
            score: scores[i],
        })
        .collect()
}

/// Per-question rankings under each requested method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRankings {
    pub question: usize,
    pub rankings: BTreeMap<Method, Vec<RankedCandidate>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalogyDiagnostics {
    /// Candidates whose learner diverged.
    pub diverged: usize,
    /// Candidates whose learner hit the iteration budget.
    pub non_converged: usize,
    /// Candidates the baseline could not score.
    pub baseline_excluded: usize,
}

/// Ranks every question's answer pool under each method. Learning runs once
/// per (question, candidate) and is shared by all learned methods.
pub fn rank_questions(
    store: &FeatureStore,
    questions: &[AnalogyQuestion],
    hp: &HyperParams,
    methods: &[Method],
) -> Result<(Vec<QuestionRankings>, AnalogyDiagnostics)> {
    let resolved: Vec<(ResolvedQuestion, Vec<usize>)> = questions
        .iter()
        .map(|q| q.resolve(store))
        .collect::<Result<_>>()?;
    let learned_needed = methods.iter().any(|m| m.needs_learning());

    let jobs: Vec<(usize, usize)> = resolved
        .iter()
        .enumerate()
        .flat_map(|(qi, (_, pool))| (0..pool.len()).map(move |ci| (qi, ci)))
        .collect();
    let scores: Vec<Option<CandidateScore>> = if learned_needed {
        par::map_slice(&jobs, |&(qi, ci)| {
            let (rq, pool) = &resolved[qi];
            Some(score_resolved(store, *rq, pool[ci], hp))
        })
    } else {
        vec![None; jobs.len()]
    };

    let mut diag = AnalogyDiagnostics::default();
    let mut out = Vec::with_capacity(questions.len());
    let mut offset = 0;
    for (qi, (rq, pool)) in resolved.iter().enumerate() {
        let these = &scores[offset..offset + pool.len()];
        offset += pool.len();
        if learned_needed {
            for s in these.iter().flatten() {
                if s.wc.is_none() || s.wp.is_none() {
                    diag.diverged += 1;
                } else if !s.converged {
                    diag.non_converged += 1;
                }
            }
        }
        let mut rankings = BTreeMap::new();
        for &m in methods {
            let ranked = if m == Method::Baseline {
                let b: Vec<Option<f64>> =
                    pool.iter().map(|&k| baseline_resolved(store, *rq, k)).collect();
                diag.baseline_excluded += b.iter().filter(|v| v.is_none()).count();
                order_candidates(store, pool, &b, false)
            } else {
                let s: Vec<Option<f64>> = these
                    .iter()
                    .map(|c| c.and_then(|c| c.for_method(m)))
                    .collect();
                order_candidates(store, pool, &s, true)
            };
            rankings.insert(m, ranked);
        }
        out.push(QuestionRankings {
            question: qi,
            rankings,
        });
    }
    Ok((out, diag))
}

/// `|correct in top r| / |correct|` for `r = 1..=depth`.
pub fn recall_curve(ranking: &[RankedCandidate], correct: &[String], depth: usize) -> Vec<f64> {
    let correct: HashSet<&str> = correct.iter().map(String::as_str).collect();
    let total = correct.len().max(1) as f64;
    let mut hits = 0usize;
    (0..depth)
        .map(|r| {
            if let Some(c) = ranking.get(r) {
                if correct.contains(c.id.as_str()) {
                    hits += 1;
                }
            }
            hits as f64 / total
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyEval {
    /// Mean recall at ranks `1..=depth` per method.
    pub mean_recall: BTreeMap<Method, Vec<f64>>,
    pub diagnostics: AnalogyDiagnostics,
    pub rankings: Vec<QuestionRankings>,
}

impl AnalogyEval {
    pub fn recall_at(&self, method: Method, r: usize) -> Option<f64> {
        self.mean_recall.get(&method)?.get(r.checked_sub(1)?).copied()
    }
}

/// Mean recall curves over `questions` for each method.
pub fn evaluate_analogy(
    store: &FeatureStore,
    questions: &[AnalogyQuestion],
    hp: &HyperParams,
    methods: &[Method],
    depth: usize,
) -> Result<AnalogyEval> {
    if questions.is_empty() {
        return Err(Error::InvalidQuery("no analogy questions".into()));
    }
    if let Some(q) = questions.iter().find(|q| q.correct.is_empty()) {
        return Err(Error::InvalidQuery(format!(
            "question {}:{}::{} has no correct answers",
            q.i1, q.i2, q.i3
        )));
    }
    let (rankings, diagnostics) = rank_questions(store, questions, hp, methods)?;
    let n = questions.len() as f64;
    let mut mean_recall = BTreeMap::new();
    for &m in methods {
        let mut acc = vec![0.0; depth];
        for (qr, q) in rankings.iter().zip(questions) {
            for (a, v) in acc.iter_mut().zip(recall_curve(&qr.rankings[&m], &q.correct, depth)) {
                *a += v / n;
            }
        }
        mean_recall.insert(m, acc);
    }
    Ok(AnalogyEval {
        mean_recall,
        diagnostics,
        rankings,
    })
}

pub fn format_questions(questions: &[AnalogyQuestion]) -> String {
    let mut out = String::new();
    for q in questions {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", q.i1, q.i2, q.i3, q.correct.join(";"));
    }
    out
}

/// Parses a questions file; every question shares `answer_pool`.
pub fn parse_questions(text: &str, answer_pool: &[String], path: &Path) -> Result<Vec<AnalogyQuestion>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 4 fields, found {}", f.len()),
            });
        }
        out.push(AnalogyQuestion {
            i1: f[0].to_string(),
            i2: f[1].to_string(),
            i3: f[2].to_string(),
            answer_pool: answer_pool.to_vec(),
            correct: f[3]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            family: None,
        });
    }
    Ok(out)
}

pub fn load_questions(questions: &Path, pool: &Path) -> Result<Vec<AnalogyQuestion>> {
    let pool_text = fs::read_to_string(pool).map_err(|e| Error::io(pool, e))?;
    let pool: Vec<String> = pool_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let text = fs::read_to_string(questions).map_err(|e| Error::io(questions, e))?;
    parse_questions(&text, &pool, questions)
}

pub fn format_rankings(questions: &[AnalogyQuestion], rankings: &[QuestionRankings]) -> String {
    let mut out = String::new();
    for (qr, q) in rankings.iter().zip(questions) {
        for (m, ranked) in &qr.rankings {
            let _ = write!(out, "{}\t{}\t{}\t{}\t{}", qr.question, m.name(), q.i1, q.i2, q.i3);
            for c in ranked {
                match c.score {
                    Some(s) => {
                        let _ = write!(out, "\t{}:{:.6}", c.id, s);
                    }
                    None => {
                        let _ = write!(out, "\t{}:NA", c.id);
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}
