//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ctxsim::analogy::{evaluate_analogy, generate_questions, Method};
use ctxsim::discovery::{
    cluster_purity, complete_linkage, distance_matrix, filter_clusters, learn_weights,
    sample_triplets, CondensedMatrix,
};
use ctxsim::search::{evaluate_search, sample_queries, SearchQuery, DEFAULT_PRECISION_DEPTH};
use ctxsim::synthgen::{generate, GenSpec, GroupMap};
use ctxsim::{
    gradient, learn, reg_loss, triplet_loss, FeatureStore, HyperParams, LossVariant,
    Triplet, WeightVector,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const VARIANTS: [LossVariant; 3] = [
    LossVariant::SingleMargin,
    LossVariant::TwoMargin,
    LossVariant::TwoMarginFull,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient matches central differences",
            limit: Some(Duration::from_secs(10)),
            run: gradient_check,
        },
        Criterion {
            id: 2,
            name: "hand-computed loss values",
            limit: None,
            run: loss_oracles,
        },
        Criterion {
            id: 3,
            name: "learner vs grid search",
            limit: Some(Duration::from_secs(30)),
            run: learner_vs_grid,
        },
        Criterion {
            id: 4,
            name: "search beats baseline, MAP grows with k",
            limit: Some(Duration::from_secs(120)),
            run: search_directional,
        },
        Criterion {
            id: 5,
            name: "regularizer ablation",
            limit: Some(Duration::from_secs(180)),
            run: lambda_ablation,
        },
        Criterion {
            id: 6,
            name: "analogy recall@10",
            limit: Some(Duration::from_secs(300)),
            run: analogy_directional,
        },
        Criterion {
            id: 7,
            name: "discovery purity and linkage oracle",
            limit: Some(Duration::from_secs(300)),
            run: discovery_purity,
        },
        Criterion {
            id: 8,
            name: "invariants encoded as property tests",
            limit: None,
            run: invariant_coverage,
        },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let out = (c.run)();
        let took = start.elapsed();
        let in_time = c.limit.is_none_or(|l| took <= l);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = match c.limit {
            Some(l) => format!(" / limit {}s", l.as_secs()),
            None => String::new(),
        };
        println!(
            "criterion {} {}: {} :: {} [{:.2}s{}]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            out.detail,
            took.as_secs_f64(),
            limit
        );
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failed,
        failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Independent reference implementations.

fn oracle_sqdist(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..w.len() {
        let d = w[j] * a[j] - w[j] * b[j];
        s += d * d;
    }
    s
}

fn oracle_total(
    variant: LossVariant,
    w: &[f64],
    rows: &[Vec<f64>],
    triplets: &[Triplet],
    hp: &HyperParams,
) -> f64 {
    let relu = |z: f64| if z > 0.0 { z } else { 0.0 };
    let mut lt = 0.0;
    let mut lr = 0.0;
    for t in triplets {
        let (q, p, n) = (&rows[t.q], &rows[t.p], &rows[t.n]);
        let dqp = oracle_sqdist(w, q, p);
        let dqn = oracle_sqdist(w, q, n);
        let dpn = oracle_sqdist(w, p, n);
        lt += match variant {
            LossVariant::SingleMargin => relu(dqp - dqn + hp.alpha),
            LossVariant::TwoMargin => relu(dqp - hp.alpha_p) + relu(hp.alpha_n - dqn),
            LossVariant::TwoMarginFull => {
                relu(dqp - hp.alpha_p) + relu(hp.alpha_n - dqn) + relu(hp.alpha_n - dpn)
            }
        };
        for x in [q, p, n] {
            let norm: f64 = x.iter().zip(w).map(|(x, w)| (w * x) * (w * x)).sum();
            lr += (norm - 1.0) * (norm - 1.0);
        }
    }
    lt + hp.lambda * lr
}

/// Smallest distance of any hinge argument from its kink.
fn kink_margin(
    variant: LossVariant,
    w: &[f64],
    rows: &[Vec<f64>],
    triplets: &[Triplet],
    hp: &HyperParams,
) -> f64 {
    let mut m = f64::INFINITY;
    for t in triplets {
        let (q, p, n) = (&rows[t.q], &rows[t.p], &rows[t.n]);
        let dqp = oracle_sqdist(w, q, p);
        let dqn = oracle_sqdist(w, q, n);
        let dpn = oracle_sqdist(w, p, n);
        let args: Vec<f64> = match variant {
            LossVariant::SingleMargin => vec![dqp - dqn + hp.alpha],
            LossVariant::TwoMargin => vec![dqp - hp.alpha_p, hp.alpha_n - dqn],
            LossVariant::TwoMarginFull => {
                vec![dqp - hp.alpha_p, hp.alpha_n - dqn, hp.alpha_n - dpn]
            }
        };
        for z in args {
            m = m.min(z.abs());
        }
    }
    m
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn store_of(rows: &[Vec<f64>]) -> FeatureStore {
    let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
    FeatureStore::from_rows(ids, rows.to_vec()).expect("valid rows")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// 1

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let eps = 1e-5;
    let dims = [4, 16, 64];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..100 {
        let d = dims[i % 3];
        let variant = VARIANTS[(i / 3) % 3];
        let hp = HyperParams {
            lambda: [0.0, 1.0][(i / 9) % 2],
            ..HyperParams::default()
        };
        let (rows, triplets, w) = loop {
            let rows = random_rows(&mut rng, 5, d);
            let triplets = vec![Triplet::new(0, 1, 2), Triplet::new(3, 4, 0)];
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.8)).collect();
            if kink_margin(variant, &w, &rows, &triplets, &hp) > 1e-3 {
                break (rows, triplets, w);
            }
        };
        let store = store_of(&rows);
        let rows: Vec<Vec<f64>> = store.rows().map(<[f64]>::to_vec).collect();
        let g = gradient(variant, &WeightVector(w.clone()), &store, &triplets, &hp)
            .expect("gradient");
        let mut fd = vec![0.0; d];
        for j in 0..d {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[j] += eps;
            lo[j] -= eps;
            fd[j] = (oracle_total(variant, &hi, &rows, &triplets, &hp)
                - oracle_total(variant, &lo, &rows, &triplets, &hp))
                / (2.0 * eps);
        }
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let scale = norm(&g).max(norm(&fd)).max(1e-8);
        worst = worst.max(norm(&diff) / scale);
        checked += 1;
    }
    outcome(
        worst < 1e-4,
        format!("{checked} instances, worst relative error {worst:.2e} (< 1e-4)"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn loss_oracles() -> Outcome {
    let hp = HyperParams::default();
    let t = Triplet::new(0, 1, 2);
    let ones = WeightVector::ones(2);
    let s = |rows: Vec<Vec<f64>>| store_of(&rows);
    let e1 = s(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    let e2 = s(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
    let e3 = s(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
    let e4 = s(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
    let cases = [
        (
            "two-margin full, coincident q/p",
            triplet_loss(LossVariant::TwoMarginFull, &ones, &e1, t, &hp),
            0.0,
        ),
        (
            "two-margin full, n on q",
            triplet_loss(LossVariant::TwoMarginFull, &ones, &e2, t, &hp),
            3.5,
        ),
        (
            "regularizer, w=(2,2), identical rows",
            reg_loss(&WeightVector(vec![2.0, 2.0]), &e4, t),
            27.0,
        ),
        (
            "regularizer, w=(0,0)",
            reg_loss(&WeightVector(vec![0.0, 0.0]), &e2, t),
            3.0,
        ),
        (
            "single margin, equal distances",
            triplet_loss(LossVariant::SingleMargin, &ones, &e3, t, &hp),
            1.0,
        ),
    ];
    let mut bad = Vec::new();
    let mut values = Vec::new();
    for (name, got, want) in cases {
        match got {
            Ok(v) if (v - want).abs() <= 1e-12 => values.push(format!("{v}")),
            Ok(v) => bad.push(format!("{name}: {v} != {want}")),
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    if bad.is_empty() {
        outcome(true, format!("values {} within 1e-12", values.join(", ")))
    } else {
        outcome(false, bad.join("; "))
    }
}

// ---------------------------------------------------------------------------
// 3

fn learner_vs_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let hp = HyperParams::default();
    let grid: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
    let t = [Triplet::new(0, 1, 2)];
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for _ in 0..20 {
        let store = store_of(&random_rows(&mut rng, 3, 3));
        let rows: Vec<Vec<f64>> = store.rows().map(<[f64]>::to_vec).collect();
        let mut best = f64::INFINITY;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    best = best.min(oracle_total(
                        LossVariant::TwoMarginFull,
                        &[a, b, c],
                        &rows,
                        &t,
                        &hp,
                    ));
                }
            }
        }
        let r = learn(&store, &t, &hp, LossVariant::TwoMarginFull).expect("learn");
        let reported = r.final_loss.total;
        let recomputed = oracle_total(LossVariant::TwoMarginFull, &r.w.0, &rows, &t, &hp);
        if (reported - recomputed).abs() > 1e-9 * recomputed.max(1.0) {
            return outcome(
                false,
                format!("reported loss {reported} disagrees with oracle {recomputed}"),
            );
        }
        let gap = reported - best;
        worst = worst.max(gap);
        if gap > 1e-3 {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("20 triplets, worst (learner - grid best) {worst:.2e} (<= 1e-3), {bad} over"),
    )
}

// ---------------------------------------------------------------------------
// 4, 5

fn benchmark() -> (FeatureStore, GroupMap) {
    generate(&GenSpec::default()).expect("default spec")
}

fn search_queries(store: &FeatureStore) -> Vec<SearchQuery> {
    sample_queries(store, 40, 5, 5, SEED).expect("queries")
}

fn map_at(store: &FeatureStore, queries: &[SearchQuery], k: usize, lambda: f64) -> (f64, f64) {
    let hp = HyperParams {
        lambda,
        ..HyperParams::default()
    };
    let q: Vec<SearchQuery> = queries.iter().map(|q| q.truncated(k, k)).collect();
    let e = evaluate_search(store, &q, &hp, DEFAULT_PRECISION_DEPTH).expect("search eval");
    (e.ours.map, e.baseline.map)
}

fn search_directional() -> Outcome {
    let (store, _) = benchmark();
    let queries = search_queries(&store);
    let (m1, _) = map_at(&store, &queries, 1, 1.0);
    let (m3, _) = map_at(&store, &queries, 3, 1.0);
    let (m5, base) = map_at(&store, &queries, 5, 1.0);
    let gain = m5 - base;
    let pass = gain >= 0.10 && m5 >= m3 - 0.02 && m3 >= m1 - 0.02;
    outcome(
        pass,
        format!(
            "baseline {base:.3}, ours k=1 {m1:.3}, k=3 {m3:.3}, k=5 {m5:.3}; \
             gain {gain:.3} (>= 0.10), k-monotone within 0.02"
        ),
    )
}

fn lambda_ablation() -> Outcome {
    let (store, _) = benchmark();
    let queries = search_queries(&store);
    let (reg5, _) = map_at(&store, &queries, 5, 1.0);
    let (free5, _) = map_at(&store, &queries, 5, 0.0);
    let (free1, _) = map_at(&store, &queries, 1, 0.0);
    let gap = reg5 - free5;
    let pass = gap >= 0.05 && free5 <= free1 + 0.02;
    outcome(
        pass,
        format!(
            "k=5: MAP(lambda=1) {reg5:.3} - MAP(lambda=0) {free5:.3} = {gap:.3} (>= 0.05); \
             lambda=0: k=5 {free5:.3} vs k=1 {free1:.3} (k=5 <= k=1 + 0.02)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6

fn analogy_directional() -> Outcome {
    let (store, groups) = benchmark();
    let set = generate_questions(&store, &groups.families, 3, 3, SEED).expect("questions");
    let mut questions = set.questions.clone();
    questions.shuffle(&mut ChaCha8Rng::seed_from_u64(SEED));
    questions.truncate(100);
    if questions.len() < 100 || set.answer_pool.len() < 40 {
        return outcome(
            false,
            format!(
                "{} questions, pool {} (need 100 and >= 40)",
                questions.len(),
                set.answer_pool.len()
            ),
        );
    }
    if let Some(q) = questions.iter().find(|q| q.correct.len() < 2) {
        return outcome(false, format!("question with {} correct answers", q.correct.len()));
    }
    let hp = HyperParams::default();
    let depth = set.answer_pool.len();
    let all = evaluate_analogy(&store, &questions, &hp, &Method::ALL, depth).expect("analogy");
    let action: Vec<_> = questions.iter().filter(|q| q.family == Some(0)).cloned().collect();
    let fam = evaluate_analogy(&store, &action, &hp, &Method::ALL, depth).expect("analogy");
    let r = |e: &ctxsim::analogy::AnalogyEval, m| e.recall_at(m, 10).expect("depth >= 10");

    // Cross-check the library's recall@10 against the emitted rankings.
    let mut ours_check = 0.0;
    for qr in &all.rankings {
        let q = &questions[qr.question];
        let top: Vec<&str> = qr.rankings[&Method::Ours]
            .iter()
            .take(10)
            .map(|c| c.id.as_str())
            .collect();
        let hits = q.correct.iter().filter(|c| top.contains(&c.as_str())).count();
        ours_check += hits as f64 / q.correct.len() as f64 / questions.len() as f64;
    }
    if (ours_check - r(&all, Method::Ours)).abs() > 1e-12 {
        return outcome(false, "recall@10 disagrees with the emitted rankings");
    }

    let (ours, base) = (r(&all, Method::Ours), r(&all, Method::Baseline));
    let (f_ours, f_wc, f_wp) = (
        r(&fam, Method::Ours),
        r(&fam, Method::OursWc),
        r(&fam, Method::OursWp),
    );
    let pass = ours > base && f_ours >= f_wc - 0.02 && f_ours >= f_wp - 0.02;
    outcome(
        pass,
        format!(
            "100 questions, pool {}: ours {ours:.3} vs baseline {base:.3} (ours > baseline); \
             action-like family ({} q): ours {f_ours:.3}, w^c only {f_wc:.3}, \
             w^p only {f_wp:.3} (ours >= each - 0.02)",
            set.answer_pool.len(),
            action.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

/// Straightforward agglomeration over explicit cluster lists, recomputing
/// every inter-cluster distance at every step.
fn brute_force_linkage(d: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut link = f64::NEG_INFINITY;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        link = link.max(d[i][j]);
                    }
                }
                let key = (clusters[a][0], clusters[b][0]);
                let better = match best {
                    None => true,
                    Some((v, ba, bb)) => {
                        link < v || (link == v && key < (clusters[ba][0], clusters[bb][0]))
                    }
                };
                if better {
                    best = Some((link, a, b));
                }
            }
        }
        match best {
            Some((v, a, b)) if v <= threshold => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort_unstable();
                clusters.sort_by_key(|c| c[0]);
            }
            _ => break,
        }
    }
    clusters
}

fn discovery_purity() -> Outcome {
    let (store, groups) = benchmark();
    // Sweep, in order; the first setting that gives every family a pure
    // kept cluster is selected.
    const CAP: usize = 30;
    let theta1s = [1.0, 1.05, 1.1];
    let theta2s = [0.5, 1.0, 1.5, 2.0];
    let mut chosen = None;
    let mut tried = Vec::new();
    'sweep: for &theta1 in &theta1s {
        let hp = HyperParams {
            theta1,
            ..HyperParams::default()
        };
        let sample = sample_triplets(&store, &hp, Some(CAP), SEED).expect("sample");
        if sample.triplets.is_empty() {
            tried.push(format!("theta1 {theta1}: 0 triplets"));
            continue;
        }
        let weights = learn_weights(&store, &sample.triplets, &hp).expect("weights");
        let dist = distance_matrix(&weights, &store, &hp).expect("distances");
        for &theta2 in &theta2s {
            let clusters = filter_clusters(complete_linkage(&dist, theta2), hp.min_cluster_size);
            let purity = cluster_purity(&clusters, &weights, &store).expect("purity");
            let mut best = vec![0.0f64; groups.families.len()];
            for &(attr, p) in &purity {
                if let Some(f) = groups.family_of(attr) {
                    best[f] = best[f].max(p);
                }
            }
            tried.push(format!("({theta1}, {theta2})"));
            if best.iter().all(|&p| p >= 0.8) {
                chosen = Some((theta1, theta2, sample.triplets.len(), clusters.clusters.len(), best, dist.clone()));
                break 'sweep;
            }
        }
    }
    let Some((theta1, theta2, n_triplets, kept, best, dist)) = chosen else {
        return outcome(false, format!("no setting reached purity 0.8 per family; tried {}", tried.join(" ")));
    };

    // Linkage oracle on 12 triplets spread over the sample.
    let n = dist.len();
    let pick: Vec<usize> = (0..12).map(|i| i * n / 12).collect();
    let full: Vec<Vec<f64>> = pick
        .iter()
        .map(|&i| pick.iter().map(|&j| dist.get(i, j)).collect())
        .collect();
    let sub = CondensedMatrix::from_fn(12, |i, j| full[i][j]);
    let mut values: Vec<f64> = (0..12)
        .flat_map(|i| ((i + 1)..12).map(move |j| (i, j)))
        .map(|(i, j)| full[i][j])
        .collect();
    values.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]
        .iter()
        .map(|q| values[((values.len() - 1) as f64 * q) as usize])
        .collect();
    thresholds.push(theta2);
    let mut mismatches = 0;
    for &t in &thresholds {
        if complete_linkage(&sub, t) != brute_force_linkage(&full, t) {
            mismatches += 1;
        }
    }
    let families: BTreeMap<usize, String> = best
        .iter()
        .enumerate()
        .map(|(f, p)| (f, format!("{p:.3}")))
        .collect();
    outcome(
        mismatches == 0,
        format!(
            "sweep theta1 {theta1s:?} x theta2 {theta2s:?}, cap {CAP} pairs/category pair, \
             seed {SEED}; selected theta1 {theta1}, theta2 {theta2}: {n_triplets} triplets, \
             {kept} kept clusters, best purity per family {families:?} (>= 0.8); \
             12-triplet linkage oracle agrees at {}/{} thresholds",
            thresholds.len() - mismatches,
            thresholds.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

/// Invariant bullets and the property tests that encode them.
const INVARIANTS: &[(&str, &str, &str)] = &[
    ("core", "distance symmetry", "reweighted_distance_is_symmetric"),
    ("core", "self distance is zero", "self_distance_is_zero"),
    ("core", "all-ones equals naive squared euclidean", "unit_weights_match_naive_sqdist"),
    ("core", "scaling w scales distance by s^2", "scaling_weights_scales_distance_quadratically"),
    ("core", "binary save/load round trip", "binary_round_trip_is_bit_exact"),
    ("loss", "components nonnegative", "loss_components_are_nonnegative"),
    ("loss", "triplet permutation invariance", "total_loss_ignores_triplet_order"),
    ("loss", "full >= two-margin", "full_loss_dominates_two_margin"),
    ("loss", "gradient vs finite differences", "gradient_matches_finite_differences"),
    ("loss", "sign-flip symmetry", "sign_flip_leaves_losses_unchanged"),
    ("loss", "score swap symmetry", "score_is_symmetric_in_query_and_positive"),
    ("learner", "monotonicity guard", "final_loss_never_exceeds_initial"),
    ("learner", "determinism", "learning_is_deterministic"),
    ("learner", "degenerate triplet exhausts budget", "degenerate_triplet_runs_to_budget"),
    ("learner", "zero learning rate keeps ones", "zero_learning_rate_keeps_ones"),
    ("search", "ranking is a permutation", "ranking_is_permutation_of_database"),
    ("search", "monotone transform invariance", "ranking_invariant_under_sqrt"),
    ("search", "AP bounds and perfect ranking", "average_precision_bounds"),
    ("search", "random labels give chance MAP", "shuffled_labels_give_chance_map"),
    ("analogy", "pool order invariance", "scores_ignore_pool_order"),
    ("analogy", "baseline in [-1, 1]", "baseline_score_is_a_cosine"),
    ("analogy", "zero w^p weight equals w^c ablation", "zero_wp_weight_matches_wc_ranking"),
    ("analogy", "scoring is pure", "analogy_rankings_repeat_exactly"),
    ("discovery", "pair distance symmetric, bounded by self scores", "pair_distance_symmetric_and_bounded"),
    ("discovery", "linkage permutation invariance", "linkage_invariant_under_permutation"),
    ("discovery", "theta2 coarsening is monotone", "raising_theta2_never_adds_clusters"),
    ("discovery", "sampled triplets respect categories", "sampled_triplets_respect_categories"),
    ("synthgen", "attribute block separates attributes", "attribute_block_separates_attributes"),
    ("synthgen", "unit norm rows and consistent labels", "rows_unit_norm_and_labels_consistent"),
    ("synthgen", "same seed regenerates bit-identically", "same_seed_is_bit_identical"),
    ("core", "parallel degree does not change results", "thread_count_does_not_change_results"),
    ("cli", "deterministic across parallelism", "subcommands_deterministic_across_parallelism"),
    ("cli", "failure marker on error", "failed_run_leaves_marker"),
];

fn invariant_coverage() -> Outcome {
    let sources = [
        include_str!("properties_core.rs"),
        include_str!("properties_loss.rs"),
        include_str!("properties_learner.rs"),
        include_str!("properties_search.rs"),
        include_str!("properties_analogy.rs"),
        include_str!("properties_discovery.rs"),
        include_str!("properties_synthgen.rs"),
        include_str!("../../cli/tests/cli.rs"),
    ];
    let missing: Vec<String> = INVARIANTS
        .iter()
        .filter(|(_, _, test)| {
            let needle = format!("fn {test}(");
            !sources.iter().any(|s| s.contains(&needle))
        })
        .map(|(m, what, test)| format!("{m}: {what} ({test})"))
        .collect();
    if missing.is_empty() {
        outcome(
            true,
            format!("{} invariants mapped to property tests", INVARIANTS.len()),
        )
    } else {
        outcome(false, format!("missing: {}", missing.join("; ")))
    }
}

