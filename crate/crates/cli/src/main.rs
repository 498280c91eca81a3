use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::Serialize;

use ctxsim::analogy::{self, AnalogyQuestion, Method};
use ctxsim::discovery;
use ctxsim::rng::{self, Stream};
use ctxsim::search::{self, SearchQuery, DEFAULT_PRECISION_DEPTH};
use ctxsim::synthgen::{self, GenSpec, GroupMap};
use ctxsim::{par, Error, FeatureStore, Format, HyperParams};

/// Written into the output directory while a run is in progress and left
/// behind, with the error, when it fails.
const FAILURE_MARKER: &str = "FAILED";

#[derive(Parser, Debug)]
#[command(name = "ctxsim", version, about = "Contextual similarity on image feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic feature store with planted structure.
    Gen(GenArgs),
    /// Example-driven search: learn one reweighting per query and rerank.
    Search(SearchArgs),
    /// Rank analogy answer pools and report recall curves.
    Analogy(AnalogyArgs),
    /// Sample triplets, learn their weights and cluster them.
    Discover(DiscoverArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Feature file (`.csv` or the binary format).
    #[arg(long)]
    features: PathBuf,
    /// Labels TSV: `id<TAB>category<TAB>attribute`.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct HpArgs {
    #[arg(long)]
    alpha_p: Option<f64>,
    #[arg(long)]
    alpha_n: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    min_cluster: Option<usize>,
}

impl HpArgs {
    fn resolve(&self) -> Result<HyperParams> {
        let d = HyperParams::default();
        let hp = HyperParams {
            alpha_p: self.alpha_p.unwrap_or(d.alpha_p),
            alpha_n: self.alpha_n.unwrap_or(d.alpha_n),
            lambda: self.lambda.unwrap_or(d.lambda),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tol: self.tol.unwrap_or(d.tol),
            theta1: self.theta1.unwrap_or(d.theta1),
            theta2: self.theta2.unwrap_or(d.theta2),
            m: self.m.unwrap_or(d.m),
            min_cluster_size: self.min_cluster.unwrap_or(d.min_cluster_size),
            ..d
        };
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    #[arg(long, default_value_t = 4)]
    attributes: usize,
    #[arg(long, default_value_t = 20)]
    per_combo: usize,
    #[arg(long, default_value_t = 16)]
    dim_category: usize,
    #[arg(long, default_value_t = 16)]
    dim_attribute: usize,
    #[arg(long, default_value_t = 32)]
    dim_noise: usize,
    #[arg(long, default_value_t = 0.15)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 2)]
    families: usize,
    /// Leave out a combination, as `CATEGORY:ATTRIBUTE`. Repeatable.
    #[arg(long = "drop", value_parser = parse_combo)]
    dropped: Vec<(u32, u32)>,
    /// Write features as CSV instead of the binary format.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hp: HpArgs,
    /// Query records (`QUERY`/`POS`/`NEG` lines, blank-line separated).
    #[arg(long, conflicts_with = "sample")]
    queries: Option<PathBuf>,
    /// Draw this many queries from the labels instead of reading a file.
    #[arg(long, requires = "labels")]
    sample: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k_pos: usize,
    #[arg(long, default_value_t = 5)]
    k_neg: usize,
    /// Mean precision is reported at ranks 1..=depth.
    #[arg(long, default_value_t = DEFAULT_PRECISION_DEPTH)]
    depth: usize,
}

#[derive(Args, Debug)]
struct AnalogyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hp: HpArgs,
    /// Questions TSV: `i1<TAB>i2<TAB>i3<TAB>correct;ids`. Generated from the
    /// labels when absent.
    #[arg(long, requires = "pool")]
    questions: Option<PathBuf>,
    /// Answer pool, one id per line.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Group map from `gen`; its attribute families pair up properties.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    per_type: usize,
    #[arg(long, default_value_t = 3)]
    answers_per_combo: usize,
    /// Keep a seeded random subset of this many generated questions.
    #[arg(long)]
    max_questions: Option<usize>,
    /// Methods to rank with, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "ours,ours-wc,ours-wp,baseline")]
    method: Vec<Method>,
    /// Recall is reported at ranks 1..=depth.
    #[arg(long, default_value_t = 10)]
    depth: usize,
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hp: HpArgs,
    /// Keep at most this many (query, positive) pairs per category pair.
    #[arg(long)]
    max_pairs: Option<usize>,
}

fn parse_combo(s: &str) -> Result<(u32, u32), String> {
    let (c, a) = s
        .split_once(':')
        .ok_or_else(|| format!("expected CATEGORY:ATTRIBUTE, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(c)?, num(a)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Gen(a) => &a.run,
        Command::Search(a) => &a.run,
        Command::Analogy(a) => &a.run,
        Command::Discover(a) => &a.run,
    };
    let out = run.out.clone();
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    let marker = out.join(FAILURE_MARKER);
    if let Err(e) = fs::write(&marker, "run did not complete\n") {
        eprintln!("error: cannot write {}: {e}", marker.display());
        return ExitCode::FAILURE;
    }

    let result = par::with_threads(run.parallel, || match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Search(a) => cmd_search(a),
        Command::Analogy(a) => cmd_analogy(a),
        Command::Discover(a) => cmd_discover(a),
    });
    match result {
        Ok(()) => match fs::remove_file(&marker) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: cannot remove {}: {e}", marker.display());
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {msg}");
            let _ = fs::write(&marker, format!("{msg}\n"));
            ExitCode::FAILURE
        }
    }
}

fn load_store(input: &InputArgs) -> Result<FeatureStore> {
    let path = &input.features;
    let mut store = FeatureStore::load(path, Format::from_path(path))
        .with_context(|| format!("loading features from {}", path.display()))?;
    if let Some(labels) = &input.labels {
        store
            .load_labels(labels)
            .with_context(|| format!("loading labels from {}", labels.display()))?;
    }
    Ok(store)
}

/// Fails with every id the store does not know, in first-seen order.
fn check_ids<'a>(store: &FeatureStore, ids: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut seen = BTreeSet::new();
    let unknown: Vec<String> = ids
        .into_iter()
        .filter(|id| store.index_of(id).is_none() && seen.insert(id.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown).into());
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = GenSpec {
        n_categories: a.categories,
        n_attributes: a.attributes,
        per_combo: a.per_combo,
        dim_category: a.dim_category,
        dim_attribute: a.dim_attribute,
        dim_noise: a.dim_noise,
        noise_sigma: a.noise_sigma,
        n_families: a.families,
        dropped: a.dropped.clone(),
        seed: a.run.seed,
    };
    let (store, groups) = synthgen::generate(&spec)?;
    let (name, format) = if a.csv {
        ("features.csv", Format::Csv)
    } else {
        ("features.bin", Format::Binary)
    };
    let out = &a.run.out;
    store.save(&out.join(name), format)?;
    store.save_labels(&out.join("labels.tsv"))?;
    groups.save_json(&out.join("groups.json"))?;
    println!(
        "generated {} rows of dimension {} ({} categories x {} attributes, seed {})",
        store.len(),
        store.dim(),
        spec.n_categories,
        spec.n_attributes,
        spec.seed
    );
    println!("wrote {}, labels.tsv and groups.json to {}", name, out.display());
    Ok(())
}

#[derive(Serialize)]
struct QueryWeights<'a> {
    query_id: &'a str,
    triplets: usize,
    converged: bool,
    iters_used: usize,
    final_loss: f64,
    w: &'a [f64],
}

#[derive(Serialize)]
struct SearchMetrics {
    queries: usize,
    ours_map: f64,
    baseline_map: f64,
    ours_mean_precision: Vec<f64>,
    baseline_mean_precision: Vec<f64>,
    non_converged: usize,
    hyperparams: HyperParams,
    seed: u64,
}

fn cmd_search(a: &SearchArgs) -> Result<()> {
    let hp = a.hp.resolve()?;
    let store = load_store(&a.input)?;
    let out = &a.run.out;
    let queries: Vec<SearchQuery> = match (&a.queries, a.sample) {
        (Some(path), _) => search::load_queries(path)?,
        (None, Some(n)) => {
            let q = search::sample_queries(&store, n, a.k_pos, a.k_neg, a.run.seed)?;
            write(&out.join("queries.tsv"), search::format_queries(&q))?;
            q
        }
        (None, None) => bail!("either --queries or --sample is required"),
    };
    if queries.is_empty() {
        bail!("no query records found");
    }
    check_ids(
        &store,
        queries
            .iter()
            .flat_map(|q| std::iter::once(&q.query_id).chain(&q.positive_ids).chain(&q.negative_ids)),
    )?;

    let outcomes = par::map_slice(&queries, |q| search::search(&store, q, &hp))
        .into_iter()
        .collect::<ctxsim::Result<Vec<_>>>()?;
    let mut rankings = String::new();
    for (q, o) in queries.iter().zip(&outcomes) {
        for line in o.ranking.to_tsv().lines() {
            let _ = writeln!(rankings, "{}\t{line}", q.query_id);
        }
    }
    write(&out.join("rankings.tsv"), rankings)?;
    let weights: Vec<QueryWeights> = queries
        .iter()
        .zip(&outcomes)
        .map(|(q, o)| QueryWeights {
            query_id: &q.query_id,
            triplets: q.positive_ids.len() * q.negative_ids.len(),
            converged: o.learned.converged,
            iters_used: o.learned.iters_used,
            final_loss: o.learned.final_loss.total,
            w: o.learned.w.as_slice(),
        })
        .collect();
    write_json(&out.join("weights.json"), &weights)?;

    let converged = outcomes.iter().filter(|o| o.learned.converged).count();
    println!(
        "{} queries, {} triplets learned, {converged} converged",
        queries.len(),
        weights.iter().map(|w| w.triplets).sum::<usize>()
    );
    if store.labels().is_some() {
        let eval = search::evaluate_search(&store, &queries, &hp, a.depth)?;
        println!("MAP ours {:.4}  baseline {:.4}", eval.ours.map, eval.baseline.map);
        for r in [1usize, 5, 10, 20, 50] {
            if let (Some(o), Some(b)) =
                (eval.ours.mean_precision.get(r - 1), eval.baseline.mean_precision.get(r - 1))
            {
                println!("precision@{r:<3} ours {o:.4}  baseline {b:.4}");
            }
        }
        write_json(
            &out.join("metrics.json"),
            &SearchMetrics {
                queries: queries.len(),
                ours_map: eval.ours.map,
                baseline_map: eval.baseline.map,
                ours_mean_precision: eval.ours.mean_precision,
                baseline_mean_precision: eval.baseline.mean_precision,
                non_converged: eval.non_converged,
                hyperparams: hp,
                seed: a.run.seed,
            },
        )?;
    }
    println!("wrote results to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct AnalogyMetrics {
    questions: usize,
    pool: usize,
    /// Recall at ranks `1..=depth`, keyed by method name.
    recall: std::collections::BTreeMap<&'static str, Vec<f64>>,
    diagnostics: analogy::AnalogyDiagnostics,
    hyperparams: HyperParams,
    seed: u64,
}

fn cmd_analogy(a: &AnalogyArgs) -> Result<()> {
    let hp = a.hp.resolve()?;
    let store = load_store(&a.input)?;
    let out = &a.run.out;
    let mut methods = a.method.clone();
    methods.sort();
    methods.dedup();

    let questions: Vec<AnalogyQuestion> = match (&a.questions, &a.pool) {
        (Some(qpath), Some(ppath)) => analogy::load_questions(qpath, ppath)?,
        _ => {
            let families = match &a.groups {
                Some(path) => GroupMap::load_json(path)?.families,
                None => {
                    let attrs: BTreeSet<u32> =
                        store.require_labels()?.iter().map(|l| l.attribute).collect();
                    vec![attrs.into_iter().collect()]
                }
            };
            let set = analogy::generate_questions(
                &store,
                &families,
                a.per_type,
                a.answers_per_combo,
                a.run.seed,
            )?;
            let mut qs = set.questions;
            if let Some(n) = a.max_questions {
                if qs.len() > n {
                    qs.shuffle(&mut rng::stream(a.run.seed, Stream::Misc));
                    qs.truncate(n);
                }
            }
            write(&out.join("questions.tsv"), analogy::format_questions(&qs))?;
            write(&out.join("pool.txt"), set.answer_pool.join("\n") + "\n")?;
            qs
        }
    };
    if questions.is_empty() {
        bail!("no analogy questions");
    }
    let pool = questions[0].answer_pool.clone();
    check_ids(
        &store,
        pool.iter().chain(
            questions
                .iter()
                .flat_map(|q| [&q.i1, &q.i2, &q.i3].into_iter().chain(&q.correct)),
        ),
    )?;

    let eval = analogy::evaluate_analogy(&store, &questions, &hp, &methods, a.depth)?;
    write(
        &out.join("rankings.tsv"),
        analogy::format_rankings(&questions, &eval.rankings),
    )?;
    let mut table = String::from("rank");
    for m in &methods {
        let _ = write!(table, "\t{}", m.name());
    }
    table.push('\n');
    for r in 1..=a.depth {
        let _ = write!(table, "{r}");
        for &m in &methods {
            let _ = write!(table, "\t{:.6}", eval.recall_at(m, r).unwrap_or(f64::NAN));
        }
        table.push('\n');
    }
    write(&out.join("recall.tsv"), &table)?;

    println!("{} questions, answer pool of {}", questions.len(), pool.len());
    for &m in &methods {
        println!(
            "recall@{:<3} {:<9} {:.4}",
            a.depth,
            m.name(),
            eval.recall_at(m, a.depth).unwrap_or(f64::NAN)
        );
    }
    let d = &eval.diagnostics;
    if d.diverged + d.non_converged + d.baseline_excluded > 0 {
        println!(
            "{} diverged, {} hit the iteration budget, {} unscored by the baseline",
            d.diverged, d.non_converged, d.baseline_excluded
        );
    }
    write_json(
        &out.join("metrics.json"),
        &AnalogyMetrics {
            questions: questions.len(),
            pool: pool.len(),
            recall: eval
                .mean_recall
                .iter()
                .map(|(m, v)| (m.name(), v.clone()))
                .collect(),
            diagnostics: eval.diagnostics.clone(),
            hyperparams: hp,
            seed: a.run.seed,
        },
    )?;
    println!("wrote results to {}", out.display());
    Ok(())
}

fn cmd_discover(a: &DiscoverArgs) -> Result<()> {
    let hp = a.hp.resolve()?;
    let store = load_store(&a.input)?;
    store.require_labels()?;
    let out = &a.run.out;
    let found = discovery::discover(&store, &hp, a.max_pairs, a.run.seed)?;
    let report = found.report(&store, true)?;
    write_json(&out.join("clusters.json"), &report)?;

    println!(
        "{} triplets sampled from {} pairs",
        report.triplets_sampled, report.pairs_sampled
    );
    if !report.short_categories.is_empty() {
        println!(
            "categories with fewer than {} members: {:?}",
            hp.m + 1,
            report.short_categories
        );
    }
    if report.triplets_sampled > 0 {
        println!(
            "convergence {:.1}% ({} of {})",
            100.0 * report.convergence_rate,
            report.converged,
            report.triplets_sampled
        );
        println!(
            "{} clusters kept (size >= {}), {} triplets discarded",
            report.kept_clusters, hp.min_cluster_size, report.discarded_triplets
        );
        for c in &report.clusters {
            match (c.purity, c.modal_attribute) {
                (Some(p), Some(attr)) => {
                    println!("  cluster {:>3}: {:>5} triplets, attribute {attr}, purity {p:.3}", c.id, c.size)
                }
                _ => println!("  cluster {:>3}: {:>5} triplets", c.id, c.size),
            }
        }
    }
    println!("wrote {}", out.join("clusters.json").display());
    Ok(())
}
