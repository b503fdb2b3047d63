//! Command-line front end: ingest, featurize, train, predict, cluster,
//! evaluate and generate synthetic data.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::classify::{KnnModel, Standardizer, SvmParams};
use crate::cluster::{em_assign, em_fit, em_select_k, Assignment, EmOptions, SelectKOptions};
use crate::entropy::{featurize, parse_features_csv, write_features_csv, FeatureVector};
use crate::error::{Error, Result};
use crate::eval::{cluster_confusion, cross_validate, format_table, purity, ClassifierSpec, ConfusionMatrix, TrainedClassifier};
use crate::model::{ModelDocument, StoredModel};
use crate::synth::gen_corpus;
use crate::trace::{build_traces, filter_popular, parse_events, parse_labels, ActivityClass, EventFormat, PopularityFilter};
use crate::Point;

pub const DEFAULT_SEED: u64 = 7;
pub const LOG_ENV: &str = "RETRACE_LOG";

#[derive(Debug, Parser)]
#[command(name = "retrace", version, about = "Entropy-based classification of retweeting activity")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group events into traces, apply the popularity filter and write entropy features.
    Featurize(FeaturizeArgs),
    /// Train a classifier (or mixture) on labelled features and write a model file.
    Train(TrainArgs),
    /// Classify features with a trained model.
    Predict(PredictArgs),
    /// Fit a fixed-size Gaussian mixture and write cluster assignments.
    Cluster(ClusterArgs),
    /// Choose the mixture size by cross-validated likelihood, then cluster.
    SelectK(SelectKArgs),
    /// Stratified cross-validation (knn/svm) or cluster-vs-label comparison (gmm).
    Eval(EvalArgs),
    /// Generate a labelled synthetic event corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelType {
    Knn,
    Svm,
    Gmm,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn fold_count(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        Ok(_) => Err("must be at least 2".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: EventFormat,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub min_retweets: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub min_popular_urls: usize,
    /// Optional `url,user` CSV naming each URL's original poster.
    #[arg(long)]
    pub authors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Neighbours for knn (default 3) or components for gmm (default 5).
    #[arg(long, value_parser = positive_usize)]
    pub k: Option<usize>,
    /// SVM box constraint.
    #[arg(long = "C", default_value_t = 1.0, value_parser = positive_f64)]
    pub c: f64,
    /// RBF kernel width.
    #[arg(long, default_value_t = 0.5, value_parser = positive_f64)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value = "knn")]
    pub model: ModelType,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// When given, print the cluster-vs-label confusion matrix and purity.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    /// Feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 15, value_parser = positive_usize)]
    pub k_max: usize,
    #[arg(long, default_value_t = 10, value_parser = fold_count)]
    pub folds: usize,
    /// Evaluate every k up to --k-max instead of stopping at the first non-improving k.
    #[arg(long)]
    pub scan_all_k: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value = "knn")]
    pub model: ModelType,
    #[arg(long, default_value_t = 10, value_parser = fold_count)]
    pub folds: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Report JSON; the text table and confusion CSV are written next to it.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub per_class: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Events JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Labels CSV (default: `<output stem>.labels.csv`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

/// Runs one subcommand, honouring `--threads`.
pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(usize::from(n))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Featurize(a) => cmd_featurize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Cluster(a) => cmd_cluster(&a),
        Command::SelectK(a) => cmd_select_k(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Located parse errors get the file name prepended.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, reason } => Error::Parse {
            line,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

/// Writes `path` through a temporary file in the same directory, so the
/// target either appears complete or not at all.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_features(path: &Path) -> Result<Vec<FeatureVector>> {
    in_file(path, parse_features_csv(open(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelJoin {
    /// Label rows naming a URL absent from the features.
    pub unknown_label_urls: usize,
    /// Feature rows without a label.
    pub unlabeled_features: usize,
}

/// Pairs features with labels, skipping (and counting) rows on either side
/// without a partner.
fn join_labels(
    features: Vec<FeatureVector>,
    labels_path: &Path,
) -> Result<(Vec<FeatureVector>, Vec<ActivityClass>, LabelJoin)> {
    let labels = in_file(labels_path, parse_labels(open(labels_path)?))?;
    let mut join = LabelJoin::default();
    let known: std::collections::HashSet<&str> = features.iter().map(|f| f.url_id.as_str()).collect();
    join.unknown_label_urls = labels.keys().filter(|u| !known.contains(u.as_str())).count();
    if join.unknown_label_urls > 0 {
        warn!(
            "{} label(s) in {} reference unknown urls; skipped",
            join.unknown_label_urls,
            labels_path.display()
        );
    }
    let mut kept = Vec::new();
    let mut classes = Vec::new();
    for f in features {
        match labels.get(&f.url_id) {
            Some(&c) => {
                kept.push(f);
                classes.push(c);
            }
            None => join.unlabeled_features += 1,
        }
    }
    if join.unlabeled_features > 0 {
        warn!("{} feature row(s) have no label; skipped", join.unlabeled_features);
    }
    Ok((kept, classes, join))
}

fn points(features: &[FeatureVector]) -> Vec<Point> {
    features.iter().map(FeatureVector::point).collect()
}

pub fn cmd_featurize(a: &FeaturizeArgs) -> Result<()> {
    let events = in_file(&a.input, parse_events(open(&a.input)?, a.format))?;
    let n_events = events.len();
    let traces = build_traces(events);
    let authors: HashMap<String, String> = match &a.authors {
        Some(p) => read_author_map(p)?,
        None => HashMap::new(),
    };
    let filter = PopularityFilter {
        min_retweets: a.min_retweets,
        min_popular_urls_per_author: a.min_popular_urls,
    };
    let kept = filter_popular(&traces, filter, &authors);

    let results: Vec<_> = {
        use rayon::prelude::*;
        let v: Vec<_> = kept.values().collect();
        v.par_iter().map(|t| featurize(t)).collect()
    };
    let mut features = Vec::with_capacity(results.len());
    let mut too_short = 0;
    for r in results {
        match r {
            Ok(f) => features.push(f),
            Err(Error::TraceTooShort { .. }) => too_short += 1,
            Err(e) => return Err(e),
        }
    }
    if too_short > 0 {
        warn!("{too_short} single-event trace(s) skipped");
    }
    write_atomic(&a.output, |w| write_features_csv(w, &features))?;
    println!(
        "events: {n_events}; traces: {} before filter, {} after filter; features written: {}",
        traces.len(),
        kept.len(),
        features.len()
    );
    Ok(())
}

fn read_author_map(path: &Path) -> Result<HashMap<String, String>> {
    use std::io::BufRead;
    let mut map = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "url,user") {
            continue;
        }
        let (url, user) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("{}: expected url,user", path.display()),
        })?;
        map.insert(url.trim().to_string(), user.trim().to_string());
    }
    Ok(map)
}

fn classifier_spec(model: ModelType, h: &HyperArgs) -> Option<ClassifierSpec> {
    match model {
        ModelType::Knn => Some(ClassifierSpec::Knn {
            k: h.k.unwrap_or(KnnModel::DEFAULT_K),
        }),
        ModelType::Svm => Some(ClassifierSpec::Svm {
            params: SvmParams {
                c: h.c,
                gamma: h.gamma,
                ..SvmParams::default()
            },
        }),
        ModelType::Gmm => None,
    }
}

pub const DEFAULT_CLUSTERS: usize = 5;

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (features, labels, join) = join_labels(load_features(&a.input)?, &a.labels)?;
    let raw = points(&features);
    let standardizer = Standardizer::fit(&raw)?;
    let x = standardizer.apply_all(&raw);
    let model = match classifier_spec(a.model, &a.hyper) {
        Some(spec) => match TrainedClassifier::fit(&spec, &x, &labels)? {
            TrainedClassifier::Knn(m) => StoredModel::Knn(m),
            TrainedClassifier::Svm(m) => StoredModel::Svm(m),
        },
        None => {
            let k = a.hyper.k.unwrap_or(DEFAULT_CLUSTERS);
            StoredModel::Gmm(em_fit(&x, k, a.hyper.seed, &EmOptions::default())?)
        }
    };
    let doc = ModelDocument::new(standardizer, model);
    let json = doc.to_json()?;
    write_atomic(&a.output, |w| writeln!(w, "{json}"))?;
    println!(
        "trained {} on {} labelled traces ({} unknown label url(s) skipped)",
        doc.model.kind(),
        features.len(),
        join.unknown_label_urls
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelDocument::from_json(&text)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let doc = load_model(&a.model_file)?;
    let features = load_features(&a.input)?;
    let preds = features
        .iter()
        .map(|f| doc.predict(&f.point()))
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&a.output, |w| {
        writeln!(w, "url,predicted,score")?;
        for (f, p) in features.iter().zip(&preds) {
            writeln!(w, "{},{},{:.6}", f.url_id, p.class, p.score(p.class))?;
        }
        Ok(())
    })?;
    info!("predicted {} traces with {}", preds.len(), doc.model.kind());
    Ok(())
}

fn write_assignments(path: &Path, features: &[FeatureVector], asg: &Assignment) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "url,cluster,top_responsibility")?;
        for (i, f) in features.iter().enumerate() {
            writeln!(w, "{},{},{:.6}", f.url_id, asg.clusters[i], asg.top_responsibility(i))?;
        }
        Ok(())
    })
}

fn report_clusters(features: &[FeatureVector], asg: &Assignment, labels: Option<&Path>) -> Result<()> {
    let Some(labels) = labels else { return Ok(()) };
    let index: HashMap<&str, usize> = features.iter().enumerate().map(|(i, f)| (f.url_id.as_str(), i)).collect();
    let (kept, classes, _) = join_labels(features.to_vec(), labels)?;
    let ids: Vec<usize> = kept.iter().map(|f| asg.clusters[index[f.url_id.as_str()]]).collect();
    let conf = cluster_confusion(&ids, &classes)?;
    print!("{}", conf.to_csv("cluster"));
    println!("purity: {:.4}", purity(&conf));
    Ok(())
}

pub fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let features = load_features(&a.input)?;
    let raw = points(&features);
    let x = Standardizer::fit(&raw)?.apply_all(&raw);
    let model = em_fit(&x, a.k, a.seed, &EmOptions::default())?;
    let asg = em_assign(&model, &x);
    write_assignments(&a.output, &features, &asg)?;
    println!(
        "k = {}; log-likelihood {:.4} after {} iterations",
        model.k(),
        model.log_likelihood,
        model.iterations
    );
    report_clusters(&features, &asg, a.labels.as_deref())
}

pub fn cmd_select_k(a: &SelectKArgs) -> Result<()> {
    let features = load_features(&a.input)?;
    let raw = points(&features);
    let x = Standardizer::fit(&raw)?.apply_all(&raw);
    let sel = em_select_k(
        &x,
        &SelectKOptions {
            k_max: a.k_max,
            folds: a.folds,
            seed: a.seed,
            scan_all: a.scan_all_k,
        },
        &EmOptions::default(),
    )?;
    for (k, s) in &sel.cv_scores {
        println!("k = {k:>2}: held-out log-likelihood per point {s:.6}");
    }
    println!("selected k = {}", sel.k);
    let asg = em_assign(&sel.model, &x);
    write_assignments(&a.output, &features, &asg)?;
    report_clusters(&features, &asg, a.labels.as_deref())
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    model: &'static str,
    k: usize,
    seed: u64,
    purity: f64,
    log_likelihood: f64,
    confusion: &'a ConfusionMatrix<usize>,
    labels: &'a LabelJoin,
}

#[derive(Serialize)]
struct CvReportDoc<'a> {
    model: &'static str,
    #[serde(flatten)]
    result: &'a crate::eval::CvResult,
    labels: &'a LabelJoin,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (features, labels, join) = join_labels(load_features(&a.input)?, &a.labels)?;
    let raw = points(&features);
    let table_path = sibling(&a.output, ".txt");
    let confusion_path = sibling(&a.output, ".confusion.csv");

    let (json, table, confusion_csv) = match classifier_spec(a.model, &a.hyper) {
        Some(spec) => {
            let cv = cross_validate(&spec, &raw, &labels, a.folds, a.hyper.seed)?;
            let skipped: usize = cv.fold_summaries.iter().map(|f| f.skipped_pairs.len()).sum();
            if skipped > 0 {
                warn!("{skipped} pairwise machine(s) skipped across folds for absent classes");
            }
            let doc = CvReportDoc {
                model: spec.name(),
                result: &cv,
                labels: &join,
            };
            (
                serde_json::to_string_pretty(&doc)?,
                format_table(&[(spec.name(), &cv.report)]),
                cv.confusion.to_csv("predicted"),
            )
        }
        None => {
            let k = a.hyper.k.unwrap_or(DEFAULT_CLUSTERS);
            let x = Standardizer::fit(&raw)?.apply_all(&raw);
            let model = em_fit(&x, k, a.hyper.seed, &EmOptions::default())?;
            let asg = em_assign(&model, &x);
            let conf = cluster_confusion(&asg.clusters, &labels)?;
            let p = purity(&conf);
            let doc = ClusterReport {
                model: "gmm",
                k,
                seed: a.hyper.seed,
                purity: p,
                log_likelihood: model.log_likelihood,
                confusion: &conf,
                labels: &join,
            };
            let csv = conf.to_csv("cluster");
            (
                serde_json::to_string_pretty(&doc)?,
                format!("{}purity: {p:.4}\n", csv.replace(',', "\t")),
                csv,
            )
        }
    };

    write_atomic(&table_path, |w| w.write_all(table.as_bytes()))?;
    write_atomic(&confusion_path, |w| w.write_all(confusion_csv.as_bytes()))?;
    write_atomic(&a.output, |w| writeln!(w, "{json}"))?;
    print!("{table}");
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let corpus = gen_corpus(a.per_class, a.seed)?;
    let labels_path = a.labels.clone().unwrap_or_else(|| sibling(&a.output, ".labels.csv"));
    write_atomic(&a.output, |w| corpus.write_events(w))?;
    write_atomic(&labels_path, |w| corpus.write_labels(w))?;
    let events: usize = corpus.traces.iter().map(|t| t.len()).sum();
    let per_class: BTreeMap<ActivityClass, usize> = corpus.labels().fold(BTreeMap::new(), |mut m, (_, c)| {
        *m.entry(c).or_default() += 1;
        m
    });
    println!(
        "wrote {} traces ({events} events) to {}, labels to {}",
        corpus.traces.len(),
        a.output.display(),
        labels_path.display()
    );
    for (c, n) in per_class {
        println!("  {c}: {n}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_flags_are_validated() {
        for bad in [
            vec!["retrace", "eval", "--input", "f", "--labels", "l", "--output", "o", "--folds", "1"],
            vec!["retrace", "eval", "--input", "f", "--labels", "l", "--output", "o", "--C", "0"],
            vec!["retrace", "eval", "--input", "f", "--labels", "l", "--output", "o", "--gamma", "-1"],
            vec!["retrace", "cluster", "--input", "f", "--output", "o", "--k", "0"],
            vec!["retrace", "--threads", "0", "synth", "--output", "o"],
        ] {
            assert!(Cli::try_parse_from(&bad).is_err(), "{bad:?}");
        }
        let ok = Cli::try_parse_from(["retrace", "eval", "--input", "f", "--labels", "l", "--output", "o", "--model", "svm", "--C", "2.5"]).unwrap();
        match ok.command {
            Command::Eval(e) => {
                assert_eq!(e.model, ModelType::Svm);
                assert_eq!(e.hyper.c, 2.5);
                assert_eq!(e.hyper.seed, DEFAULT_SEED);
                assert_eq!(e.folds, 10);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/report.json"), ".txt"), PathBuf::from("out/report.txt"));
        assert_eq!(sibling(Path::new("events.jsonl"), ".labels.csv"), PathBuf::from("events.labels.csv"));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.csv");
        let r = write_atomic(&target, |w| {
            w.write_all(b"partial")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(r.is_err());
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
