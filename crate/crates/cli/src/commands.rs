use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use stylecav::cluster::{
    agglomerative_on, cluster_summary_markdown, cohesion_stats, feature_consistency, standard_sweep_grid, sweep_k,
    CohesionStats, Linkage, PairRelation, PointSet, DEFAULT_TRIALS,
};
use stylecav::corpus::{convert_convokit, filter_invalid, load_corpus, select_conversations};
use stylecav::encoder::{Detector, DEFAULT_EMBED_DIM, DEFAULT_HASH_DIM};
use stylecav::eval::{cross_cc_csv, cross_cc_markdown, cross_cc_matrix, embed_positions, Embedder, EmbeddingTable};
use stylecav::stel::{
    export_disagreements, load_stel, make_or_content, or_content_accuracy, stel_accuracy, AccuracyReport,
};
use stylecav::synth::{planted_corpus, SynthConfig};
use stylecav::taskgen::{
    cav_to_av, generate_tasks, read_tasks, split_authors, task_stats, write_tasks, AuthorSplit, CavTask, SplitName,
    SplitStats, TaskFileMeta,
};
use stylecav::training::{train as fit, TrainConfig, TrainingData};
use stylecav::{CcLevel, Corpus, EncoderModel, FeatureConfig, StyleVector};

use crate::config::{required, RunConfig};
use crate::{
    CliError, ClusterArgs, ConvertArgs, EvalArgs, FilterArgs, GenTasksArgs, OrContentArgs, SplitArgs, StatsArgs,
    StelArgs, SynthArgs, TrainArgs,
};

const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Refuses to overwrite an input.
fn distinct(input: &Path, output: &Path) -> Result<(), CliError> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(usage(format!("output {} would overwrite an input", output.display())));
    }
    Ok(())
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Data(format!("{} does not exist", path.display())))
    }
}

fn corpus_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    existing(required(flag, cfg.corpus.clone(), "corpus")?)
}

fn seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64, CliError> {
    required(flag, cfg.seed, "seed")
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    required(flag, cfg.output_dir.clone(), name)
}

fn ratios(flag: Option<Vec<f64>>, file: Option<[f64; 3]>) -> [f64; 3] {
    flag.and_then(|v| <[f64; 3]>::try_from(v).ok()).or(file).unwrap_or(DEFAULT_RATIOS)
}

fn load_tasks(path: &Path, corpus: &Corpus) -> Result<Vec<CavTask>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_tasks(file, corpus).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read_sidecar(path: &Path) -> Option<TaskFileMeta> {
    let text = fs::read_to_string(sidecar(path)).ok()?;
    serde_json::from_str(&text).ok()
}

/// CC level of a task file: sidecar first, else the rows themselves.
fn task_cc(path: &Path, tasks: &[CavTask]) -> Result<CcLevel, CliError> {
    if let Some(meta) = read_sidecar(path) {
        return Ok(meta.cc);
    }
    let levels: BTreeSet<CcLevel> = tasks.iter().map(|t| t.cc).collect();
    match levels.len() {
        1 => Ok(*levels.iter().next().expect("one level")),
        0 => Err(CliError::Data(format!("{} contains no tasks", path.display()))),
        _ => Err(CliError::Data(format!("{} mixes CC levels", path.display()))),
    }
}

fn load_model(path: &Path) -> Result<EncoderModel, CliError> {
    EncoderModel::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Model display name: file stem, or the parent directory for `model.json`.
fn model_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "model" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn synth(cfg: &RunConfig, a: SynthArgs) -> Result<(), CliError> {
    let s = planted_corpus(&SynthConfig {
        n_authors: a.authors,
        utterances_per_author: a.per_author,
        n_styles: a.styles,
        habit_consistency: a.consistency,
        seed: seed(a.seed, cfg)?,
        ..Default::default()
    });
    s.corpus.save_jsonl(&a.output)?;
    eprintln!("wrote {} utterances by {} authors", s.corpus.len(), s.corpus.author_names().len());
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Result<(), CliError> {
    distinct(&a.input, &a.output)?;
    let file = File::open(existing(a.input.clone())?)?;
    let utterances = convert_convokit(file, &a.domain)?;
    let corpus = Corpus::from_utterances(utterances)?;
    corpus.save_jsonl(&a.output)?;
    eprintln!("converted {} utterances", corpus.len());
    Ok(())
}

pub fn filter(cfg: &RunConfig, a: FilterArgs) -> Result<(), CliError> {
    let input = corpus_path(a.corpus, cfg)?;
    distinct(&input, &a.output)?;
    let corpus = load_corpus(&input)?;
    let mut kept = filter_invalid(&corpus);
    eprintln!("removed {} invalid utterances", corpus.len() - kept.len());
    let min_posts = a.min_posts.or(cfg.filter.min_posts);
    let per_domain = a.per_domain.or(cfg.filter.per_domain);
    if min_posts.is_some() || per_domain.is_some() {
        let seed = seed(a.seed, cfg)?;
        let (selected, report) = select_conversations(&kept, min_posts.unwrap_or(1), per_domain, seed);
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        kept = selected;
    }
    kept.save_jsonl(&a.output)?;
    eprintln!("kept {} utterances", kept.len());
    Ok(())
}

fn compute_split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<AuthorSplit, CliError> {
    split_authors(corpus, ratios, seed).map_err(|e| usage(e.to_string()))
}

pub fn split(cfg: &RunConfig, a: SplitArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_path(a.corpus, cfg)?)?;
    let split = compute_split(&corpus, ratios(a.ratios, cfg.taskgen.ratios), seed(a.seed, cfg)?)?;
    let output = match a.output.or(cfg.taskgen.split_file.clone()) {
        Some(p) => p,
        None => out_dir(None, cfg, "output")?.join("split.json"),
    };
    write_file(&output, serde_json::to_string_pretty(&split)?.as_bytes())?;
    let (tr, dv, te) = split.sizes();
    eprintln!("authors: train {tr}, dev {dv}, test {te}");
    Ok(())
}

pub fn gen_tasks(cfg: &RunConfig, a: GenTasksArgs) -> Result<(), CliError> {
    let corpus_file = corpus_path(a.corpus, cfg)?;
    let corpus = load_corpus(&corpus_file)?;
    let seed = seed(a.seed, cfg)?;
    let n = required(a.n, cfg.taskgen.n, "n")?;
    let cc_arg = required(a.cc, cfg.taskgen.cc.clone(), "cc")?;
    let levels: Vec<CcLevel> =
        if cc_arg == "all" { CcLevel::ALL.to_vec() } else { vec![cc_arg.parse().map_err(usage)?] };
    let split_name = a.split.or(cfg.taskgen.split).unwrap_or(SplitName::Train);
    let split = match a.split_file.or(cfg.taskgen.split_file.clone()) {
        Some(path) => {
            let text = fs::read_to_string(existing(path.clone())?)?;
            serde_json::from_str::<AuthorSplit>(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => compute_split(&corpus, ratios(a.ratios, cfg.taskgen.ratios), seed)?,
    };
    let authors = split.get(split_name);
    let dir = out_dir(a.out_dir, cfg, "out-dir")?;

    let mut reuse: Option<(Vec<(usize, usize)>, String)> = None;
    for cc in levels {
        let generated =
            generate_tasks(&corpus, authors, cc, n, seed, reuse.as_ref().map(|(pairs, _)| pairs.as_slice()))?;
        let name = format!("{split_name}_{cc}");
        let tsv = dir.join(format!("{name}.tsv"));
        let mut bytes = Vec::new();
        write_tasks(&mut bytes, &generated.tasks, &corpus)?;
        write_file(&tsv, &bytes)?;
        let meta = TaskFileMeta {
            corpus: corpus_file.display().to_string(),
            split: split_name,
            cc,
            n,
            seed,
            resampled_anchors: generated.resampled_anchors,
            repeated_positive_pairs: generated.repeated_positive_pairs,
            reused_positive_pairs_from: reuse.as_ref().map(|(_, from)| from.clone()),
        };
        write_file(&sidecar(&tsv), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        if generated.resampled_anchors > 0 {
            eprintln!("{name}: resampled {} anchors without a valid negative", generated.resampled_anchors);
        }
        eprintln!("wrote {}", tsv.display());
        if reuse.is_none() {
            reuse = Some((generated.positive_pairs(), format!("{name}.tsv")));
        }
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig, a: StatsArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_path(a.corpus, cfg)?)?;
    let mut out = format!("{}\n", SplitStats::CSV_HEADER);
    for path in &a.tasks {
        let tasks = load_tasks(path, &corpus)?;
        let cc = task_cc(path, &tasks)?;
        let split = read_sidecar(path).map(|m| m.split.to_string()).unwrap_or_else(|| "unknown".into());
        out.push_str(&task_stats(&tasks, &corpus).csv_row(&split, cc.as_str()));
        out.push('\n');
    }
    let output = match a.output {
        Some(p) => p,
        None => out_dir(None, cfg, "output")?.join("stats.csv"),
    };
    write_file(&output, out.as_bytes())?;
    eprintln!("wrote {}", output.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTraining<'a> {
    seed: u64,
    corpus: String,
    train_tasks: String,
    dev_tasks: String,
    d_embed: usize,
    hidden: Option<usize>,
    features: &'a FeatureConfig,
    train: &'a TrainConfig,
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let t = &cfg.train;
    let corpus_file = corpus_path(a.corpus, cfg)?;
    let corpus = load_corpus(&corpus_file)?;
    let seed = seed(a.seed, cfg)?;
    let train_file = existing(required(a.train_tasks, t.train_tasks.clone(), "train-tasks")?)?;
    let dev_file = existing(required(a.dev_tasks, t.dev_tasks.clone(), "dev-tasks")?)?;
    let run_dir = match a.run_dir {
        Some(d) => d,
        None => out_dir(None, cfg, "run-dir")?.join("run"),
    };

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        loss: a.loss.or(t.loss).unwrap_or(defaults.loss),
        margin: a.margin.or(t.margin).unwrap_or(defaults.margin),
        batch_size: a.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
        epochs: a.epochs.or(t.epochs).unwrap_or(defaults.epochs),
        warmup_fraction: a.warmup_fraction.or(t.warmup_fraction).unwrap_or(defaults.warmup_fraction),
        learning_rate: a.lr.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let features = FeatureConfig {
        char_ngram_orders: t.ngram_orders.clone().unwrap_or_else(|| vec![1, 2, 3]),
        hash_dim: a.hash_dim.or(t.hash_dim).unwrap_or(DEFAULT_HASH_DIM),
        explicit_features: if a.no_explicit {
            Vec::new()
        } else {
            t.explicit_features.clone().unwrap_or_else(|| Detector::ALL.to_vec())
        },
    };
    let d_embed = a.d_embed.or(t.d_embed).unwrap_or(DEFAULT_EMBED_DIM);
    let hidden = a.hidden.or(t.hidden);

    let as_data = |tasks: Vec<CavTask>| match config.loss {
        stylecav::training::LossKind::Triplet => TrainingData::Triples(tasks),
        _ => TrainingData::Pairs(cav_to_av(&tasks)),
    };
    let train_data = as_data(load_tasks(&train_file, &corpus)?);
    let dev_data = as_data(load_tasks(&dev_file, &corpus)?);

    let resolved = ResolvedTraining {
        seed,
        corpus: corpus_file.display().to_string(),
        train_tasks: train_file.display().to_string(),
        dev_tasks: dev_file.display().to_string(),
        d_embed,
        hidden,
        features: &features,
        train: &config,
    };
    let config_toml = toml::to_string(&resolved).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&run_dir.join("config.toml"), config_toml.as_bytes())?;

    let started = unix_seconds();
    let model = EncoderModel::random(features, d_embed, hidden, seed);
    let (trained, history) = fit(&model, &corpus, &train_data, &dev_data, &config)?;
    trained.save(&run_dir.join("model.json"))?;
    write_file(&run_dir.join("metrics.csv"), history.metrics_csv().as_bytes())?;

    let mut log = format!("started_unix={started}\nfinished_unix={}\n", unix_seconds());
    for e in &history.epochs {
        log.push_str(&format!(
            "epoch {} mean_loss {:.6} {} {:.4}\n",
            e.epoch, e.mean_loss, history.dev_metric_name, e.dev_metric
        ));
    }
    log.push_str(&format!("selected epoch {}\n", history.selected_epoch));
    if history.did_not_learn {
        let msg = "warning: final dev metric is at chance level; the model did not learn";
        log.push_str(msg);
        log.push('\n');
        eprintln!("{msg}");
    }
    write_file(&run_dir.join("train.log"), log.as_bytes())?;
    eprintln!(
        "selected epoch {} ({} {:.4}); wrote {}",
        history.selected_epoch,
        history.dev_metric_name,
        history.selected().dev_metric,
        run_dir.display()
    );
    Ok(())
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_path(a.corpus, cfg)?)?;
    let model_files = if a.model.is_empty() { cfg.eval.models.clone().unwrap_or_default() } else { a.model };
    let task_files = if a.tasks.is_empty() { cfg.eval.tasks.clone().unwrap_or_default() } else { a.tasks };
    if task_files.is_empty() {
        return Err(usage("missing --tasks (or eval.tasks in the config file)"));
    }
    let mut embedders: Vec<(String, Box<dyn Embedder>)> = Vec::new();
    if a.untrained {
        let seed = seed(a.seed, cfg)?;
        let model = EncoderModel::random(FeatureConfig::default(), DEFAULT_EMBED_DIM, None, seed);
        embedders.push(("untrained".into(), Box::new(model)));
    }
    for path in &model_files {
        embedders.push((model_name(path), Box::new(load_model(path)?)));
    }
    for path in &a.embeddings {
        let table = EmbeddingTable::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        embedders.push((model_name(path), Box::new(table)));
    }
    if embedders.is_empty() {
        return Err(usage("nothing to evaluate: pass --model, --embeddings or --untrained"));
    }
    let mut test_sets = Vec::new();
    for path in &task_files {
        let tasks = load_tasks(path, &corpus)?;
        test_sets.push((task_cc(path, &tasks)?, tasks));
    }
    test_sets.sort_by_key(|(cc, _)| *cc);
    let mut rows = Vec::new();
    for (name, embedder) in &embedders {
        rows.push(cross_cc_matrix(name, embedder.as_ref(), &corpus, &test_sets)?);
    }
    let dir = out_dir(a.out_dir, cfg, "out-dir")?;
    write_file(&dir.join("cross_cc.csv"), cross_cc_csv(&rows).as_bytes())?;
    write_file(&dir.join("cross_cc.md"), cross_cc_markdown(&rows).as_bytes())?;
    print!("{}", cross_cc_markdown(&rows));
    Ok(())
}

fn stel_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    existing(required(flag, cfg.stel.path.clone(), "stel")?)
}

fn emit_accuracy(report: &AccuracyReport, task: &str, output: Option<PathBuf>) -> Result<(), CliError> {
    let csv = format!("{}\n{}", AccuracyReport::CSV_HEADER, report.csv_rows(task));
    match output {
        Some(path) => {
            write_file(&path, csv.as_bytes())?;
            eprintln!("{task} accuracy {:.4}; wrote {}", report.overall(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn stel(cfg: &RunConfig, a: StelArgs) -> Result<(), CliError> {
    let instances = load_stel(&stel_path(a.stel, cfg)?)?;
    let model = load_model(&a.model)?;
    emit_accuracy(&stel_accuracy(&model, &instances)?, "stel", a.output)
}

pub fn or_content(cfg: &RunConfig, a: OrContentArgs) -> Result<(), CliError> {
    let instances = load_stel(&stel_path(a.stel, cfg)?)?;
    let transformed: Vec<_> = instances.iter().map(make_or_content).collect();
    let model = load_model(&a.model)?;
    if let Some(path) = &a.instances {
        let mut out = String::from("id\tdimension\tanchor\toption_content\toption_style\n");
        let esc = |s: &str| s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n");
        for i in &transformed {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                i.id,
                i.dimension,
                esc(&i.anchor),
                esc(&i.option_content),
                esc(&i.option_style)
            ));
        }
        write_file(path, out.as_bytes())?;
    }
    if let (Some(other), Some(path)) = (&a.compare, &a.disagreements) {
        let other = load_model(other)?;
        let d = export_disagreements(&model, &other, &instances)?;
        write_file(path, serde_json::to_string_pretty(&d)?.as_bytes())?;
    }
    emit_accuracy(&or_content_accuracy(&model, &transformed)?, "or_content", a.output)
}

fn cohesion_csv(rows: &[CohesionStats]) -> String {
    let mut out = String::from("relation,related_pairs,observed,baseline_mean,baseline_std,baseline_stderr,trials\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.6},{}\n",
            r.relation, r.related_pairs, r.observed, r.baseline_mean, r.baseline_std, r.baseline_stderr, r.trials
        ));
    }
    out
}

pub fn cluster(cfg: &RunConfig, a: ClusterArgs) -> Result<(), CliError> {
    let c = &cfg.cluster;
    let corpus = load_corpus(&corpus_path(a.corpus, cfg)?)?;
    let model = load_model(&a.model)?;
    let seed = seed(a.seed, cfg)?;
    let linkage = a.linkage.or(c.linkage).unwrap_or(Linkage::Average);
    let trials = a.trials.or(c.trials).unwrap_or(DEFAULT_TRIALS);
    let dir = out_dir(a.out_dir, cfg, "out-dir")?;

    let positions: Vec<usize> = (0..corpus.len()).collect();
    let vectors = embed_positions(&model, &corpus, &positions)?;
    let points: Vec<(String, StyleVector)> =
        positions.iter().map(|&i| (corpus.get(i).id.clone(), vectors[&i].clone())).collect();
    let set = PointSet::new(&points)?;

    let grid = if a.full_grid || c.full_grid == Some(true) {
        Some(standard_sweep_grid())
    } else {
        a.k_values.or(c.k_values.clone())
    };
    let mut k = a.k.or(c.k);
    if let Some(grid) = grid {
        let sweep = sweep_k(&set, &grid, linkage)?;
        write_file(&dir.join("sweep.csv"), sweep.csv().as_bytes())?;
        eprintln!("silhouette peaks at k = {}", sweep.best_k);
        k = k.or(Some(sweep.best_k));
    }
    let k = k.ok_or_else(|| usage("missing --k (or a sweep via --k-values / --full-grid)"))?;
    let assignment = agglomerative_on(&set, k, linkage)?;
    write_file(&dir.join("assignments.csv"), assignment.csv().as_bytes())?;

    let mut cohesion = Vec::new();
    for relation in PairRelation::ALL {
        match cohesion_stats(&assignment, &corpus, relation, trials, seed) {
            Ok(s) => cohesion.push(s),
            Err(e) => eprintln!("warning: {e}"),
        }
    }
    write_file(&dir.join("cohesion.csv"), cohesion_csv(&cohesion).as_bytes())?;
    let table = feature_consistency(&assignment, &corpus, &model.feature_config.explicit_features)?;
    write_file(&dir.join("prevalence.csv"), table.csv().as_bytes())?;
    let summary = cluster_summary_markdown(&assignment, &table, &corpus, &cohesion);
    write_file(&dir.join("clusters.md"), summary.as_bytes())?;
    let mut stdout = BufWriter::new(std::io::stdout());
    write!(stdout, "{summary}")?;
    Ok(())
}
