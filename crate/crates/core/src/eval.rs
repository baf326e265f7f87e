//! AV and CAV metrics.
//!
//! AV is scored with ROC AUC over pair similarities, which gives half credit
//! to ties. CAV counts a task as correct only when `sim(A1, A2)` is strictly
//! greater than `sim(A1, B)`, so ties count as wrong.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::{cosine_similarity, EncoderError, EncoderModel, StyleVector};
use crate::taskgen::{cav_to_av, AvLabel, AvPair, CavTask, CcLevel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric needs both Same and Different labels")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no embedding for utterance {0:?}")]
    MissingEmbedding(String),
    #[error("embedding table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that turns an utterance into a style vector.
pub trait Embedder: Sync {
    fn embed(&self, id: &str, text: &str) -> Result<StyleVector, EvalError>;
}

impl Embedder for EncoderModel {
    fn embed(&self, _id: &str, text: &str) -> Result<StyleVector, EvalError> {
        Ok(self.encode(text)?)
    }
}

/// Precomputed vectors keyed by utterance id, normalised on load.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, StyleVector>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `utterance_id \t v_0 \t … \t v_{d-1}` per line. All rows must share
    /// one dimension; zero vectors are rejected.
    pub fn read_tsv<R: Read>(reader: R) -> Result<Self, EvalError> {
        let mut table = EmbeddingTable::default();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::Parse { line: line_no, message };
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or_default().to_owned();
            let values = cols
                .map(|c| c.trim().parse::<f64>().map_err(|e| err(format!("{c:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if values.is_empty() {
                return Err(err("no vector components".into()));
            }
            if table.dim == 0 {
                table.dim = values.len();
            } else if values.len() != table.dim {
                return Err(err(format!("dimension {} != {}", values.len(), table.dim)));
            }
            let v = StyleVector::normalized(values).ok_or_else(|| err("zero or non-finite vector".into()))?;
            if table.vectors.insert(id.clone(), v).is_some() {
                return Err(err(format!("duplicate id {id:?}")));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::read_tsv(File::open(path)?)
    }

    pub fn insert(&mut self, id: impl Into<String>, v: StyleVector) {
        self.dim = v.dim();
        self.vectors.insert(id.into(), v);
    }
}

impl Embedder for EmbeddingTable {
    fn embed(&self, id: &str, _text: &str) -> Result<StyleVector, EvalError> {
        self.vectors.get(id).cloned().ok_or_else(|| EvalError::MissingEmbedding(id.to_owned()))
    }
}

/// Vectors for every utterance referenced by `tasks`, keyed by corpus position.
pub fn embed_tasks(
    embedder: &dyn Embedder,
    corpus: &Corpus,
    tasks: &[CavTask],
) -> Result<HashMap<usize, StyleVector>, EvalError> {
    let mut ids: Vec<usize> = tasks.iter().flat_map(|t| [t.anchor, t.positive, t.negative]).collect();
    ids.sort_unstable();
    ids.dedup();
    embed_positions(embedder, corpus, &ids)
}

pub fn embed_positions(
    embedder: &dyn Embedder,
    corpus: &Corpus,
    positions: &[usize],
) -> Result<HashMap<usize, StyleVector>, EvalError> {
    positions
        .par_iter()
        .map(|&i| {
            let u = corpus.get(i);
            embedder.embed(&u.id, &u.text).map(|v| (i, v))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().collect())
}

fn check_inputs(scores: &[f64], labels: &[AvLabel]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|l| l.is_same()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Probability that a Same pair outscores a Different pair, ties counting
/// one half. Computed by sorting; the win and tie counts are exact integers.
pub fn roc_auc(scores: &[f64], labels: &[AvLabel]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut wins, mut ties, mut neg_below) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]].is_same() {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins += p * neg_below;
        ties += p * n;
        neg_below += n;
        i = j;
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (pos as f64 * neg as f64))
}

/// Predicts Same when `score >= threshold`.
pub fn av_threshold_accuracy(scores: &[f64], labels: &[AvLabel], threshold: f64) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let correct = scores.iter().zip(labels).filter(|(s, l)| (**s >= threshold) == l.is_same()).count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Accuracy-maximising threshold. Candidates are the lowest score (all
/// Same), midpoints between consecutive distinct scores, and one above the
/// highest score (all Different). Ties go to the lower threshold.
pub fn best_threshold(scores: &[f64], labels: &[AvLabel]) -> Result<(f64, f64), EvalError> {
    check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n = scores.len();
    let total_same = labels.iter().filter(|l| l.is_same()).count();

    // Threshold at the lowest score: everything predicted Same.
    let mut correct = total_same;
    let mut best = (scores[order[0]], correct);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            // This element moves below the threshold.
            if labels[order[j]].is_same() {
                correct -= 1;
            } else {
                correct += 1;
            }
            j += 1;
        }
        let threshold = if j < n { 0.5 * (scores[order[i]] + scores[order[j]]) } else { scores[order[n - 1]] + 1.0 };
        if correct > best.1 {
            best = (threshold, correct);
        }
        i = j;
    }
    Ok((best.0, best.1 as f64 / n as f64))
}

/// Pessimistic CAV decision: ties are incorrect.
pub fn cav_correct(a1: &StyleVector, a2: &StyleVector, b: &StyleVector) -> bool {
    cosine_similarity(a1, a2) > cosine_similarity(a1, b)
}

pub fn cav_accuracy(vectors: &HashMap<usize, StyleVector>, tasks: &[CavTask]) -> Result<f64, EvalError> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let get = |i: usize| vectors.get(&i).ok_or_else(|| EvalError::MissingEmbedding(format!("#{i}")));
    let mut correct = 0usize;
    for t in tasks {
        if cav_correct(get(t.anchor)?, get(t.positive)?, get(t.negative)?) {
            correct += 1;
        }
    }
    Ok(correct as f64 / tasks.len() as f64)
}

/// Similarity scores and labels of AV pairs.
pub fn av_scores(
    vectors: &HashMap<usize, StyleVector>,
    pairs: &[AvPair],
) -> Result<(Vec<f64>, Vec<AvLabel>), EvalError> {
    let get = |i: usize| vectors.get(&i).ok_or_else(|| EvalError::MissingEmbedding(format!("#{i}")));
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        scores.push(cosine_similarity(get(p.first)?, get(p.second)?));
    }
    Ok((scores, pairs.iter().map(|p| p.label).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: String,
    pub cc: Option<CcLevel>,
    pub value: f64,
    pub n_items: usize,
    pub threshold: Option<f64>,
    pub model: String,
}

/// AUC and CAV accuracy per content-control test set, plus spread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCcRow {
    pub model: String,
    pub auc: Vec<(CcLevel, f64)>,
    pub cav: Vec<(CcLevel, f64)>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub cav_mean: f64,
    pub cav_std: f64,
    /// Accuracy-optimal AV threshold and its accuracy per test set.
    pub av_threshold: Vec<(CcLevel, f64, f64)>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores one representation on test sets of several content-control levels.
pub fn cross_cc_matrix(
    model_name: &str,
    embedder: &dyn Embedder,
    corpus: &Corpus,
    test_sets: &[(CcLevel, Vec<CavTask>)],
) -> Result<CrossCcRow, EvalError> {
    let mut auc = Vec::new();
    let mut cav = Vec::new();
    let mut av_threshold = Vec::new();
    for (cc, tasks) in test_sets {
        let vectors = embed_tasks(embedder, corpus, tasks)?;
        let (scores, labels) = av_scores(&vectors, &cav_to_av(tasks))?;
        auc.push((*cc, roc_auc(&scores, &labels)?));
        let (thr, acc) = best_threshold(&scores, &labels)?;
        av_threshold.push((*cc, thr, acc));
        cav.push((*cc, cav_accuracy(&vectors, tasks)?));
    }
    let values = |v: &[(CcLevel, f64)]| v.iter().map(|x| x.1).collect::<Vec<f64>>();
    let (auc_mean, auc_std) = mean_std(&values(&auc));
    let (cav_mean, cav_std) = mean_std(&values(&cav));
    Ok(CrossCcRow { model: model_name.to_owned(), auc, cav, auc_mean, auc_std, cav_mean, cav_std, av_threshold })
}

pub const CROSS_CC_CSV_HEADER: &str = "model,cc,av_auc,cav_accuracy,av_threshold,av_threshold_accuracy";

/// One CSV line per test set, followed by a `mean` and an `std` line.
pub fn cross_cc_csv(rows: &[CrossCcRow]) -> String {
    let mut out = format!("{CROSS_CC_CSV_HEADER}\n");
    for r in rows {
        for ((cc, auc), (_, cav)) in r.auc.iter().zip(&r.cav) {
            let (_, thr, thr_acc) =
                r.av_threshold.iter().find(|t| t.0 == *cc).copied().unwrap_or((*cc, f64::NAN, f64::NAN));
            out.push_str(&format!("{},{cc},{auc:.4},{cav:.4},{thr:.4},{thr_acc:.4}\n", r.model));
        }
        out.push_str(&format!("{},mean,{:.4},{:.4},,\n", r.model, r.auc_mean, r.cav_mean));
        out.push_str(&format!("{},std,{:.4},{:.4},,\n", r.model, r.auc_std, r.cav_std));
    }
    out
}

/// Markdown table with AV AUC columns then CAV accuracy columns.
pub fn cross_cc_markdown(rows: &[CrossCcRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let levels: Vec<CcLevel> = first.auc.iter().map(|x| x.0).collect();
    let mut out = String::from("| model |");
    for cc in &levels {
        out.push_str(&format!(" AV {cc} |"));
    }
    for cc in &levels {
        out.push_str(&format!(" CAV {cc} |"));
    }
    out.push_str(" CAV mean | CAV std |\n|---|");
    out.push_str(&"---|".repeat(2 * levels.len() + 2));
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} |", r.model));
        for (_, v) in &r.auc {
            out.push_str(&format!(" {v:.3} |"));
        }
        for (_, v) in &r.cav {
            out.push_str(&format!(" {v:.3} |"));
        }
        out.push_str(&format!(" {:.3} | {:.3} |\n", r.cav_mean, r.cav_std));
    }
    out.push_str("\nAV thresholds are accuracy-optimal; CAV ties count as incorrect; AUC ties get half credit.\n");
    out
}
