//! Agglomerative clustering of style vectors and cluster diagnostics.
//!
//! Points are ordered by id before clustering, so results do not depend on
//! input order. Each active cluster lives in the slot of its smallest member,
//! and among equally distant cluster pairs the one with the smallest
//! `(min slot, max slot)` merges first.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::{cosine_distance, Detector, StyleVector};
use crate::eval::mean_std;
use crate::rng;

/// Largest point count accepted; the condensed distance matrix is O(n²).
pub const MAX_POINTS: usize = 50_000;
pub const DEFAULT_TRIALS: usize = 100;

/// k values 2..=26, 30, 40, 50, 100, 150, 200.
pub fn standard_sweep_grid() -> Vec<usize> {
    (2..=26).chain([30, 40, 50, 100, 150, 200]).collect()
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{0} points exceed the limit of {MAX_POINTS}")]
    TooManyPoints(usize),
    #[error("duplicate point id {0:?}")]
    DuplicateId(String),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("no {0} pairs among the clustered utterances")]
    NoRelatedPairs(PairRelation),
    #[error("utterance {0:?} is not in the corpus")]
    UnknownUtterance(String),
    #[error("vector dimensions differ")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Complete,
    Single,
}

impl Linkage {
    fn combine(self, d_a: f64, d_b: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::Average => (size_a as f64 * d_a + size_b as f64 * d_b) / (size_a + size_b) as f64,
            Linkage::Complete => d_a.max(d_b),
            Linkage::Single => d_a.min(d_b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            other => Err(format!("unknown linkage {other:?}")),
        }
    }
}

/// Condensed symmetric matrix of pairwise cosine distances.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine(vectors: &[&StyleVector]) -> Self {
        let n = vectors.len();
        let data = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| cosine_distance(vectors[i], vectors[j])))
            .collect();
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }
}

/// Id-sorted points with their distance matrix.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub ids: Vec<String>,
    pub distances: DistanceMatrix,
}

impl PointSet {
    pub fn new(points: &[(String, StyleVector)]) -> Result<Self, ClusterError> {
        if points.len() > MAX_POINTS {
            return Err(ClusterError::TooManyPoints(points.len()));
        }
        let mut sorted: Vec<&(String, StyleVector)> = points.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ClusterError::DuplicateId(w[0].0.clone()));
        }
        if let Some(first) = sorted.first() {
            if sorted.iter().any(|p| p.1.dim() != first.1.dim()) {
                return Err(ClusterError::DimensionMismatch);
            }
        }
        let vectors: Vec<&StyleVector> = sorted.iter().map(|p| &p.1).collect();
        Ok(Self { ids: sorted.iter().map(|p| p.0.clone()).collect(), distances: DistanceMatrix::cosine(&vectors) })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Full merge history; slot `a < b`, cluster `b` absorbed into `a`.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    pub n: usize,
    pub linkage: Linkage,
    pub merges: Vec<(usize, usize, f64)>,
}

impl Dendrogram {
    pub fn build(points: &PointSet, linkage: Linkage) -> Self {
        let n = points.len();
        let mut d = points.distances.clone();
        let mut active = vec![true; n];
        let mut size = vec![1usize; n];
        let mut merges = Vec::with_capacity(n.saturating_sub(1));

        let nearest = |d: &DistanceMatrix, active: &[bool], i: usize| -> (f64, usize) {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in (0..n).filter(|&j| j != i && active[j]) {
                let v = d.get(i, j);
                // Ascending j, so strict < keeps the smallest j on ties.
                if v < best.0 {
                    best = (v, j);
                }
            }
            best
        };
        let mut nn: Vec<(f64, usize)> = (0..n).map(|i| nearest(&d, &active, i)).collect();

        for _ in 1..n {
            let mut pick: Option<(f64, usize, usize)> = None;
            for i in (0..n).filter(|&i| active[i]) {
                let (dist, j) = nn[i];
                let key = (dist, i.min(j), i.max(j));
                let better = match pick {
                    None => true,
                    Some(p) => key.0 < p.0 || (key.0 == p.0 && (key.1, key.2) < (p.1, p.2)),
                };
                if better {
                    pick = Some(key);
                }
            }
            let (dist, a, b) = pick.expect("at least two active clusters");
            for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
                let v = linkage.combine(d.get(a, k), d.get(b, k), size[a], size[b]);
                d.set(a, k, v);
            }
            active[b] = false;
            size[a] += size[b];
            merges.push((a, b, dist));

            for i in (0..n).filter(|&i| active[i]) {
                if i == a || nn[i].1 == a || nn[i].1 == b {
                    nn[i] = nearest(&d, &active, i);
                } else {
                    let v = d.get(i, a);
                    if v < nn[i].0 || (v == nn[i].0 && a < nn[i].1) {
                        nn[i] = (v, a);
                    }
                }
            }
        }
        Self { n, linkage, merges }
    }

    /// Labels after replaying merges until `k` clusters remain. Clusters are
    /// numbered by their smallest member.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>, ClusterError> {
        if k == 0 || k > self.n {
            return Err(ClusterError::InvalidK { k, n: self.n });
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        for &(a, b, _) in &self.merges[..self.n - k] {
            parent[b] = a;
        }
        fn root(parent: &[usize], mut i: usize) -> usize {
            while parent[i] != i {
                i = parent[i];
            }
            i
        }
        let mut label_of_root: HashMap<usize, usize> = HashMap::new();
        Ok((0..self.n)
            .map(|i| {
                let r = root(&parent, i);
                let next = label_of_root.len();
                *label_of_root.entry(r).or_insert(next)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    /// Ascending ids.
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub linkage: Linkage,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn label_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok().map(|i| self.labels[i])
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("utterance_id,cluster\n");
        for (id, l) in self.ids.iter().zip(&self.labels) {
            out.push_str(&format!("{id},{l}\n"));
        }
        out
    }
}

pub fn agglomerative(
    points: &[(String, StyleVector)],
    k: usize,
    linkage: Linkage,
) -> Result<ClusterAssignment, ClusterError> {
    let set = PointSet::new(points)?;
    agglomerative_on(&set, k, linkage)
}

pub fn agglomerative_on(set: &PointSet, k: usize, linkage: Linkage) -> Result<ClusterAssignment, ClusterError> {
    if set.len() < 2 {
        return Err(ClusterError::TooFewPoints { needed: 2, got: set.len() });
    }
    if k == 0 || k > set.len() {
        return Err(ClusterError::InvalidK { k, n: set.len() });
    }
    let labels = Dendrogram::build(set, linkage).cut(k)?;
    Ok(ClusterAssignment { ids: set.ids.clone(), labels, k, linkage })
}

/// Mean silhouette from a distance matrix; singleton points contribute 0.
pub fn silhouette_from_distances(distances: &DistanceMatrix, labels: &[usize], k: usize) -> Result<f64, ClusterError> {
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let n = labels.len();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in (0..n).filter(|&j| j != i) {
                sums[labels[j]] += distances.get(i, j);
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

pub fn silhouette(points: &[(String, StyleVector)], assignment: &ClusterAssignment) -> Result<f64, ClusterError> {
    let set = PointSet::new(points)?;
    if set.ids != assignment.ids {
        return Err(ClusterError::UnknownUtterance("assignment ids differ from points".into()));
    }
    silhouette_from_distances(&set.distances, &assignment.labels, assignment.k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<(usize, f64)>,
    pub best_k: usize,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut out = String::from("k,silhouette,best\n");
        for (k, s) in &self.rows {
            out.push_str(&format!("{k},{s:.6},{}\n", u8::from(*k == self.best_k)));
        }
        out
    }
}

/// Silhouette per k from one dendrogram. Values of k above the point count
/// are skipped; the earliest maximum wins.
pub fn sweep_k(set: &PointSet, k_values: &[usize], linkage: Linkage) -> Result<SweepResult, ClusterError> {
    if let Some(&k) = k_values.iter().find(|&&k| k < 2) {
        return Err(ClusterError::InvalidK { k, n: set.len() });
    }
    if set.len() < 2 {
        return Err(ClusterError::TooFewPoints { needed: 2, got: set.len() });
    }
    let dendrogram = Dendrogram::build(set, linkage);
    let mut rows = Vec::new();
    for &k in k_values.iter().filter(|&&k| k <= set.len()) {
        let labels = dendrogram.cut(k)?;
        rows.push((k, silhouette_from_distances(&set.distances, &labels, k)?));
    }
    let best_k = rows
        .iter()
        .fold(None, |best: Option<(usize, f64)>, &(k, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((k, s)),
        })
        .map(|b| b.0)
        .ok_or(ClusterError::TooFewPoints { needed: 2, got: set.len() })?;
    Ok(SweepResult { rows, best_k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRelation {
    SameAuthor,
    SameConversation,
    SameDomain,
}

impl PairRelation {
    pub const ALL: [PairRelation; 3] =
        [PairRelation::SameAuthor, PairRelation::SameConversation, PairRelation::SameDomain];

    pub fn as_str(self) -> &'static str {
        match self {
            PairRelation::SameAuthor => "same_author",
            PairRelation::SameConversation => "same_conversation",
            PairRelation::SameDomain => "same_domain",
        }
    }
}

impl fmt::Display for PairRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohesionStats {
    pub relation: PairRelation,
    pub related_pairs: u64,
    /// Fraction of related pairs placed in one cluster.
    pub observed: f64,
    pub trials: usize,
    /// Same statistic under size-preserving label permutations.
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// `baseline_std / sqrt(trials)`.
    pub baseline_stderr: f64,
}

fn same_cluster_fraction(keys: &[u32], labels: &[usize], k: usize) -> (u64, u64) {
    let mut per_key: HashMap<u32, (u64, Vec<u64>)> = HashMap::new();
    for (&key, &l) in keys.iter().zip(labels) {
        let e = per_key.entry(key).or_insert_with(|| (0, vec![0; k]));
        e.0 += 1;
        e.1[l] += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    per_key.values().fold((0, 0), |(same, total), (n, by_label)| {
        (same + by_label.iter().map(|&c| pairs(c)).sum::<u64>(), total + pairs(*n))
    })
}

pub fn cohesion_stats(
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    relation: PairRelation,
    trials: usize,
    seed: u64,
) -> Result<CohesionStats, ClusterError> {
    let trials = trials.max(1);
    let keys = assignment
        .ids
        .iter()
        .map(|id| {
            let pos = corpus.position(id).ok_or_else(|| ClusterError::UnknownUtterance(id.clone()))?;
            Ok(match relation {
                PairRelation::SameAuthor => corpus.author_of(pos),
                PairRelation::SameConversation => corpus.conversation_of(pos),
                PairRelation::SameDomain => corpus.domain_of(pos),
            })
        })
        .collect::<Result<Vec<u32>, ClusterError>>()?;
    let (same, total) = same_cluster_fraction(&keys, &assignment.labels, assignment.k);
    if total == 0 {
        return Err(ClusterError::NoRelatedPairs(relation));
    }
    let baseline: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut labels = assignment.labels.clone();
            labels.shuffle(&mut rng::stream(seed, &format!("cluster/cohesion/{relation}/trial{t}")));
            let (s, tot) = same_cluster_fraction(&keys, &labels, assignment.k);
            s as f64 / tot as f64
        })
        .collect();
    let (baseline_mean, baseline_std) = mean_std(&baseline);
    Ok(CohesionStats {
        relation,
        related_pairs: total,
        observed: same as f64 / total as f64,
        trials,
        baseline_mean,
        baseline_std,
        baseline_stderr: baseline_std / (trials as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceTable {
    pub detectors: Vec<Detector>,
    pub cluster_sizes: Vec<usize>,
    /// `[cluster][detector]` fraction of utterances on which the detector fires.
    pub prevalence: Vec<Vec<f64>>,
    pub corpus_mean: Vec<f64>,
    /// Per detector, the cluster whose prevalence deviates most from the mean.
    pub max_contrast_cluster: Vec<usize>,
}

impl PrevalenceTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("cluster,size");
        for d in &self.detectors {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
        for (c, row) in self.prevalence.iter().enumerate() {
            out.push_str(&format!("{c},{}", self.cluster_sizes[c]));
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("all,{}", self.cluster_sizes.iter().sum::<usize>()));
        for v in &self.corpus_mean {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
        out
    }
}

/// Per-cluster firing rate of each detector (see [`Detector::fires`]).
pub fn feature_consistency(
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    detectors: &[Detector],
) -> Result<PrevalenceTable, ClusterError> {
    let k = assignment.k;
    let mut counts = vec![vec![0usize; detectors.len()]; k];
    let mut totals = vec![0usize; detectors.len()];
    for (id, &label) in assignment.ids.iter().zip(&assignment.labels) {
        let text = &corpus.by_id(id).ok_or_else(|| ClusterError::UnknownUtterance(id.clone()))?.text;
        for (j, d) in detectors.iter().enumerate() {
            if d.fires(text) {
                counts[label][j] += 1;
                totals[j] += 1;
            }
        }
    }
    let sizes = assignment.sizes();
    let n = assignment.ids.len().max(1) as f64;
    let prevalence: Vec<Vec<f64>> =
        counts.iter().zip(&sizes).map(|(row, &s)| row.iter().map(|&c| c as f64 / s.max(1) as f64).collect()).collect();
    let corpus_mean: Vec<f64> = totals.iter().map(|&t| t as f64 / n).collect();
    let max_contrast_cluster = (0..detectors.len())
        .map(|j| {
            (0..k)
                .fold((0, -1.0), |(bc, bv), c| {
                    let v = (prevalence[c][j] - corpus_mean[j]).abs();
                    if v > bv {
                        (c, v)
                    } else {
                        (bc, bv)
                    }
                })
                .0
        })
        .collect();
    Ok(PrevalenceTable {
        detectors: detectors.to_vec(),
        cluster_sizes: sizes,
        prevalence,
        corpus_mean,
        max_contrast_cluster,
    })
}

/// Markdown table: cluster, size, most distinctive detector, example text.
pub fn cluster_summary_markdown(
    assignment: &ClusterAssignment,
    table: &PrevalenceTable,
    corpus: &Corpus,
    cohesion: &[CohesionStats],
) -> String {
    let mut out = format!(
        "Clustering: k = {}, linkage = {}, cosine distance, {} utterances.\n\n",
        assignment.k,
        assignment.linkage,
        assignment.ids.len()
    );
    out.push_str("| cluster | size | consistency | example |\n|---|---|---|---|\n");
    let mut first_member: BTreeMap<usize, &str> = BTreeMap::new();
    for (id, &l) in assignment.ids.iter().zip(&assignment.labels) {
        first_member.entry(l).or_insert(id);
    }
    for c in 0..assignment.k {
        let consistency = (0..table.detectors.len())
            .max_by(|&a, &b| {
                let da = (table.prevalence[c][a] - table.corpus_mean[a]).abs();
                let db = (table.prevalence[c][b] - table.corpus_mean[b]).abs();
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .map(|j| {
                format!(
                    "{}: {:.0}% (all: {:.0}%)",
                    table.detectors[j],
                    100.0 * table.prevalence[c][j],
                    100.0 * table.corpus_mean[j]
                )
            })
            .unwrap_or_default();
        let example = first_member
            .get(&c)
            .and_then(|id| corpus.by_id(id))
            .map(|u| u.text.replace('\n', " ").replace('|', "\\|"))
            .unwrap_or_default();
        let example: String = example.chars().take(80).collect();
        out.push_str(&format!("| {c} | {} | {consistency} | {example} |\n", table.cluster_sizes[c]));
    }
    if !cohesion.is_empty() {
        out.push_str("\n| relation | pairs | observed | random baseline |\n|---|---|---|---|\n");
        for s in cohesion {
            out.push_str(&format!(
                "| {} | {} | {:.1}% | {:.1}% ± {:.2} |\n",
                s.relation,
                s.related_pairs,
                100.0 * s.observed,
                100.0 * s.baseline_mean,
                100.0 * s.baseline_std
            ));
        }
    }
    out
}
