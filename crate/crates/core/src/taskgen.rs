//! Authorship verification task generation under content control.
//!
//! A CAV task is a triple (anchor `A1`, positive `A2`, negative `B`):
//! `A1` and `A2` share an author, `B` does not. The content-control level
//! restricts where `B` may come from: the anchor's conversation, the
//! anchor's domain, or anywhere. Each CAV task splits into two AV pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::rng::{self, StreamRng};

/// Attempts at drawing an unseen negative for a fixed `(A1, A2)`.
pub const DEFAULT_UNIQUENESS_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("corpus has no authors")]
    NoAuthors,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("requested {requested} anchors but only {available} eligible anchor utterances exist")]
    InsufficientAnchors { requested: usize, available: usize },
    #[error("no negative candidate for anchor {anchor:?} at {cc} content control")]
    NegativeUnavailable { anchor: String, cc: CcLevel },
    #[error("could not find an unseen negative for ({anchor:?}, {positive:?}) after {attempts} attempts")]
    UniquenessExhausted { anchor: String, positive: String, attempts: usize },
    #[error("reuse list has {got} pairs, expected {expected}")]
    ReuseLength { expected: usize, got: usize },
    #[error("reused utterance {id:?} is outside the author split")]
    ReuseOutsideSplit { id: String },
    #[error("task file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Content-control level for the negative `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcLevel {
    Conversation,
    Domain,
    /// No content control.
    Random,
}

impl CcLevel {
    pub const ALL: [CcLevel; 3] = [CcLevel::Conversation, CcLevel::Domain, CcLevel::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            CcLevel::Conversation => "conversation",
            CcLevel::Domain => "domain",
            CcLevel::Random => "random",
        }
    }
}

impl fmt::Display for CcLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CcLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conversation" | "conv" => Ok(CcLevel::Conversation),
            "domain" => Ok(CcLevel::Domain),
            "random" | "no" | "none" => Ok(CcLevel::Random),
            other => Err(format!("unknown content-control level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Disjoint author sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorSplit {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl AuthorSplit {
    pub fn get(&self, name: SplitName) -> &BTreeSet<String> {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

/// Shuffles the corpus authors with `seed` and cuts them by cumulative
/// ratio. Each part gets `floor(n * ratio)` authors; the remainder goes to
/// train.
pub fn split_authors(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<AuthorSplit, TaskGenError> {
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TaskGenError::InvalidRatios(ratios));
    }
    let n = corpus.author_names().len();
    if n == 0 {
        return Err(TaskGenError::NoAuthors);
    }
    let mut authors: Vec<&String> = corpus.author_names().iter().collect();
    authors.shuffle(&mut rng::stream(seed, "taskgen/split"));

    // The epsilon absorbs representation error such as 0.7 * 100 = 70.00000000000001.
    let part = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_dev = part(ratios[1]);
    let n_test = part(ratios[2]);
    let n_train = n - n_dev - n_test;

    let take = |range: std::ops::Range<usize>| authors[range].iter().map(|a| (*a).clone()).collect();
    Ok(AuthorSplit { train: take(0..n_train), dev: take(n_train..n_train + n_dev), test: take(n_train + n_dev..n) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CavTask {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub cc: CcLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AvLabel {
    Same,
    Different,
}

impl AvLabel {
    pub fn is_same(self) -> bool {
        self == AvLabel::Same
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AvPair {
    pub first: usize,
    pub second: usize,
    pub label: AvLabel,
}

/// Boolean mask over corpus author indices.
fn author_mask(corpus: &Corpus, authors: &BTreeSet<String>) -> Vec<bool> {
    corpus.author_names().iter().map(|a| authors.contains(a)).collect()
}

/// Draws anchors round by round: each round visits the authors that still
/// have unused anchor candidates in random order and takes one uniformly
/// chosen utterance from each.
struct AnchorSampler<'c> {
    corpus: &'c Corpus,
    remaining: Vec<(u32, Vec<usize>)>,
    round: Vec<usize>,
    available: usize,
}

impl<'c> AnchorSampler<'c> {
    fn new(corpus: &'c Corpus, mask: &[bool]) -> Self {
        let remaining: Vec<(u32, Vec<usize>)> = mask
            .iter()
            .enumerate()
            .filter(|(a, in_split)| **in_split && corpus.utterances_by_author(*a as u32).len() >= 2)
            .map(|(a, _)| (a as u32, corpus.utterances_by_author(a as u32).to_vec()))
            .collect();
        let available = remaining.iter().map(|(_, u)| u.len()).sum();
        Self { corpus, remaining, round: Vec::new(), available }
    }

    fn next_anchor(&mut self, rng: &mut StreamRng) -> Option<usize> {
        if self.available == 0 {
            return None;
        }
        if self.round.is_empty() {
            self.round = (0..self.remaining.len()).filter(|&i| !self.remaining[i].1.is_empty()).collect();
            self.round.shuffle(rng);
            // Popped from the back below.
            self.round.reverse();
        }
        let slot = self.round.pop().expect("non-empty round");
        let pool = &mut self.remaining[slot].1;
        let pick = rng.random_range(0..pool.len());
        self.available -= 1;
        Some(pool.swap_remove(pick))
    }

    fn positive_for(&self, anchor: usize, rng: &mut StreamRng) -> usize {
        let own = self.corpus.utterances_by_author(self.corpus.author_of(anchor));
        let pos = own.iter().position(|&u| u == anchor).expect("anchor in own author list");
        let mut pick = rng.random_range(0..own.len() - 1);
        if pick >= pos {
            pick += 1;
        }
        own[pick]
    }
}

/// Samples `n` `(A1, A2)` pairs from the given authors. Every `A1` is a
/// distinct utterance; `A2` is another utterance by the same author.
pub fn sample_anchor_positive_pairs(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, TaskGenError> {
    let mask = author_mask(corpus, authors);
    let mut sampler = AnchorSampler::new(corpus, &mask);
    if sampler.available < n {
        return Err(TaskGenError::InsufficientAnchors { requested: n, available: sampler.available });
    }
    let mut rng = rng::stream(seed, "taskgen/anchor");
    Ok((0..n)
        .map(|_| {
            let a1 = sampler.next_anchor(&mut rng).expect("capacity checked");
            (a1, sampler.positive_for(a1, &mut rng))
        })
        .collect())
}

/// Candidate negatives per scope, restricted to the allowed authors.
pub struct NegativeSampler<'c> {
    corpus: &'c Corpus,
    mask: Vec<bool>,
    by_conversation: Vec<Vec<usize>>,
    by_domain: Vec<Vec<usize>>,
    all: Vec<usize>,
}

impl<'c> NegativeSampler<'c> {
    pub fn new(corpus: &'c Corpus, authors: &BTreeSet<String>) -> Self {
        let mask = author_mask(corpus, authors);
        let allowed = |i: &usize| mask[corpus.author_of(*i) as usize];
        let restrict = |lists: &mut dyn Iterator<Item = &[usize]>| -> Vec<Vec<usize>> {
            lists.map(|l| l.iter().copied().filter(allowed).collect()).collect()
        };
        let by_conversation =
            restrict(&mut (0..corpus.conversation_names().len()).map(|c| corpus.utterances_in_conversation(c as u32)));
        let by_domain = restrict(&mut (0..corpus.domain_names().len()).map(|d| corpus.utterances_in_domain(d as u32)));
        let all = (0..corpus.len()).filter(allowed).collect();
        Self { corpus, mask, by_conversation, by_domain, all }
    }

    fn scope(&self, anchor: usize, cc: CcLevel) -> &[usize] {
        match cc {
            CcLevel::Conversation => &self.by_conversation[self.corpus.conversation_of(anchor) as usize],
            CcLevel::Domain => &self.by_domain[self.corpus.domain_of(anchor) as usize],
            CcLevel::Random => &self.all,
        }
    }

    fn in_scope(&self, anchor: usize, other: usize, cc: CcLevel) -> bool {
        match cc {
            CcLevel::Conversation => self.corpus.conversation_of(anchor) == self.corpus.conversation_of(other),
            CcLevel::Domain => self.corpus.domain_of(anchor) == self.corpus.domain_of(other),
            CcLevel::Random => true,
        }
    }

    /// Uniform draw over in-scope utterances of other allowed authors.
    pub fn sample(&self, anchor: usize, cc: CcLevel, rng: &mut StreamRng) -> Result<usize, TaskGenError> {
        let scope = self.scope(anchor, cc);
        let author = self.corpus.author_of(anchor);
        let own_in_scope = if self.mask[author as usize] {
            self.corpus.utterances_by_author(author).iter().filter(|&&u| self.in_scope(anchor, u, cc)).count()
        } else {
            0
        };
        if scope.len() == own_in_scope {
            return Err(TaskGenError::NegativeUnavailable { anchor: self.corpus.get(anchor).id.clone(), cc });
        }
        // Rejection sampling keeps the draw uniform over the candidates.
        loop {
            let b = scope[rng.random_range(0..scope.len())];
            if self.corpus.author_of(b) != author {
                return Ok(b);
            }
        }
    }
}

/// One-shot negative draw for `a1`.
pub fn sample_negative(
    corpus: &Corpus,
    a1: usize,
    cc: CcLevel,
    authors: &BTreeSet<String>,
    rng: &mut StreamRng,
) -> Result<usize, TaskGenError> {
    NegativeSampler::new(corpus, authors).sample(a1, cc, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedTasks {
    pub tasks: Vec<CavTask>,
    /// Anchors discarded because no negative existed in their scope.
    pub resampled_anchors: usize,
    /// `(A1, A2)` pairs occurring more than once, counted per extra occurrence.
    pub repeated_positive_pairs: usize,
}

impl GeneratedTasks {
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        self.tasks.iter().map(|t| (t.anchor, t.positive)).collect()
    }
}

/// Generates `n` CAV tasks whose three utterances all belong to `authors`.
///
/// With `reuse`, the `(A1, A2)` pairs are taken verbatim and only the
/// negatives are drawn. Without it, anchors whose scope has no negative
/// candidate are discarded and another anchor is drawn.
pub fn generate_tasks(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    cc: CcLevel,
    n: usize,
    seed: u64,
    reuse: Option<&[(usize, usize)]>,
) -> Result<GeneratedTasks, TaskGenError> {
    let negatives = NegativeSampler::new(corpus, authors);
    let mut neg_rng = rng::stream(seed, &format!("taskgen/negative/{cc}"));
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::with_capacity(n);
    let mut tasks = Vec::with_capacity(n);

    let mut draw_unseen = |a1: usize, a2: usize, rng: &mut StreamRng| -> Result<CavTask, TaskGenError> {
        for _ in 0..DEFAULT_UNIQUENESS_ATTEMPTS {
            let b = negatives.sample(a1, cc, rng)?;
            if seen.insert((a1, a2, b)) {
                return Ok(CavTask { anchor: a1, positive: a2, negative: b, cc });
            }
        }
        Err(TaskGenError::UniquenessExhausted {
            anchor: corpus.get(a1).id.clone(),
            positive: corpus.get(a2).id.clone(),
            attempts: DEFAULT_UNIQUENESS_ATTEMPTS,
        })
    };

    let mut resampled_anchors = 0;
    match reuse {
        Some(pairs) => {
            if pairs.len() != n {
                return Err(TaskGenError::ReuseLength { expected: n, got: pairs.len() });
            }
            let mask = author_mask(corpus, authors);
            for &(a1, a2) in pairs {
                for u in [a1, a2] {
                    if !mask[corpus.author_of(u) as usize] {
                        return Err(TaskGenError::ReuseOutsideSplit { id: corpus.get(u).id.clone() });
                    }
                }
                tasks.push(draw_unseen(a1, a2, &mut neg_rng)?);
            }
        }
        None => {
            let mask = author_mask(corpus, authors);
            let mut sampler = AnchorSampler::new(corpus, &mask);
            let mut anchor_rng = rng::stream(seed, "taskgen/anchor");
            while tasks.len() < n {
                let Some(a1) = sampler.next_anchor(&mut anchor_rng) else {
                    return Err(TaskGenError::InsufficientAnchors { requested: n, available: tasks.len() });
                };
                let a2 = sampler.positive_for(a1, &mut anchor_rng);
                match draw_unseen(a1, a2, &mut neg_rng) {
                    Ok(task) => tasks.push(task),
                    Err(TaskGenError::NegativeUnavailable { .. }) => resampled_anchors += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let mut pair_counts: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &tasks {
        *pair_counts.entry((t.anchor, t.positive)).or_default() += 1;
    }
    let repeated_positive_pairs = pair_counts.values().map(|c| c - 1).sum();
    Ok(GeneratedTasks { tasks, resampled_anchors, repeated_positive_pairs })
}

/// Each task becomes `(A1, A2, Same)` followed by `(A1, B, Different)`.
pub fn cav_to_av(tasks: &[CavTask]) -> Vec<AvPair> {
    tasks
        .iter()
        .flat_map(|t| {
            [
                AvPair { first: t.anchor, second: t.positive, label: AvLabel::Same },
                AvPair { first: t.anchor, second: t.negative, label: AvLabel::Different },
            ]
        })
        .collect()
}

/// Split statistics in the layout of the task-generation summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub n_av: usize,
    pub n_cav: usize,
    pub n_utterances: usize,
    pub n_authors: usize,
    /// Maximum number of tasks any single author contributes the anchor to.
    pub max_anchor_author: usize,
    pub positive_same_conversation: f64,
    pub positive_same_domain: f64,
    pub negative_same_conversation: f64,
    pub negative_same_domain: f64,
    pub repeated_positive_pairs: usize,
}

impl SplitStats {
    pub const CSV_HEADER: &'static str =
        "split,cc,n_av,n_cav,n_utterances,n_authors,ma,pos_co,pos_do,neg_co,neg_do,repeated_pos_pairs";

    pub fn csv_row(&self, split: &str, cc: &str) -> String {
        format!(
            "{split},{cc},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
            self.n_av,
            self.n_cav,
            self.n_utterances,
            self.n_authors,
            self.max_anchor_author,
            self.positive_same_conversation,
            self.positive_same_domain,
            self.negative_same_conversation,
            self.negative_same_domain,
            self.repeated_positive_pairs
        )
    }
}

pub fn task_stats(tasks: &[CavTask], corpus: &Corpus) -> SplitStats {
    let mut utterances = BTreeSet::new();
    let mut authors = BTreeSet::new();
    let mut anchor_authors: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
    let (mut pos_co, mut pos_do, mut neg_co, mut neg_do) = (0usize, 0usize, 0usize, 0usize);

    let same_conv = |a: usize, b: usize| corpus.conversation_of(a) == corpus.conversation_of(b);
    let same_dom = |a: usize, b: usize| corpus.domain_of(a) == corpus.domain_of(b);
    for t in tasks {
        for u in [t.anchor, t.positive, t.negative] {
            utterances.insert(u);
            authors.insert(corpus.author_of(u));
        }
        *anchor_authors.entry(corpus.author_of(t.anchor)).or_default() += 1;
        *pairs.entry((t.anchor, t.positive)).or_default() += 1;
        pos_co += usize::from(same_conv(t.anchor, t.positive));
        pos_do += usize::from(same_dom(t.anchor, t.positive));
        neg_co += usize::from(same_conv(t.anchor, t.negative));
        neg_do += usize::from(same_dom(t.anchor, t.negative));
    }
    let frac = |k: usize| if tasks.is_empty() { 0.0 } else { k as f64 / tasks.len() as f64 };
    SplitStats {
        n_av: 2 * tasks.len(),
        n_cav: tasks.len(),
        n_utterances: utterances.len(),
        n_authors: authors.len(),
        max_anchor_author: anchor_authors.values().copied().max().unwrap_or(0),
        positive_same_conversation: frac(pos_co),
        positive_same_domain: frac(pos_do),
        negative_same_conversation: frac(neg_co),
        negative_same_domain: frac(neg_do),
        repeated_positive_pairs: pairs.values().map(|c| c - 1).sum(),
    }
}

/// Sidecar stored next to a task TSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFileMeta {
    pub corpus: String,
    pub split: SplitName,
    pub cc: CcLevel,
    pub n: usize,
    pub seed: u64,
    pub resampled_anchors: usize,
    pub repeated_positive_pairs: usize,
    pub reused_positive_pairs_from: Option<String>,
}

pub const TASK_TSV_HEADER: &str = "task_id\tcc\ta1_id\ta2_id\tb_id";

pub fn write_tasks<W: Write>(mut out: W, tasks: &[CavTask], corpus: &Corpus) -> std::io::Result<()> {
    writeln!(out, "{TASK_TSV_HEADER}")?;
    for (i, t) in tasks.iter().enumerate() {
        writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}",
            t.cc,
            corpus.get(t.anchor).id,
            corpus.get(t.positive).id,
            corpus.get(t.negative).id
        )?;
    }
    Ok(())
}

/// Reads a task TSV, resolving utterance ids against `corpus`.
pub fn read_tasks<R: Read>(reader: R, corpus: &Corpus) -> Result<Vec<CavTask>, TaskGenError> {
    let mut tasks = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line_no == 1 {
            if line != TASK_TSV_HEADER {
                return Err(TaskGenError::Parse { line: 1, message: format!("expected header {TASK_TSV_HEADER:?}") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| TaskGenError::Parse { line: line_no, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(format!("expected 5 columns, found {}", cols.len())));
        }
        let cc: CcLevel = cols[1].parse().map_err(parse_err)?;
        let resolve =
            |id: &str| corpus.position(id).ok_or_else(|| parse_err(format!("utterance {id:?} not in corpus")));
        tasks.push(CavTask { anchor: resolve(cols[2])?, positive: resolve(cols[3])?, negative: resolve(cols[4])?, cc });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;

    fn grid_corpus(authors: usize, per_author: usize) -> Corpus {
        let mut us = Vec::new();
        for a in 0..authors {
            for j in 0..per_author {
                us.push(Utterance::new(
                    format!("a{a}-{j}"),
                    format!("a{a}"),
                    format!("c{j}"),
                    format!("d{}", j % 2),
                    "text",
                ));
            }
        }
        Corpus::from_utterances(us).unwrap()
    }

    fn all_authors(c: &Corpus) -> BTreeSet<String> {
        c.author_names().iter().cloned().collect()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let c = grid_corpus(100, 1);
        let s = split_authors(&c, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!(s.sizes(), (70, 15, 15));
        let c = grid_corpus(10, 1);
        let s = split_authors(&c, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
        assert_eq!(s, split_authors(&c, [0.7, 0.15, 0.15], 1).unwrap());
        assert!(s.train.is_disjoint(&s.dev) && s.train.is_disjoint(&s.test) && s.dev.is_disjoint(&s.test));
    }

    #[test]
    fn split_rejects_bad_input() {
        let c = grid_corpus(10, 1);
        assert!(matches!(split_authors(&c, [0.5, 0.5, 0.5], 1), Err(TaskGenError::InvalidRatios(_))));
        assert!(matches!(split_authors(&c, [1.0, 0.0, 0.0], 1), Err(TaskGenError::InvalidRatios(_))));
        let empty = Corpus::from_utterances(vec![]).unwrap();
        assert!(matches!(split_authors(&empty, [0.7, 0.15, 0.15], 1), Err(TaskGenError::NoAuthors)));
    }

    #[test]
    fn two_utterance_author_forces_pair() {
        let c = Corpus::from_utterances(vec![
            Utterance::new("u", "x", "c", "d", "t"),
            Utterance::new("v", "x", "c", "d", "t"),
        ])
        .unwrap();
        let pairs = sample_anchor_positive_pairs(&c, &all_authors(&c), 2, 4).unwrap();
        let mut ids: Vec<(&str, &str)> =
            pairs.iter().map(|&(a, b)| (c.get(a).id.as_str(), c.get(b).id.as_str())).collect();
        ids.sort();
        assert_eq!(ids, vec![("u", "v"), ("v", "u")]);
    }

    #[test]
    fn balanced_author_load_when_divisible() {
        let c = grid_corpus(3, 10);
        for seed in 0..50 {
            let pairs = sample_anchor_positive_pairs(&c, &all_authors(&c), 9, seed).unwrap();
            let mut load = [0usize; 3];
            for (a1, a2) in &pairs {
                load[c.author_of(*a1) as usize] += 1;
                assert_eq!(c.author_of(*a1), c.author_of(*a2));
                assert_ne!(a1, a2);
            }
            assert_eq!(load, [3, 3, 3], "seed {seed}");
            let distinct: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
            assert_eq!(distinct.len(), 9);
        }
    }

    #[test]
    fn too_many_anchors_reports_maximum() {
        let c = grid_corpus(2, 3);
        match sample_anchor_positive_pairs(&c, &all_authors(&c), 7, 0) {
            Err(TaskGenError::InsufficientAnchors { requested: 7, available: 6 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_author_conversation_has_no_negative() {
        let c = Corpus::from_utterances(vec![
            Utterance::new("u", "x", "c1", "d", "t"),
            Utterance::new("v", "x", "c1", "d", "t"),
            Utterance::new("w", "y", "c2", "d", "t"),
        ])
        .unwrap();
        let mut rng = rng::stream(0, "t");
        let err = sample_negative(&c, 0, CcLevel::Conversation, &all_authors(&c), &mut rng).unwrap_err();
        assert!(matches!(err, TaskGenError::NegativeUnavailable { .. }));
        assert_eq!(sample_negative(&c, 0, CcLevel::Domain, &all_authors(&c), &mut rng).unwrap(), 2);
    }

    #[test]
    fn negative_respects_author_set() {
        let c = grid_corpus(4, 4);
        let allowed: BTreeSet<String> = ["a0", "a1"].iter().map(|s| s.to_string()).collect();
        let mut rng = rng::stream(3, "t");
        for _ in 0..100 {
            let b = sample_negative(&c, 0, CcLevel::Random, &allowed, &mut rng).unwrap();
            assert_eq!(c.get(b).author, "a1");
        }
    }

    #[test]
    fn zero_tasks_is_empty() {
        let c = grid_corpus(3, 3);
        let g = generate_tasks(&c, &all_authors(&c), CcLevel::Random, 0, 0, None).unwrap();
        assert!(g.tasks.is_empty());
    }

    #[test]
    fn cav_to_av_order_and_labels() {
        let t = CavTask { anchor: 0, positive: 1, negative: 2, cc: CcLevel::Domain };
        let av = cav_to_av(&[t]);
        assert_eq!(av.len(), 2);
        assert_eq!((av[0].second, av[0].label), (1, AvLabel::Same));
        assert_eq!((av[1].second, av[1].label), (2, AvLabel::Different));
        assert!(cav_to_av(&[]).is_empty());
    }

    #[test]
    fn stats_on_constructed_tasks() {
        let c = grid_corpus(3, 4);
        // a0-0 and a0-1 are in different conversations but the same domain parity differs too.
        let p = |id: &str| c.position(id).unwrap();
        let tasks = vec![
            CavTask { anchor: p("a0-0"), positive: p("a0-2"), negative: p("a1-0"), cc: CcLevel::Conversation },
            CavTask { anchor: p("a0-1"), positive: p("a0-3"), negative: p("a2-1"), cc: CcLevel::Conversation },
        ];
        let s = task_stats(&tasks, &c);
        assert_eq!((s.n_cav, s.n_av, s.n_utterances, s.n_authors, s.max_anchor_author), (2, 4, 6, 3, 2));
        assert_eq!(s.positive_same_conversation, 0.0);
        assert_eq!(s.positive_same_domain, 1.0);
        assert_eq!(s.negative_same_conversation, 1.0);
        assert_eq!(s.negative_same_domain, 1.0);
    }

    #[test]
    fn task_tsv_roundtrip() {
        let c = grid_corpus(4, 6);
        let g = generate_tasks(&c, &all_authors(&c), CcLevel::Conversation, 10, 5, None).unwrap();
        let mut buf = Vec::new();
        write_tasks(&mut buf, &g.tasks, &c).unwrap();
        assert_eq!(read_tasks(buf.as_slice(), &c).unwrap(), g.tasks);
        let bad = format!("{TASK_TSV_HEADER}\n0\tconversation\tnope\ta0-0\ta1-0\n");
        assert!(matches!(read_tasks(bad.as_bytes(), &c), Err(TaskGenError::Parse { line: 2, .. })));
    }
}
