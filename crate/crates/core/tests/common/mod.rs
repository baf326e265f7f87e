#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use stylecav::cluster::DistanceMatrix;
use stylecav::encoder::{cosine_similarity, Features};
use stylecav::rng::{self, StreamRng};
use stylecav::taskgen::{generate_tasks, GeneratedTasks};
use stylecav::training::{batch_loss_and_grads, LossKind, TrainingData};
use stylecav::{AvLabel, AvPair, CavTask, CcLevel, Corpus, EncoderModel, FeatureConfig, StyleVector};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Samples whose hinge or hard-pair selection is this close to switching
/// are skipped.
const KINK_GAP: f64 = 1e-3;

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

fn random_features(dim: usize, rng: &mut StreamRng) -> Features {
    let entries = (0..dim).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
    Features { dim, entries }
}

fn outputs(model: &EncoderModel, features: &HashMap<usize, Features>) -> HashMap<usize, StyleVector> {
    features.iter().map(|(&u, f)| (u, model.forward_features(f.clone()).output)).collect()
}

fn dist(out: &HashMap<usize, StyleVector>, a: usize, b: usize) -> f64 {
    1.0 - cosine_similarity(&out[&a], &out[&b])
}

/// Distances in the batch sit away from every non-differentiable point and
/// at least one term is active.
fn smooth_and_active(loss: LossKind, data: &TrainingData, out: &HashMap<usize, StyleVector>, margin: f64) -> bool {
    match data {
        TrainingData::Triples(tasks) => {
            let z: Vec<f64> = tasks
                .iter()
                .map(|t| dist(out, t.anchor, t.positive) - dist(out, t.anchor, t.negative) + margin)
                .collect();
            z.iter().all(|z| z.abs() > KINK_GAP) && z.iter().any(|&z| z > 0.0)
        }
        TrainingData::Pairs(pairs) => {
            let d: Vec<(f64, AvLabel)> = pairs.iter().map(|p| (dist(out, p.first, p.second), p.label)).collect();
            let hinge_ok = d.iter().all(|&(d, l)| l.is_same() || (margin - d).abs() > KINK_GAP);
            if loss != LossKind::OnlineContrastive {
                return hinge_ok;
            }
            let max_same = d.iter().filter(|x| x.1.is_same()).map(|x| x.0).fold(f64::MIN, f64::max);
            let min_diff = d.iter().filter(|x| !x.1.is_same()).map(|x| x.0).fold(f64::MAX, f64::min);
            let selection_ok = d.iter().all(|&(v, l)| {
                let pivot = if l.is_same() { min_diff } else { max_same };
                v == pivot || (v - pivot).abs() > KINK_GAP
            });
            let any_hard = d.iter().any(|&(v, l)| if l.is_same() { v > min_diff } else { v < max_same && margin > v });
            hinge_ok && selection_ok && any_hard
        }
    }
}

fn random_batch(loss: LossKind, n_utt: usize, batch: usize, rng: &mut StreamRng) -> TrainingData {
    let mut pick3 = || {
        let a = rng.random_range(0..n_utt);
        let mut b = rng.random_range(0..n_utt);
        while b == a {
            b = rng.random_range(0..n_utt);
        }
        let mut c = rng.random_range(0..n_utt);
        while c == a || c == b {
            c = rng.random_range(0..n_utt);
        }
        (a, b, c)
    };
    match loss {
        LossKind::Triplet => TrainingData::Triples(
            (0..batch)
                .map(|_| {
                    let (a, p, n) = pick3();
                    CavTask { anchor: a, positive: p, negative: n, cc: CcLevel::Random }
                })
                .collect(),
        ),
        _ => TrainingData::Pairs(
            (0..batch)
                .map(|i| {
                    let (a, b, _) = pick3();
                    let label = if i % 2 == 0 { AvLabel::Same } else { AvLabel::Different };
                    AvPair { first: a, second: b, label }
                })
                .collect(),
        ),
    }
}

/// Central finite differences against `batch_loss_and_grads` on random
/// models (d_embed 4, 16 input features) and random batches.
pub fn gradient_check(loss: LossKind, hidden: Option<usize>, samples: usize, seed: u64) -> GradReport {
    let mut rng = rng::stream(seed, &format!("gradcheck/{}/{hidden:?}", loss.as_str()));
    let cfg = FeatureConfig { char_ngram_orders: vec![1], hash_dim: 16, explicit_features: vec![] };
    let margin = match loss {
        LossKind::Triplet => 0.5,
        _ => 0.8,
    };
    let mut report = GradReport::default();
    let mut attempt = 0u64;
    while report.checked < samples {
        attempt += 1;
        assert!(attempt < 100 * samples as u64, "too many samples rejected near kinks");
        let model = EncoderModel::random(cfg.clone(), 4, hidden, seed.wrapping_mul(7919).wrapping_add(attempt));
        let n_utt = 6;
        let features: HashMap<usize, Features> = (0..n_utt).map(|u| (u, random_features(16, &mut rng))).collect();
        let data = random_batch(loss, n_utt, 4, &mut rng);
        let batch: Vec<usize> = (0..data.len()).collect();
        if !smooth_and_active(loss, &data, &outputs(&model, &features), margin) {
            report.skipped += 1;
            continue;
        }
        let (_, analytic) = batch_loss_and_grads(&model, &features, &data, &batch, loss, margin);
        let mut probe = model.clone();
        for (t, grad) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; grad.len()];
            for (i, num) in numeric.iter_mut().enumerate() {
                let orig = probe.parameters_mut()[t][i];
                probe.parameters_mut()[t][i] = orig + FD_STEP;
                let plus = batch_loss_and_grads(&probe, &features, &data, &batch, loss, margin).0;
                probe.parameters_mut()[t][i] = orig - FD_STEP;
                let minus = batch_loss_and_grads(&probe, &features, &data, &batch, loss, margin).0;
                probe.parameters_mut()[t][i] = orig;
                *num = (plus - minus) / (2.0 * FD_STEP);
            }
            let diff: f64 = grad.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = norm(grad) + norm(&numeric);
            let rel = if scale < 1e-12 { diff } else { diff / scale };
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        report.checked += 1;
    }
    report
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Wins plus half ties over every (positive, negative) pair.
pub fn brute_force_auc(scores: &[f64], labels: &[AvLabel]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (sp, lp) in scores.iter().zip(labels) {
        if !lp.is_same() {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if ln.is_same() {
                continue;
            }
            den += 1.0;
            if sp > sn {
                num += 1.0;
            } else if sp == sn {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Textbook silhouette on a full distance matrix.
pub fn brute_force_silhouette(d: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let a =
            (0..n).filter(|&j| j != i && labels[j] == labels[i]).map(|j| d.get(i, j)).sum::<f64>() / (own - 1) as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                members.iter().map(|&j| d.get(i, j)).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// `k` tight Gaussian blobs around random unit centroids in `dim` dimensions.
pub fn vector_blobs(k: usize, per_blob: usize, dim: usize, spread: f64, seed: u64) -> Vec<(String, StyleVector)> {
    let mut rng = rng::stream(seed, &format!("blobs/{k}"));
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let noise = Normal::new(0.0, spread).expect("valid");
    let centroids: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect()).collect();
    let mut out = Vec::new();
    for (c, centre) in centroids.iter().enumerate() {
        let len = norm(centre);
        for p in 0..per_blob {
            let v: Vec<f64> = centre.iter().map(|x| x / len + noise.sample(&mut rng)).collect();
            out.push((format!("b{c}-p{p:03}"), StyleVector::normalized(v).expect("non-zero")));
        }
    }
    out
}

/// Conversation, domain and random task sets sharing one set of
/// anchor–positive pairs.
pub fn tasks_all_cc(corpus: &Corpus, authors: &BTreeSet<String>, n: usize, seed: u64) -> Vec<(CcLevel, Vec<CavTask>)> {
    let conv: GeneratedTasks = generate_tasks(corpus, authors, CcLevel::Conversation, n, seed, None).expect("tasks");
    let pairs = conv.positive_pairs();
    let mut out = vec![(CcLevel::Conversation, conv.tasks)];
    for cc in [CcLevel::Domain, CcLevel::Random] {
        let t = generate_tasks(corpus, authors, cc, n, seed, Some(&pairs)).expect("tasks");
        out.push((cc, t.tasks));
    }
    out
}

pub fn mini_stel_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_stel.tsv")
}

/// Lowercased word tokens with surrounding punctuation stripped.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Shared tokens over the token count of the shorter text.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    ta.intersection(&tb).count() as f64 / ta.len().min(tb.len()) as f64
}

/// Maps each text to a basis vector for its known style label.
pub struct StyleOracle {
    pub by_text: HashMap<String, StyleVector>,
}

impl StyleOracle {
    /// Labels anchor1 and its matching sentence with one style, anchor2 and
    /// the other sentence with a second style, per dimension.
    pub fn from_instances(instances: &[stylecav::stel::StelInstance]) -> Self {
        use stylecav::stel::{StelAnswer, StelDimension};
        let dim = 2 * StelDimension::ALL.len();
        let mut by_text = HashMap::new();
        for inst in instances {
            let d = StelDimension::ALL.iter().position(|&x| x == inst.dimension).expect("known") * 2;
            let (same1, same2) = match inst.ground_truth {
                StelAnswer::NoReorder => (&inst.sentence1, &inst.sentence2),
                StelAnswer::Reorder => (&inst.sentence2, &inst.sentence1),
            };
            for t in [&inst.anchor1, same1] {
                by_text.insert(t.clone(), StyleVector::basis(dim, d));
            }
            for t in [&inst.anchor2, same2] {
                by_text.insert(t.clone(), StyleVector::basis(dim, d + 1));
            }
        }
        Self { by_text }
    }
}

impl stylecav::eval::Embedder for StyleOracle {
    fn embed(&self, id: &str, text: &str) -> Result<StyleVector, stylecav::eval::EvalError> {
        self.by_text.get(text).cloned().ok_or_else(|| stylecav::eval::EvalError::MissingEmbedding(id.to_owned()))
    }
}

/// Hashed bag of words: similarity is pure lexical overlap.
pub struct LexicalEmbedder;

impl stylecav::eval::Embedder for LexicalEmbedder {
    fn embed(&self, _id: &str, text: &str) -> Result<StyleVector, stylecav::eval::EvalError> {
        let mut v = vec![0.0; 512];
        for t in tokens(text) {
            v[(stylecav::rng::fnv1a64(t.as_bytes()) % 512) as usize] += 1.0;
        }
        v[511] += 1e-9;
        Ok(StyleVector::normalized(v).expect("non-zero"))
    }
}
