//! Siamese training of the [`EncoderModel`].
//!
//! Distances are cosine distances between encoder outputs. Three objectives
//! are supported:
//!
//! * contrastive on AV pairs: `½·d²` for Same, `½·max(0, m − d)²` for
//!   Different, averaged over the batch;
//! * triplet on CAV triples: `max(0, d(A1,A2) − d(A1,B) + m)`, averaged over
//!   the batch;
//! * online contrastive on AV pairs: the contrastive terms summed over hard
//!   pairs only. A Different pair is hard when it is closer than the
//!   farthest Same pair in the batch; a Same pair is hard when it is farther
//!   than the closest Different pair.
//!
//! Hinges use a zero subgradient at the kink. Optimisation is mini-batch
//! Adam with a linear warm-up followed by a constant learning rate; the
//! parameters of the epoch with the best dev metric are returned.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::{cosine_similarity, extract_features, EncoderError, EncoderModel, Features, ForwardCache};
use crate::eval::{best_threshold, EvalError};
use crate::rng;
use crate::taskgen::{AvLabel, AvPair, CavTask};

/// Learning rate used for transformer fine-tuning; the linear encoder
/// usually needs a much larger one (1e-2 works on the fixtures).
pub const PAPER_LEARNING_RATE: f64 = 2e-5;
pub const MARGIN_GRID: [f64; 3] = [0.4, 0.5, 0.6];
/// Final dev metric at or below this is reported as "did not learn".
pub const DID_NOT_LEARN_THRESHOLD: f64 = 0.52;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{loss} loss needs {expected} training data")]
    DataMismatch { loss: LossKind, expected: &'static str },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; batch {batch:?}")]
    NonFinite { epoch: usize, step: usize, batch: Vec<String> },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrastive,
    Triplet,
    OnlineContrastive,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::OnlineContrastive => "online_contrastive",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "online_contrastive" | "online" => Ok(LossKind::OnlineContrastive),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Triplet,
            margin: 0.5,
            batch_size: 8,
            epochs: 4,
            warmup_fraction: 0.10,
            learning_rate: PAPER_LEARNING_RATE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.margin.is_nan() || self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }
}

/// Loss value and its derivative with respect to the distance.
pub fn contrastive_loss(d: f64, label: AvLabel, margin: f64) -> (f64, f64) {
    match label {
        AvLabel::Same => (0.5 * d * d, d),
        AvLabel::Different => {
            let gap = margin - d;
            if gap > 0.0 {
                (0.5 * gap * gap, -gap)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Loss value and derivatives with respect to `d_pos` and `d_neg`.
pub fn triplet_loss(d_pos: f64, d_neg: f64, margin: f64) -> (f64, f64, f64) {
    let z = d_pos - d_neg + margin;
    if z > 0.0 {
        (z, 1.0, -1.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Summed contrastive loss over the hard pairs of a batch, with per-pair
/// derivatives (zero for pairs that are not hard).
pub fn online_contrastive_loss(batch: &[(f64, AvLabel)], margin: f64) -> (f64, Vec<f64>) {
    let max_same = batch
        .iter()
        .filter(|(_, l)| l.is_same())
        .map(|(d, _)| *d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let min_diff = batch
        .iter()
        .filter(|(_, l)| !l.is_same())
        .map(|(d, _)| *d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));

    let mut total = 0.0;
    let grads = batch
        .iter()
        .map(|&(d, label)| {
            let hard = match label {
                AvLabel::Same => min_diff.is_some_and(|m| d > m),
                AvLabel::Different => max_same.is_some_and(|m| d < m),
            };
            if !hard {
                return 0.0;
            }
            let (l, g) = contrastive_loss(d, label, margin);
            total += l;
            g
        })
        .collect();
    (total, grads)
}

#[derive(Debug, Clone)]
pub enum TrainingData {
    Pairs(Vec<AvPair>),
    Triples(Vec<CavTask>),
}

impl TrainingData {
    pub fn len(&self) -> usize {
        match self {
            TrainingData::Pairs(p) => p.len(),
            TrainingData::Triples(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn utterances(&self) -> Vec<usize> {
        let mut out: Vec<usize> = match self {
            TrainingData::Pairs(p) => p.iter().flat_map(|p| [p.first, p.second]).collect(),
            TrainingData::Triples(t) => t.iter().flat_map(|t| [t.anchor, t.positive, t.negative]).collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    fn check_loss(&self, loss: LossKind) -> Result<(), TrainError> {
        match (loss, self) {
            (LossKind::Triplet, TrainingData::Triples(_)) => Ok(()),
            (LossKind::Triplet, _) => Err(TrainError::DataMismatch { loss, expected: "CAV triple" }),
            (_, TrainingData::Pairs(_)) => Ok(()),
            _ => Err(TrainError::DataMismatch { loss, expected: "AV pair" }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_metric: f64,
    pub learning_rates: Vec<f64>,
    pub step_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based; earliest epoch among those with the best dev metric.
    pub selected_epoch: usize,
    /// "binary_accuracy" or "triplet_accuracy".
    pub dev_metric_name: String,
    pub did_not_learn: bool,
}

impl TrainHistory {
    pub fn selected(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }

    pub const CSV_HEADER: &'static str = "epoch,mean_loss,dev_metric,selected";

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.8},{:.6},{}\n",
                e.epoch,
                e.mean_loss,
                e.dev_metric,
                u8::from(e.epoch == self.selected_epoch)
            ));
        }
        out
    }
}

/// Learning rate at 0-based `step`: `lr · step / warmup` during warm-up,
/// `lr` afterwards.
pub fn scheduled_lr(base: f64, step: usize, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        base * step as f64 / warmup_steps as f64
    } else {
        base
    }
}

pub fn warmup_steps(total_steps: usize, fraction: f64) -> usize {
    (total_steps as f64 * fraction).ceil() as usize
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &EncoderModel) -> Self {
        Self { m: model.zero_grads(), v: model.zero_grads(), t: 0 }
    }

    fn step(&mut self, model: &mut EncoderModel, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((params, g), m), v) in model.parameters_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..params.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                if lr != 0.0 {
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Batch loss and parameter gradients. `features` must contain every
/// utterance referenced by the batch.
pub fn batch_loss_and_grads(
    model: &EncoderModel,
    features: &HashMap<usize, Features>,
    data: &TrainingData,
    batch: &[usize],
    loss: LossKind,
    margin: f64,
) -> (f64, Vec<Vec<f64>>) {
    let mut caches: HashMap<usize, ForwardCache> = HashMap::new();
    let mut forward =
        |u: usize| caches.entry(u).or_insert_with(|| model.forward_features(features[&u].clone())).output.clone();
    // ∂L/∂output per utterance, accumulated over every role it plays.
    let mut grad_out: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut add = |u: usize, g: Vec<f64>| grad_out.push((u, g));
    let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<f64>>();

    let total = match (data, loss) {
        (TrainingData::Triples(tasks), _) => {
            let n = batch.len() as f64;
            let mut total = 0.0;
            for &i in batch {
                let t = tasks[i];
                let (a, p, b) = (forward(t.anchor), forward(t.positive), forward(t.negative));
                let d_pos = 1.0 - cosine_similarity(&a, &p);
                let d_neg = 1.0 - cosine_similarity(&a, &b);
                let (l, g_pos, g_neg) = triplet_loss(d_pos, d_neg, margin);
                total += l / n;
                if g_pos != 0.0 || g_neg != 0.0 {
                    // d = 1 − a·x, so ∂d/∂a = −x and ∂d/∂x = −a.
                    let (g_pos, g_neg) = (g_pos / n, g_neg / n);
                    let ga: Vec<f64> =
                        p.as_slice().iter().zip(b.as_slice()).map(|(pv, bv)| -g_pos * pv - g_neg * bv).collect();
                    add(t.anchor, ga);
                    add(t.positive, scale(a.as_slice(), -g_pos));
                    add(t.negative, scale(a.as_slice(), -g_neg));
                }
            }
            total
        }
        (TrainingData::Pairs(pairs), loss) => {
            let encoded: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let p = pairs[i];
                    (p, forward(p.first), forward(p.second))
                })
                .collect();
            let dists: Vec<(f64, AvLabel)> =
                encoded.iter().map(|(p, x, y)| (1.0 - cosine_similarity(x, y), p.label)).collect();
            let (total, dgrads) = if loss == LossKind::OnlineContrastive {
                online_contrastive_loss(&dists, margin)
            } else {
                let n = batch.len() as f64;
                dists.iter().fold((0.0, Vec::new()), |(t, mut gs), &(d, l)| {
                    let (lv, g) = contrastive_loss(d, l, margin);
                    gs.push(g / n);
                    (t + lv / n, gs)
                })
            };
            for ((p, x, y), g) in encoded.iter().zip(dgrads) {
                if g != 0.0 {
                    add(p.first, scale(y.as_slice(), -g));
                    add(p.second, scale(x.as_slice(), -g));
                }
            }
            total
        }
    };

    let mut grads = model.zero_grads();
    for (u, g) in &grad_out {
        model.backward(&caches[u], g, &mut grads);
    }
    (total, grads)
}

fn dev_metric(
    model: &EncoderModel,
    features: &HashMap<usize, Features>,
    dev: &TrainingData,
) -> Result<f64, TrainError> {
    let enc = |u: usize| model.forward_features(features[&u].clone()).output;
    match dev {
        TrainingData::Triples(tasks) => {
            let correct = tasks
                .iter()
                .filter(|t| {
                    let a = enc(t.anchor);
                    cosine_similarity(&a, &enc(t.positive)) > cosine_similarity(&a, &enc(t.negative))
                })
                .count();
            Ok(correct as f64 / tasks.len().max(1) as f64)
        }
        TrainingData::Pairs(pairs) => {
            let scores: Vec<f64> = pairs.iter().map(|p| cosine_similarity(&enc(p.first), &enc(p.second))).collect();
            let labels: Vec<AvLabel> = pairs.iter().map(|p| p.label).collect();
            Ok(best_threshold(&scores, &labels)?.1)
        }
    }
}

/// Feature vectors for every utterance used by the given data sets.
pub fn feature_cache(
    model: &EncoderModel,
    corpus: &Corpus,
    sets: &[&TrainingData],
) -> Result<HashMap<usize, Features>, TrainError> {
    let mut out = HashMap::new();
    for set in sets {
        for u in set.utterances() {
            if let std::collections::hash_map::Entry::Vacant(e) = out.entry(u) {
                e.insert(extract_features(&corpus.get(u).text, &model.feature_config)?);
            }
        }
    }
    Ok(out)
}

/// Trains a copy of `model` and returns the parameters of the best dev epoch.
pub fn train(
    model: &EncoderModel,
    corpus: &Corpus,
    train_data: &TrainingData,
    dev_data: &TrainingData,
    config: &TrainConfig,
) -> Result<(EncoderModel, TrainHistory), TrainError> {
    config.validate()?;
    train_data.check_loss(config.loss)?;
    dev_data.check_loss(config.loss)?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let features = feature_cache(model, corpus, &[train_data, dev_data])?;

    let n = train_data.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup = warmup_steps(total_steps, config.warmup_fraction);

    let mut current = model.clone();
    let mut adam = Adam::new(&current);
    let mut best: Option<(f64, usize, EncoderModel)> = None;
    let mut records = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, &format!("train/shuffle/epoch{epoch}")));
        let mut step_losses = Vec::with_capacity(steps_per_epoch);
        let mut learning_rates = Vec::with_capacity(steps_per_epoch);
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) =
                batch_loss_and_grads(&current, &features, train_data, batch, config.loss, config.margin);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, step, batch: batch_ids(corpus, train_data, batch) });
            }
            let lr = scheduled_lr(config.learning_rate, step, warmup);
            adam.step(&mut current, &grads, lr);
            step_losses.push(loss);
            learning_rates.push(lr);
            step += 1;
        }
        let mean_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
        let metric = dev_metric(&current, &features, dev_data)?;
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, current.clone()));
        }
        records.push(EpochRecord { epoch, mean_loss, dev_metric: metric, learning_rates, step_losses });
    }

    let (_, selected_epoch, selected) = best.expect("at least one epoch");
    let last_metric = records.last().map(|r| r.dev_metric).unwrap_or(0.0);
    let history = TrainHistory {
        epochs: records,
        selected_epoch,
        dev_metric_name: match dev_data {
            TrainingData::Triples(_) => "triplet_accuracy",
            TrainingData::Pairs(_) => "binary_accuracy",
        }
        .to_owned(),
        did_not_learn: last_metric <= DID_NOT_LEARN_THRESHOLD,
    };
    Ok((selected, history))
}

fn batch_ids(corpus: &Corpus, data: &TrainingData, batch: &[usize]) -> Vec<String> {
    batch
        .iter()
        .map(|&i| match data {
            TrainingData::Pairs(p) => format!("{}|{}", corpus.get(p[i].first).id, corpus.get(p[i].second).id),
            TrainingData::Triples(t) => format!(
                "{}|{}|{}",
                corpus.get(t[i].anchor).id,
                corpus.get(t[i].positive).id,
                corpus.get(t[i].negative).id
            ),
        })
        .collect()
}
