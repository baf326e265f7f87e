//! Stylometric features and the linear style encoder.
//!
//! A text is described by hashed character n-gram counts (L1-normalised)
//! followed by a small block of explicit style detectors. The encoder maps
//! this vector through an affine projection, optionally preceded by one
//! tanh hidden layer, and L2-normalises the result.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, fnv1a64};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HASH_DIM: usize = 2048;
pub const DEFAULT_EMBED_DIM: usize = 64;
/// Pre-normalisation norm below which [`EncoderModel::encode`] returns e₁.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot extract features from empty text")]
    EmptyText,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Explicit style detectors appended after the hashed n-gram block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Text ends in `.`, `!`, `?` or `…` (trailing whitespace ignored).
    FinalPunctuation,
    /// Standalone lowercase pronoun "i".
    LowercaseI,
    /// Share of apostrophes written as U+2019 rather than U+0027.
    CurlyApostrophe,
    /// Contraction written without its apostrophe ("dont", "didnt").
    MissingApostrophe,
    /// Line breaks n, scaled to n / (n + 1).
    LineBreaks,
    /// Uppercase letters over all letters.
    UppercaseRatio,
    /// Digits over all characters.
    DigitRatio,
    /// Mean whitespace-token length in characters, divided by 20 and capped at 1.
    MeanWordLength,
    /// A run of two or more `!` / `?` characters.
    ElongatedPunctuation,
}

const MISSING_APOSTROPHE_FORMS: [&str; 24] = [
    "dont", "didnt", "doesnt", "cant", "wont", "isnt", "arent", "wasnt", "werent", "im", "ive", "youre", "youve",
    "theyre", "thats", "wouldnt", "couldnt", "shouldnt", "hasnt", "havent", "hadnt", "aint", "whats", "lets",
];

impl Detector {
    pub const ALL: [Detector; 9] = [
        Detector::FinalPunctuation,
        Detector::LowercaseI,
        Detector::CurlyApostrophe,
        Detector::MissingApostrophe,
        Detector::LineBreaks,
        Detector::UppercaseRatio,
        Detector::DigitRatio,
        Detector::MeanWordLength,
        Detector::ElongatedPunctuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::FinalPunctuation => "final_punctuation",
            Detector::LowercaseI => "lowercase_i",
            Detector::CurlyApostrophe => "curly_apostrophe",
            Detector::MissingApostrophe => "missing_apostrophe",
            Detector::LineBreaks => "line_breaks",
            Detector::UppercaseRatio => "uppercase_ratio",
            Detector::DigitRatio => "digit_ratio",
            Detector::MeanWordLength => "mean_word_length",
            Detector::ElongatedPunctuation => "elongated_punctuation",
        }
    }

    /// Binary detectors take only the values 0 and 1.
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Detector::FinalPunctuation
                | Detector::LowercaseI
                | Detector::MissingApostrophe
                | Detector::ElongatedPunctuation
        )
    }

    /// Value in `[0, 1]`.
    pub fn value(self, text: &str) -> f64 {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Detector::FinalPunctuation => flag(matches!(text.trim_end().chars().last(), Some('.' | '!' | '?' | '…'))),
            Detector::LowercaseI => flag(words(text).any(|w| w == "i")),
            Detector::CurlyApostrophe => {
                let curly = text.chars().filter(|&c| c == '\u{2019}').count();
                let straight = text.chars().filter(|&c| c == '\'').count();
                if curly + straight == 0 {
                    0.0
                } else {
                    curly as f64 / (curly + straight) as f64
                }
            }
            Detector::MissingApostrophe => flag(words(text).any(|w| {
                let lower = w.to_lowercase();
                MISSING_APOSTROPHE_FORMS.contains(&lower.as_str())
            })),
            Detector::LineBreaks => {
                let n = text.chars().filter(|&c| c == '\n').count() as f64;
                n / (n + 1.0)
            }
            Detector::UppercaseRatio => {
                let (upper, letters) = text
                    .chars()
                    .filter(|c| c.is_alphabetic())
                    .fold((0usize, 0usize), |(u, l), c| (u + usize::from(c.is_uppercase()), l + 1));
                if letters == 0 {
                    0.0
                } else {
                    upper as f64 / letters as f64
                }
            }
            Detector::DigitRatio => {
                let total = text.chars().count();
                if total == 0 {
                    0.0
                } else {
                    text.chars().filter(char::is_ascii_digit).count() as f64 / total as f64
                }
            }
            Detector::MeanWordLength => {
                let (chars, count) =
                    text.split_whitespace().fold((0usize, 0usize), |(c, n), w| (c + w.chars().count(), n + 1));
                if count == 0 {
                    0.0
                } else {
                    (chars as f64 / count as f64 / 20.0).min(1.0)
                }
            }
            Detector::ElongatedPunctuation => {
                let mut run = 0;
                let mut found = false;
                for c in text.chars() {
                    if c == '!' || c == '?' {
                        run += 1;
                        found |= run >= 2;
                    } else {
                        run = 0;
                    }
                }
                flag(found)
            }
        }
    }

    /// Whether the detector fires on `text`. Ratio-valued detectors fire
    /// above one half.
    pub fn fires(self, text: &str) -> bool {
        self.value(text) > 0.5
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Detector::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| format!("unknown detector {s:?}"))
    }
}

/// Whitespace tokens with surrounding punctuation stripped; inner
/// apostrophes are kept.
fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric())).filter(|w| !w.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub char_ngram_orders: Vec<usize>,
    pub hash_dim: usize,
    /// Order is part of the model identity.
    pub explicit_features: Vec<Detector>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { char_ngram_orders: vec![1, 2, 3], hash_dim: DEFAULT_HASH_DIM, explicit_features: Detector::ALL.to_vec() }
    }
}

impl FeatureConfig {
    pub fn feature_dim(&self) -> usize {
        self.hash_dim + self.explicit_features.len()
    }

    fn validate(&self) -> Result<(), EncoderError> {
        if self.hash_dim == 0 {
            return Err(EncoderError::InvalidModel("hash_dim must be positive".into()));
        }
        if self.char_ngram_orders.contains(&0) {
            return Err(EncoderError::InvalidModel("n-gram orders must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse feature vector with ascending, unique indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl Features {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }
}

pub fn ngram_bucket(ngram: &str, hash_dim: usize) -> usize {
    (fnv1a64(ngram.as_bytes()) % hash_dim as u64) as usize
}

/// Hashed character n-gram block followed by the explicit detectors.
pub fn extract_features(text: &str, config: &FeatureConfig) -> Result<Features, EncoderError> {
    if text.is_empty() {
        return Err(EncoderError::EmptyText);
    }
    let boundaries: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
    let n_chars = boundaries.len() - 1;

    let mut counts: std::collections::BTreeMap<usize, f64> = Default::default();
    let mut total = 0.0;
    for &order in &config.char_ngram_orders {
        for start in 0..(n_chars + 1).saturating_sub(order) {
            let gram = &text[boundaries[start]..boundaries[start + order]];
            *counts.entry(ngram_bucket(gram, config.hash_dim)).or_default() += 1.0;
            total += 1.0;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c / total)).collect();
    for (k, d) in config.explicit_features.iter().enumerate() {
        let v = d.value(text);
        if v != 0.0 {
            entries.push((config.hash_dim + k, v));
        }
    }
    Ok(Features { dim: config.feature_dim(), entries })
}

/// Dense explicit-detector block only, in config order.
pub fn explicit_values(text: &str, config: &FeatureConfig) -> Vec<f64> {
    config.explicit_features.iter().map(|d| d.value(text)).collect()
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    /// Normalises `values`; `None` when the norm is below [`DEGENERATE_NORM`]
    /// or an entry is not finite.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        let norm = l2(&values);
        if !norm.is_finite() || norm < DEGENERATE_NORM {
            return None;
        }
        Some(Self(values.into_iter().map(|x| x / norm).collect()))
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &StyleVector, v: &StyleVector) -> f64 {
    debug_assert_eq!(u.dim(), v.dim());
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    dot.clamp(-1.0, 1.0)
}

pub fn cosine_distance(u: &StyleVector, v: &StyleVector) -> f64 {
    1.0 - cosine_similarity(u, v)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mul_sparse(&self, x: &Features, bias: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                bias[r] + x.entries.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    fn mul_dense(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| bias[r] + self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).collect()
    }
}

/// Optional tanh layer between the features and the output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub features: Features,
    pub hidden: Option<Vec<f64>>,
    pub raw: Vec<f64>,
    pub norm: f64,
    pub output: StyleVector,
}

impl ForwardCache {
    /// True when the degenerate-input rule replaced the output by e₁.
    pub fn degenerate(&self) -> bool {
        !(self.norm.is_finite() && self.norm >= DEGENERATE_NORM)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub format_version: u32,
    pub feature_config: FeatureConfig,
    pub d_embed: usize,
    /// `d_embed × input`, where input is the hidden width if present,
    /// otherwise the feature dimension.
    pub projection: Matrix,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenLayer>,
}

impl EncoderModel {
    /// Gaussian projection with variance `1 / fan_in`, zero biases.
    pub fn random(feature_config: FeatureConfig, d_embed: usize, hidden_dim: Option<usize>, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "encoder/init");
        let d_feat = feature_config.feature_dim();
        let mut gaussian = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("valid std");
            Matrix { rows, cols, data: (0..rows * cols).map(|_| normal.sample(&mut rng)).collect() }
        };
        let hidden = hidden_dim.map(|h| HiddenLayer { weights: gaussian(h, d_feat), bias: vec![0.0; h] });
        let in_dim = hidden_dim.unwrap_or(d_feat);
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_config,
            d_embed,
            projection: gaussian(d_embed, in_dim),
            bias: vec![0.0; d_embed],
            hidden,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(EncoderError::UnsupportedVersion(self.format_version));
        }
        self.feature_config.validate()?;
        let d_feat = self.feature_config.feature_dim();
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(EncoderError::InvalidModel(what.to_owned()))
            }
        };
        check(self.d_embed > 0, "d_embed must be positive")?;
        let in_dim = match &self.hidden {
            Some(h) => {
                check(h.weights.cols == d_feat, "hidden weights width != feature dim")?;
                check(h.weights.data.len() == h.weights.rows * h.weights.cols, "hidden weights size")?;
                check(h.bias.len() == h.weights.rows, "hidden bias length")?;
                h.weights.rows
            }
            None => d_feat,
        };
        check(self.projection.rows == self.d_embed, "projection rows != d_embed")?;
        check(self.projection.cols == in_dim, "projection cols != input dim")?;
        check(self.projection.data.len() == self.projection.rows * self.projection.cols, "projection size")?;
        check(self.bias.len() == self.d_embed, "bias length != d_embed")?;
        let finite = self.parameters().into_iter().all(|p| p.iter().all(|x| x.is_finite()));
        check(finite, "non-finite parameter")
    }

    /// Parameter blocks in a fixed order: projection, bias, then hidden
    /// weights and hidden bias when present.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.projection.data, &self.bias];
        if let Some(h) = &self.hidden {
            out.push(&h.weights.data);
            out.push(&h.bias);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.projection.data, &mut self.bias];
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weights.data);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn forward_features(&self, features: Features) -> ForwardCache {
        let hidden = self
            .hidden
            .as_ref()
            .map(|h| h.weights.mul_sparse(&features, &h.bias).into_iter().map(f64::tanh).collect::<Vec<f64>>());
        let raw = match &hidden {
            Some(h) => self.projection.mul_dense(h, &self.bias),
            None => self.projection.mul_sparse(&features, &self.bias),
        };
        let norm = l2(&raw);
        let output = StyleVector::normalized(raw.clone()).unwrap_or_else(|| StyleVector::basis(self.d_embed, 0));
        ForwardCache { features, hidden, raw, norm, output }
    }

    pub fn forward(&self, text: &str) -> Result<ForwardCache, EncoderError> {
        Ok(self.forward_features(extract_features(text, &self.feature_config)?))
    }

    pub fn encode(&self, text: &str) -> Result<StyleVector, EncoderError> {
        Ok(self.forward(text)?.output)
    }

    /// Adds the parameter gradient implied by `grad_output` (∂L/∂output) to
    /// `grads`, laid out like [`EncoderModel::parameters`].
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut [Vec<f64>]) {
        if cache.degenerate() {
            return;
        }
        let u = cache.output.as_slice();
        let dot: f64 = grad_output.iter().zip(u).map(|(g, x)| g * x).sum();
        let grad_raw: Vec<f64> = grad_output.iter().zip(u).map(|(g, x)| (g - dot * x) / cache.norm).collect();

        let (proj_grads, rest) = grads.split_at_mut(1);
        let (bias_grads, hidden_grads) = rest.split_at_mut(1);
        let cols = self.projection.cols;
        for (r, &g) in grad_raw.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            bias_grads[0][r] += g;
            let row = &mut proj_grads[0][r * cols..(r + 1) * cols];
            match &cache.hidden {
                Some(h) => row.iter_mut().zip(h).for_each(|(w, x)| *w += g * x),
                None => cache.features.entries.iter().for_each(|&(i, x)| row[i] += g * x),
            }
        }

        if let (Some(layer), Some(h)) = (&self.hidden, &cache.hidden) {
            let (w_grads, b_grads) = hidden_grads.split_at_mut(1);
            let hcols = layer.weights.cols;
            for (j, hj) in h.iter().enumerate() {
                let back: f64 = grad_raw.iter().enumerate().map(|(r, g)| g * self.projection.data[r * cols + j]).sum();
                let dz = back * (1.0 - hj * hj);
                if dz == 0.0 {
                    continue;
                }
                b_grads[0][j] += dz;
                let row = &mut w_grads[0][j * hcols..(j + 1) * hcols];
                cache.features.entries.iter().for_each(|&(i, x)| row[i] += dz * x);
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.parameters().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn to_json(&self) -> Result<String, EncoderError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self, EncoderError> {
        let model: EncoderModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        fs::write(path, self.to_json()?).map_err(|source| EncoderError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let json =
            fs::read_to_string(path).map_err(|source| EncoderError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit(text: &str) -> Vec<f64> {
        explicit_values(text, &FeatureConfig::default())
    }

    fn idx(d: Detector) -> usize {
        Detector::ALL.iter().position(|x| *x == d).unwrap()
    }

    #[test]
    fn missing_apostrophe_detector() {
        let a = explicit("don't");
        let b = explicit("dont");
        assert_eq!(a[idx(Detector::MissingApostrophe)], 0.0);
        assert_eq!(b[idx(Detector::MissingApostrophe)], 1.0);
    }

    #[test]
    fn apostrophe_variant_is_the_only_explicit_difference() {
        let a = explicit("it\u{2019}s");
        let b = explicit("it's");
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diffs, vec![idx(Detector::CurlyApostrophe)]);
        assert_eq!(a[idx(Detector::CurlyApostrophe)], 1.0);
    }

    #[test]
    fn uppercase_ratio_of_shouting() {
        assert_eq!(explicit("HELLO")[idx(Detector::UppercaseRatio)], 1.0);
    }

    #[test]
    fn detector_edge_cases() {
        assert_eq!(Detector::FinalPunctuation.value("ok.  \n"), 1.0);
        assert_eq!(Detector::FinalPunctuation.value("ok"), 0.0);
        assert_eq!(Detector::LowercaseI.value("yes i think"), 1.0);
        assert_eq!(Detector::LowercaseI.value("yes I think, is it"), 0.0);
        assert_eq!(Detector::ElongatedPunctuation.value("what?!"), 1.0);
        assert_eq!(Detector::ElongatedPunctuation.value("what? no!"), 0.0);
        assert_eq!(Detector::LineBreaks.value("a\nb"), 0.5);
        assert_eq!(Detector::DigitRatio.value("a1"), 0.5);
        assert_eq!(Detector::MeanWordLength.value("abcd efgh"), 0.2);
    }

    #[test]
    fn hashed_block_is_l1_normalized() {
        let cfg = FeatureConfig::default();
        let f = extract_features("hello there", &cfg).unwrap();
        let mass: f64 = f.entries.iter().filter(|(i, _)| *i < cfg.hash_dim).map(|(_, v)| v).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(f.dim, cfg.hash_dim + 9);
        assert!(matches!(extract_features("", &cfg), Err(EncoderError::EmptyText)));
    }

    #[test]
    fn ngrams_count_characters_not_bytes() {
        let cfg = FeatureConfig { char_ngram_orders: vec![2], hash_dim: 1 << 20, explicit_features: vec![] };
        let f = extract_features("é’x", &cfg).unwrap();
        // Two bigrams: "é’" and "’x".
        assert_eq!(f.entries.len(), 2);
        assert!(f.entries.iter().all(|&(_, v)| v == 0.5));
        assert!(f.entries.iter().any(|&(i, _)| i == ngram_bucket("é’", 1 << 20)));
    }

    #[test]
    fn hash_buckets_are_stable() {
        assert_eq!(ngram_bucket("a", 2048), (0xaf63_dc4c_8601_ec8cu64 % 2048) as usize);
    }

    #[test]
    fn zero_projection_with_unit_bias_outputs_e1() {
        let cfg = FeatureConfig::default();
        let mut m = EncoderModel::random(cfg, 4, None, 0);
        m.projection.data.iter_mut().for_each(|x| *x = 0.0);
        m.bias = vec![1.0, 0.0, 0.0, 0.0];
        for t in ["abc", "HELLO!!", "i dont know"] {
            assert_eq!(m.encode(t).unwrap(), StyleVector::basis(4, 0));
        }
    }

    #[test]
    fn degenerate_input_falls_back_to_e1() {
        let mut m = EncoderModel::random(FeatureConfig::default(), 3, None, 0);
        m.projection.data.iter_mut().for_each(|x| *x = 0.0);
        let cache = m.forward("xyz").unwrap();
        assert!(cache.degenerate());
        assert_eq!(cache.output, StyleVector::basis(3, 0));
    }

    #[test]
    fn outputs_are_unit_norm_and_similarities_bounded() {
        let m = EncoderModel::random(FeatureConfig::default(), DEFAULT_EMBED_DIM, None, 11);
        let a = m.encode("The quick brown fox.").unwrap();
        let b = m.encode("lol i dont even know!!").unwrap();
        assert!((l2(a.as_slice()) - 1.0).abs() < 1e-9);
        let s = cosine_similarity(&a, &b);
        assert!((-1.0..=1.0).contains(&s));
        assert_eq!(a, m.encode("The quick brown fox.").unwrap());
    }

    #[test]
    fn cosine_analytic_values() {
        let u = StyleVector::normalized(vec![1.0, 0.0]).unwrap();
        let v = StyleVector::normalized(vec![1.0, 1.0]).unwrap();
        let w = StyleVector::normalized(vec![0.0, 3.0]).unwrap();
        assert_eq!(cosine_similarity(&u, &u), 1.0);
        assert_eq!(cosine_distance(&u, &u), 0.0);
        assert_eq!(cosine_similarity(&u, &w), 0.0);
        assert!((cosine_similarity(&u, &v) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn model_json_roundtrip_and_validation() {
        let m = EncoderModel::random(FeatureConfig { hash_dim: 32, ..FeatureConfig::default() }, 5, Some(6), 2);
        let back = EncoderModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.clone();
        bad.bias.pop();
        assert!(EncoderModel::from_json(&bad.to_json().unwrap()).is_err());
        let mut old = m;
        old.format_version = 99;
        assert!(matches!(EncoderModel::from_json(&old.to_json().unwrap()), Err(EncoderError::UnsupportedVersion(99))));
    }
}
