//! STEL style probes and the STEL-Or-Content variant.
//!
//! A STEL instance holds two anchors of different style and two sentences
//! that paraphrase each other, one in each anchor's style. The original
//! task matches sentences to anchors. The or-content variant replaces the
//! sentence that shares A2's style with A2 itself, so the anchor A1 must
//! choose between same content (A2) and same style (the remaining sentence).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encoder::{cosine_similarity, StyleVector};
use crate::eval::{Embedder, EvalError};

pub const STEL_TSV_HEADER: &str = "id\tdimension\tanchor1\tanchor2\tsentence1\tsentence2\tground_truth";

#[derive(Debug, Error)]
pub enum StelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Embed(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum StelDimension {
    FormalInformal,
    ComplexSimple,
    Nb3r,
    Contraction,
}

impl StelDimension {
    pub const ALL: [StelDimension; 4] =
        [StelDimension::FormalInformal, StelDimension::ComplexSimple, StelDimension::Nb3r, StelDimension::Contraction];

    pub fn as_str(self) -> &'static str {
        match self {
            StelDimension::FormalInformal => "formal_informal",
            StelDimension::ComplexSimple => "complex_simple",
            StelDimension::Nb3r => "nb3r",
            StelDimension::Contraction => "contraction",
        }
    }
}

impl fmt::Display for StelDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StelDimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StelDimension::ALL.into_iter().find(|d| d.as_str() == s).ok_or_else(|| format!("unknown STEL dimension {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StelAnswer {
    /// A1–S1 and A2–S2 share style.
    NoReorder,
    /// A1–S2 and A2–S1 share style.
    Reorder,
}

impl StelAnswer {
    fn flipped(self) -> Self {
        match self {
            StelAnswer::NoReorder => StelAnswer::Reorder,
            StelAnswer::Reorder => StelAnswer::NoReorder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StelInstance {
    pub id: String,
    pub dimension: StelDimension,
    pub anchor1: String,
    pub anchor2: String,
    pub sentence1: String,
    pub sentence2: String,
    pub ground_truth: StelAnswer,
}

impl StelInstance {
    /// The same instance with the sentences swapped.
    pub fn swapped(&self) -> Self {
        Self {
            sentence1: self.sentence2.clone(),
            sentence2: self.sentence1.clone(),
            ground_truth: self.ground_truth.flipped(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StelOrContentInstance {
    pub id: String,
    pub dimension: StelDimension,
    pub anchor: String,
    /// Same content as the anchor, other style (the source's anchor2).
    pub option_content: String,
    /// Same style as the anchor, other content. The correct choice.
    pub option_style: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrContentChoice {
    Content,
    Style,
}

fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn read_stel<R: Read>(reader: R) -> Result<Vec<StelInstance>, StelError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let err = |message: String| StelError::Parse { line: line_no, message };
        if line_no == 1 {
            if line.trim_end() != STEL_TSV_HEADER {
                return Err(err(format!("expected header {STEL_TSV_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", cols.len())));
        }
        let dimension: StelDimension = cols[1].parse().map_err(|e| err(format!("row {:?}: {e}", cols[0])))?;
        let ground_truth = match cols[6].trim() {
            "0" => StelAnswer::NoReorder,
            "1" => StelAnswer::Reorder,
            other => return Err(err(format!("ground_truth must be 0 or 1, got {other:?}"))),
        };
        let texts: Vec<String> = cols[2..6].iter().map(|c| unescape(c)).collect();
        if let Some(k) = texts.iter().position(|t| t.is_empty()) {
            let name = ["anchor1", "anchor2", "sentence1", "sentence2"][k];
            return Err(err(format!("row {:?}: empty {name}", cols[0])));
        }
        let [anchor1, anchor2, sentence1, sentence2]: [String; 4] = texts.try_into().expect("four texts");
        out.push(StelInstance {
            id: cols[0].to_owned(),
            dimension,
            anchor1,
            anchor2,
            sentence1,
            sentence2,
            ground_truth,
        });
    }
    Ok(out)
}

pub fn load_stel(path: &Path) -> Result<Vec<StelInstance>, StelError> {
    read_stel(File::open(path)?)
}

pub fn dimension_counts(instances: &[StelInstance]) -> BTreeMap<StelDimension, usize> {
    let mut counts = BTreeMap::new();
    for inst in instances {
        *counts.entry(inst.dimension).or_default() += 1;
    }
    counts
}

fn embed(embedder: &dyn Embedder, id: &str, role: &str, text: &str) -> Result<StyleVector, EvalError> {
    embedder.embed(&format!("{id}/{role}"), text)
}

/// `None` on an exact tie. NoReorder iff
/// `sim(A1,S1) + sim(A2,S2) > sim(A1,S2) + sim(A2,S1)`.
pub fn solve_stel(embedder: &dyn Embedder, inst: &StelInstance) -> Result<Option<StelAnswer>, EvalError> {
    let a1 = embed(embedder, &inst.id, "a1", &inst.anchor1)?;
    let a2 = embed(embedder, &inst.id, "a2", &inst.anchor2)?;
    let s1 = embed(embedder, &inst.id, "s1", &inst.sentence1)?;
    let s2 = embed(embedder, &inst.id, "s2", &inst.sentence2)?;
    let straight = cosine_similarity(&a1, &s1) + cosine_similarity(&a2, &s2);
    let crossed = cosine_similarity(&a1, &s2) + cosine_similarity(&a2, &s1);
    Ok(if straight > crossed {
        Some(StelAnswer::NoReorder)
    } else if crossed > straight {
        Some(StelAnswer::Reorder)
    } else {
        None
    })
}

/// Correct-count and total per dimension, plus overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_dimension: BTreeMap<StelDimension, (usize, usize)>,
    pub correct: usize,
    pub total: usize,
}

impl AccuracyReport {
    fn from_outcomes(outcomes: impl Iterator<Item = (StelDimension, bool)>) -> Self {
        let mut per_dimension: BTreeMap<StelDimension, (usize, usize)> = BTreeMap::new();
        let (mut correct, mut total) = (0, 0);
        for (dim, ok) in outcomes {
            let e = per_dimension.entry(dim).or_default();
            e.0 += usize::from(ok);
            e.1 += 1;
            correct += usize::from(ok);
            total += 1;
        }
        Self { per_dimension, correct, total }
    }

    pub fn overall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn accuracy(&self, dim: StelDimension) -> Option<f64> {
        self.per_dimension.get(&dim).map(|&(c, t)| c as f64 / t as f64)
    }

    pub const CSV_HEADER: &'static str = "task,dimension,correct,total,accuracy";

    pub fn csv_rows(&self, task: &str) -> String {
        let mut out = String::new();
        for (dim, (c, t)) in &self.per_dimension {
            out.push_str(&format!("{task},{dim},{c},{t},{:.4}\n", *c as f64 / *t as f64));
        }
        out.push_str(&format!("{task},all,{},{},{:.4}\n", self.correct, self.total, self.overall()));
        out
    }
}

/// Per-instance correctness of the STEL decision; ties are incorrect.
pub fn stel_outcomes(embedder: &dyn Embedder, instances: &[StelInstance]) -> Result<Vec<bool>, EvalError> {
    instances.par_iter().map(|inst| Ok(solve_stel(embedder, inst)? == Some(inst.ground_truth))).collect()
}

pub fn stel_accuracy(embedder: &dyn Embedder, instances: &[StelInstance]) -> Result<AccuracyReport, EvalError> {
    let outcomes = stel_outcomes(embedder, instances)?;
    Ok(AccuracyReport::from_outcomes(instances.iter().map(|i| i.dimension).zip(outcomes)))
}

/// Replaces the sentence sharing A2's style with A2.
pub fn make_or_content(inst: &StelInstance) -> StelOrContentInstance {
    let option_style = match inst.ground_truth {
        // S2 shares A1's style; S1 (A2's style) is replaced.
        StelAnswer::Reorder => &inst.sentence2,
        StelAnswer::NoReorder => &inst.sentence1,
    };
    StelOrContentInstance {
        id: format!("{}-oc", inst.id),
        dimension: inst.dimension,
        anchor: inst.anchor1.clone(),
        option_content: inst.anchor2.clone(),
        option_style: option_style.clone(),
    }
}

/// Ties go to the content option.
pub fn solve_or_content(embedder: &dyn Embedder, inst: &StelOrContentInstance) -> Result<OrContentChoice, EvalError> {
    let a = embed(embedder, &inst.id, "anchor", &inst.anchor)?;
    let c = embed(embedder, &inst.id, "content", &inst.option_content)?;
    let s = embed(embedder, &inst.id, "style", &inst.option_style)?;
    Ok(if cosine_similarity(&a, &s) > cosine_similarity(&a, &c) {
        OrContentChoice::Style
    } else {
        OrContentChoice::Content
    })
}

pub fn or_content_accuracy(
    embedder: &dyn Embedder,
    instances: &[StelOrContentInstance],
) -> Result<AccuracyReport, EvalError> {
    let outcomes: Vec<bool> = instances
        .par_iter()
        .map(|inst| Ok(solve_or_content(embedder, inst)? == OrContentChoice::Style))
        .collect::<Result<_, EvalError>>()?;
    Ok(AccuracyReport::from_outcomes(instances.iter().map(|i| i.dimension).zip(outcomes)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Disagreements {
    /// Wrong under model A, right under model B.
    pub learned: Vec<String>,
    /// Right under model A, wrong under model B.
    pub unlearned: Vec<String>,
}

pub fn export_disagreements(
    model_a: &dyn Embedder,
    model_b: &dyn Embedder,
    instances: &[StelInstance],
) -> Result<Disagreements, EvalError> {
    let a = stel_outcomes(model_a, instances)?;
    let b = stel_outcomes(model_b, instances)?;
    let mut out = Disagreements::default();
    for ((inst, ra), rb) in instances.iter().zip(a).zip(b) {
        match (ra, rb) {
            (false, true) => out.learned.push(inst.id.clone()),
            (true, false) => out.unlearned.push(inst.id.clone()),
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    /// Unit vector on a hashed axis per distinct text.
    impl Embedder for Identity {
        fn embed(&self, _id: &str, text: &str) -> Result<StyleVector, EvalError> {
            let axis = (crate::rng::fnv1a64(text.as_bytes()) % 64) as usize;
            Ok(StyleVector::basis(64, axis))
        }
    }

    fn inst(a1: &str, a2: &str, s1: &str, s2: &str, gt: StelAnswer) -> StelInstance {
        StelInstance {
            id: "x".into(),
            dimension: StelDimension::Contraction,
            anchor1: a1.into(),
            anchor2: a2.into(),
            sentence1: s1.into(),
            sentence2: s2.into(),
            ground_truth: gt,
        }
    }

    #[test]
    fn identity_model_solves_verbatim_instance() {
        let i = inst("It is late.", "it's late", "It is late.", "it's late", StelAnswer::NoReorder);
        assert_eq!(solve_stel(&Identity, &i).unwrap(), Some(StelAnswer::NoReorder));
        assert_eq!(stel_accuracy(&Identity, &[i]).unwrap().overall(), 1.0);
    }

    #[test]
    fn identical_texts_tie_and_count_wrong() {
        let i = inst("same", "same", "same", "same", StelAnswer::NoReorder);
        assert_eq!(solve_stel(&Identity, &i).unwrap(), None);
        assert_eq!(stel_accuracy(&Identity, &[i]).unwrap().overall(), 0.0);
    }

    #[test]
    fn or_content_transformation() {
        let reorder = inst("A1", "A2", "S1", "S2", StelAnswer::Reorder);
        let oc = make_or_content(&reorder);
        assert_eq!((oc.option_content.as_str(), oc.option_style.as_str()), ("A2", "S2"));
        let no = inst("A1", "A2", "S1", "S2", StelAnswer::NoReorder);
        let oc = make_or_content(&no);
        assert_eq!((oc.option_content.as_str(), oc.option_style.as_str()), ("A2", "S1"));
        assert_eq!(oc.id, make_or_content(&no).id);
    }

    #[test]
    fn or_content_tie_prefers_content() {
        let oc = StelOrContentInstance {
            id: "t".into(),
            dimension: StelDimension::Nb3r,
            anchor: "a".into(),
            option_content: "b".into(),
            option_style: "b".into(),
        };
        assert_eq!(solve_or_content(&Identity, &oc).unwrap(), OrContentChoice::Content);
    }

    #[test]
    fn parse_errors() {
        let bad_dim = format!("{STEL_TSV_HEADER}\nr7\tsarcasm\ta\tb\tc\td\t0\n");
        match read_stel(bad_dim.as_bytes()) {
            Err(StelError::Parse { line: 2, message }) => {
                assert!(message.contains("r7") && message.contains("sarcasm"))
            }
            other => panic!("{other:?}"),
        }
        let short = format!("{STEL_TSV_HEADER}\nr1\tnb3r\ta\tb\tc\n");
        assert!(read_stel(short.as_bytes()).is_err());
        let ok = format!("{STEL_TSV_HEADER}\nr1\tnb3r\tline\\none\tb\tc\td\t1\n");
        let parsed = read_stel(ok.as_bytes()).unwrap();
        assert_eq!(parsed[0].anchor1, "line\none");
        assert_eq!(parsed[0].ground_truth, StelAnswer::Reorder);
    }

    #[test]
    fn identical_models_have_no_disagreements() {
        let i = inst("a", "b", "a", "b", StelAnswer::NoReorder);
        let d = export_disagreements(&Identity, &Identity, &[i]).unwrap();
        assert!(d.learned.is_empty() && d.unlearned.is_empty());
    }
}
