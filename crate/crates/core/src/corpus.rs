//! Conversation corpus: ingestion, validity filtering, conversation sampling.
//!
//! A [`Corpus`] is immutable once built. Authors, conversations and domains
//! are interned to dense indices so samplers can work on integer keys; the
//! string ids remain available through accessors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Texts treated as deleted content, compared verbatim.
pub const DELETION_MARKERS: [&str; 7] =
    ["", " [removed] ", "[ removed ]", "[removed]", "[ deleted ]", "[deleted]", " [deleted] "];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance id {id:?}")]
    DuplicateId { id: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub author: String,
    pub conversation: String,
    pub domain: String,
    pub text: String,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        author: impl Into<String>,
        conversation: impl Into<String>,
        domain: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            author: author.into(),
            conversation: conversation.into(),
            domain: domain.into(),
            text: text.into(),
        }
    }
}

/// Sorted, deduplicated string table mapping names to dense indices.
#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Interner {
    fn build<'a>(values: impl Iterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = values.map(str::to_owned).collect();
        names.sort_unstable();
        names.dedup();
        let lookup = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Self { names, lookup }
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.lookup.get(name).copied()
    }
}

/// Immutable utterance store with author / conversation / domain indices.
///
/// Utterances keep their input order; index lists are ascending utterance
/// positions.
#[derive(Debug, Clone)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    id_index: HashMap<String, usize>,
    authors: Interner,
    conversations: Interner,
    domains: Interner,
    author_of: Vec<u32>,
    conversation_of: Vec<u32>,
    domain_of: Vec<u32>,
    by_author: Vec<Vec<usize>>,
    by_conversation: Vec<Vec<usize>>,
    by_domain: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut id_index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if id_index.insert(u.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { id: u.id.clone() });
            }
        }
        let authors = Interner::build(utterances.iter().map(|u| u.author.as_str()));
        let conversations = Interner::build(utterances.iter().map(|u| u.conversation.as_str()));
        let domains = Interner::build(utterances.iter().map(|u| u.domain.as_str()));

        let author_of: Vec<u32> = utterances.iter().map(|u| authors.get(&u.author).expect("interned")).collect();
        let conversation_of: Vec<u32> =
            utterances.iter().map(|u| conversations.get(&u.conversation).expect("interned")).collect();
        let domain_of: Vec<u32> = utterances.iter().map(|u| domains.get(&u.domain).expect("interned")).collect();

        let group = |keys: &[u32], n: usize| {
            let mut out = vec![Vec::new(); n];
            for (i, &k) in keys.iter().enumerate() {
                out[k as usize].push(i);
            }
            out
        };
        let by_author = group(&author_of, authors.names.len());
        let by_conversation = group(&conversation_of, conversations.names.len());
        let by_domain = group(&domain_of, domains.names.len());

        Ok(Self {
            utterances,
            id_index,
            authors,
            conversations,
            domains,
            author_of,
            conversation_of,
            domain_of,
            by_author,
            by_conversation,
            by_domain,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, idx: usize) -> &Utterance {
        &self.utterances[idx]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Utterance> {
        self.position(id).map(|i| &self.utterances[i])
    }

    /// Author names in ascending order; position = author index.
    pub fn author_names(&self) -> &[String] {
        &self.authors.names
    }

    pub fn conversation_names(&self) -> &[String] {
        &self.conversations.names
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domains.names
    }

    pub fn author_index(&self, name: &str) -> Option<u32> {
        self.authors.get(name)
    }

    pub fn author_of(&self, idx: usize) -> u32 {
        self.author_of[idx]
    }

    pub fn conversation_of(&self, idx: usize) -> u32 {
        self.conversation_of[idx]
    }

    pub fn domain_of(&self, idx: usize) -> u32 {
        self.domain_of[idx]
    }

    pub fn utterances_by_author(&self, author: u32) -> &[usize] {
        &self.by_author[author as usize]
    }

    pub fn utterances_in_conversation(&self, conversation: u32) -> &[usize] {
        &self.by_conversation[conversation as usize]
    }

    pub fn utterances_in_domain(&self, domain: u32) -> &[usize] {
        &self.by_domain[domain as usize]
    }

    /// Index maps keyed by name, values are utterance ids.
    pub fn author_index_map(&self) -> BTreeMap<&str, Vec<&str>> {
        self.named_index(&self.authors, &self.by_author)
    }

    pub fn conversation_index_map(&self) -> BTreeMap<&str, Vec<&str>> {
        self.named_index(&self.conversations, &self.by_conversation)
    }

    pub fn domain_index_map(&self) -> BTreeMap<&str, Vec<&str>> {
        self.named_index(&self.domains, &self.by_domain)
    }

    fn named_index<'a>(&'a self, names: &'a Interner, groups: &[Vec<usize>]) -> BTreeMap<&'a str, Vec<&'a str>> {
        names
            .names
            .iter()
            .zip(groups)
            .map(|(n, g)| (n.as_str(), g.iter().map(|&i| self.utterances[i].id.as_str()).collect()))
            .collect()
    }

    /// Sub-corpus of the utterances accepted by `keep`, input order preserved.
    pub fn retain(&self, mut keep: impl FnMut(&Utterance) -> bool) -> Corpus {
        let kept = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        Corpus::from_utterances(kept).expect("subset of a valid corpus has unique ids")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for u in &self.utterances {
            serde_json::to_writer(&mut out, u)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out).and_then(|_| out.flush()).map_err(|e| CorpusError::io(path, e))
    }
}

/// Parses corpus JSONL. Blank lines are skipped; line numbers are 1-based.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        utterances.push(u);
    }
    Corpus::from_utterances(utterances)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_jsonl(file)
}

/// True for whitespace-only text and the deletion markers.
pub fn is_invalid_text(text: &str) -> bool {
    text.chars().all(char::is_whitespace) || DELETION_MARKERS.contains(&text)
}

pub fn filter_invalid(corpus: &Corpus) -> Corpus {
    corpus.retain(|u| !is_invalid_text(&u.text))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SelectionReport {
    /// Conversations kept per domain.
    pub selected: BTreeMap<String, usize>,
    /// Domains dropped because no conversation reached `min_posts`.
    pub warnings: Vec<String>,
}

/// Samples up to `per_domain` conversations with at least `min_posts`
/// utterances from every domain, uniformly without replacement.
/// `per_domain = None` keeps every qualifying conversation.
///
/// A conversation spanning several domains is counted per domain.
pub fn select_conversations(
    corpus: &Corpus,
    min_posts: usize,
    per_domain: Option<usize>,
    seed: u64,
) -> (Corpus, SelectionReport) {
    assert!(min_posts >= 1, "min_posts must be at least 1");
    assert!(per_domain != Some(0), "per_domain must be at least 1");
    let mut rng = rng::stream(seed, "corpus/select");
    let mut report = SelectionReport::default();
    let mut keep: HashSet<(u32, u32)> = HashSet::new();

    for (d, domain) in corpus.domain_names().iter().enumerate() {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in corpus.utterances_in_domain(d as u32) {
            *sizes.entry(corpus.conversation_of(i)).or_default() += 1;
        }
        let mut qualifying: Vec<u32> = sizes.into_iter().filter(|&(_, n)| n >= min_posts).map(|(c, _)| c).collect();
        if qualifying.is_empty() {
            report
                .warnings
                .push(format!("domain {domain:?} has no conversation with at least {min_posts} utterances; omitted"));
            continue;
        }
        qualifying.shuffle(&mut rng);
        if let Some(cap) = per_domain {
            qualifying.truncate(cap);
        }
        report.selected.insert(domain.clone(), qualifying.len());
        keep.extend(qualifying.into_iter().map(|c| (d as u32, c)));
    }

    let kept: Vec<Utterance> = corpus
        .utterances()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(&(corpus.domain_of(*i), corpus.conversation_of(*i))))
        .map(|(_, u)| u.clone())
        .collect();
    let out = Corpus::from_utterances(kept).expect("subset of a valid corpus has unique ids");
    (out, report)
}

#[derive(Deserialize)]
struct ConvokitUtterance {
    id: String,
    #[serde(alias = "user")]
    speaker: String,
    conversation_id: String,
    text: Option<String>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// Maps a ConvoKit `utterances.jsonl` export to corpus utterances.
///
/// The domain is read from `meta.subreddit` when present, else
/// `default_domain`. Null texts become empty strings, which
/// [`filter_invalid`] later drops.
pub fn convert_convokit<R: Read>(reader: R, default_domain: &str) -> Result<Vec<Utterance>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ConvokitUtterance =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let domain = raw.meta.get("subreddit").and_then(|v| v.as_str()).unwrap_or(default_domain).to_owned();
        out.push(Utterance {
            id: raw.id,
            author: raw.speaker,
            conversation: raw.conversation_id,
            domain,
            text: raw.text.unwrap_or_default(),
        });
    }
    Ok(out)
}
