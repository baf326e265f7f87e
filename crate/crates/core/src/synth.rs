//! Synthetic conversation corpora with planted style and topic structure.
//!
//! Every author writes with a style profile: a fixed combination of
//! surface habits (casing, final punctuation, apostrophe variant,
//! contractions, elongated punctuation, marker tokens, line breaks, digit
//! use). Content comes from per-domain topic vocabularies, narrowed to a
//! few nouns per conversation. Authors post mostly in a home domain, which
//! correlates topic with authorship.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::corpus::{Corpus, Utterance};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Apostrophe {
    Straight,
    Curly,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StyleProfile {
    pub lowercase: bool,
    pub final_punctuation: bool,
    pub elongated: bool,
    pub contractions: bool,
    pub apostrophe: Apostrophe,
    pub marker: Option<&'static str>,
    pub line_breaks: bool,
    pub digits: bool,
}

const MARKERS: [&str; 6] = ["lol", "tbh", "honestly", "imo", "ngl", "haha"];

impl StyleProfile {
    pub fn random(rng: &mut StreamRng) -> Self {
        Self {
            lowercase: rng.random_bool(0.5),
            final_punctuation: rng.random_bool(0.5),
            elongated: rng.random_bool(0.5),
            contractions: rng.random_bool(0.5),
            apostrophe: *[Apostrophe::Straight, Apostrophe::Curly, Apostrophe::Missing].choose(rng).expect("non-empty"),
            marker: if rng.random_bool(0.5) { Some(*MARKERS.choose(rng).expect("non-empty")) } else { None },
            line_breaks: rng.random_bool(0.5),
            digits: rng.random_bool(0.5),
        }
    }

    /// Copy with each habit independently replaced by a random draw with
    /// probability `1 - consistency`.
    fn jitter(&self, consistency: f64, rng: &mut StreamRng) -> Self {
        if consistency >= 1.0 {
            return self.clone();
        }
        let fresh = StyleProfile::random(rng);
        let mut keep = || rng.random_bool(consistency.max(0.0));
        Self {
            lowercase: if keep() { self.lowercase } else { fresh.lowercase },
            final_punctuation: if keep() { self.final_punctuation } else { fresh.final_punctuation },
            elongated: if keep() { self.elongated } else { fresh.elongated },
            contractions: if keep() { self.contractions } else { fresh.contractions },
            apostrophe: if keep() { self.apostrophe } else { fresh.apostrophe },
            marker: if keep() { self.marker } else { fresh.marker },
            line_breaks: if keep() { self.line_breaks } else { fresh.line_breaks },
            digits: if keep() { self.digits } else { fresh.digits },
        }
    }
}

const NOUNS: [&str; 96] = [
    "engine",
    "piston",
    "gearbox",
    "tire",
    "brake",
    "clutch",
    "exhaust",
    "radiator",
    "battery",
    "sensor",
    "axle",
    "bumper",
    "guitar",
    "chord",
    "amplifier",
    "drummer",
    "melody",
    "album",
    "tempo",
    "lyric",
    "concert",
    "bassline",
    "riff",
    "vinyl",
    "recipe",
    "oven",
    "garlic",
    "dough",
    "skillet",
    "pepper",
    "butter",
    "broth",
    "noodle",
    "spice",
    "sauce",
    "crust",
    "planet",
    "telescope",
    "orbit",
    "comet",
    "galaxy",
    "nebula",
    "rocket",
    "crater",
    "asteroid",
    "eclipse",
    "quasar",
    "lens",
    "striker",
    "goalie",
    "referee",
    "stadium",
    "penalty",
    "league",
    "coach",
    "midfield",
    "transfer",
    "trophy",
    "kit",
    "derby",
    "compiler",
    "pointer",
    "thread",
    "kernel",
    "library",
    "syntax",
    "macro",
    "runtime",
    "borrow",
    "module",
    "crate",
    "linker",
    "seedling",
    "compost",
    "trellis",
    "tomato",
    "mulch",
    "hedge",
    "orchid",
    "pruning",
    "soil",
    "greenhouse",
    "bulb",
    "vine",
    "dungeon",
    "paladin",
    "potion",
    "quest",
    "dragon",
    "loot",
    "spellbook",
    "tavern",
    "goblin",
    "armor",
    "campaign",
    "dice",
];
const ADJECTIVES: [&str; 12] =
    ["fine", "broken", "strange", "great", "cheap", "loud", "slow", "solid", "weird", "tricky", "perfect", "overrated"];
const VERBS: [&str; 10] = ["work", "last", "fit", "matter", "help", "change", "fail", "improve", "hold", "sell"];
const NUMBERS: [(&str, &str); 8] = [
    ("2", "two"),
    ("3", "three"),
    ("4", "four"),
    ("5", "five"),
    ("6", "six"),
    ("7", "seven"),
    ("8", "eight"),
    ("10", "ten"),
];
const NOUNS_PER_DOMAIN: usize = 12;
const NOUNS_PER_CONVERSATION: usize = 5;

/// Sentence templates in full (uncontracted) form.
const TEMPLATES: [&str; 8] = [
    "I think the {n1} is {adj}.",
    "It is {adj} when the {n1} does not {verb}.",
    "We are not sure the {n1} will {verb} after {num} days.",
    "I am still waiting for the {n1} and the {n2}.",
    "They do not like the {n1} or the {n2}.",
    "You are right about the {n1}, it is {adj}.",
    "The {n1} is not {adj} but the {n2} is.",
    "I have seen {num} of those {n2} things and it did not {verb}.",
];

const CONTRACTIONS: [(&str, &str); 12] = [
    ("I am", "I'm"),
    ("It is", "It's"),
    ("it is", "it's"),
    ("We are", "We're"),
    ("You are", "You're"),
    ("do not", "don't"),
    ("does not", "doesn't"),
    ("did not", "didn't"),
    ("is not", "isn't"),
    ("are not", "aren't"),
    ("I have", "I've"),
    ("will not", "won't"),
];

fn render_sentence(template: &str, topic: &[&str], style: &StyleProfile, rng: &mut StreamRng) -> String {
    let mut s = template.to_owned();
    let n1 = *topic.choose(rng).expect("topic nouns");
    let n2 = *topic.choose(rng).expect("topic nouns");
    let (digits, words) = *NUMBERS.choose(rng).expect("numbers");
    s = s
        .replace("{n1}", n1)
        .replace("{n2}", n2)
        .replace("{adj}", ADJECTIVES.choose(rng).expect("adjectives"))
        .replace("{verb}", VERBS.choose(rng).expect("verbs"))
        .replace("{num}", if style.digits { digits } else { words });
    if style.contractions {
        for (full, short) in CONTRACTIONS {
            let short = match style.apostrophe {
                Apostrophe::Straight => short.to_owned(),
                Apostrophe::Curly => short.replace('\'', "\u{2019}"),
                Apostrophe::Missing => short.replace('\'', ""),
            };
            s = s.replace(full, &short);
        }
    }
    s
}

/// One utterance in `style` about the given topic nouns.
pub fn render_utterance(style: &StyleProfile, topic: &[&str], rng: &mut StreamRng) -> String {
    let n_sentences = rng.random_range(2..=3);
    let mut sentences: Vec<String> = (0..n_sentences)
        .map(|_| render_sentence(TEMPLATES.choose(rng).expect("templates"), topic, style, rng))
        .collect();
    if let Some(marker) = style.marker {
        let first = &mut sentences[0];
        *first = format!("{} {}{}", capitalize(marker), first[..1].to_lowercase(), &first[1..]);
    }
    let last = sentences.last_mut().expect("at least one sentence");
    if !style.final_punctuation || style.elongated {
        while last.ends_with('.') {
            last.pop();
        }
    }
    if style.elongated {
        last.push_str(if rng.random_bool(0.5) { "!!" } else { "??" });
    }
    let mut text = sentences.join(if style.line_breaks { "\n" } else { " " });
    if style.lowercase {
        text = text.to_lowercase();
    }
    text
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub utterances_per_author: usize,
    pub n_domains: usize,
    pub conversations_per_domain: usize,
    /// `Some(k)`: authors share k style profiles round-robin. `None`: each
    /// author gets a distinct profile.
    pub n_styles: Option<usize>,
    /// Probability each habit follows the author's profile in an utterance.
    pub habit_consistency: f64,
    /// Probability an utterance is posted in the author's home domain.
    pub home_domain_prob: f64,
    /// When false, every utterance draws a fresh random profile, so
    /// authorship carries no style signal.
    pub style_signal: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_authors: 60,
            utterances_per_author: 12,
            n_domains: 4,
            conversations_per_domain: 10,
            n_styles: None,
            habit_consistency: 0.95,
            home_domain_prob: 0.8,
            style_signal: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub styles: Vec<StyleProfile>,
    /// Author name → index into `styles`.
    pub author_style: BTreeMap<String, usize>,
    /// Utterance id → index into `styles` of the profile it was written with
    /// (before jitter).
    pub utterance_style: BTreeMap<String, usize>,
}

/// Distinct random profiles.
pub fn distinct_profiles(n: usize, rng: &mut StreamRng) -> Vec<StyleProfile> {
    let mut out: Vec<StyleProfile> = Vec::with_capacity(n);
    while out.len() < n {
        let p = StyleProfile::random(rng);
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

pub fn planted_corpus(config: &SynthConfig) -> SynthCorpus {
    assert!(config.n_domains >= 1 && config.n_domains <= NOUNS.len() / NOUNS_PER_DOMAIN);
    assert!(config.conversations_per_domain >= 1);
    let mut rng = rng::stream(config.seed, "synth/corpus");
    let n_profiles = config.n_styles.unwrap_or(config.n_authors);
    let styles = distinct_profiles(n_profiles, &mut rng);

    let topics: Vec<Vec<Vec<&str>>> = (0..config.n_domains)
        .map(|d| {
            let vocab = &NOUNS[d * NOUNS_PER_DOMAIN..(d + 1) * NOUNS_PER_DOMAIN];
            (0..config.conversations_per_domain)
                .map(|_| {
                    let mut v = vocab.to_vec();
                    v.shuffle(&mut rng);
                    v.truncate(NOUNS_PER_CONVERSATION);
                    v
                })
                .collect()
        })
        .collect();

    let mut utterances = Vec::new();
    let mut author_style = BTreeMap::new();
    let mut utterance_style = BTreeMap::new();
    for a in 0..config.n_authors {
        let author = format!("author{a:04}");
        let style_ix = a % n_profiles;
        author_style.insert(author.clone(), style_ix);
        let home = a % config.n_domains;
        for j in 0..config.utterances_per_author {
            let domain =
                if rng.random_bool(config.home_domain_prob) { home } else { rng.random_range(0..config.n_domains) };
            let conv = rng.random_range(0..config.conversations_per_domain);
            let style = if config.style_signal {
                styles[style_ix].jitter(config.habit_consistency, &mut rng)
            } else {
                StyleProfile::random(&mut rng)
            };
            let text = render_utterance(&style, &topics[domain][conv], &mut rng);
            let id = format!("{author}-u{j:03}");
            utterance_style.insert(id.clone(), style_ix);
            utterances.push(Utterance::new(
                id,
                author.clone(),
                format!("d{domain}-c{conv:02}"),
                format!("d{domain}"),
                text,
            ));
        }
    }
    SynthCorpus {
        corpus: Corpus::from_utterances(utterances).expect("generated ids are unique"),
        styles,
        author_style,
        utterance_style,
    }
}
