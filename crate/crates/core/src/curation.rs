//! Labeling knowledge-positive records as factual or hallucination.
//!
//! Exact-match labeling produces false hallucinations (refusals, synonyms,
//! near-spellings, partial answers). A candidate hallucination is passed
//! through six refinement heuristics, applied in a fixed order; the first one
//! that fires excludes the record and names the reason.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer as SnowballStemmer};
use serde::{Deserialize, Serialize};

use crate::error::{ChokeError, Result};
use crate::knowledge::{normalize_text, KnowledgeLabel};
use crate::record::{ExclusionReason, OutcomeLabel, QARecord};

pub trait Stemmer: Send + Sync {
    fn stem(&self, word: &str) -> String;
}

/// English Snowball (Porter2) stemmer.
pub struct PorterStemmer(SnowballStemmer);

impl Default for PorterStemmer {
    fn default() -> Self {
        Self(SnowballStemmer::create(Algorithm::English))
    }
}

impl Stemmer for PorterStemmer {
    fn stem(&self, word: &str) -> String {
        self.0.stem(word).into_owned()
    }
}

impl fmt::Debug for PorterStemmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PorterStemmer")
    }
}

pub trait SynonymProvider: Send + Sync {
    /// Synonyms of a normalized word or phrase. Empty when unknown.
    fn synonyms(&self, term: &str) -> BTreeSet<String>;
}

/// Word → synonyms table, typically loaded from a JSON object of arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, term: &str, synonyms: impl IntoIterator<Item = impl AsRef<str>>) {
        let set = self.entries.entry(normalize_text(term)).or_default();
        set.extend(synonyms.into_iter().map(|s| normalize_text(s.as_ref())));
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(s)?;
        let mut lex = Self::new();
        for (k, v) in raw {
            lex.insert(&k, v);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChokeError::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SynonymProvider for SynonymLexicon {
    fn synonyms(&self, term: &str) -> BTreeSet<String> {
        self.entries.get(term).cloned().unwrap_or_default()
    }
}

/// Tunables for the refinement heuristics. Serializable so it can live in the
/// engine config file; the synonym lexicon is attached separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub negation_prefixes: Vec<String>,
    /// A candidate is excluded when its stem overlap is strictly greater.
    pub stem_overlap_threshold: f64,
    /// A candidate survives the edit-distance check only when the distance
    /// between stemmed strings is strictly greater than this.
    pub edit_distance_min: usize,
    pub numeric_exclusion_words: BTreeSet<String>,
    pub formatting_marker: Option<String>,
    #[serde(skip)]
    pub synonyms: SynonymLexicon,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            negation_prefixes: vec!["the answer is not".into()],
            stem_overlap_threshold: 0.5,
            edit_distance_min: 2,
            numeric_exclusion_words: ["great", "none", "n/a"].iter().map(|s| s.to_string()).collect(),
            formatting_marker: Some("**".into()),
            synonyms: SynonymLexicon::default(),
        }
    }
}

impl CurationConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.stem_overlap_threshold > 0.0 && self.stem_overlap_threshold <= 1.0) {
            return Err(ChokeError::Config(format!(
                "stem_overlap_threshold must be in (0, 1], got {}",
                self.stem_overlap_threshold
            )));
        }
        Ok(())
    }
}

/// Per-model switches for the refinement heuristics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    /// The model wraps its final answer in a formatting marker (e.g. `**`);
    /// generations without the marker are excluded.
    pub star_formatting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Keep,
    Exclude(ExclusionReason),
}

/// True iff some normalized gold answer is a substring of the normalized
/// generation.
pub fn contains_gold(generation_text: &str, gold: &[String]) -> bool {
    let text = normalize_text(generation_text);
    gold.iter().any(|g| {
        let g = normalize_text(g);
        !g.is_empty() && text.contains(&g)
    })
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized words with surrounding punctuation removed.
fn words(s: &str) -> Vec<String> {
    normalize_text(s)
        .split(' ')
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn stems(s: &str, stemmer: &dyn Stemmer) -> Vec<String> {
    words(s).iter().map(|w| stemmer.stem(w)).collect()
}

/// Shared / total stemmed words of two strings, with set semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemOverlap {
    pub shared: usize,
    pub total: usize,
}

impl StemOverlap {
    pub fn value(&self) -> f64 {
        self.shared as f64 / self.total.max(1) as f64
    }
}

pub fn stem_overlap(a: &str, b: &str, stemmer: &dyn Stemmer) -> StemOverlap {
    let sa: HashSet<String> = stems(a, stemmer).into_iter().collect();
    let sb: HashSet<String> = stems(b, stemmer).into_iter().collect();
    StemOverlap { shared: sa.intersection(&sb).count(), total: sa.union(&sb).count() }
}

/// Gold answers such as "1,969" or "3.5" count as numeric.
pub fn is_numeric_answer(gold: &str) -> bool {
    let s = gold.trim().replace(',', "");
    s.chars().any(|c| c.is_ascii_digit()) && s.parse::<f64>().is_ok()
}

/// Runs the refinement heuristics in order and reports the first that fires.
pub struct Curator<'a> {
    cfg: &'a CurationConfig,
    stemmer: &'a dyn Stemmer,
    flags: ModelFlags,
}

impl<'a> Curator<'a> {
    pub fn new(cfg: &'a CurationConfig, stemmer: &'a dyn Stemmer, flags: ModelFlags) -> Self {
        Self { cfg, stemmer, flags }
    }

    pub fn refine_candidate(&self, generation_text: &str, gold: &str) -> Refinement {
        use ExclusionReason::*;
        let text = normalize_text(generation_text);
        let gold_norm = normalize_text(gold);

        if self.cfg.negation_prefixes.iter().any(|p| text.starts_with(&normalize_text(p))) {
            return Refinement::Exclude(Negation);
        }

        if self.cfg.synonyms.synonyms(&gold_norm).iter().any(|s| !s.is_empty() && text.contains(s.as_str())) {
            return Refinement::Exclude(Synonym);
        }

        if stem_overlap(&text, &gold_norm, self.stemmer).value() > self.cfg.stem_overlap_threshold {
            return Refinement::Exclude(StemOverlap);
        }

        let text_words = words(&text);
        let has_exclusion_word =
            text_words.iter().any(|w| self.cfg.numeric_exclusion_words.contains(w));
        let distance = edit_distance(
            &stems(&text, self.stemmer).join(" "),
            &stems(&gold_norm, self.stemmer).join(" "),
        );
        // numeric answers are exempt from the distance cut ("1984" vs "1985"
        // is a real hallucination), refusal words are not
        if has_exclusion_word
            || (!is_numeric_answer(gold) && distance <= self.cfg.edit_distance_min)
        {
            return Refinement::Exclude(EditDistance);
        }

        if gold_norm.split(' ').next().is_some_and(|first| !first.is_empty() && text == first) {
            return Refinement::Exclude(InitialWord);
        }

        if self.flags.star_formatting {
            if let Some(marker) = &self.cfg.formatting_marker {
                if !generation_text.contains(marker.as_str()) {
                    return Refinement::Exclude(Formatting);
                }
            }
        }

        Refinement::Keep
    }

    /// Refine against every gold answer; the candidate is kept only if no
    /// gold answer explains it away. The reported reason comes from the
    /// first gold answer that excludes it.
    pub fn refine_against_all(&self, generation_text: &str, gold: &[String]) -> Refinement {
        gold.iter()
            .map(|g| self.refine_candidate(generation_text, g))
            .find(|r| *r != Refinement::Keep)
            .unwrap_or(Refinement::Keep)
    }

    pub fn label_outcome(&self, r: &QARecord, k: &KnowledgeLabel) -> OutcomeLabel {
        if !k.knows {
            return OutcomeLabel::Excluded(ExclusionReason::NoKnowledge);
        }
        if contains_gold(&r.setting_greedy.text, &r.gold_answers) {
            return OutcomeLabel::Factual;
        }
        match self.refine_against_all(&r.setting_greedy.text, &r.gold_answers) {
            Refinement::Keep => OutcomeLabel::Hallucination,
            Refinement::Exclude(reason) => OutcomeLabel::Excluded(reason),
        }
    }
}

/// Fraction of candidate hallucinations removed by the heuristics, or `None`
/// when there were no candidates.
pub fn removal_rate<'l>(labels: impl IntoIterator<Item = &'l OutcomeLabel>) -> Option<f64> {
    let (mut kept, mut removed) = (0usize, 0usize);
    for l in labels {
        match l {
            OutcomeLabel::Hallucination => kept += 1,
            OutcomeLabel::Excluded(r) if r.is_heuristic() => removed += 1,
            _ => {}
        }
    }
    let total = kept + removed;
    (total > 0).then(|| removed as f64 / total as f64)
}
