//! Deciding whether the model knows the answer to a question.
//!
//! A record counts as known only if every knowledge-probe generation (the
//! greedy one and every sampled one) equals a gold answer after
//! normalization.

use serde::{Deserialize, Serialize};

use crate::record::QARecord;

/// Case-fold, trim, and collapse internal whitespace runs to one space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeLabel {
    pub knows: bool,
    pub probe_matches: Vec<bool>,
}

pub fn probe_matches_gold(text: &str, gold: &[String]) -> bool {
    let text = normalize_text(text);
    gold.iter().any(|g| normalize_text(g) == text)
}

pub fn label_knowledge(r: &QARecord) -> KnowledgeLabel {
    let probe_matches: Vec<bool> =
        r.knowledge_probe.iter().map(|g| probe_matches_gold(&g.text, &r.gold_answers)).collect();
    KnowledgeLabel { knows: probe_matches.iter().all(|&m| m), probe_matches }
}
