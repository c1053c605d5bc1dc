//! Certainty and uncertainty scores for a single record.
//!
//! Five quantities are supported: first-answer-token probability, the gap
//! between the top two token probabilities, semantic entropy over meaning
//! clusters, predictive entropy, and sampling agreement. Entropies are
//! uncertainties, so every score also carries a unified `certainty` value
//! where higher always means more certain.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ChokeError, Result};
use crate::knowledge::normalize_text;
use crate::record::{Generation, QARecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Probability,
    ProbDiff,
    SemanticEntropy,
    PredictiveEntropy,
    SamplingAgreement,
}

impl MetricId {
    pub const ALL: [MetricId; 5] = [
        MetricId::Probability,
        MetricId::ProbDiff,
        MetricId::SemanticEntropy,
        MetricId::PredictiveEntropy,
        MetricId::SamplingAgreement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricId::Probability => "probability",
            MetricId::ProbDiff => "prob_diff",
            MetricId::SemanticEntropy => "semantic_entropy",
            MetricId::PredictiveEntropy => "predictive_entropy",
            MetricId::SamplingAgreement => "sampling_agreement",
        }
    }

    pub fn is_uncertainty(&self) -> bool {
        matches!(self, MetricId::SemanticEntropy | MetricId::PredictiveEntropy)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = ChokeError;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ChokeError::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertaintyScore {
    pub metric_id: MetricId,
    pub raw_value: f64,
    pub certainty: f64,
}

impl CertaintyScore {
    pub fn new(metric_id: MetricId, raw_value: f64) -> Self {
        Self { metric_id, raw_value, certainty: to_unified_certainty(metric_id, raw_value) }
    }
}

/// Map a raw metric value to the higher-is-more-certain orientation.
pub fn to_unified_certainty(metric_id: MetricId, raw_value: f64) -> f64 {
    if metric_id.is_uncertainty() {
        -raw_value
    } else {
        raw_value
    }
}

/// Tokens that precede the actual answer in chat and few-shot formats.
pub const DEFAULT_SKIP_TOKENS: [&str; 29] = [
    "<|assistant|>",
    "<|user|>",
    "<|begin_of_text|>",
    "<|end_of_text|>",
    "<|eot_id|>",
    "<|start|>",
    "<|end|>",
    "<|sep|>",
    "<|sep_id|>",
    "assistant",
    "user",
    "\n",
    "answer",
    "The",
    "Answer",
    "\"",
    "'",
    " answer",
    "is",
    "it",
    "it's",
    ":",
    " ",
    " is",
    " correct",
    "correct",
    "*",
    "**",
    " **",
];

pub fn default_skip_tokens() -> Vec<String> {
    DEFAULT_SKIP_TOKENS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerToken {
    pub index: usize,
    /// Every token was skippable, so the first token was used instead.
    pub all_skipped: bool,
}

/// Index of the first token that is not in `skip_tokens`.
pub fn first_answer_token_index(g: &Generation, skip_tokens: &[String]) -> Result<AnswerToken> {
    if g.token_steps.is_empty() {
        return Err(ChokeError::EmptyGeneration);
    }
    match g.token_steps.iter().position(|s| !skip_tokens.contains(&s.token_text)) {
        Some(index) => Ok(AnswerToken { index, all_skipped: false }),
        None => {
            log::warn!("every token of {:?} is in the skip list; using the first token", g.text);
            Ok(AnswerToken { index: 0, all_skipped: true })
        }
    }
}

pub fn probability_certainty(g: &Generation, skip_tokens: &[String]) -> Result<CertaintyScore> {
    let at = first_answer_token_index(g, skip_tokens)?;
    Ok(CertaintyScore::new(MetricId::Probability, g.token_steps[at.index].logprob.exp()))
}

pub fn probability_diff_certainty(g: &Generation, skip_tokens: &[String]) -> Result<CertaintyScore> {
    let at = first_answer_token_index(g, skip_tokens)?;
    let alts = &g.token_steps[at.index].top_alternatives;
    if alts.len() < 2 {
        return Err(ChokeError::InsufficientAlternatives(alts.len()));
    }
    Ok(CertaintyScore::new(MetricId::ProbDiff, alts[0].1.exp() - alts[1].1.exp()))
}

/// Semantic cluster of each sampled generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    cluster_ids: Vec<usize>,
    cluster_count: usize,
}

impl ClusterAssignment {
    /// Validate externally supplied ids: nonempty, and contiguous in
    /// `0..C`.
    pub fn from_ids(cluster_ids: Vec<usize>) -> Result<Self> {
        if cluster_ids.is_empty() {
            return Err(ChokeError::InvalidClusters("no cluster ids".into()));
        }
        let distinct: HashSet<usize> = cluster_ids.iter().copied().collect();
        let cluster_count = distinct.len();
        if cluster_ids.iter().any(|&c| c >= cluster_count) {
            return Err(ChokeError::InvalidClusters(format!(
                "ids must be contiguous in 0..{cluster_count}"
            )));
        }
        Ok(Self { cluster_ids, cluster_count })
    }

    pub fn cluster_ids(&self) -> &[usize] {
        &self.cluster_ids
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }
}

/// Pairwise semantic equivalence between two generation texts.
pub trait EquivalenceOracle {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool>;
}

/// Two texts are equivalent iff they normalize to the same string.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchOracle;

impl EquivalenceOracle for ExactMatchOracle {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        Ok(normalize_text(a) == normalize_text(b))
    }
}

impl<F> EquivalenceOracle for F
where
    F: Fn(&str, &str) -> Result<bool>,
{
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        self(a, b)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Group samples into connected components of the equivalence relation.
/// Cluster ids follow the order in which clusters first appear.
pub fn cluster_generations(
    samples: &[Generation],
    oracle: &dyn EquivalenceOracle,
) -> Result<ClusterAssignment> {
    if samples.is_empty() {
        return Err(ChokeError::EmptySamples);
    }
    let n = samples.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            if oracle.equivalent(&samples[i].text, &samples[j].text)? {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut root_to_id = std::collections::HashMap::new();
    let ids = (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            let next = root_to_id.len();
            *root_to_id.entry(root).or_insert(next)
        })
        .collect();
    ClusterAssignment::from_ids(ids)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Semantic entropy: `-(1/C) Σ_c log p(c)`, where `p(c)` is the cluster's
/// share of the total sequence likelihood mass. Computed in log space so
/// that long sequences do not underflow.
pub fn semantic_entropy(samples: &[Generation], assign: &ClusterAssignment) -> Result<CertaintyScore> {
    if samples.is_empty() {
        return Err(ChokeError::EmptySamples);
    }
    if assign.cluster_ids.len() != samples.len() {
        return Err(ChokeError::InvalidClusters(format!(
            "{} cluster ids for {} samples",
            assign.cluster_ids.len(),
            samples.len()
        )));
    }
    let log_masses = cluster_log_masses(samples, assign);
    let log_total = log_sum_exp(&log_masses);
    if !log_total.is_finite() {
        return Err(ChokeError::InsufficientData("all sample likelihoods are zero".into()));
    }
    let c = log_masses.len() as f64;
    let se = -log_masses.iter().map(|lm| lm - log_total).sum::<f64>() / c;
    // p(c) ≤ 1 so every term is ≥ 0; clamp away -0.0 and rounding noise
    Ok(CertaintyScore::new(MetricId::SemanticEntropy, se.max(0.0)))
}

/// Semantic entropy from explicit per-cluster masses. The masses need not be
/// normalized.
pub fn semantic_entropy_from_masses(masses: &[f64]) -> Result<CertaintyScore> {
    if masses.is_empty() {
        return Err(ChokeError::EmptySamples);
    }
    let logs: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    let log_total = log_sum_exp(&logs);
    if !log_total.is_finite() {
        return Err(ChokeError::InsufficientData("cluster masses must be positive".into()));
    }
    let se = -logs.iter().map(|l| l - log_total).sum::<f64>() / masses.len() as f64;
    Ok(CertaintyScore::new(MetricId::SemanticEntropy, se.max(0.0)))
}

fn cluster_log_masses(samples: &[Generation], assign: &ClusterAssignment) -> Vec<f64> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); assign.cluster_count];
    for (g, &c) in samples.iter().zip(&assign.cluster_ids) {
        members[c].push(g.sequence_log_likelihood());
    }
    members.iter().map(|lls| log_sum_exp(lls)).collect()
}

/// Predictive entropy: negative mean sequence log-likelihood.
pub fn predictive_entropy(samples: &[Generation]) -> Result<CertaintyScore> {
    if samples.is_empty() {
        return Err(ChokeError::EmptySamples);
    }
    let mean = samples.iter().map(Generation::sequence_log_likelihood).sum::<f64>() / samples.len() as f64;
    Ok(CertaintyScore::new(MetricId::PredictiveEntropy, (-mean).max(0.0)))
}

/// `1 - |unique| / |samples|`, uniqueness judged on normalized text.
pub fn sampling_agreement(samples: &[Generation]) -> Result<CertaintyScore> {
    if samples.is_empty() {
        return Err(ChokeError::EmptySamples);
    }
    let unique: HashSet<String> = samples.iter().map(|g| normalize_text(&g.text)).collect();
    let raw = 1.0 - unique.len() as f64 / samples.len() as f64;
    Ok(CertaintyScore::new(MetricId::SamplingAgreement, raw))
}

/// Everything the scoring stage records for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub scores: Vec<CertaintyScore>,
    /// Metric → error message for metrics that could not be computed.
    pub errors: std::collections::BTreeMap<MetricId, String>,
    pub first_token_text: Option<String>,
}

impl RecordScores {
    pub fn certainty(&self, metric: MetricId) -> Option<f64> {
        self.scores.iter().find(|s| s.metric_id == metric).map(|s| s.certainty)
    }
}

/// Score one record on the requested metrics. Token-level metrics use the
/// setting's greedy generation; sample-based metrics use the setting samples,
/// clustered by `cluster_ids` when present and by `oracle` otherwise.
pub fn score_record(
    r: &QARecord,
    metrics: &[MetricId],
    skip_tokens: &[String],
    oracle: &dyn EquivalenceOracle,
) -> RecordScores {
    let mut out = RecordScores {
        scores: Vec::new(),
        errors: Default::default(),
        first_token_text: first_answer_token_index(&r.setting_greedy, skip_tokens)
            .ok()
            .map(|at| r.setting_greedy.token_steps[at.index].token_text.clone()),
    };
    for &metric in metrics {
        let result = match metric {
            MetricId::Probability => probability_certainty(&r.setting_greedy, skip_tokens),
            MetricId::ProbDiff => probability_diff_certainty(&r.setting_greedy, skip_tokens),
            MetricId::SemanticEntropy => {
                let assign = match &r.cluster_ids {
                    Some(ids) => ClusterAssignment::from_ids(ids.clone()),
                    None => cluster_generations(&r.setting_samples, oracle),
                };
                assign.and_then(|a| semantic_entropy(&r.setting_samples, &a))
            }
            MetricId::PredictiveEntropy => predictive_entropy(&r.setting_samples),
            MetricId::SamplingAgreement => sampling_agreement(&r.setting_samples),
        };
        match result {
            Ok(s) => out.scores.push(s),
            Err(e) => {
                out.errors.insert(metric, e.to_string());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::fixtures::{greedy, sampled};
    use crate::record::{DecodeMode, TokenStep};
    use proptest::prelude::*;

    fn step(text: &str, top: &[f64]) -> TokenStep {
        TokenStep {
            token_text: text.into(),
            logprob: top[0].ln(),
            top_alternatives: top.iter().enumerate().map(|(i, p)| (format!("t{i}"), p.ln())).collect(),
        }
    }

    fn single(text: &str, top: &[f64]) -> Generation {
        Generation {
            text: text.into(),
            decode_mode: DecodeMode::Greedy,
            rng_seed: None,
            token_steps: vec![step(text, top)],
        }
    }

    /// One-token sample whose sequence probability is `p`.
    fn sample_with_prob(text: &str, p: f64) -> Generation {
        let mut g = sampled(&[text], 0.5);
        g.token_steps[0].logprob = p.ln();
        g
    }

    #[test]
    fn skip_list_finds_answer_token() {
        let skip = default_skip_tokens();
        let g = greedy(&["The", " answer", " is", " Paris"], 0.5);
        assert_eq!(first_answer_token_index(&g, &skip).unwrap(), AnswerToken { index: 3, all_skipped: false });
        let g = greedy(&["Paris"], 0.5);
        assert_eq!(first_answer_token_index(&g, &skip).unwrap().index, 0);
        let g = greedy(&[], 0.5);
        assert!(matches!(first_answer_token_index(&g, &skip), Err(ChokeError::EmptyGeneration)));
        let g = greedy(&["The", " is"], 0.5);
        assert_eq!(first_answer_token_index(&g, &skip).unwrap(), AnswerToken { index: 0, all_skipped: true });
    }

    #[test]
    fn first_token_probability() {
        let skip = default_skip_tokens();
        assert_eq!(probability_certainty(&single("Paris", &[0.5, 0.2]), &skip).unwrap().raw_value, 0.5);
        let mut g = single("Paris", &[1.0, 0.0]);
        g.token_steps[0].logprob = 0.0;
        assert_eq!(probability_certainty(&g, &skip).unwrap().raw_value, 1.0);
        // reported probability of a mutation/genetic-drift style answer
        let g = single(" mutation", &[0.49, 0.2]);
        let s = probability_certainty(&g, &skip).unwrap();
        assert!((s.raw_value - 0.49).abs() < 1e-12);
        assert_eq!(s.certainty, s.raw_value);
    }

    #[test]
    fn probability_gap() {
        let skip = default_skip_tokens();
        let gap = |top: &[f64]| probability_diff_certainty(&single("x", top), &skip).unwrap().raw_value;
        assert!((gap(&[0.6, 0.3]) - 0.3).abs() < 1e-12);
        assert_eq!(gap(&[0.5, 0.5]), 0.0);
        assert_eq!(gap(&[1.0, 0.0]), 1.0);
        let g = single("x", &[0.9]);
        assert!(matches!(probability_diff_certainty(&g, &skip), Err(ChokeError::InsufficientAlternatives(1))));
    }

    #[test]
    fn clustering() {
        let gens = |ts: &[&str]| ts.iter().map(|t| sampled(&[t], 0.5)).collect::<Vec<_>>();
        let a = cluster_generations(&gens(&["x", "x", "x"]), &ExactMatchOracle).unwrap();
        assert_eq!(a.cluster_count(), 1);
        let a = cluster_generations(&gens(&["a", "b", "c"]), &ExactMatchOracle).unwrap();
        assert_eq!(a.cluster_count(), 3);
        assert_eq!(a.cluster_ids(), &[0, 1, 2]);

        // a~b and b~c only; closure joins all three
        let chain = |x: &str, y: &str| -> Result<bool> {
            let pair = [x, y];
            Ok(x == y || pair == ["a", "b"] || pair == ["b", "a"] || pair == ["b", "c"] || pair == ["c", "b"])
        };
        let a = cluster_generations(&gens(&["a", "c", "b"]), &chain).unwrap();
        assert_eq!(a.cluster_count(), 1);

        let a = cluster_generations(&gens(&["b", "a", "b", "c"]), &ExactMatchOracle).unwrap();
        assert_eq!(a.cluster_ids(), &[0, 1, 0, 2]);

        let failing = |_: &str, _: &str| -> Result<bool> { Err(ChokeError::OracleFailure("down".into())) };
        assert!(matches!(cluster_generations(&gens(&["a", "b"]), &failing), Err(ChokeError::OracleFailure(_))));
    }

    #[test]
    fn cluster_ids_validation() {
        assert!(ClusterAssignment::from_ids(vec![0, 1, 1]).is_ok());
        assert!(ClusterAssignment::from_ids(vec![0, 2]).is_err());
        assert!(ClusterAssignment::from_ids(vec![]).is_err());
    }

    #[test]
    fn semantic_entropy_examples() {
        let samples: Vec<_> = (0..3).map(|_| sample_with_prob("x", 0.3)).collect();
        let one = ClusterAssignment::from_ids(vec![0, 0, 0]).unwrap();
        assert_eq!(semantic_entropy(&samples, &one).unwrap().raw_value, 0.0);

        let samples = vec![sample_with_prob("a", 0.2), sample_with_prob("b", 0.2)];
        let two = ClusterAssignment::from_ids(vec![0, 1]).unwrap();
        let se = semantic_entropy(&samples, &two).unwrap();
        assert!((se.raw_value - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(se.certainty, -se.raw_value);

        // hand evaluation: -(ln 0.8 + ln 0.2) / 2
        let expected = -(0.8f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((expected - 0.9163).abs() < 1e-4);
        let samples = vec![sample_with_prob("a", 0.4), sample_with_prob("b", 0.1)];
        let se = semantic_entropy(&samples, &two).unwrap().raw_value;
        assert!((se - expected).abs() < 1e-12);
        assert!((semantic_entropy_from_masses(&[0.8, 0.2]).unwrap().raw_value - expected).abs() < 1e-12);
    }

    #[test]
    fn semantic_entropy_survives_underflow() {
        // each sequence likelihood is e^-2000, far below f64 range
        let mut samples = vec![sample_with_prob("a", 0.5), sample_with_prob("b", 0.5)];
        for g in &mut samples {
            g.token_steps[0].logprob = -2000.0;
        }
        let two = ClusterAssignment::from_ids(vec![0, 1]).unwrap();
        let se = semantic_entropy(&samples, &two).unwrap().raw_value;
        assert!((se - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn predictive_entropy_examples() {
        let pe = |ps: &[f64]| {
            let s: Vec<_> = ps.iter().map(|&p| sample_with_prob("x", p)).collect();
            predictive_entropy(&s).unwrap().raw_value
        };
        assert_eq!(pe(&[1.0]), 0.0);
        let expected = -(0.5f64.ln() + 0.25f64.ln()) / 2.0;
        assert!((expected - 1.0397).abs() < 1e-4);
        assert!((pe(&[0.5, 0.25]) - expected).abs() < 1e-12);
        assert!((pe(&[0.3; 4]) + 0.3f64.ln()).abs() < 1e-12);
        assert!(matches!(predictive_entropy(&[]), Err(ChokeError::EmptySamples)));
    }

    #[test]
    fn agreement_examples() {
        let agree = |ts: &[&str]| {
            let s: Vec<_> = ts.iter().map(|t| sampled(&[t], 0.5)).collect();
            sampling_agreement(&s).unwrap().raw_value
        };
        assert_eq!(agree(&["x"; 10]), 0.9);
        let distinct: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = distinct.iter().map(String::as_str).collect();
        assert_eq!(agree(&refs), 0.0);
        assert_eq!(agree(&["a", "a", "b", "b"]), 0.5);
        assert!(matches!(sampling_agreement(&[]), Err(ChokeError::EmptySamples)));
    }

    #[test]
    fn unified_orientation() {
        assert_eq!(to_unified_certainty(MetricId::Probability, 0.7), 0.7);
        assert_eq!(to_unified_certainty(MetricId::SemanticEntropy, 0.0), 0.0);
        assert_eq!(to_unified_certainty(MetricId::PredictiveEntropy, 1.0397), -1.0397);
        assert_eq!(to_unified_certainty(MetricId::SamplingAgreement, 0.4), 0.4);
        assert_eq!(to_unified_certainty(MetricId::ProbDiff, 0.1), 0.1);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in MetricId::ALL {
            assert_eq!(m.as_str().parse::<MetricId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("nll".parse::<MetricId>().is_err());
    }

    proptest! {
        #[test]
        fn semantic_entropy_is_scale_free(masses in proptest::collection::vec(0.01f64..1.0, 1..6), scale in 0.001f64..1000.0) {
            let a = semantic_entropy_from_masses(&masses).unwrap().raw_value;
            let scaled: Vec<f64> = masses.iter().map(|m| m * scale).collect();
            let b = semantic_entropy_from_masses(&scaled).unwrap().raw_value;
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert_eq!(a == 0.0, masses.len() == 1);
        }

        #[test]
        fn entropies_nonnegative_and_agreement_permutation_invariant(
            ps in proptest::collection::vec((0.01f64..=1.0, 0usize..3), 1..10),
            rot in 0usize..10,
        ) {
            let samples: Vec<_> = ps.iter().map(|&(p, t)| sample_with_prob(["a", "b", "c"][t], p)).collect();
            let pe = predictive_entropy(&samples).unwrap().raw_value;
            prop_assert!(pe >= 0.0);
            let assign = cluster_generations(&samples, &ExactMatchOracle).unwrap();
            let se = semantic_entropy(&samples, &assign).unwrap().raw_value;
            prop_assert!(se >= 0.0);
            prop_assert_eq!(se == 0.0, assign.cluster_count() == 1);

            let mut rotated = samples.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            prop_assert_eq!(
                sampling_agreement(&samples).unwrap().raw_value,
                sampling_agreement(&rotated).unwrap().raw_value
            );
        }

        #[test]
        fn token_metrics_only_see_answer_token(p in 0.01f64..1.0, tail in 0.01f64..1.0) {
            let skip = default_skip_tokens();
            let mut g = greedy(&["The", " Paris", " France"], tail);
            g.token_steps[1] = step(" Paris", &[p, p / 2.0]);
            let before = probability_certainty(&g, &skip).unwrap();
            let gap_before = probability_diff_certainty(&g, &skip).unwrap();
            g.token_steps[0].logprob = (tail / 3.0).ln();
            g.token_steps[2].logprob = (tail / 7.0).ln();
            prop_assert_eq!(probability_certainty(&g, &skip).unwrap(), before);
            prop_assert_eq!(probability_diff_certainty(&g, &skip).unwrap(), gap_before);
        }
    }
}
