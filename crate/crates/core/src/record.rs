//! Canonical record types and the JSONL log schema.
//!
//! Each line of a log is one [`QARecord`]: a question, its gold answers, the
//! knowledge-probe generations and the generations produced under a prompt
//! setting. Log-probabilities are natural logs and are kept as raw `f64`
//! values; probabilities are always derived on demand.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{ChokeError, Result};

/// Tolerance used when checking that an emitted token's logprob matches its
/// entry in the top-k alternatives.
const LOGPROB_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub token_text: String,
    pub logprob: f64,
    /// `(token_text, logprob)` pairs, most probable first.
    pub top_alternatives: Vec<(String, f64)>,
}

impl TokenStep {
    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sampled { temperature: f64 },
}

impl DecodeMode {
    pub fn is_greedy(&self) -> bool {
        matches!(self, DecodeMode::Greedy)
    }
}

/// A decoded answer. On the wire the decode mode is split into the
/// `decode_mode` string and an optional `temperature`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub decode_mode: DecodeMode,
    pub rng_seed: Option<u64>,
    pub token_steps: Vec<TokenStep>,
}

impl Generation {
    /// Sum of token logprobs: the log-likelihood of the whole sequence.
    pub fn sequence_log_likelihood(&self) -> f64 {
        self.token_steps.iter().map(|s| s.logprob).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct GenerationWire {
    text: String,
    decode_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
    token_steps: Vec<TokenStep>,
}

impl Serialize for Generation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (decode_mode, temperature) = match self.decode_mode {
            DecodeMode::Greedy => ("greedy", None),
            DecodeMode::Sampled { temperature } => ("sampled", Some(temperature)),
        };
        GenerationWire {
            text: self.text.clone(),
            decode_mode: decode_mode.to_string(),
            temperature,
            rng_seed: self.rng_seed,
            token_steps: self.token_steps.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Generation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let wire = GenerationWire::deserialize(deserializer)?;
        let decode_mode = match wire.decode_mode.as_str() {
            "greedy" => DecodeMode::Greedy,
            // a sampled generation without a temperature is a schema error;
            // a non-positive one is left for validation to report
            "sampled" => DecodeMode::Sampled {
                temperature: wire
                    .temperature
                    .ok_or_else(|| D::Error::missing_field("temperature"))?,
            },
            other => {
                return Err(D::Error::unknown_variant(other, &["greedy", "sampled"]));
            }
        };
        Ok(Generation {
            text: wire.text,
            decode_mode,
            rng_seed: wire.rng_seed,
            token_steps: wire.token_steps,
        })
    }
}

/// Prompt setting under which the setting generations were produced.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SettingId {
    Base,
    Child,
    AliceBob,
    Custom(String),
}

impl SettingId {
    pub fn as_str(&self) -> &str {
        match self {
            SettingId::Base => "base",
            SettingId::Child => "child",
            SettingId::AliceBob => "alice_bob",
            SettingId::Custom(s) => s,
        }
    }
}

impl From<&str> for SettingId {
    fn from(s: &str) -> Self {
        match s {
            "base" => SettingId::Base,
            "child" => SettingId::Child,
            "alice_bob" => SettingId::AliceBob,
            other => SettingId::Custom(other.to_string()),
        }
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SettingId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SettingId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(SettingId::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub question_id: String,
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub question_text: String,
    pub prompt_text: String,
    pub gold_answers: Vec<String>,
    pub knowledge_probe: Vec<Generation>,
    pub setting_greedy: Generation,
    pub setting_samples: Vec<Generation>,
    /// Precomputed semantic cluster per setting sample, when an external
    /// entailment model has annotated the record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_ids: Option<Vec<usize>>,
}

/// Why an excluded record was dropped from the hallucination set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Negation,
    Synonym,
    StemOverlap,
    EditDistance,
    InitialWord,
    Formatting,
    NoKnowledge,
    Other,
}

impl ExclusionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExclusionReason::Negation => "negation",
            ExclusionReason::Synonym => "synonym",
            ExclusionReason::StemOverlap => "stem_overlap",
            ExclusionReason::EditDistance => "edit_distance",
            ExclusionReason::InitialWord => "initial_word",
            ExclusionReason::Formatting => "formatting",
            ExclusionReason::NoKnowledge => "no_knowledge",
            ExclusionReason::Other => "other",
        }
    }

    /// True for reasons produced by the refinement heuristics, as opposed to
    /// records dropped because the model lacked the knowledge.
    pub fn is_heuristic(&self) -> bool {
        !matches!(self, ExclusionReason::NoKnowledge | ExclusionReason::Other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum OutcomeLabel {
    Factual,
    Hallucination,
    Excluded(ExclusionReason),
}

impl OutcomeLabel {
    pub fn is_hallucination(&self) -> bool {
        matches!(self, OutcomeLabel::Hallucination)
    }

    pub fn is_factual(&self) -> bool {
        matches!(self, OutcomeLabel::Factual)
    }
}

const REQUIRED_FIELDS: [&str; 9] = [
    "question_id",
    "dataset_id",
    "setting_id",
    "question_text",
    "prompt_text",
    "gold_answers",
    "knowledge_probe",
    "setting_greedy",
    "setting_samples",
];

/// How [`parse_records`] treats a bad line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Abort on the first bad line.
    Strict,
    /// Skip bad lines and report them alongside the parsed records.
    Lenient,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<QARecord>,
    /// Errors for skipped lines (lenient mode only).
    pub skipped: Vec<ChokeError>,
}

/// Parse a single JSONL line. `line_no` is 1-based and only used for errors.
pub fn parse_record_line(line: &str, line_no: usize) -> Result<QARecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| ChokeError::MalformedJson {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| ChokeError::SchemaViolation {
        line: line_no,
        field: "<root>".into(),
        message: "expected a JSON object".into(),
    })?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(ChokeError::SchemaViolation {
                line: line_no,
                field: field.into(),
                message: "missing field".into(),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        ChokeError::SchemaViolation {
            line: line_no,
            field: offending_field(&message).unwrap_or_else(|| "<record>".into()),
            message,
        }
    })
}

/// Pull the backquoted field name out of a serde error message, if any.
fn offending_field(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

/// Parse newline-delimited JSON records, preserving input order. Blank lines
/// are ignored but still counted for line numbers.
pub fn parse_records<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record_line(&line, idx + 1) {
            Ok(r) => out.records.push(r),
            Err(e) if mode == ParseMode::Lenient => {
                log::warn!("skipping line {}: {e}", idx + 1);
                out.skipped.push(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn parse_records_str(input: &str, mode: ParseMode) -> Result<ParseOutcome> {
    parse_records(input.as_bytes(), mode)
}

pub fn serialize_record(r: &QARecord) -> String {
    serde_json::to_string(r).expect("records always serialize")
}

/// One broken invariant, addressed by a JSON-pointer-like path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn validate_step(step: &TokenStep, path: &str, out: &mut Vec<Violation>) {
    if !step.logprob.is_finite() && step.logprob != f64::NEG_INFINITY {
        out.push(Violation::new(path, "logprob must be a number"));
    } else if step.logprob > 0.0 {
        out.push(Violation::new(path, format!("logprob ≤ 0 violated ({})", step.logprob)));
    }
    let alts = &step.top_alternatives;
    if alts.len() < 2 {
        out.push(Violation::new(path, "top_alternatives needs at least 2 entries"));
    }
    if alts.windows(2).any(|w| w[0].1.partial_cmp(&w[1].1) != Some(std::cmp::Ordering::Greater)) {
        out.push(Violation::new(path, "top_alternatives must be strictly descending"));
    }
    let present = alts
        .iter()
        .any(|(t, lp)| *t == step.token_text && (lp - step.logprob).abs() <= LOGPROB_MATCH_TOL);
    if !present {
        out.push(Violation::new(
            path,
            "emitted token missing from top_alternatives with matching logprob",
        ));
    }
}

fn validate_generation(g: &Generation, path: &str, out: &mut Vec<Violation>) {
    if let DecodeMode::Sampled { temperature } = g.decode_mode {
        if temperature.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            out.push(Violation::new(path, "sampled mode requires temperature > 0"));
        }
    }
    let joined: String = g.token_steps.iter().map(|s| s.token_text.as_str()).collect();
    if joined != g.text {
        out.push(Violation::new(path, "text differs from concatenated token_text"));
    }
    for (i, step) in g.token_steps.iter().enumerate() {
        validate_step(step, &format!("{path}/token_steps/{i}"), out);
    }
}

/// Check every per-record invariant. An empty report means the record is
/// valid.
pub fn validate_record(r: &QARecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.gold_answers.is_empty() {
        out.push(Violation::new("gold_answers", "must be nonempty"));
    }
    let greedy = r.knowledge_probe.iter().filter(|g| g.decode_mode.is_greedy()).count();
    if greedy != 1 {
        out.push(Violation::new(
            "knowledge_probe",
            format!("exactly one greedy generation required, found {greedy}"),
        ));
    }
    for (i, g) in r.knowledge_probe.iter().enumerate() {
        validate_generation(g, &format!("knowledge_probe/{i}"), &mut out);
    }
    if !r.setting_greedy.decode_mode.is_greedy() {
        out.push(Violation::new("setting_greedy", "must be greedy"));
    }
    validate_generation(&r.setting_greedy, "setting_greedy", &mut out);
    for (i, g) in r.setting_samples.iter().enumerate() {
        let path = format!("setting_samples/{i}");
        if g.decode_mode.is_greedy() {
            out.push(Violation::new(&path, "setting samples must be sampled"));
        }
        validate_generation(g, &path, &mut out);
    }
    if let Some(ids) = &r.cluster_ids {
        if ids.len() != r.setting_samples.len() {
            out.push(Violation::new("cluster_ids", "one cluster id per setting sample required"));
        }
        let distinct: HashSet<usize> = ids.iter().copied().collect();
        if ids.iter().any(|&id| id >= distinct.len()) {
            out.push(Violation::new("cluster_ids", "cluster ids must be contiguous from 0"));
        }
    }
    out
}

/// Corpus-level check: `question_id` must be unique. Returns duplicated ids.
pub fn duplicate_question_ids(records: &[QARecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.question_id.as_str()))
        .map(|r| r.question_id.clone())
        .collect();
    dups.sort();
    dups.dedup();
    dups
}
