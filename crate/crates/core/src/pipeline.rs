//! File-mediated pipeline stages behind the `choke` command line.
//!
//! Every stage reads its predecessors' artifacts from the output directory
//! and writes its own next to them:
//!
//! | command       | reads                                   | writes                                   |
//! |---------------|-----------------------------------------|------------------------------------------|
//! | `validate`    | inputs                                  | `validation.json`                        |
//! | `label`       | inputs                                  | `labels.jsonl`                           |
//! | `score`       | inputs                                  | `scores.jsonl`                           |
//! | `threshold`   | labels, scores                          | `thresholds.json`                        |
//! | `detect`      | labels, scores, thresholds              | `verdicts.jsonl`                         |
//! | `consistency` | labels, scores, verdicts                | `consistency.json`, `consistency_table.csv` |
//! | `mitigate`    | labels, scores                          | `mitigation.json`, `mitigation.csv`      |
//! | `report`      | all of the above (runs them if inputs are given) | `report.json`, `cdf/*.csv`      |
//!
//! Records are grouped by `(dataset_id, setting_id)`; thresholds, verdicts
//! and mitigation are computed per group. Outputs are deterministic for a
//! fixed config and seed.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certainty::{score_record, CertaintyScore, ExactMatchOracle, MetricId};
use crate::config::EngineConfig;
use crate::consistency::{
    first_token_length_ttest, permutation_test, shared_permutation_test, write_consistency_csv, ConsistencyReport,
    ConsistencyRow, IdSet, TTestResult,
};
use crate::curation::{removal_rate, Curator, PorterStemmer};
use crate::error::{ChokeError, Result};
use crate::knowledge::label_knowledge;
use crate::mitigation::{compare_methods, write_mitigation_csv, MitigationReport, ScoredRecord, UNMITIGATED_RULE};
use crate::record::{duplicate_question_ids, parse_records, validate_record, OutcomeLabel, ParseMode, QARecord, SettingId, Violation};
use crate::threshold::{
    cdf_curves, choke_fraction, classify_choke, optimal_threshold, write_cdf_csv, CdfGrid, LabeledScore,
    ThresholdResult,
};

pub const VALIDATION_FILE: &str = "validation.json";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const CONSISTENCY_FILE: &str = "consistency.json";
pub const CONSISTENCY_TABLE_FILE: &str = "consistency_table.csv";
pub const MITIGATION_FILE: &str = "mitigation.json";
pub const MITIGATION_CSV_FILE: &str = "mitigation.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CDF_DIR: &str = "cdf";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Label,
    Score,
    Threshold,
    Detect,
    Consistency,
    Mitigate,
    Report,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub parse_mode: ParseMode,
    pub shared_only: bool,
}

/// What a command produced. `problems` counts data issues that did not abort
/// the run (validation violations, skipped lines); the CLI turns a nonzero
/// count from `validate` into exit status 1.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub problems: usize,
}

type GroupKey = (String, SettingId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLine {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub question_id: String,
    pub knows: bool,
    pub probe_matches: Vec<bool>,
    pub outcome: OutcomeLabel,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub question_id: String,
    pub scores: Vec<CertaintyScore>,
    pub errors: BTreeMap<MetricId, String>,
    pub first_token_text: Option<String>,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGroup {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub results: Vec<ThresholdResult>,
    pub errors: BTreeMap<MetricId, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsFile {
    pub config_hash: String,
    pub seed: u64,
    pub groups: Vec<ThresholdGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub metric_id: MetricId,
    pub question_id: String,
    pub certainty: f64,
    pub t_star: f64,
    pub is_choke: bool,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub question_id: String,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationFile {
    pub config_hash: String,
    pub seed: u64,
    pub n_records: usize,
    pub skipped_lines: Vec<String>,
    pub duplicate_keys: Vec<String>,
    pub invalid_records: Vec<ValidationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingComparison {
    pub dataset_id: String,
    pub metric_id: MetricId,
    pub setting_a: SettingId,
    pub setting_b: SettingId,
    pub report: ConsistencyReport,
    pub empty_intersection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstTokenTest {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub metric_id: MetricId,
    pub n_choke: usize,
    pub n_low_certainty: usize,
    pub result: Option<TTestResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFile {
    pub config_hash: String,
    pub seed: u64,
    pub shared_only: bool,
    pub comparisons: Vec<SettingComparison>,
    pub first_token_tests: Vec<FirstTokenTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationGroup {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub reports: Vec<MitigationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationFile {
    pub config_hash: String,
    pub seed: u64,
    pub rule: String,
    pub groups: Vec<MitigationGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub factual: usize,
    pub hallucination: usize,
    pub excluded: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric_id: MetricId,
    pub t_star: f64,
    pub misclassifications: usize,
    pub n_verdicts: usize,
    pub n_choke: usize,
    pub choke_fraction: Option<f64>,
    pub cdf_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub dataset_id: String,
    pub setting_id: SettingId,
    pub n_records: usize,
    pub counts: OutcomeCounts,
    /// Share of candidate hallucinations removed by the curation heuristics.
    pub heuristic_removal_rate: Option<f64>,
    pub metrics: Vec<MetricSummary>,
    pub threshold_errors: BTreeMap<MetricId, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub model_id: String,
    pub groups: Vec<GroupReport>,
    pub mitigation_rule: String,
    pub mitigation: Option<MitigationFile>,
    pub consistency: Option<ConsistencyFile>,
}

pub struct Pipeline {
    cfg: EngineConfig,
    config_hash: String,
    opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: EngineConfig, opts: RunOptions) -> Self {
        let config_hash = cfg.hash();
        Self { cfg, config_hash, opts }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn path(&self, name: &str) -> PathBuf {
        self.opts.out_dir.join(name)
    }

    pub fn run(&self, cmd: Command) -> Result<RunSummary> {
        std::fs::create_dir_all(&self.opts.out_dir)
            .map_err(|e| ChokeError::UnwritableOutput(format!("{}: {e}", self.opts.out_dir.display())))?;
        match cmd {
            Command::Validate => self.validate(),
            Command::Label => self.label(),
            Command::Score => self.score(),
            Command::Threshold => self.threshold(),
            Command::Detect => self.detect(),
            Command::Consistency => self.consistency(),
            Command::Mitigate => self.mitigate(),
            Command::Report => self.report(),
        }
    }

    fn load_inputs(&self) -> Result<(Vec<QARecord>, Vec<ChokeError>)> {
        if self.opts.inputs.is_empty() {
            return Err(ChokeError::MissingInput("no --input given".into()));
        }
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for path in &self.opts.inputs {
            let file = File::open(path).map_err(|e| ChokeError::MissingInput(format!("{}: {e}", path.display())))?;
            let out = parse_records(BufReader::new(file), self.opts.parse_mode).map_err(|e| match e {
                ChokeError::MalformedJson { line, message } => {
                    ChokeError::MalformedJson { line, message: format!("{}: {message}", path.display()) }
                }
                other => other,
            })?;
            records.extend(out.records);
            skipped.extend(out.skipped);
        }
        Ok((records, skipped))
    }

    fn duplicate_keys(records: &[QARecord]) -> Vec<String> {
        let mut by_group: BTreeMap<GroupKey, Vec<QARecord>> = BTreeMap::new();
        for r in records {
            by_group.entry((r.dataset_id.clone(), r.setting_id.clone())).or_default().push(r.clone());
        }
        by_group
            .iter()
            .flat_map(|((d, s), rs)| duplicate_question_ids(rs).into_iter().map(move |q| format!("{d}/{s}/{q}")))
            .collect()
    }

    fn load_checked_inputs(&self) -> Result<Vec<QARecord>> {
        let (records, _) = self.load_inputs()?;
        if let Some(dup) = Self::duplicate_keys(&records).first() {
            return Err(ChokeError::SchemaViolation {
                line: 0,
                field: "question_id".into(),
                message: format!("duplicate question id {dup}"),
            });
        }
        Ok(records)
    }

    fn validate(&self) -> Result<RunSummary> {
        let (records, skipped) = self.load_inputs()?;
        let invalid_records: Vec<ValidationEntry> = records
            .par_iter()
            .map(|r| ValidationEntry { question_id: r.question_id.clone(), violations: validate_record(r) })
            .filter(|e| !e.violations.is_empty())
            .collect();
        let file = ValidationFile {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            n_records: records.len(),
            skipped_lines: skipped.iter().map(ToString::to_string).collect(),
            duplicate_keys: Self::duplicate_keys(&records),
            invalid_records,
        };
        let problems = file.skipped_lines.len() + file.duplicate_keys.len() + file.invalid_records.len();
        let path = self.path(VALIDATION_FILE);
        write_json(&path, &file)?;
        Ok(RunSummary { artifacts: vec![path], problems })
    }

    fn label(&self) -> Result<RunSummary> {
        let records = self.load_checked_inputs()?;
        let stemmer = PorterStemmer::default();
        let curator = Curator::new(&self.cfg.curation, &stemmer, self.cfg.model_flags());
        let lines: Vec<LabelLine> = records
            .par_iter()
            .map(|r| {
                let k = label_knowledge(r);
                let outcome = curator.label_outcome(r, &k);
                LabelLine {
                    dataset_id: r.dataset_id.clone(),
                    setting_id: r.setting_id.clone(),
                    question_id: r.question_id.clone(),
                    knows: k.knows,
                    probe_matches: k.probe_matches,
                    outcome,
                    config_hash: self.config_hash.clone(),
                    seed: self.cfg.seed,
                }
            })
            .collect();
        if let Some(rate) = removal_rate(lines.iter().map(|l| &l.outcome)) {
            log::info!("curation heuristics removed {:.1}% of candidate hallucinations", 100.0 * rate);
        }
        let path = self.path(LABELS_FILE);
        write_jsonl(&path, &lines)?;
        Ok(RunSummary { artifacts: vec![path], problems: 0 })
    }

    fn score(&self) -> Result<RunSummary> {
        let records = self.load_checked_inputs()?;
        let lines: Vec<ScoreLine> = records
            .par_iter()
            .map(|r| {
                let s = score_record(r, &self.cfg.metrics, &self.cfg.skip_tokens, &ExactMatchOracle);
                ScoreLine {
                    dataset_id: r.dataset_id.clone(),
                    setting_id: r.setting_id.clone(),
                    question_id: r.question_id.clone(),
                    scores: s.scores,
                    errors: s.errors,
                    first_token_text: s.first_token_text,
                    config_hash: self.config_hash.clone(),
                    seed: self.cfg.seed,
                }
            })
            .collect();
        let failed = lines.iter().filter(|l| !l.errors.is_empty()).count();
        if failed > 0 {
            log::warn!("{failed} records have metrics that could not be computed");
        }
        let path = self.path(SCORES_FILE);
        write_jsonl(&path, &lines)?;
        Ok(RunSummary { artifacts: vec![path], problems: 0 })
    }

    fn joined(&self) -> Result<BTreeMap<GroupKey, Vec<Joined>>> {
        let labels: Vec<LabelLine> = read_jsonl(&self.path(LABELS_FILE))?;
        let scores: Vec<ScoreLine> = read_jsonl(&self.path(SCORES_FILE))?;
        Ok(join(labels, scores))
    }

    fn fit_thresholds(&self, groups: &BTreeMap<GroupKey, Vec<Joined>>) -> ThresholdsFile {
        let groups = groups
            .iter()
            .map(|((dataset_id, setting_id), items)| {
                let mut results = Vec::new();
                let mut errors = BTreeMap::new();
                for &metric in &self.cfg.metrics {
                    let (h, f) = crate::threshold::split_by_outcome(&labeled_scores(items, metric));
                    match optimal_threshold(metric, &h, &f, self.cfg.balancing, self.cfg.seed) {
                        Ok(r) => results.push(r),
                        Err(e) => {
                            errors.insert(metric, e.to_string());
                        }
                    }
                }
                ThresholdGroup { dataset_id: dataset_id.clone(), setting_id: setting_id.clone(), results, errors }
            })
            .collect();
        ThresholdsFile { config_hash: self.config_hash.clone(), seed: self.cfg.seed, groups }
    }

    fn threshold(&self) -> Result<RunSummary> {
        let file = self.fit_thresholds(&self.joined()?);
        let path = self.path(THRESHOLDS_FILE);
        write_json(&path, &file)?;
        Ok(RunSummary { artifacts: vec![path], problems: 0 })
    }

    fn detect(&self) -> Result<RunSummary> {
        let groups = self.joined()?;
        let thresholds: ThresholdsFile = read_json(&self.path(THRESHOLDS_FILE))?;
        let mut lines = Vec::new();
        for tg in &thresholds.groups {
            let key = (tg.dataset_id.clone(), tg.setting_id.clone());
            let Some(items) = groups.get(&key) else { continue };
            for t in &tg.results {
                for v in classify_choke(&labeled_scores(items, t.metric_id), t)? {
                    lines.push(VerdictLine {
                        dataset_id: tg.dataset_id.clone(),
                        setting_id: tg.setting_id.clone(),
                        metric_id: t.metric_id,
                        question_id: v.question_id,
                        certainty: v.certainty,
                        t_star: t.t_star,
                        is_choke: v.is_choke,
                        config_hash: self.config_hash.clone(),
                        seed: self.cfg.seed,
                    });
                }
            }
        }
        let path = self.path(VERDICTS_FILE);
        write_jsonl(&path, &lines)?;
        Ok(RunSummary { artifacts: vec![path], problems: 0 })
    }

    fn build_consistency(&self) -> Result<ConsistencyFile> {
        let groups = self.joined()?;
        let verdicts: Vec<VerdictLine> = read_jsonl(&self.path(VERDICTS_FILE))?;

        // (dataset, metric) -> setting -> (hallucinations, choke)
        let mut sets: BTreeMap<(String, MetricId), BTreeMap<SettingId, (IdSet, IdSet)>> = BTreeMap::new();
        for v in &verdicts {
            let entry = sets
                .entry((v.dataset_id.clone(), v.metric_id))
                .or_default()
                .entry(v.setting_id.clone())
                .or_default();
            entry.0.insert(v.question_id.clone());
            if v.is_choke {
                entry.1.insert(v.question_id.clone());
            }
        }

        let mut comparisons = Vec::new();
        for ((dataset_id, metric_id), by_setting) in &sets {
            let settings: Vec<&SettingId> = by_setting.keys().collect();
            for (i, a) in settings.iter().enumerate() {
                for b in &settings[i + 1..] {
                    let (ha, ca) = &by_setting[*a];
                    let (hb, cb) = &by_setting[*b];
                    let n = self.cfg.n_permutations;
                    let (report, empty_intersection) = if self.opts.shared_only {
                        shared_permutation_test(ha, hb, ca, cb, n, self.cfg.seed)?
                    } else {
                        (permutation_test(ha, hb, ca, cb, n, self.cfg.seed)?, false)
                    };
                    comparisons.push(SettingComparison {
                        dataset_id: dataset_id.clone(),
                        metric_id: *metric_id,
                        setting_a: (*a).clone(),
                        setting_b: (*b).clone(),
                        report,
                        empty_intersection,
                    });
                }
            }
        }

        let mut first_token_tests = Vec::new();
        let mut verdicts_by_group: BTreeMap<(GroupKey, MetricId), Vec<&VerdictLine>> = BTreeMap::new();
        for v in &verdicts {
            verdicts_by_group.entry(((v.dataset_id.clone(), v.setting_id.clone()), v.metric_id)).or_default().push(v);
        }
        for ((key, metric_id), vs) in &verdicts_by_group {
            let token_len: HashMap<&str, usize> = groups
                .get(key)
                .into_iter()
                .flatten()
                .filter_map(|j| j.first_token_text.as_deref().map(|t| (j.question_id.as_str(), t.chars().count())))
                .collect();
            let (mut choke, mut low) = (Vec::new(), Vec::new());
            for v in vs {
                if let Some(&len) = token_len.get(v.question_id.as_str()) {
                    if v.is_choke { choke.push(len) } else { low.push(len) }
                }
            }
            let (result, error) = match first_token_length_ttest(&choke, &low) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            first_token_tests.push(FirstTokenTest {
                dataset_id: key.0.clone(),
                setting_id: key.1.clone(),
                metric_id: *metric_id,
                n_choke: choke.len(),
                n_low_certainty: low.len(),
                result,
                error,
            });
        }

        Ok(ConsistencyFile {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            shared_only: self.opts.shared_only,
            comparisons,
            first_token_tests,
        })
    }

    fn consistency(&self) -> Result<RunSummary> {
        let file = self.build_consistency()?;
        let rows: Vec<ConsistencyRow> = file
            .comparisons
            .iter()
            .map(|c| ConsistencyRow {
                model: self.cfg.model_id.clone(),
                dataset: c.dataset_id.clone(),
                metric: c.metric_id.to_string(),
                setting_pair: format!("{}~{}", c.setting_a, c.setting_b),
                random_percent: c.report.permutation_mean_percent,
                certain_percent: c.report.jaccard_percent,
                p_value: Some(c.report.p_value),
            })
            .collect();
        let json = self.path(CONSISTENCY_FILE);
        let csv = self.path(CONSISTENCY_TABLE_FILE);
        write_json(&json, &file)?;
        write_consistency_csv(&rows, create(&csv)?)?;
        Ok(RunSummary { artifacts: vec![json, csv], problems: 0 })
    }

    fn build_mitigation(&self) -> Result<MitigationFile> {
        let groups = self.joined()?;
        let groups = groups
            .iter()
            .map(|((dataset_id, setting_id), items)| {
                let scored: Vec<ScoredRecord> = items
                    .iter()
                    .map(|j| ScoredRecord {
                        question_id: j.question_id.clone(),
                        outcome: j.outcome,
                        certainties: j.certainties.clone(),
                    })
                    .collect();
                let (reports, error) = match compare_methods(&scored, self.cfg.balancing, self.cfg.seed) {
                    Ok(r) => (r, None),
                    Err(e @ ChokeError::MissingMetric(_)) => return Err(e),
                    Err(e) => (Vec::new(), Some(e.to_string())),
                };
                Ok(MitigationGroup { dataset_id: dataset_id.clone(), setting_id: setting_id.clone(), reports, error })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MitigationFile {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            rule: UNMITIGATED_RULE.into(),
            groups,
        })
    }

    fn mitigate(&self) -> Result<RunSummary> {
        let file = self.build_mitigation()?;
        let single = file.groups.len() == 1;
        let rows: Vec<(String, MitigationReport)> = file
            .groups
            .iter()
            .flat_map(|g| {
                let model = if single {
                    self.cfg.model_id.clone()
                } else {
                    format!("{}[{}/{}]", self.cfg.model_id, g.dataset_id, g.setting_id)
                };
                g.reports.iter().map(move |r| (model.clone(), r.clone()))
            })
            .collect();
        let json = self.path(MITIGATION_FILE);
        let csv = self.path(MITIGATION_CSV_FILE);
        write_json(&json, &file)?;
        write_mitigation_csv(&rows, create(&csv)?)?;
        Ok(RunSummary { artifacts: vec![json, csv], problems: 0 })
    }

    fn has_mitigation_metrics(&self) -> bool {
        crate::mitigation::MitigationMethod::ALL.iter().all(|m| self.cfg.metrics.contains(&m.metric()))
    }

    fn report(&self) -> Result<RunSummary> {
        let mut artifacts = Vec::new();
        if !self.opts.inputs.is_empty() {
            for cmd in [Command::Label, Command::Score, Command::Threshold, Command::Detect] {
                artifacts.extend(self.run(cmd)?.artifacts);
            }
            if self.has_mitigation_metrics() {
                artifacts.extend(self.mitigate()?.artifacts);
            } else {
                log::info!("skipping mitigation: not every mitigation metric is configured");
            }
            artifacts.extend(self.consistency()?.artifacts);
        }

        let groups = self.joined()?;
        let thresholds: ThresholdsFile = read_json(&self.path(THRESHOLDS_FILE))?;
        let verdicts: Vec<VerdictLine> = read_jsonl(&self.path(VERDICTS_FILE))?;
        let mitigation: Option<MitigationFile> = read_json_if_exists(&self.path(MITIGATION_FILE))?;
        let consistency: Option<ConsistencyFile> = read_json_if_exists(&self.path(CONSISTENCY_FILE))?;

        let cdf_dir = self.path(CDF_DIR);
        std::fs::create_dir_all(&cdf_dir)
            .map_err(|e| ChokeError::UnwritableOutput(format!("{}: {e}", cdf_dir.display())))?;

        let mut group_reports = Vec::new();
        for ((dataset_id, setting_id), items) in &groups {
            let mut counts = OutcomeCounts { factual: 0, hallucination: 0, excluded: BTreeMap::new() };
            for j in items {
                match j.outcome {
                    OutcomeLabel::Factual => counts.factual += 1,
                    OutcomeLabel::Hallucination => counts.hallucination += 1,
                    OutcomeLabel::Excluded(r) => *counts.excluded.entry(r.as_str().to_string()).or_default() += 1,
                }
            }
            let tg = thresholds.groups.iter().find(|g| &g.dataset_id == dataset_id && &g.setting_id == setting_id);
            let mut metrics = Vec::new();
            for t in tg.map(|g| g.results.as_slice()).unwrap_or_default() {
                let vs: Vec<crate::threshold::ChokeVerdict> = verdicts
                    .iter()
                    .filter(|v| &v.dataset_id == dataset_id && &v.setting_id == setting_id && v.metric_id == t.metric_id)
                    .map(|v| crate::threshold::ChokeVerdict {
                        question_id: v.question_id.clone(),
                        certainty: v.certainty,
                        is_choke: v.is_choke,
                    })
                    .collect();
                let name = format!("{}_{}_{}.csv", sanitize(dataset_id), sanitize(setting_id.as_str()), t.metric_id);
                let cdf_csv = match cdf_curves(&labeled_scores(items, t.metric_id), CdfGrid::Uniform(self.cfg.grid_size)) {
                    Ok(rows) => {
                        let path = cdf_dir.join(&name);
                        write_cdf_csv(&rows, create(&path)?)?;
                        artifacts.push(path);
                        Some(format!("{CDF_DIR}/{name}"))
                    }
                    Err(e) => {
                        log::warn!("no CDF for {dataset_id}/{setting_id}/{}: {e}", t.metric_id);
                        None
                    }
                };
                metrics.push(MetricSummary {
                    metric_id: t.metric_id,
                    t_star: t.t_star,
                    misclassifications: t.misclassifications,
                    n_verdicts: vs.len(),
                    n_choke: vs.iter().filter(|v| v.is_choke).count(),
                    choke_fraction: choke_fraction(&vs).ok(),
                    cdf_csv,
                });
            }
            group_reports.push(GroupReport {
                dataset_id: dataset_id.clone(),
                setting_id: setting_id.clone(),
                n_records: items.len(),
                heuristic_removal_rate: removal_rate(items.iter().map(|j| &j.outcome)),
                counts,
                metrics,
                threshold_errors: tg.map(|g| g.errors.clone()).unwrap_or_default(),
            });
        }

        let report = Report {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            model_id: self.cfg.model_id.clone(),
            groups: group_reports,
            mitigation_rule: UNMITIGATED_RULE.into(),
            mitigation,
            consistency,
        };
        let path = self.path(REPORT_FILE);
        write_json(&path, &report)?;
        artifacts.push(path);
        Ok(RunSummary { artifacts, problems: 0 })
    }
}

/// A label joined with its record's unified certainties.
#[derive(Debug, Clone)]
struct Joined {
    question_id: String,
    outcome: OutcomeLabel,
    certainties: BTreeMap<MetricId, f64>,
    first_token_text: Option<String>,
}

fn join(labels: Vec<LabelLine>, scores: Vec<ScoreLine>) -> BTreeMap<GroupKey, Vec<Joined>> {
    let mut by_key: HashMap<(String, SettingId, String), ScoreLine> = scores
        .into_iter()
        .map(|s| ((s.dataset_id.clone(), s.setting_id.clone(), s.question_id.clone()), s))
        .collect();
    let mut out: BTreeMap<GroupKey, Vec<Joined>> = BTreeMap::new();
    for l in labels {
        let score = by_key.remove(&(l.dataset_id.clone(), l.setting_id.clone(), l.question_id.clone()));
        let (certainties, first_token_text) = match score {
            Some(s) => (s.scores.iter().map(|c| (c.metric_id, c.certainty)).collect(), s.first_token_text),
            None => (BTreeMap::new(), None),
        };
        out.entry((l.dataset_id, l.setting_id)).or_default().push(Joined {
            question_id: l.question_id,
            outcome: l.outcome,
            certainties,
            first_token_text,
        });
    }
    out
}

fn labeled_scores(items: &[Joined], metric: MetricId) -> Vec<LabeledScore> {
    items
        .iter()
        .map(|j| LabeledScore {
            question_id: j.question_id.clone(),
            outcome: j.outcome,
            certainty: j.certainties.get(&metric).copied(),
        })
        .collect()
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ChokeError::UnwritableOutput(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn open_artifact(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|_| ChokeError::UpstreamArtifactMissing(path.display().to_string()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open_artifact(path)?)?)
}

fn read_json_if_exists<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in open_artifact(path)?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictLine>> {
    read_jsonl(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelLine>> {
    read_jsonl(path)
}

pub fn read_report(path: &Path) -> Result<Report> {
    read_json(path)
}
