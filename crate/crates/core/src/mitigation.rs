//! Certainty-based abstention: how many hallucinations survive it.
//!
//! A hallucination is mitigated (the model abstains) iff its certainty is at
//! or below the fitted threshold, so unmitigated ⇔ certainty > t_star.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certainty::MetricId;
use crate::error::{ChokeError, Result};
use crate::record::OutcomeLabel;
use crate::threshold::{optimal_threshold, Balancing};

pub const UNMITIGATED_RULE: &str = "unmitigated iff certainty > t_star";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationMethod {
    Probability,
    SamplingAgreement,
    PredictiveEntropy,
}

impl MitigationMethod {
    pub const ALL: [MitigationMethod; 3] =
        [MitigationMethod::Probability, MitigationMethod::SamplingAgreement, MitigationMethod::PredictiveEntropy];

    pub fn metric(&self) -> MetricId {
        match self {
            MitigationMethod::Probability => MetricId::Probability,
            MitigationMethod::SamplingAgreement => MetricId::SamplingAgreement,
            MitigationMethod::PredictiveEntropy => MetricId::PredictiveEntropy,
        }
    }

    pub fn as_str(&self) -> &'static str {
        self.metric().as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub method: MitigationMethod,
    pub t_star: f64,
    pub unmitigated_percent: f64,
    pub n_hallucinations: usize,
}

/// Percentage of hallucinations scored strictly above `t_star`.
pub fn unmitigated_rate(hall_scores: &[f64], t_star: f64) -> Result<f64> {
    if hall_scores.is_empty() {
        return Err(ChokeError::EmptySet("hallucination score"));
    }
    let above = hall_scores.iter().filter(|&&c| c > t_star).count();
    Ok(100.0 * above as f64 / hall_scores.len() as f64)
}

/// A labeled record with its unified certainty per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub question_id: String,
    pub outcome: OutcomeLabel,
    pub certainties: BTreeMap<MetricId, f64>,
}

/// Fit a threshold per method and report the hallucinations left above it.
pub fn compare_methods(records: &[ScoredRecord], balancing: Balancing, seed: u64) -> Result<Vec<MitigationReport>> {
    MitigationMethod::ALL
        .iter()
        .map(|&method| {
            let metric = method.metric();
            let mut h = Vec::new();
            let mut f = Vec::new();
            for r in records.iter().filter(|r| r.outcome.is_hallucination() || r.outcome.is_factual()) {
                let c = *r
                    .certainties
                    .get(&metric)
                    .ok_or_else(|| ChokeError::MissingMetric(metric.to_string()))?;
                if r.outcome.is_hallucination() {
                    h.push(c);
                } else {
                    f.push(c);
                }
            }
            let t = optimal_threshold(metric, &h, &f, balancing, seed)?;
            Ok(MitigationReport {
                method,
                t_star: t.t_star,
                unmitigated_percent: unmitigated_rate(&h, t.t_star)?,
                n_hallucinations: h.len(),
            })
        })
        .collect()
}

pub const MITIGATION_CSV_HEADER: [&str; 4] = ["model", "method", "t_star", "unmitigated_percent"];

pub fn write_mitigation_csv<W: std::io::Write>(rows: &[(String, MitigationReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MITIGATION_CSV_HEADER)?;
    for (model, r) in rows {
        w.write_record([
            model.as_str(),
            r.method.as_str(),
            &r.t_star.to_string(),
            &r.unmitigated_percent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
