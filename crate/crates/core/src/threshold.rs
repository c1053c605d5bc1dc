//! Optimal certainty threshold and CHOKE classification.
//!
//! The threshold `t` minimizes the number of hallucinations scored above `t`
//! plus the number of factual answers scored below it. The objective is
//! piecewise constant in `t`, so scanning the midpoints between consecutive
//! distinct pooled scores (plus one sentinel on each side) is exact.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certainty::MetricId;
use crate::error::{ChokeError, Result};
use crate::record::OutcomeLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balancing {
    /// Subsample the larger of H and F to the size of the smaller.
    EqualSize,
    NaturalRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub metric_id: MetricId,
    pub t_star: f64,
    pub misclassifications: usize,
    pub balancing: Balancing,
    pub sample_seed: u64,
    pub candidates_evaluated: usize,
    /// Sizes of the hallucination and factual sets after balancing.
    pub n_hallucination: usize,
    pub n_factual: usize,
}

/// Apply the balancing policy. Under `EqualSize` the larger set is
/// subsampled uniformly without replacement; kept items stay in input order.
pub fn balance(h: &[f64], f: &[f64], balancing: Balancing, seed: u64) -> (Vec<f64>, Vec<f64>) {
    match balancing {
        Balancing::NaturalRatio => (h.to_vec(), f.to_vec()),
        Balancing::EqualSize => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut shrink = |xs: &[f64], n: usize| -> Vec<f64> {
                let mut idx = sample(&mut rng, xs.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| xs[i]).collect()
            };
            if h.len() > f.len() {
                (shrink(h, f.len()), f.to_vec())
            } else if f.len() > h.len() {
                (h.to_vec(), shrink(f, h.len()))
            } else {
                (h.to_vec(), f.to_vec())
            }
        }
    }
}

/// Candidate thresholds in ascending order: one below the minimum, the
/// midpoints between consecutive distinct values, one above the maximum.
/// Sentinels sit half an adjacent gap away (0.5 when there is only one
/// distinct value).
pub fn candidate_thresholds(values: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let Some((&lo, &hi)) = distinct.first().zip(distinct.last()) else {
        return Vec::new();
    };
    let (lo_gap, hi_gap) = if distinct.len() > 1 {
        ((distinct[1] - lo) / 2.0, (hi - distinct[distinct.len() - 2]) / 2.0)
    } else {
        (0.5, 0.5)
    };
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(lo - lo_gap);
    out.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(hi + hi_gap);
    out
}

/// Fit the threshold on hallucination (`h`) and factual (`f`) certainties.
/// Ties between equally good candidates go to the smallest one.
pub fn optimal_threshold(
    metric_id: MetricId,
    h: &[f64],
    f: &[f64],
    balancing: Balancing,
    seed: u64,
) -> Result<ThresholdResult> {
    if h.is_empty() {
        return Err(ChokeError::EmptySet("hallucination"));
    }
    if f.is_empty() {
        return Err(ChokeError::EmptySet("factual"));
    }
    let (mut h, mut f) = balance(h, f, balancing, seed);
    h.sort_by(f64::total_cmp);
    f.sort_by(f64::total_cmp);
    let pooled: Vec<f64> = h.iter().chain(&f).copied().collect();
    let candidates = candidate_thresholds(&pooled);

    let mut best: Option<(usize, f64)> = None;
    for &t in &candidates {
        let h_above = h.len() - h.partition_point(|&x| x <= t);
        let f_below = f.partition_point(|&x| x < t);
        let errors = h_above + f_below;
        if best.is_none_or(|(e, _)| errors < e) {
            best = Some((errors, t));
        }
    }
    let (misclassifications, t_star) = best.expect("at least two candidates");
    Ok(ThresholdResult {
        metric_id,
        t_star,
        misclassifications,
        balancing,
        sample_seed: seed,
        candidates_evaluated: candidates.len(),
        n_hallucination: h.len(),
        n_factual: f.len(),
    })
}

/// A labeled record's unified certainty for one metric, if it was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub question_id: String,
    pub outcome: OutcomeLabel,
    pub certainty: Option<f64>,
}

pub fn split_by_outcome(items: &[LabeledScore]) -> (Vec<f64>, Vec<f64>) {
    let mut h = Vec::new();
    let mut f = Vec::new();
    for it in items {
        match (it.outcome, it.certainty) {
            (OutcomeLabel::Hallucination, Some(c)) => h.push(c),
            (OutcomeLabel::Factual, Some(c)) => f.push(c),
            _ => {}
        }
    }
    (h, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChokeVerdict {
    pub question_id: String,
    pub certainty: f64,
    pub is_choke: bool,
}

/// One verdict per hallucination: CHOKE iff its certainty is strictly above
/// the threshold. Other records produce no verdict.
pub fn classify_choke(items: &[LabeledScore], t: &ThresholdResult) -> Result<Vec<ChokeVerdict>> {
    items
        .iter()
        .filter(|it| it.outcome.is_hallucination())
        .map(|it| {
            let certainty = it.certainty.ok_or_else(|| ChokeError::MissingScore {
                question_id: it.question_id.clone(),
                metric: t.metric_id.to_string(),
            })?;
            Ok(ChokeVerdict {
                question_id: it.question_id.clone(),
                certainty,
                is_choke: certainty > t.t_star,
            })
        })
        .collect()
}

/// Percentage of verdicts that are CHOKE.
pub fn choke_fraction(verdicts: &[ChokeVerdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(ChokeError::EmptySet("verdict"));
    }
    let n = verdicts.iter().filter(|v| v.is_choke).count();
    Ok(100.0 * n as f64 / verdicts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfGrid {
    /// Every distinct observed score.
    Distinct,
    /// `n` evenly spaced points from the minimum to the maximum score.
    Uniform(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub certainty_level: f64,
    pub cum_frac_hallucination: f64,
    pub cum_frac_factual: f64,
}

/// Survival-style curves: at each level, the fraction of each class scored
/// at or above it.
pub fn cdf_curves(items: &[LabeledScore], grid: CdfGrid) -> Result<Vec<CdfRow>> {
    let (mut h, mut f) = split_by_outcome(items);
    if h.is_empty() {
        return Err(ChokeError::EmptySet("hallucination"));
    }
    if f.is_empty() {
        return Err(ChokeError::EmptySet("factual"));
    }
    h.sort_by(f64::total_cmp);
    f.sort_by(f64::total_cmp);
    let lo = h[0].min(f[0]);
    let hi = h[h.len() - 1].max(f[f.len() - 1]);

    let levels: Vec<f64> = match grid {
        CdfGrid::Distinct => {
            let mut all: Vec<f64> = h.iter().chain(&f).copied().collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            all
        }
        CdfGrid::Uniform(n) if n <= 1 || lo == hi => vec![lo],
        CdfGrid::Uniform(n) => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    };
    let frac_at_least = |xs: &[f64], g: f64| (xs.len() - xs.partition_point(|&x| x < g)) as f64 / xs.len() as f64;
    Ok(levels
        .into_iter()
        .map(|g| CdfRow {
            certainty_level: g,
            cum_frac_hallucination: frac_at_least(&h, g),
            cum_frac_factual: frac_at_least(&f, g),
        })
        .collect())
}

pub const CDF_CSV_HEADER: [&str; 3] = ["certainty_level", "cum_frac_hallucination", "cum_frac_factual"];

pub fn write_cdf_csv<W: std::io::Write>(rows: &[CdfRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CDF_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.certainty_level.to_string(),
            r.cum_frac_hallucination.to_string(),
            r.cum_frac_factual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
