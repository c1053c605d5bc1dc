//! Cross-setting consistency of CHOKE sets.
//!
//! The observed Jaccard similarity between two settings' CHOKE sets is
//! compared against the similarity of random same-size subsets of each
//! setting's hallucinations. Each permutation draws from its own ChaCha
//! stream, so results do not depend on how the permutations are scheduled
//! across threads.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ChokeError, Result};

pub type IdSet = BTreeSet<String>;

/// `(|A ∩ B|, |A ∪ B|)`, kept as integers so comparisons are exact.
fn overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (usize, usize) {
    let inter = a.intersection(b).count();
    (inter, a.len() + b.len() - inter)
}

fn percent(inter: usize, union: usize) -> f64 {
    if union == 0 {
        0.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

/// Jaccard similarity in percent; 0 when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let (i, u) = overlap(a, b);
    percent(i, u)
}

/// `i1/u1 >= i2/u2` without floating point, treating x/0 as 0.
fn ratio_ge((i1, u1): (usize, usize), (i2, u2): (usize, usize)) -> bool {
    let (i1, u1) = if u1 == 0 { (0, 1) } else { (i1, u1) };
    let (i2, u2) = if u2 == 0 { (0, 1) } else { (i2, u2) };
    (i1 as u128) * (u2 as u128) >= (i2 as u128) * (u1 as u128)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub jaccard_percent: f64,
    pub permutation_mean_percent: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub shared_only: bool,
    pub seed: u64,
}

pub fn permutation_test(
    hall_a: &IdSet,
    hall_b: &IdSet,
    choke_a: &IdSet,
    choke_b: &IdSet,
    n_permutations: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    for (choke, hall, name) in [(choke_a, hall_a, "A"), (choke_b, hall_b, "B")] {
        if !choke.is_subset(hall) {
            return Err(ChokeError::SubsetViolation(format!(
                "CHOKE set {name} is not contained in its hallucination set"
            )));
        }
    }
    if n_permutations == 0 {
        return Err(ChokeError::Config("n_permutations must be at least 1".into()));
    }
    let observed = overlap(choke_a, choke_b);

    // draw over the union of ids by index so the per-draw work is cheap
    let universe: Vec<&String> = hall_a.union(hall_b).collect();
    let index_of = |s: &String| universe.binary_search(&s).expect("id in universe");
    let pool_a: Vec<usize> = hall_a.iter().map(index_of).collect();
    let pool_b: Vec<usize> = hall_b.iter().map(index_of).collect();
    let (ka, kb) = (choke_a.len(), choke_b.len());

    let draws: Vec<(usize, usize)> = (0..n_permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let pick = |rng: &mut ChaCha8Rng, pool: &[usize], k: usize| -> BTreeSet<usize> {
                sample(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect()
            };
            let a = pick(&mut rng, &pool_a, ka);
            let b = pick(&mut rng, &pool_b, kb);
            overlap(&a, &b)
        })
        .collect();

    let at_least = draws.iter().filter(|&&d| ratio_ge(d, observed)).count();
    let mean = draws.iter().map(|&(i, u)| percent(i, u)).sum::<f64>() / n_permutations as f64;
    Ok(ConsistencyReport {
        jaccard_percent: percent(observed.0, observed.1),
        permutation_mean_percent: mean,
        p_value: (1 + at_least) as f64 / (1 + n_permutations) as f64,
        n_permutations,
        shared_only: false,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedRestriction {
    pub hall_a: IdSet,
    pub hall_b: IdSet,
    pub choke_a: IdSet,
    pub choke_b: IdSet,
    pub empty_intersection: bool,
}

/// Restrict all four sets to hallucinations shared by both settings.
pub fn shared_filter(hall_a: &IdSet, hall_b: &IdSet, choke_a: &IdSet, choke_b: &IdSet) -> SharedRestriction {
    let shared: IdSet = hall_a.intersection(hall_b).cloned().collect();
    let restrict = |s: &IdSet| -> IdSet { s.intersection(&shared).cloned().collect() };
    SharedRestriction {
        hall_a: shared.clone(),
        hall_b: shared.clone(),
        choke_a: restrict(choke_a),
        choke_b: restrict(choke_b),
        empty_intersection: shared.is_empty(),
    }
}

/// Permutation test on the shared-hallucination restriction.
pub fn shared_permutation_test(
    hall_a: &IdSet,
    hall_b: &IdSet,
    choke_a: &IdSet,
    choke_b: &IdSet,
    n_permutations: usize,
    seed: u64,
) -> Result<(ConsistencyReport, bool)> {
    let r = shared_filter(hall_a, hall_b, choke_a, choke_b);
    let mut report = permutation_test(&r.hall_a, &r.hall_b, &r.choke_a, &r.choke_b, n_permutations, seed)?;
    report.shared_only = true;
    Ok((report, r.empty_intersection))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with a two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ChokeError::InsufficientData(format!(
            "need at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    if sa + sb == 0.0 {
        return Err(ChokeError::InsufficientData("both groups have zero variance".into()));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2)
        / (sa.powi(2) / (a.len() as f64 - 1.0) + sb.powi(2) / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| ChokeError::InsufficientData(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTestResult { t_statistic: t, p_value: p, degrees_of_freedom: df })
}

/// Compare first-answer-token character lengths of CHOKE samples against
/// low-certainty hallucinations.
pub fn first_token_length_ttest(choke_lengths: &[usize], low_cert_lengths: &[usize]) -> Result<TTestResult> {
    let a: Vec<f64> = choke_lengths.iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = low_cert_lengths.iter().map(|&x| x as f64).collect();
    welch_t_test(&a, &b)
}

/// One cell of a consistency table: Jaccard of random draws vs. CHOKE sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub model: String,
    pub dataset: String,
    pub metric: String,
    /// The two compared settings, joined by `~`.
    pub setting_pair: String,
    pub random_percent: f64,
    pub certain_percent: f64,
    pub p_value: Option<f64>,
}

pub const CONSISTENCY_CSV_HEADER: [&str; 7] =
    ["model", "dataset", "metric", "setting_pair", "random_percent", "certain_percent", "p_value"];

pub fn write_consistency_csv<W: std::io::Write>(rows: &[ConsistencyRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CONSISTENCY_CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_consistency_csv<R: std::io::Read>(input: R) -> Result<Vec<ConsistencyRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
