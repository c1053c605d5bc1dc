//! Synthetic corpora with planted outcomes and certainties.

#![allow(dead_code)]

use std::path::Path;

use choke::record::{serialize_record, DecodeMode, Generation, QARecord, SettingId, TokenStep};

pub const N_RECORDS: usize = 100;
pub const N_NO_KNOWLEDGE: usize = 40;
pub const N_FACTUAL: usize = 40;
pub const N_HALLUCINATION: usize = 20;
pub const N_PLANTED_CHOKE: usize = 8;

fn step(text: &str, p: f64) -> TokenStep {
    let alt = if p > 0.5 { (1.0 - p) / 2.0 } else { p / 2.0 };
    TokenStep {
        token_text: text.to_string(),
        logprob: p.ln(),
        top_alternatives: vec![(text.to_string(), p.ln()), ("<other>".to_string(), alt.ln())],
    }
}

fn generation(tokens: &[(String, f64)], mode: DecodeMode, seed: Option<u64>) -> Generation {
    Generation {
        text: tokens.iter().map(|(t, _)| t.as_str()).collect(),
        decode_mode: mode,
        rng_seed: seed,
        token_steps: tokens.iter().map(|(t, p)| step(t, *p)).collect(),
    }
}

fn sampled(text: &str, p: f64, temperature: f64, seed: u64) -> Generation {
    generation(&[(text.to_string(), p)], DecodeMode::Sampled { temperature }, Some(seed))
}

/// "The answer is X" with the answer token at probability `p`.
fn answer(x: &str, p: f64) -> Generation {
    let t = |s: &str, p: f64| (s.to_string(), p);
    generation(&[t("The", 0.99), t(" answer", 0.99), t(" is", 0.99), t(&format!(" {x}"), p)], DecodeMode::Greedy, None)
}

fn letters(mut i: usize) -> String {
    let mut s = String::new();
    for _ in 0..3 {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
    }
    s
}

pub fn gold_of(i: usize) -> String {
    format!("gold{}", letters(i))
}

pub fn wrong_of(i: usize) -> String {
    format!("zz{}", letters(i))
}

/// Answer-token probability planted for record `i`.
pub fn planted_probability(i: usize) -> f64 {
    match i {
        i if i < N_NO_KNOWLEDGE => 0.5,
        i if i < N_NO_KNOWLEDGE + N_FACTUAL => 0.60 + 0.0045 * (i - N_NO_KNOWLEDGE) as f64,
        i => {
            let k = i - N_NO_KNOWLEDGE - N_FACTUAL;
            if k < N_PLANTED_CHOKE {
                0.90 + 0.008 * k as f64
            } else {
                0.10 + 0.015 * (k - N_PLANTED_CHOKE) as f64
            }
        }
    }
}

/// 100 records: 40 without knowledge, 40 factual, 20 hallucinations of which
/// 8 are planted above every factual score and 12 below. The factual and
/// hallucination certainty ranges are separated by the gap (0.265, 0.6).
pub fn planted_records(setting: SettingId) -> Vec<QARecord> {
    (0..N_RECORDS)
        .map(|i| {
            let gold = gold_of(i);
            let p = planted_probability(i);
            let mut probe = vec![generation(&[(gold.clone(), 0.9)], DecodeMode::Greedy, None)];
            probe.extend((0..5).map(|s| sampled(&gold, 0.9, 0.5, s)));
            if i < N_NO_KNOWLEDGE {
                probe[5] = sampled("unknown", 0.4, 0.5, 5);
            }

            let is_hall = i >= N_NO_KNOWLEDGE + N_FACTUAL;
            let high = !is_hall || i - N_NO_KNOWLEDGE - N_FACTUAL < N_PLANTED_CHOKE;
            let said = if is_hall { wrong_of(i) } else { gold.clone() };
            let mut samples: Vec<Generation> = (0..10)
                .map(|s| {
                    let text = if high { format!(" {said}") } else { format!(" {said}{s}") };
                    sampled(&text, p, 1.0, 100 + s as u64)
                })
                .collect();
            let low_temp = samples[0].text.clone();
            samples.push(sampled(&low_temp, p, 0.1, 200));

            QARecord {
                question_id: format!("q{i:03}"),
                dataset_id: "synthetic".into(),
                setting_id: setting.clone(),
                question_text: format!("question {i}?"),
                prompt_text: format!("question: question {i}? answer:"),
                gold_answers: vec![gold],
                knowledge_probe: probe,
                setting_greedy: answer(&said, p),
                setting_samples: samples,
                cluster_ids: None,
            }
        })
        .collect()
}

pub fn write_corpus(path: &Path, records: &[QARecord]) {
    let body: String = records.iter().map(|r| serialize_record(r) + "\n").collect();
    std::fs::write(path, body).unwrap();
}
