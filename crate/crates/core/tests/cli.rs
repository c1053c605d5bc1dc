mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use choke::pipeline::{read_labels, read_report, read_verdicts};
use choke::record::{OutcomeLabel, SettingId};
use common::*;

fn choke(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choke")).args(args).output().expect("binary runs")
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_corpus(&root.join("child.jsonl"), &planted_records(SettingId::Child));
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let input = self.path("child.jsonl");
        let out = self.path(out);
        let mut args = vec![cmd, "--input", &input, "--out", &out];
        args.extend_from_slice(extra);
        choke(&args)
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn validate_clean_and_broken_corpora() {
    let fx = Fixture::new();
    ok(&fx.run("validate", "out", &[]));

    let text = std::fs::read_to_string(fx.path("child.jsonl")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    v["setting_greedy"]["token_steps"][0]["logprob"] = 0.25.into();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[0] = v.to_string();
    std::fs::write(fx.path("broken.jsonl"), lines.join("\n")).unwrap();

    let out = choke(&["validate", "--input", &fx.path("broken.jsonl"), "--out", &fx.path("vout")]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&read(&fx.root.join("vout/validation.json"))).unwrap();
    assert_eq!(report["invalid_records"][0]["question_id"], "q000");
}

#[test]
fn label_emits_one_line_per_record() {
    let fx = Fixture::new();
    ok(&fx.run("label", "out", &[]));
    let labels = read_labels(&fx.root.join("out/labels.jsonl")).unwrap();
    assert_eq!(labels.len(), N_RECORDS);
    let count = |o: OutcomeLabel| labels.iter().filter(|l| l.outcome == o).count();
    assert_eq!(count(OutcomeLabel::Hallucination), N_HALLUCINATION);
    assert_eq!(count(OutcomeLabel::Factual), N_FACTUAL);
    assert_eq!(labels.iter().filter(|l| l.knows).count(), N_FACTUAL + N_HALLUCINATION);
    assert!(labels.iter().all(|l| l.config_hash.len() == 64));
}

#[test]
fn detect_requires_thresholds() {
    let fx = Fixture::new();
    ok(&fx.run("label", "out", &[]));
    ok(&fx.run("score", "out", &[]));
    let o = fx.run("detect", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("upstream artifact missing"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(choke(&["frobnicate", "--out", "x"]).status.code(), Some(2));
    assert_eq!(choke(&["label"]).status.code(), Some(2));
    let fx = Fixture::new();
    assert_eq!(fx.run("label", "out", &["--metric", "nll"]).status.code(), Some(2));
    std::fs::write(fx.path("bad.toml"), "metrics = []\n").unwrap();
    let cfg = fx.path("bad.toml");
    assert_eq!(fx.run("label", "out", &["--config", &cfg]).status.code(), Some(2));
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    let o = choke(&["label", "--input", "/nonexistent/corpus.jsonl", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lenient_mode_skips_bad_lines() {
    let fx = Fixture::new();
    let mut text = std::fs::read_to_string(fx.path("child.jsonl")).unwrap();
    text.push_str("{not json\n");
    std::fs::write(fx.path("child.jsonl"), text).unwrap();
    assert_eq!(fx.run("label", "out", &[]).status.code(), Some(1));
    ok(&fx.run("label", "out", &["--lenient"]));
    assert_eq!(read_labels(&fx.root.join("out/labels.jsonl")).unwrap().len(), N_RECORDS);
}

#[test]
fn staged_run_matches_planted_outcome() {
    let fx = Fixture::new();
    for cmd in ["label", "score", "threshold", "detect", "mitigate"] {
        ok(&fx.run(cmd, "out", &[]));
    }
    let verdicts = read_verdicts(&fx.root.join("out/verdicts.jsonl")).unwrap();
    let prob: Vec<_> = verdicts.iter().filter(|v| v.metric_id.as_str() == "probability").collect();
    assert_eq!(prob.len(), N_HALLUCINATION);
    assert_eq!(prob.iter().filter(|v| v.is_choke).count(), N_PLANTED_CHOKE);

    let csv = String::from_utf8(read(&fx.root.join("out/mitigation.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,method,t_star,unmitigated_percent"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("model,probability,"));
    assert!(rows[0].ends_with(",40"), "{}", rows[0]);
}

#[test]
fn full_report_is_deterministic() {
    let fx = Fixture::new();
    ok(&fx.run("report", "a", &["--seed", "11"]));
    ok(&fx.run("report", "b", &["--seed", "11"]));

    let report = read_report(&fx.root.join("a/report.json")).unwrap();
    assert_eq!(report.seed, 11);
    let g = &report.groups[0];
    assert_eq!(g.counts.hallucination, N_HALLUCINATION);
    assert_eq!(g.counts.factual, N_FACTUAL);
    for m in &g.metrics {
        assert_eq!(m.choke_fraction, Some(40.0), "{:?}", m.metric_id);
    }

    for name in ["report.json", "labels.jsonl", "scores.jsonl", "thresholds.json", "verdicts.jsonl", "mitigation.csv", "mitigation.json", "consistency.json"] {
        assert_eq!(read(&fx.root.join("a").join(name)), read(&fx.root.join("b").join(name)), "{name} differs");
    }
    let cdf = fx.root.join("a/cdf/synthetic_child_probability.csv");
    assert_eq!(read(&cdf), read(&fx.root.join("b/cdf/synthetic_child_probability.csv")));
    let text = String::from_utf8(read(&cdf)).unwrap();
    assert!(text.starts_with("certainty_level,cum_frac_hallucination,cum_frac_factual\n"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn consistency_across_two_settings() {
    let fx = Fixture::new();
    write_corpus(&fx.root.join("alice.jsonl"), &planted_records(SettingId::AliceBob));
    let (a, b, out) = (fx.path("child.jsonl"), fx.path("alice.jsonl"), fx.path("out"));
    let common = ["--input", &a, &b, "--out", &out, "--metric", "probability"];
    for cmd in ["label", "score", "threshold", "detect", "consistency"] {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--config", "/dev/null"]);
        ok(&choke(&args));
    }
    let c: serde_json::Value = serde_json::from_slice(&read(&fx.root.join("out/consistency.json"))).unwrap();
    let cmp = &c["comparisons"][0];
    // identical planted CHOKE sets in both settings
    assert_eq!(cmp["report"]["jaccard_percent"], 100.0);
    assert!(cmp["report"]["p_value"].as_f64().unwrap() < 0.001);
    assert_eq!(cmp["setting_a"], "child");
    assert_eq!(cmp["setting_b"], "alice_bob");
    let t = &c["first_token_tests"][0];
    assert_eq!(t["n_choke"], 8);
    assert_eq!(t["n_low_certainty"], 12);

    let table = String::from_utf8(read(&fx.root.join("out/consistency_table.csv"))).unwrap();
    assert!(table.starts_with("model,dataset,metric,setting_pair,random_percent,certain_percent,p_value\n"));

    let mut args = vec!["consistency", "--shared-only"];
    args.extend_from_slice(&common);
    ok(&choke(&args));
    let c: serde_json::Value = serde_json::from_slice(&read(&fx.root.join("out/consistency.json"))).unwrap();
    assert_eq!(c["shared_only"], true);
    assert_eq!(c["comparisons"][0]["report"]["shared_only"], true);
}
