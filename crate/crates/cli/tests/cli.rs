use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entailgen"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn entailgen");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record(label: &str, premise: &str, hypothesis: &str) -> String {
    serde_json::json!({"gold_label": label, "sentence1": premise, "sentence2": hypothesis}).to_string()
}

/// SNLI-format files: entailment pairs from a template, plus other labels.
fn write_snli(dir: &Path, n_train: usize) {
    let nouns = ["man", "woman", "dog", "child", "boy", "girl", "cat", "horse"];
    let verbs = ["runs", "sleeps", "eats", "jumps"];
    let places = ["in the park", "on the beach"];
    let make = |n: usize, offset: usize| {
        let mut lines = Vec::new();
        for i in 0..n {
            let k = i + offset;
            let noun = nouns[k % nouns.len()];
            let verb = verbs[(k / nouns.len()) % verbs.len()];
            let place = places[(k / 32) % places.len()];
            let premise = format!("A {noun} {verb} {place}.");
            lines.push(record("entailment", &premise, &format!("A {noun} {verb}.")));
            lines.push(record("contradiction", &premise, "Nobody is outside."));
            if i % 4 == 0 {
                lines.push(record("-", &premise, "Something happens."));
            }
        }
        lines.join("\n") + "\n"
    };
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("snli_1.0_train.jsonl"), make(n_train, 0)).unwrap();
    fs::write(dir.join("snli_1.0_dev.jsonl"), make(8, 0)).unwrap();
    fs::write(dir.join("snli_1.0_test.jsonl"), make(8, 3)).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        write_snli(&root.join("snli"), 64);
        Fixture { _tmp: tmp, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn prepare(&self) -> PathBuf {
        let out = self.p("data");
        let o = run(&["prepare", "--snli-dir", s(&self.p("snli")), "--out", s(&out)]);
        assert!(o.status.success());
        out
    }

    fn train(&self, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.p(out);
        let mut args = vec![
            "--deterministic",
            "--seed",
            "3",
            "train",
            "--data",
            s(data),
            "--out",
            s(&out),
            "--epochs",
            "1",
            "--hidden",
            "8",
            "--batch-size",
            "16",
            "--max-decode-len",
            "8",
        ];
        if !extra.contains(&"--embeddings") {
            args.extend(["--embeddings", "random:8"]);
        }
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

#[test]
fn prepare_writes_datasets_stats_and_manifest() {
    let f = Fixture::new();
    let data = f.prepare();
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["train_pairs"], 64);
    assert_eq!(stats["dev_pairs"], 8);
    assert_eq!(stats["test_pairs"], 8);
    assert_eq!(stats["skipped_unlabeled"], 16 + 2 + 2);
    assert!(stats["oov_fraction"].is_null());
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "manifest.json"] {
        assert!(data.join(name).is_file(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "prepare");
    assert_eq!(manifest["config"]["min_count"], 1);
    let first = fs::read_to_string(data.join("train.jsonl")).unwrap();
    assert!(first.starts_with(r#"{"source":["A","man","runs","in","the","park","."],"target":["A","man","runs","."]}"#));
}

#[test]
fn prepare_inverse_swaps_pairs() {
    let f = Fixture::new();
    let out = f.p("inv");
    let o = run(&["prepare", "--snli-dir", s(&f.p("snli")), "--out", s(&out), "--direction", "inverse"]);
    assert!(o.status.success());
    let first = fs::read_to_string(out.join("train.jsonl")).unwrap();
    assert!(first.starts_with(r#"{"source":["A","man","runs","."],"target":["A","man","runs","in","the","park","."]}"#));
}

#[test]
fn prepare_empty_dir_names_missing_files() {
    let f = Fixture::new();
    fs::create_dir_all(f.p("empty")).unwrap();
    let o = run(&["prepare", "--snli-dir", s(&f.p("empty")), "--out", s(&f.p("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("snli_1.0_train.jsonl") && err.contains("snli_1.0_test.jsonl"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["eval", "--self-test", "--data", ".", "--smoothing", "plus-two"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_fails_before_training() {
    let f = Fixture::new();
    let data = f.prepare();
    let o = run(&["train", "--data", s(&data), "--out", s(&f.p("m")), "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!f.p("m").join("train_log.jsonl").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = Fixture::new();
    let data = f.prepare();
    let cfg = f.p("run.toml");
    fs::write(&cfg, "seed = 9\n[train]\nepochs = 1\nhidden = 6\nattention = false\n").unwrap();
    let out = f.p("m");
    let o = run(&[
        "--config",
        s(&cfg),
        "--deterministic",
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--hidden",
        "5",
        "--embeddings",
        "random:4",
        "--max-steps",
        "2",
    ]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["model"]["hidden"], 5);
    assert_eq!(m["config"]["model"]["variant"], "plain");
    assert_eq!(m["config"]["model"]["embed_dim"], 4);
    assert_eq!(m["config"]["training"]["epochs"], 1);
    assert_eq!(m["config"]["training"]["batch_size"], 64);
}

#[test]
fn train_generate_chain_eval_pipeline() {
    let f = Fixture::new();
    let data = f.prepare();
    let model_dir = f.train(&data, "m", &[]);
    let out = String::from_utf8(run(&["--deterministic", "train", "--help"]).stdout).unwrap();
    assert!(out.contains("--no-attention"));
    for name in ["best.bin", "best.json", "train_log.jsonl", "vocab.txt", "manifest.json"] {
        assert!(model_dir.join(name).is_file(), "{name}");
    }
    let ck = model_dir.join("best.bin");

    // generate: stdin, determinism, empty input, blank lines
    let g = |input: &str| run_stdin(&["generate", "--checkpoint", s(&ck)], input);
    let a = g("A dog sleeps on the beach.\nA cat eats in the park.\n");
    assert!(a.status.success());
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 2);
    assert_eq!(a.stdout, g("A dog sleeps on the beach.\nA cat eats in the park.\n").stdout);
    let e = g("");
    assert!(e.status.success() && e.stdout.is_empty());
    let b = g("A dog sleeps.\n\nA cat eats.\n");
    assert_eq!(String::from_utf8_lossy(&b.stdout).lines().count(), 3);

    // wrong vocabulary is refused
    let other = f.p("other_vocab.txt");
    fs::write(&other, "#specials\t<pad>\t<s>\t</s>\t<unk>\nzebra\n").unwrap();
    let w = run_stdin(&["generate", "--checkpoint", s(&ck), "--vocab", s(&other)], "A dog.\n");
    assert_eq!(w.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&w.stderr).contains("hash"));

    // chain with graph export; blank seed lines skipped
    let seeds = f.p("seeds.txt");
    fs::write(&seeds, "A man runs in the park.\n\nA girl jumps on the beach.\n").unwrap();
    let gdir = f.p("graph");
    let c = run(&["chain", "--checkpoint", s(&ck), "--seeds", s(&seeds), "--max-len", "4", "--graph", s(&gdir)]);
    assert!(c.status.success());
    let text = String::from_utf8(c.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let n = line.split(" → ").count();
        assert!((1..=4).contains(&n), "{line}");
    }
    assert!(String::from_utf8_lossy(&c.stderr).contains("blank"));
    for name in ["graph.dot", "graph.jsonl", "graph_stats.json"] {
        assert!(gdir.join(name).is_file(), "{name}");
    }

    // eval: real decode, self-test, annotation determinism
    let ev = run(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--split", "test"]);
    assert!(ev.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&ev.stdout).unwrap();
    assert!(rep["bleu"].as_f64().unwrap() >= 0.0);

    let st = run(&["eval", "--self-test", "--data", s(&data)]);
    let rep: serde_json::Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(rep["bleu"], 100.0);

    let ann = |dir: &str| {
        let out = f.p(dir);
        let o = run(&[
            "--seed", "1", "eval", "--checkpoint", s(&ck), "--data", s(&data), "--annotate", "5", "--out", s(&out),
        ]);
        assert!(o.status.success());
        fs::read(out.join("annotation.jsonl")).unwrap()
    };
    let a1 = ann("ann1");
    assert_eq!(a1, ann("ann2"));
    assert_eq!(String::from_utf8_lossy(&a1).lines().count(), 5);
}

#[test]
fn deterministic_training_is_reproducible() {
    let f = Fixture::new();
    let data = f.prepare();
    let losses = |dir: &Path| -> Vec<f64> {
        fs::read_to_string(dir.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
            .filter(|v| v["record"] == "step")
            .map(|v| v["loss"].as_f64().unwrap())
            .collect()
    };
    let a = f.train(&data, "a", &["--no-attention"]);
    let b = f.train(&data, "b", &["--no-attention"]);
    assert_eq!(losses(&a).len(), 4);
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(fs::read(a.join("best.bin")).unwrap(), fs::read(b.join("best.bin")).unwrap());
}

#[test]
fn freeze_pretrained_and_untied_embeddings() {
    let f = Fixture::new();
    let data = f.prepare();
    let vectors = f.p("vectors.txt");
    fs::write(&vectors, "A 0.1 0.2 0.3 0.4\nman 0.5 0.6 0.7 0.8\n.\t0 0 0 1\n").unwrap();
    let v = s(&vectors);
    let out = f.train(&data, "frozen", &["--embeddings", v, "--freeze-pretrained", "--untie-embeddings"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["model"]["embed_dim"], 4);
    assert_eq!(m["config"]["model"]["tie_embeddings"], false);
    assert!(!m["config"]["model"]["frozen_rows"].as_array().unwrap().is_empty());

    let o = run(&["train", "--data", s(&data), "--out", s(&f.p("bad")), "--random-embeddings", "8", "--freeze-pretrained"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--data", s(&data), "--out", s(&f.p("bad")), "--random-embeddings", "8", "--embeddings", v]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tally_fixture_gives_82_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("ann.jsonl");
    let mut text = String::new();
    for i in 0..100 {
        let v = if i < 82 { "yes" } else { "no" };
        text += &format!(
            "{{\"index\":{i},\"source\":\"s\",\"gold\":\"g\",\"generated\":\"o\",\"verdict\":\"{v}\"}}\n"
        );
    }
    fs::write(&p, &text).unwrap();
    let o = run(&["eval", "--tally", s(&p)]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["accuracy"], 82.0);
    assert_eq!(r["total"], 100);

    fs::write(&p, text.replacen("\"verdict\":\"yes\"", "\"verdict\":null", 1)).unwrap();
    let o = run(&["eval", "--tally", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[1]"));
}
