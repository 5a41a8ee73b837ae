use std::path::Path;
use std::process::{Command, Output};

const WORKED: &str = r#"{"tokens":["He","was","captured","in","Baghdad","late","Monday","night"],"entities":[{"start":0,"end":1,"type":"PER"},{"start":4,"end":5,"type":"GPE"}],"relations":[{"head":1,"tail":0,"type":"PHYS"}]}"#;

fn hyspa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyspa")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn roundtrip_on_synthetic_corpus() {
    for t in ["bfs", "dfs"] {
        let o = hyspa(&["roundtrip", "--synth", "1000", "--traversal", t]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("1000 examples, 0 round-trip failures"));
    }
}

#[test]
fn encode_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("worked.jsonl");
    std::fs::write(&input, format!("{WORKED}\n")).unwrap();
    let o = hyspa(&["encode", p(&input)]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("# n=8 m=16 traversal=bfs"), "{out}");
    assert_eq!(out.lines().nth(1), Some("19 0 12 10 83 0 14 6 19 10"));

    // Decoding the dump gives back the record's graph.
    let seqs = dir.path().join("worked.seq");
    std::fs::write(&seqs, &out).unwrap();
    let o = hyspa(&["decode", p(&seqs)]);
    assert_eq!(o.status.code(), Some(0));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["entities"].as_array().unwrap().len(), 2);
    assert_eq!(rec["relations"][0]["type"], "PHYS");

    let o = hyspa(&["validate", "--sequences", p(&seqs)]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    let o = hyspa(&["encode", "--no-such-flag", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(hyspa(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hyspa(&["roundtrip", "--beam", "0"]).status.code(), Some(2));
    assert_eq!(hyspa(&["encode", "/no/such/file.jsonl"]).status.code(), Some(2));
}

#[test]
fn assertion_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, r#"{"tokens":["a"],"entities":[{"start":0,"end":3,"type":"PER"}]}"#).unwrap();
    assert_eq!(hyspa(&["validate", p(&bad)]).status.code(), Some(1));

    let seqs = dir.path().join("bad.seq");
    std::fs::write(&seqs, "# n=8 m=16 traversal=bfs\n19 0 12\n").unwrap();
    assert_eq!(hyspa(&["validate", "--sequences", p(&seqs)]).status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("worked.jsonl");
    std::fs::write(&input, format!("{WORKED}\n")).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"traversal": "dfs"}"#).unwrap();
    let o = hyspa(&["encode", p(&input), "--config", p(&cfg)]);
    assert!(stdout(&o).contains("traversal=dfs"));
    let o = hyspa(&["encode", p(&input), "--config", p(&cfg), "--traversal", "bfs"]);
    assert!(stdout(&o).contains("traversal=bfs"));
}

#[test]
fn custom_vocab_file() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.json");
    std::fs::write(&vocab, r#"{"edge_types": ["[TYPE]", "WORKS_FOR"], "node_types": ["[NULL]", "PER", "ORG"]}"#).unwrap();
    let input = dir.path().join("c.jsonl");
    std::fs::write(
        &input,
        r#"{"tokens":["Ann","joined","Acme"],"entities":[{"start":0,"end":1,"type":"PER"},{"start":2,"end":3,"type":"ORG"}],"relations":[{"head":0,"tail":1,"type":"WORKS_FOR"}]}"#,
    )
    .unwrap();
    let o = hyspa(&["roundtrip", p(&input), "--vocab", p(&vocab)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(hyspa(&["roundtrip", p(&input)]).status.code(), Some(1));
}

#[test]
fn train_eval_extract_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let model = dir.path().join("model.json");
    let small = ["--d-model", "8", "--heads", "2", "--layers", "1", "--steps", "6", "--batch-size", "4", "--seed", "3"];
    let o = hyspa(&[&["synth", "--count", "40", "--output", p(&train)][..], &small].concat());
    assert_eq!(o.status.code(), Some(0));
    let o = hyspa(&[&["train", p(&train), "--output", p(&model), "--dev", p(&train), "--eval-every", "3"][..], &small].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(&model).unwrap();
    let o = hyspa(&[&["train", p(&train), "--output", p(&model)][..], &small].concat());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&model).unwrap(), first, "training is not deterministic");

    let o = hyspa(&["eval", "--model", p(&model), p(&train), "--beam", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["examples"], 40);
    assert!(r["ner_f1"].as_f64().unwrap() >= 0.0);

    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "John works for Acme .\n\nMary visited Paris .\n").unwrap();
    let o = hyspa(&["extract", "--model", p(&model), p(&raw)]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["tokens"][2], "Paris");
}

#[test]
fn gradcheck_and_bench_report() {
    let o = hyspa(&["gradcheck", "--d-model", "8", "--heads", "2", "--coords", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
    assert!(stdout(&o).contains("trav.tree"));

    let o = hyspa(&["bench", "--d-model", "8", "--heads", "2", "--sizes", "16,32,64", "--steps-per-size", "4", "--max-exponent", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("score_bytes") && out.contains("time exponent"), "{out}");
    // Raw rows come before the fitted summary: header plus one row per size.
    assert_eq!(out.lines().count(), 5);
}
