//! End-to-end runs of the `kid` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kid")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write(
            "corpus.jsonl",
            concat!(
                "{\"id\":\"he\",\"title\":\"Helium\",\"text\":\"Helium is a light gas . Helium produces buoyant balloons .\"}\n",
                "{\"id\":\"fe\",\"title\":\"Iron\",\"text\":\"Iron is a heavy metal . Iron produces strong steel .\"}\n",
                "{\"id\":\"au\",\"title\":\"Gold\",\"text\":\"Gold is a soft metal . Gold produces fine jewelry .\"}\n",
            ),
        );
        ws.write(
            "lm.txt",
            "helium is a light gas .\nhelium produces buoyant balloons .\niron is a heavy metal .\niron produces strong steel .\ngold is a soft metal .\ngold produces fine jewelry .\n",
        );
        ws.write("contexts.txt", "helium\niron\ngold\n");
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path(name), text).unwrap();
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn ingest(&self) {
        ok(&kid(&["ingest", "--corpus", &self.arg("corpus.jsonl"), "--out", &self.arg("chunks.jsonl"), "--chunk-size", "6"]));
    }

    fn decode(&self, extra: &[&str]) -> Vec<Value> {
        let mut args = vec!["decode".to_string(), "--contexts".into(), self.arg("contexts.txt"), "--lm-corpus".into(), self.arg("lm.txt")];
        args.extend(extra.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&kid(&args)).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

#[test]
fn ingest_then_build_trie() {
    let ws = Workspace::new();
    ws.ingest();
    let header: Value = serde_json::from_str(ws.read("chunks.jsonl").lines().next().unwrap()).unwrap();
    assert_eq!(header["chunk_size"], 6);
    assert_eq!(header["chunk_count"], 6);

    ok(&kid(&["build-trie", "--chunks", &ws.arg("chunks.jsonl"), "--context", "helium balloons", "--k-docs", "1", "--out", &ws.arg("trie.jsonl")]));
    let trie = ws.read("trie.jsonl");
    let header: Value = serde_json::from_str(trie.lines().next().unwrap()).unwrap();
    assert!(header["key_count"].as_u64().unwrap() >= 1);
    assert!(trie.contains("\"key\":\"helium\""));
    assert!(!trie.contains("\"key\":\"iron\""));

    ok(&kid(&["build-trie", "--chunks", &ws.arg("chunks.jsonl"), "--out", &ws.arg("all.jsonl")]));
    assert!(ws.read("all.jsonl").contains("\"key\":\"iron\""));
}

#[test]
fn kid_with_empty_trie_prints_what_sampling_prints() {
    let ws = Workspace::new();
    ws.write("empty.jsonl", "{\"version\":1,\"key_count\":0,\"triplet_count\":0}\n");
    let trie = ws.arg("empty.jsonl");
    let a = ws.decode(&["--decoder", "kid", "--trie", &trie, "--seed", "7"]);
    let b = ws.decode(&["--decoder", "sampling", "--trie", &trie, "--seed", "7"]);
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x["text"], y["text"]);
        assert_eq!(x["tokens"], y["tokens"]);
    }
}

#[test]
fn decode_is_reproducible_and_reports_diagnostics() {
    let ws = Workspace::new();
    ws.ingest();
    let chunks = ws.arg("chunks.jsonl");
    let a = ws.decode(&["--chunks", &chunks, "--seed", "3", "--max-length", "12"]);
    let b = ws.decode(&["--chunks", &chunks, "--seed", "3", "--max-length", "12"]);
    assert_eq!(a, b);
    assert_eq!(a[1]["seed"], 4);
    assert_eq!(a[0]["decoder"], "kid");
    assert!(!a[0]["retrieved"].as_array().unwrap().is_empty());
    let steps = a[0]["steps"].as_array().unwrap();
    assert!(!steps.is_empty() && steps.len() <= 12);
    assert!(steps[0]["kl"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let ws = Workspace::new();
    ws.write("run.json", &format!("{{\"decoder\":\"greedy\",\"max_length\":2,\"lm_corpus\":{:?}}}", ws.arg("lm.txt")));
    let out = ok(&kid(&["decode", "--config", &ws.arg("run.json"), "--contexts", &ws.arg("contexts.txt"), "--max-length", "3"]));
    let first: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["decoder"], "greedy");
    assert!(first["tokens"].as_array().unwrap().len() <= 3);
}

#[test]
fn output_flag_writes_a_file() {
    let ws = Workspace::new();
    let out = ws.arg("out.jsonl");
    let printed = ws.decode(&["--out", &out]);
    assert!(printed.is_empty());
    assert_eq!(ws.read("out.jsonl").lines().count(), 3);
}

#[test]
fn benchmark_table_is_reproducible() {
    let run = || ok(&kid(&["benchmark", "--limit", "20", "--max-length", "24", "--jobs", "3", "--decoders", "kid,sampling,greedy,beam"]));
    let a = run();
    assert_eq!(a, run());
    let header = a.lines().next().unwrap();
    for col in ["Cov", "BLEU-1", "ROUGE-L"] {
        assert!(header.contains(col));
    }
    assert_eq!(a.lines().count(), 5);
    let single = ok(&kid(&["benchmark", "--limit", "20", "--max-length", "24", "--jobs", "1", "--decoders", "kid,sampling,greedy,beam"]));
    assert_eq!(a, single);
}

#[test]
fn benchmark_json_report() {
    let out = ok(&kid(&["benchmark", "--limit", "10", "--max-length", "16", "--decoders", "kid", "--json"]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["items"], 10);
    assert_eq!(v["decoders"][0]["decoder"], "kid");
    assert!(v["decoders"][0]["metrics"]["coverage"]["mean"].as_f64().is_some());
    assert!(v["decoders"][0]["median_kl"].as_f64().is_some());
}

#[test]
fn eval_from_plain_files() {
    let ws = Workspace::new();
    ws.write("hyp.txt", "a a a\na b b\n");
    ws.write("ref.txt", "a b\na b c ||| x y z\n");
    ws.write("tri.jsonl", "[{\"subj\":[\"a\"],\"rel\":[\"is\"],\"obj\":[\"b\"]}]\n[]\n");
    let out = ok(&kid(&["eval", "--hyps", &ws.arg("hyp.txt"), "--refs", &ws.arg("ref.txt"), "--triplets", &ws.arg("tri.jsonl")]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["bleu1"]["count"], 2);
    let f1 = v["unigram_f1"]["mean"].as_f64().unwrap();
    // (2/5 + 2/3) / 2: "a a a" vs "a b" has overlap 1, P = 1/3, R = 1/2
    assert!((f1 - (0.4 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "{f1}");
    assert_eq!(v["coverage"]["count"], 1);
}

#[test]
fn eval_records_file() {
    let ws = Workspace::new();
    ws.write(
        "records.jsonl",
        "{\"hypothesis\":[\"x\"],\"references\":[[\"x\"]],\"gold_chunk_id\":\"d1\",\"ranked_doc_ids\":[\"d1\",\"d2\"]}\n",
    );
    let out = ok(&kid(&["eval", "--records", &ws.arg("records.jsonl")]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["precision_at_1"]["mean"], 1.0);
    assert_eq!(v["rouge_l"]["mean"], 1.0);
}

#[test]
fn failures_exit_with_distinct_codes_and_json() {
    let ws = Workspace::new();
    let missing = kid(&["decode", "--contexts", "/nonexistent/ctx.txt", "--lm-corpus", &ws.arg("lm.txt")]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(error_json(&missing)["error"]["kind"], "io");

    ws.write("bad.jsonl", "{\"id\":\"a\",\"text\":\"fine\"}\n{\"id\":\n");
    let malformed = kid(&["ingest", "--corpus", &ws.arg("bad.jsonl"), "--out", &ws.arg("c.jsonl")]);
    assert_eq!(malformed.status.code(), Some(2));
    assert_eq!(error_json(&malformed)["error"]["line"], 2);

    let bad_value = kid(&["decode", "--contexts", &ws.arg("contexts.txt"), "--lm-corpus", &ws.arg("lm.txt"), "--top-p", "2"]);
    assert_eq!(bad_value.status.code(), Some(2));

    let unreachable = kid(&["decode", "--contexts", &ws.arg("contexts.txt"), "--remote", "tcp:127.0.0.1:1"]);
    assert_eq!(unreachable.status.code(), Some(4));
    assert_eq!(error_json(&unreachable)["error"]["kind"], "protocol");

    let unknown_flag = kid(&["decode", "--sigmaa", "1"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn every_command_documents_formats_in_help() {
    for cmd in ["ingest", "build-trie", "decode", "benchmark", "eval", "serve-lm"] {
        let help = ok(&kid(&[cmd, "--help"]));
        assert!(help.contains("File formats"), "{cmd}");
        assert!(help.contains("Exit codes"), "{cmd}");
    }
}

#[test]
fn defaults_command_matches_shipped_file() {
    let printed: Value = serde_json::from_str(&ok(&kid(&["defaults"]))).unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.json");
    let shipped: Value = serde_json::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    assert_eq!(printed, shipped);
}
