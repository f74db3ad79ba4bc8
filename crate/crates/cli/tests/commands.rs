mod common;

use std::fs;
use std::path::Path;

use common::{ctxcomp, fixture, stderr, MockServer};
use ctxcomp::attention::{AttentionProvider, ReferenceModelConfig, ReferenceProvider};
use serde_json::{json, Value};

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn strip_provider(mut v: Vec<Value>) -> Vec<Value> {
    for rec in &mut v {
        for d in rec["compressed_documents"].as_array_mut().unwrap() {
            d["trace"].as_object_mut().unwrap().remove("provider");
        }
    }
    v
}

#[test]
fn twenty_words_at_ratio_two_keep_ten() {
    let tmp = tempfile::tempdir().unwrap();
    let text = (1..=20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    let input = write(
        tmp.path(),
        "in.jsonl",
        &format!("{}\n", json!({"id": "r", "query": "q", "documents": [{"id": "d", "text": text}]})),
    );
    let out = ctxcomp(&["compress", "--input", &input, "--ratio", "2", "--mode", "phrase"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rec = &lines(&out.stdout)[0];
    assert_eq!(rec["compressed_documents"][0]["kept_words"], 10);
    assert_eq!(rec["compressed_documents"][0]["source_words"], 20);
    assert_eq!(rec["query"], "q");
}

#[test]
fn unknown_flag_exits_two_with_usage() {
    let out = ctxcomp(&["compress", "--input", "x", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn validation_errors_exit_two() {
    let input = fixture("records10.jsonl");
    let input = input.to_str().unwrap();
    for bad in [
        vec!["compress", "--input", input, "--ratio", "0.5"],
        vec!["compress", "--input", input, "--mode", "words"],
        vec!["compress", "--input", input, "--sigma", "0"],
        vec!["compress", "--input", input, "--provider", "gpt"],
        vec!["compress", "--input", "/nonexistent/in.jsonl"],
    ] {
        let out = ctxcomp(&bad);
        assert_eq!(out.status.code(), Some(2), "{bad:?}: {}", stderr(&out));
    }
}

#[test]
fn missing_recorded_file_exits_three_naming_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let provider = format!("recorded:{}", tmp.path().display());
    let input = fixture("records10.jsonl");
    let out = ctxcomp(&["compress", "--input", input.to_str().unwrap(), "--provider", &provider]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("paris-10"), "{}", stderr(&out));
}

#[test]
fn recorded_files_reproduce_the_reference_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("att");
    let input = fixture("records10.jsonl");
    let input = input.to_str().unwrap();
    let rec = ctxcomp(&["record", "--input", input, "--dir", dir.to_str().unwrap(), "--seed", "7"]);
    assert!(rec.status.success(), "{}", stderr(&rec));
    assert_eq!(fs::read_dir(&dir).unwrap().count(), 10);

    let provider = format!("recorded:{}", dir.display());
    let base = ["compress", "--input", input, "--seed", "7", "--mode", "dynamic", "--trace"];
    let from_ref = ctxcomp(&base);
    let from_files = ctxcomp(&[&base[..], &["--provider", &provider]].concat());
    assert!(from_files.status.success(), "{}", stderr(&from_files));
    assert_eq!(strip_provider(lines(&from_ref.stdout)), strip_provider(lines(&from_files.stdout)));
}

#[test]
fn prompts_match_recorded_file_names() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("att");
    let input = fixture("records10.jsonl");
    let input = input.to_str().unwrap();
    ctxcomp(&["record", "--input", input, "--dir", dir.to_str().unwrap()]);
    let out = ctxcomp(&["prompts", "--input", input]);
    let prompts = lines(&out.stdout);
    assert_eq!(prompts.len(), 10);
    for p in &prompts {
        let sha = p["prompt_sha256"].as_str().unwrap();
        assert!(dir.join(format!("{sha}.json")).is_file());
        let span = p["context_char_span"].as_array().unwrap();
        let text: Vec<char> = p["prompt"].as_str().unwrap().chars().collect();
        let ctx: String = text[span[0].as_u64().unwrap() as usize..span[1].as_u64().unwrap() as usize]
            .iter()
            .collect();
        assert!(!ctx.is_empty());
    }
}

#[test]
fn remote_attention_service() {
    let server = MockServer::start(|req| {
        let provider = ReferenceProvider::new(ReferenceModelConfig::with_seed(7));
        let prompt_text = req.body["prompt"].as_str().unwrap();
        let span = &req.body["context_char_span"];
        let (a, b) = (span[0].as_u64().unwrap() as usize, span[1].as_u64().unwrap() as usize);
        let prompt = ctxcomp::template::FilledPrompt {
            text: prompt_text.to_string(),
            context_char_span: (a, b),
            query_char_span: (0, 0),
            char_len: prompt_text.chars().count(),
        };
        let rec = provider.trigger_attention(&prompt).unwrap();
        (200, serde_json::to_string(&rec.to_interchange(&prompt)).unwrap())
    });
    let input = fixture("records10.jsonl");
    let input = input.to_str().unwrap();
    let base = ["compress", "--input", input, "--seed", "7", "--trace", "--jobs", "3"];
    let remote = format!("remote:{}/attention", server.url());
    let from_service = ctxcomp(&[&base[..], &["--provider", &remote]].concat());
    assert!(from_service.status.success(), "{}", stderr(&from_service));
    assert_eq!(server.hits(), 10);
    let from_ref = ctxcomp(&base);
    assert_eq!(strip_provider(lines(&from_ref.stdout)), strip_provider(lines(&from_service.stdout)));
}

#[test]
fn remote_attention_failure_exits_three() {
    let server = MockServer::start(|_| (404, "{}".into()));
    let input = fixture("records10.jsonl");
    let remote = format!("remote:{}/attention", server.url());
    let out = ctxcomp(&["compress", "--input", input.to_str().unwrap(), "--provider", &remote]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("paris-10"));
}

#[test]
fn output_is_deterministic_and_independent_of_jobs() {
    let input = fixture("e2e20.jsonl");
    let input = input.to_str().unwrap();
    let a = ctxcomp(&["compress", "--input", input, "--seed", "3", "--mode", "sentence", "--jobs", "1"]);
    let b = ctxcomp(&["compress", "--input", input, "--seed", "3", "--mode", "sentence", "--jobs", "8"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let ids: Vec<String> = lines(&a.stdout).iter().map(|r| r["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, (0..20).map(|k| format!("q{k:02}")).collect::<Vec<_>>());
}

#[test]
fn global_scope_spends_one_budget() {
    let input = fixture("e2e20.jsonl");
    let out = ctxcomp(&["compress", "--input", input.to_str().unwrap(), "--scope", "global", "--ratio", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for rec in lines(&out.stdout) {
        let docs = rec["compressed_documents"].as_array().unwrap();
        let kept: u64 = docs.iter().map(|d| d["kept_words"].as_u64().unwrap()).sum();
        let total: u64 = docs.iter().map(|d| d["source_words"].as_u64().unwrap()).sum();
        assert_eq!(kept, (total / 4).max(1));
    }
}

#[test]
fn config_file_and_template_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let input = fixture("records10.jsonl");
    let input = input.to_str().unwrap();
    let cfg = write(tmp.path(), "c.toml", "ratio = 4.0\nmode = \"dynamic\"\nseed = 7\n");
    let via_cfg = ctxcomp(&["compress", "--input", input, "--config", &cfg]);
    let via_flags = ctxcomp(&["compress", "--input", input, "--ratio", "4", "--mode", "dynamic", "--seed", "7"]);
    assert!(via_cfg.status.success(), "{}", stderr(&via_cfg));
    assert_eq!(via_cfg.stdout, via_flags.stdout);

    let overridden = ctxcomp(&["compress", "--input", input, "--config", &cfg, "--ratio", "2"]);
    let kept = lines(&overridden.stdout)[0]["compressed_documents"][0]["kept_words"].as_u64().unwrap();
    assert_eq!(kept, 26, "52 words at ratio 2");

    let tpl = write(tmp.path(), "t.txt", "{s}\n\n{c}\n\nQ: {q}\nA:\n");
    let with_tpl = ctxcomp(&["compress", "--input", input, "--template", &tpl, "--seed", "7"]);
    assert!(with_tpl.status.success(), "{}", stderr(&with_tpl));

    let bad_tpl = write(tmp.path(), "bad.txt", "{c} {q}\nA:");
    assert_eq!(ctxcomp(&["compress", "--input", input, "--template", &bad_tpl]).status.code(), Some(2));
    let bad_cfg = write(tmp.path(), "bad.toml", "ratoi = 2\n");
    assert_eq!(ctxcomp(&["compress", "--input", input, "--config", &bad_cfg]).status.code(), Some(2));
}

#[test]
fn trace_aligns_with_source_words() {
    let input = fixture("records10.jsonl");
    let out = ctxcomp(&["compress", "--input", input.to_str().unwrap(), "--trace", "--seed", "7"]);
    let rec = &lines(&out.stdout)[0];
    for d in rec["compressed_documents"].as_array().unwrap() {
        let t = &d["trace"];
        let n = d["source_words"].as_u64().unwrap() as usize;
        assert_eq!(t["words"].as_array().unwrap().len(), n);
        assert_eq!(t["alpha2"].as_array().unwrap().len(), n);
        assert_eq!(t["alpha3"].as_array().unwrap().len(), n);
        let selected = t["selected"].as_array().unwrap().iter().filter(|b| b.as_bool().unwrap()).count();
        assert_eq!(selected as u64, d["kept_words"].as_u64().unwrap());
    }
}

#[test]
fn eval_counts_and_selects_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let gold = write(
        tmp.path(),
        "gold.jsonl",
        &[
            json!({"id": "a", "query": "q", "documents": [{"id": "d", "text": "t"}], "answers": ["Paris"], "long_answer": "the cat sat on mat"}),
            json!({"id": "b", "query": "q", "documents": [{"id": "d", "text": "t"}], "answers": ["Rome"], "long_answer": "x"}),
        ]
        .iter()
        .map(|v| format!("{v}\n"))
        .collect::<String>(),
    );
    let pred = write(
        tmp.path(),
        "pred.jsonl",
        "{\"id\":\"a\",\"prediction\":\"the cat sat\"}\n{\"id\":\"b\",\"prediction\":\"It is Paris.\"}\n",
    );
    let out = ctxcomp(&["eval", "--pred", &pred, "--gold", &gold]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n"], 2);
    assert_eq!(report["accuracy"], 0.0);
    assert_eq!(report["per_record"][0]["rouge_l"], 0.75);

    let pred2 = write(
        tmp.path(),
        "pred2.jsonl",
        "{\"id\":\"a\",\"prediction\":\"The capital is Paris.\"}\n{\"id\":\"b\",\"prediction\":\"I don't know\"}\n",
    );
    let report_path = tmp.path().join("report.json");
    let out = ctxcomp(&[
        "eval", "--pred", &pred2, "--gold", &gold, "--metrics", "accuracy", "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 0.5);

    let out = ctxcomp(&["eval", "--pred", &pred, "--gold", &gold, "--metrics", "rouge_l"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["n", "per_record", "rouge_l"]);
    for row in report["per_record"].as_array().unwrap() {
        let keys: Vec<&String> = row.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["id", "rouge_l"]);
    }

    let short = write(tmp.path(), "short.jsonl", "{\"id\":\"a\",\"prediction\":\"x\"}\n");
    let out = ctxcomp(&["eval", "--pred", &short, "--gold", &gold]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ctxcomp(&["eval", "--pred", &pred, "--gold", &gold, "--metrics", "bleu"]).status.code(), Some(2));
}

#[test]
fn sweep_moves_gold_and_keeps_fields() {
    let input = fixture("sweep20.jsonl");
    let out = ctxcomp(&["sweep", "--input", input.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let recs = lines(&out.stdout);
    assert_eq!(recs.len(), 5);
    for (rec, pos) in recs.iter().zip([1, 5, 10, 15, 20]) {
        assert_eq!(rec["gold_position"], pos);
        assert_eq!(rec["documents"][pos - 1]["id"], "gold");
        assert_eq!(rec["answers"][0], "Mount Everest");
    }
    let out = ctxcomp(&["sweep", "--input", input.to_str().unwrap(), "--positions", "21"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_requires_an_endpoint() {
    let input = fixture("e2e20.jsonl");
    let out = ctxcomp(&["generate", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_failure_exits_three() {
    let server = MockServer::start(|_| (503, "{}".into()));
    let input = fixture("e2e20.jsonl");
    let out = ctxcomp(&[
        "generate", "--input", input.to_str().unwrap(), "--endpoint", &server.url(), "--max-in-flight", "20",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("attempt"), "{}", stderr(&out));
}

#[test]
fn generated_prompt_holds_compressed_context() {
    let tmp = tempfile::tempdir().unwrap();
    let server = MockServer::echo();
    let input = fixture("records10.jsonl");
    let compressed = tmp.path().join("c.jsonl");
    let c = ctxcomp(&[
        "compress", "--input", input.to_str().unwrap(), "--output", compressed.to_str().unwrap(), "--ratio", "4",
    ]);
    assert!(c.status.success());
    let out = ctxcomp(&["generate", "--input", compressed.to_str().unwrap(), "--endpoint", &server.url()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pred = &lines(&out.stdout)[0];
    assert_eq!(pred["id"], "paris-10");
    let record: Value = serde_json::from_str(fs::read_to_string(&compressed).unwrap().trim()).unwrap();
    let first = record["compressed_documents"][0]["text"].as_str().unwrap();
    let prompt = pred["prediction"].as_str().unwrap();
    assert!(prompt.contains(first));
    assert!(prompt.starts_with("System: Answer the question using the documents."));
    assert!(prompt.ends_with("Assistant: Answer:"));
    assert!(!prompt.contains(record["documents"][0]["text"].as_str().unwrap()));
}
