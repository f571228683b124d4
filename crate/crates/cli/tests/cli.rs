use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esg-forge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_dataset(path: &Path, n: usize) {
    let pillars = ["E", "Social", "governance"];
    let answers = [
        "Emissions fell by a tenth last year.",
        "The board meets four times a year.",
        "Workers receive safety training.",
        "Water use is tracked at every site.",
    ];
    let mut s = String::new();
    for i in 0..n {
        let line = serde_json::json!({
            "id": format!("item-{i:03}"),
            "question": format!("What does report {i} say?"),
            "answer": answers[i % answers.len()],
            "context": format!("Report {i}. {}", answers[i % answers.len()]),
            "pillar": pillars[i % pillars.len()],
        });
        s.push_str(&line.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn write_config(path: &Path, backend: &str, extra: &str) {
    let toml = format!(
        r#"
model_label = "{backend}"

[backend]
kind = "{backend}"
{extra}

[retry]
max_attempts = 2
base_delay_ms = 0
max_delay_ms = 0

[energy]
intensity = 0.113
region = "test"
clock = "simulated"
simulated_latency_s = 1.5

[[energy.probes]]
kind = "constant"
watts = 200.0
"#
    );
    std::fs::write(path, toml).unwrap();
}

#[test]
fn eval_writes_reports_and_refuses_to_clobber_its_journal() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa.jsonl");
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    write_dataset(&data, 12);
    write_config(&cfg, "reference-echo", "");

    let run = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--dataset",
        arg(&data),
        "--out",
        arg(&out),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(summary["items"], 12);
    assert_eq!(summary["failed"], 0);
    assert_eq!(summary["scores"]["f1"], 1.0);
    for f in [
        "generative.csv",
        "readability.csv",
        "consumption.csv",
        "tradeoff.csv",
        "manifest.json",
        "row.json",
        "journal.jsonl",
        "transcripts.jsonl",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    // 12 items, 1.5 s each at 200 W.
    let kwh = summary["energy_kwh"].as_f64().unwrap();
    assert!((kwh - 12.0 * 1.5 * 200.0 / 3.6e6).abs() < 1e-12, "{kwh}");

    let again = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--dataset",
        arg(&data),
        "--out",
        arg(&out),
    ]);
    assert_eq!(again.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--resume"));

    let resumed = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--dataset",
        arg(&data),
        "--out",
        arg(&out),
        "--resume",
    ]);
    assert_eq!(resumed.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&resumed.stdout).unwrap();
    assert_eq!(summary["resumed"], 12);
}

#[test]
fn ekb_eval_uses_a_built_index() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa.jsonl");
    let cfg = dir.path().join("run.toml");
    let index = dir.path().join("index");
    write_dataset(&data, 8);
    write_config(&cfg, "reference-echo", "");
    let built = forge(&["build-index", "--input", arg(&data), "--out", arg(&index)]);
    assert_eq!(
        built.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&built.stderr)
    );

    let out = dir.path().join("out");
    let run = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--mode",
        "ekb",
        "--k",
        "2",
        "--dataset",
        arg(&data),
        "--index",
        arg(&index),
        "--out",
        arg(&out),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let line = std::fs::read_to_string(out.join("transcripts.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(first["hits"].as_array().unwrap().len(), 2);

    // Retrieval modes refuse to run without an index.
    let out2 = dir.path().join("out2");
    let no_index = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--mode",
        "ekb",
        "--dataset",
        arg(&data),
        "--out",
        arg(&out2),
    ]);
    assert_eq!(no_index.status.code(), Some(3));
}

#[test]
fn failed_items_give_partial_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa.jsonl");
    let cfg = dir.path().join("run.toml");
    write_dataset(&data, 3);
    // Nothing listens on port 9.
    write_config(
        &cfg,
        "http",
        "endpoint = \"http://127.0.0.1:9/v1/chat/completions\"\ntimeout_s = 2",
    );
    let out = dir.path().join("out");
    let run = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--dataset",
        arg(&data),
        "--out",
        arg(&out),
    ]);
    assert_eq!(
        run.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(summary["failed"], 3);
    assert!(out.join("generative.csv").exists());
}

#[test]
fn rank_reports_ranks_and_tau() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    std::fs::write(
        &csv,
        "model,f1,bleu,expected\na,0.9,0.5,1\nb,0.8,0.5,2\nc,0.7,0.1,3\n",
    )
    .unwrap();
    let out = forge(&[
        "rank",
        "--input",
        arg(&csv),
        "--columns",
        "f1,bleu",
        "--compare",
        "expected",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout,
        "model,mean_rank,rank\na,1.000,1\nb,1.500,2\nc,3.000,3\n"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("kendall_tau=1.0000"));

    std::fs::write(&csv, "model,f1,bleu\na,0.9,0.5\nb,,0.4\n").unwrap();
    let partial = forge(&["rank", "--input", arg(&csv)]);
    assert_eq!(partial.status.code(), Some(2));
    assert!(String::from_utf8(partial.stdout).unwrap().contains("b,,\n"));
}

#[test]
fn split_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa.jsonl");
    write_dataset(&data, 60);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = forge(&[
            "split-data",
            "--input",
            arg(&data),
            "--out",
            arg(&out),
            "--seed",
            "7",
        ]);
        assert_eq!(
            r.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&r.stderr)
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let train = std::fs::read_to_string(a.join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 42);
}

#[test]
fn usage_errors_and_missing_files() {
    assert_eq!(forge(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(forge(&["--help"]).status.code(), Some(0));
    let missing = forge(&[
        "ckpt-diff",
        "/nonexistent/a.safetensors",
        "/nonexistent/b.safetensors",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn residual_round_trip_through_the_binary() {
    use esg_forge::checkpoint::{save_checkpoint, NamedTensorMap};
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let base = NamedTensorMap::builder()
        .with_f32("w", &[2, 2], &[1.0, -2.0, 0.5, 3.0])
        .build();
    let inst = NamedTensorMap::builder()
        .with_f32("w", &[2, 2], &[1.25, -1.5, 0.625, 2.5])
        .build();
    save_checkpoint(&base, p("base.safetensors")).unwrap();
    save_checkpoint(&inst, p("inst.safetensors")).unwrap();

    let ex = forge(&[
        "irm-extract",
        "--inst",
        arg(&p("inst.safetensors")),
        "--base",
        arg(&p("base.safetensors")),
        "--out",
        arg(&p("delta.safetensors")),
    ]);
    assert_eq!(
        ex.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ex.stderr)
    );
    let ap = forge(&[
        "irm-apply",
        "--base",
        arg(&p("base.safetensors")),
        "--delta",
        arg(&p("delta.safetensors")),
        "--out",
        arg(&p("out.safetensors")),
    ]);
    assert_eq!(
        ap.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ap.stderr)
    );
    assert_eq!(
        std::fs::read(p("out.safetensors")).unwrap(),
        std::fs::read(p("inst.safetensors")).unwrap()
    );

    let diff = forge(&[
        "ckpt-diff",
        arg(&p("base.safetensors")),
        arg(&p("inst.safetensors")),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&diff.stdout).unwrap();
    assert_eq!(v["max_abs_diff"]["w"], 0.5);
}

#[test]
fn shipped_config_parses_and_validates() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ekb-http.toml");
    let cfg = esg_forge::harness::RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.mode, esg_forge::harness::Mode::Ekb);
    assert_eq!(cfg.backend.max_in_flight, 4);
}

#[test]
fn index_from_another_embedder_is_refused_before_any_item_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa.jsonl");
    let cfg = dir.path().join("run.toml");
    let index = dir.path().join("index");
    write_dataset(&data, 4);
    write_config(&cfg, "reference-echo", "");
    assert_eq!(
        forge(&["build-index", "--input", arg(&data), "--out", arg(&index)])
            .status
            .code(),
        Some(0)
    );
    let text = std::fs::read_to_string(&cfg).unwrap() + "\n[embedder]\nkind = \"hash\"\ndim = 64\n";
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let run = forge(&[
        "eval",
        "--config",
        arg(&cfg),
        "--mode",
        "ekb",
        "--dataset",
        arg(&data),
        "--index",
        arg(&index),
        "--out",
        arg(&out),
    ]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).contains("embedder"));
    assert!(!out.join("journal.jsonl").exists());
}
