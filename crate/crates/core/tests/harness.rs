mod common;

use common::{run_config, run_env, synthetic_triplets, word_count};
use esg_forge::backend::ScriptStep;
use esg_forge::embedding::{CountingEmbedder, HashingEmbedder};
use esg_forge::harness::{emit_reports, run_eval, ItemStatus, Mode, RunOptions, Transcript};
use esg_forge::retrieval::{parse_ekb_prompt, ToolCallKind};
use std::sync::Arc;

fn run(config: &esg_forge::harness::RunConfig, n: usize) -> esg_forge::harness::RunOutcome {
    let items = synthetic_triplets(n, 7);
    let env = run_env(config, &items);
    run_eval(config, &items, &env, &RunOptions::default()).unwrap()
}

#[test]
fn reference_echo_scores_perfectly() {
    let items = synthetic_triplets(40, 1);
    let config = run_config("reference-echo", Mode::ZeroShot);
    let env = run_env(&config, &items);
    let out = run_eval(&config, &items, &env, &RunOptions::default()).unwrap();
    let s = out.row.scores.unwrap();
    for v in [s.f1, s.bleu, s.rouge1, s.rouge_l, s.rouge_lsum] {
        assert_eq!(v, 1.0);
    }
    let expected: f64 = items
        .iter()
        .map(|t| 1.0 - 0.5 / (word_count(&t.answer) as f64).powi(3))
        .sum::<f64>()
        / items.len() as f64;
    assert!((s.meteor - expected).abs() < 1e-12);
    assert_eq!(out.row.rank, Some(1));
    assert_eq!(out.row.n_failed, 0);
}

#[test]
fn zero_shot_transcripts_have_no_retrieval() {
    let out = run(&run_config("echo", Mode::ZeroShot), 5);
    for t in &out.transcripts {
        assert!(t.hits.is_empty() && t.tool_calls.is_empty());
        assert!(t.prompt.contains(&t.question));
        // Echo backend returns the prompt.
        assert_eq!(t.answer, t.prompt.trim());
    }
}

#[test]
fn empty_backend_is_degenerate() {
    let out = run(&run_config("empty", Mode::ZeroShot), 6);
    let s = out.row.scores.unwrap();
    assert_eq!((s.f1, s.bleu, s.rouge1, s.meteor), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(out.row.n_degenerate, 6);
    assert!(out.row.readability.is_none());
}

#[test]
fn zero_shot_makes_no_embedding_requests() {
    let items = synthetic_triplets(10, 3);
    for (mode, expect_zero) in [(Mode::ZeroShot, true), (Mode::Ekb, false)] {
        let config = run_config("reference-echo", mode);
        let mut env = run_env(&config, &items);
        let counter = Arc::new(CountingEmbedder::new(Arc::new(HashingEmbedder::new(
            env.embedder.dim(),
        ))));
        env.embedder = counter.clone();
        run_eval(&config, &items, &env, &RunOptions::default()).unwrap();
        assert_eq!(counter.requests() == 0, expect_zero, "{mode}");
    }
}

#[test]
fn ekb_prompt_carries_retrieved_passages() {
    let items = synthetic_triplets(12, 4);
    let mut config = run_config("echo", Mode::Ekb);
    config.k = 2;
    let env = run_env(&config, &items);
    let out = run_eval(&config, &items, &env, &RunOptions::default()).unwrap();
    for t in &out.transcripts {
        assert_eq!(t.hits.len(), 2);
        let parsed = parse_ekb_prompt(&t.prompt).unwrap();
        assert_eq!(parsed.question.as_deref(), Some(t.question.as_str()));
        let ids: Vec<&str> = parsed.passages.iter().map(|p| p.doc_id.as_str()).collect();
        let hit_ids: Vec<&str> = t.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, hit_ids);
        for p in &parsed.passages {
            assert_eq!(&p.text, &env.contexts[&p.doc_id]);
        }
    }
}

#[test]
fn nkb_loop_searches_then_answers() {
    let mut config = run_config("scripted", Mode::Nkb);
    config.backend.script = vec![
        ScriptStep::ToolCall {
            name: "search".into(),
            arguments: r#"{"query": "carbon"}"#.into(),
        },
        ScriptStep::Reference,
    ];
    let out = run(&config, 4);
    for t in &out.transcripts {
        assert!(t.is_ok());
        assert_eq!(t.exchanges.len(), 2);
        assert_eq!(t.tool_calls[0].outcome.kind, ToolCallKind::Valid);
        assert_eq!(t.tool_calls[1].outcome.kind, ToolCallKind::NoCall);
        assert_eq!(t.hits.len(), 3);
        assert_eq!(t.answer, t.reference);
    }
    assert_eq!(out.row.tool_calls.valid, 4);
}

#[test]
fn misspelled_tool_is_never_dispatched() {
    let mut config = run_config("scripted", Mode::Nkb);
    config.max_steps = 3;
    config.backend.script = vec![ScriptStep::ToolCall {
        name: "serch".into(),
        arguments: r#"{"query": "x"}"#.into(),
    }];
    let out = run(&config, 2);
    for t in &out.transcripts {
        assert!(t.truncated);
        assert!(t.hits.is_empty());
        assert!(t
            .tool_calls
            .iter()
            .all(|o| o.outcome.kind == ToolCallKind::Malformed));
    }
    assert_eq!(out.row.tool_calls.near_miss, 6);
    assert_eq!(out.row.n_truncated, 2);
}

#[test]
fn transient_failure_is_retried() {
    let mut config = run_config("reference-echo", Mode::ZeroShot);
    config.backend.transient_failures = 1;
    let out = run(&config, 3);
    for t in &out.transcripts {
        assert!(t.is_ok());
        assert_eq!(t.exchanges.len(), 2);
        assert!(t.exchanges[0].error.is_some());
        // Simulated clock charges every attempt.
        assert_eq!(t.latency_s, 4.0);
    }
}

#[test]
fn permanent_failure_marks_item_and_run_continues() {
    let mut config = run_config("scripted", Mode::ZeroShot);
    config.backend.script = vec![ScriptStep::Permanent {
        status: 400,
        body: "bad request".into(),
    }];
    let out = run(&config, 3);
    assert_eq!(out.row.n_failed, 3);
    assert!(out.row.scores.is_none());
    assert!(matches!(
        out.transcripts[0].status,
        ItemStatus::Failed { .. }
    ));
    assert_eq!(out.transcripts[0].exchanges.len(), 1);
}

#[test]
fn simulated_energy_follows_probe_power() {
    let out = run(&run_config("reference-echo", Mode::ZeroShot), 5);
    // 300 W for 2 s per item.
    let expected = 5.0 * 300.0 * 2.0 / 3.6e6;
    assert!((out.row.consumption.energy_kwh - expected).abs() < 1e-15);
    assert!((out.row.consumption.co2_kg - expected * 0.113).abs() < 1e-15);
    assert!((out.row.consumption.time_h - 10.0 / 3600.0).abs() < 1e-15);
}

#[test]
fn duplicate_ids_are_rejected() {
    let mut items = synthetic_triplets(3, 1);
    items[2].id = items[0].id.clone();
    let config = run_config("echo", Mode::ZeroShot);
    let env = run_env(&config, &items);
    assert!(run_eval(&config, &items, &env, &RunOptions::default()).is_err());
}

fn report_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name().unwrap() != "manifest.json" && p.file_name().unwrap() != "journal.jsonl"
        })
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn reports_are_deterministic_across_runs() {
    let items = synthetic_triplets(20, 9);
    let mut config = run_config("corrupting", Mode::Ekb);
    config.backend.max_in_flight = 4;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let env = run_env(&config, &items);
        let dir = tempfile::tempdir().unwrap();
        let out = run_eval(&config, &items, &env, &RunOptions::default()).unwrap();
        emit_reports(
            dir.path(),
            std::slice::from_ref(&out.row),
            Some(&out.transcripts),
            None,
        )
        .unwrap();
        outputs.push(report_bytes(dir.path()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    for f in [
        "consumption.csv",
        "generative.csv",
        "readability.csv",
        "row.json",
        "tradeoff.csv",
        "transcripts.jsonl",
    ] {
        assert!(names.contains(&f), "{f}");
    }
}

#[test]
fn journal_restores_items_without_rerunning() {
    let items = synthetic_triplets(8, 2);
    let config = run_config("reference-echo", Mode::ZeroShot);
    let env = run_env(&config, &items);
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let opts = RunOptions {
        journal: Some(journal.clone()),
        resume: false,
    };
    let first = run_eval(&config, &items[..5], &env, &opts).unwrap();
    assert_eq!(first.resumed, 0);
    let resumed = RunOptions {
        resume: true,
        ..opts.clone()
    };
    let second = run_eval(&config, &items, &env, &resumed).unwrap();
    assert_eq!(second.resumed, 5);
    let ids: Vec<&str> = second
        .transcripts
        .iter()
        .map(|t| t.item_id.as_str())
        .collect();
    let want: Vec<&str> = items.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, want);
    // A fresh run refuses to clobber the journal.
    assert!(run_eval(&config, &items, &env, &opts).is_err());
    // A different configuration cannot resume it.
    let mut other = config.clone();
    other.k = 9;
    assert!(run_eval(&other, &items, &env, &resumed).is_err());
    let lines = std::fs::read_to_string(&journal).unwrap().lines().count();
    assert_eq!(lines, 1 + items.len());
    let _: Vec<Transcript> = second.transcripts;
}
