use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use grit_core::prompts::PROMPT_SUFFIX;
use grit_core::records::{parse_jsonl, ReportLine, ScoreLine};
use grit_core::toy::{InitPrior, PolicyFile, StateSpace};
use tempfile::TempDir;

const ZEBRA: &str = include_str!("../../core/fixtures/zebra_fig4a.txt");

fn grit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grit"))
        .args(args)
        .env_remove("JUDGE_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, lines: &[serde_json::Value]) -> PathBuf {
    let p = dir.join(name);
    let mut f = std::fs::File::create(&p).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    p
}

fn zebra_sample() -> serde_json::Value {
    serde_json::json!({
        "id": "zebra", "image_width": 640, "image_height": 427,
        "question": "How many zebras are pictured here?", "answer": "7",
        "gt_count": 7, "task_type": "counting"
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Answers every POST with `reply`; counts requests.
fn mock_judge(status: u16, reply: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let seen = Arc::clone(&seen);
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0; len];
                let _ = reader.read_exact(&mut body);
                seen.fetch_add(1, Ordering::SeqCst);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            });
        }
    });
    (url, calls)
}

#[test]
fn prompt_suffix_is_printed_verbatim() {
    let o = grit(&["parse", "--emit-prompt-suffix"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), format!("{PROMPT_SUFFIX}\n"));
    assert!(stdout(&o).contains("output necessary coordinates needed"));
}

#[test]
fn parse_reports_boxes_and_masks() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("t.txt");
    std::fs::write(&p, ZEBRA).unwrap();
    let o = grit(&["parse", s(&p)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["boxes"].as_array().unwrap().len(), 7);
    assert_eq!(v["answer_segment"], "7");
    let o = grit(&["parse", "--mask", s(&p)]);
    assert_eq!(stdout(&o).matches("[REGION]").count(), 7);
}

#[test]
fn zebra_trace_scores_full_marks() {
    let dir = TempDir::new().unwrap();
    let samples = write(dir.path(), "s.jsonl", &[zebra_sample()]);
    let traces = write(
        dir.path(),
        "t.jsonl",
        &[serde_json::json!({"id": "t1", "sample_id": "zebra", "text": ZEBRA})],
    );
    let out = dir.path().join("scores.jsonl");
    let o = grit(&[
        "score",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<ScoreLine> = parse_jsonl(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(lines.len(), 2);
    match &lines[0] {
        ScoreLine::Score { reward, .. } => {
            assert!((reward.total - 3.1).abs() < 1e-12);
            assert_eq!(reward.r_count, Some(0.5));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(&lines[1], ScoreLine::Summary(s) if s.count == 1 && s.errors == 0));
}

#[test]
fn counting_off_drops_r_count_everywhere() {
    let dir = TempDir::new().unwrap();
    let samples = write(dir.path(), "s.jsonl", &[zebra_sample()]);
    let traces = write(
        dir.path(),
        "t.jsonl",
        &[
            serde_json::json!({"id": "a", "sample_id": "zebra", "text": ZEBRA}),
            serde_json::json!({"id": "b", "sample_id": "zebra", "text": "<answer>6"}),
        ],
    );
    let o = grit(&[
        "score",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--counting-reward",
        "off",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains("r_count"), "{text}");
}

#[test]
fn dangling_trace_is_a_partial_failure() {
    let dir = TempDir::new().unwrap();
    let samples = write(dir.path(), "s.jsonl", &[zebra_sample()]);
    let traces = write(
        dir.path(),
        "t.jsonl",
        &[
            serde_json::json!({"id": "t1", "sample_id": "zebra", "text": ZEBRA}),
            serde_json::json!({"id": "t2", "sample_id": "nope", "text": "x"}),
        ],
    );
    let o = grit(&["score", "--samples", s(&samples), "--traces", s(&traces)]);
    assert_eq!(o.status.code(), Some(1));
    let lines: Vec<ScoreLine> = parse_jsonl(&stdout(&o)).unwrap();
    assert!(matches!(&lines[1], ScoreLine::Error { trace_id, .. } if trace_id == "t2"));
    assert!(matches!(&lines[2], ScoreLine::Summary(s) if s.count == 1 && s.errors == 1));
}

#[test]
fn empty_traces_give_an_empty_summary() {
    let dir = TempDir::new().unwrap();
    let samples = write(dir.path(), "s.jsonl", &[zebra_sample()]);
    let traces = write(dir.path(), "t.jsonl", &[]);
    let o = grit(&["score", "--samples", s(&samples), "--traces", s(&traces)]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<ScoreLine> = parse_jsonl(&stdout(&o)).unwrap();
    assert!(matches!(&lines[..], [ScoreLine::Summary(s)] if s.count == 0));
}

#[test]
fn schema_errors_are_fatal_and_cite_the_line() {
    let dir = TempDir::new().unwrap();
    let samples = write(
        dir.path(),
        "s.jsonl",
        &[
            zebra_sample(),
            serde_json::json!({"id": "b", "image_width": 1, "image_height": 1, "answer": "x"}),
        ],
    );
    let traces = write(dir.path(), "t.jsonl", &[]);
    let o = grit(&["score", "--samples", s(&samples), "--traces", s(&traces)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("question"), "{err}");
}

#[test]
fn scoring_is_deterministic_and_ordered() {
    let dir = TempDir::new().unwrap();
    let samples = write(dir.path(), "s.jsonl", &[zebra_sample()]);
    let traces: Vec<_> = (0..200)
        .map(|i| {
            let text = format!("<think>({i}, 0, {}, 9)</think><answer>{}", i + 5, i % 9);
            serde_json::json!({"id": format!("t{i}"), "sample_id": "zebra", "text": text})
        })
        .collect();
    let traces = write(dir.path(), "t.jsonl", &traces);
    let args = ["score", "--samples", s(&samples), "--traces", s(&traces)];
    let a = stdout(&grit(&args));
    assert_eq!(a, stdout(&grit(&args)));
    let lines: Vec<ScoreLine> = parse_jsonl(&a).unwrap();
    for (i, l) in lines[..200].iter().enumerate() {
        assert!(matches!(l, ScoreLine::Score { trace_id, .. } if *trace_id == format!("t{i}")));
    }
}

fn box_samples(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let samples: Vec<_> = (0..n)
        .map(|i| {
            serde_json::json!({
                "id": format!("s{i}"), "image_width": 100, "image_height": 80,
                "question": "Where is the cup?", "answer": "on the table",
                "gt_boxes": [[10, 10, 40, 30], [50, 40, 90, 70]], "task_type": "relation"
            })
        })
        .collect();
    let traces: Vec<_> = (0..n)
        .map(|i| {
            serde_json::json!({
                "id": format!("t{i}"), "sample_id": format!("s{i}"),
                "text": "<think>cup at (10, 10, 40, 30) and (50, 40, 90, 70)</think><rethink>yes</rethink><answer>On the table."
            })
        })
        .collect();
    (
        write(dir, "s.jsonl", &samples),
        write(dir, "t.jsonl", &traces),
    )
}

#[test]
fn exact_boxes_and_answers_give_perfect_eval() {
    let dir = TempDir::new().unwrap();
    let (samples, traces) = box_samples(dir.path(), 5);
    let out = dir.path().join("report.jsonl");
    let o = grit(&[
        "eval",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<ReportLine> = parse_jsonl(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(lines.len(), 6);
    match lines.last().unwrap() {
        ReportLine::Summary(s) => {
            assert_eq!(s.mean_giou, Some(1.0));
            assert_eq!(s.mean_acc, Some(1.0));
            assert!(s.correlation.is_none());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn boxless_trace_scores_zero_grounding() {
    let dir = TempDir::new().unwrap();
    let (samples, _) = box_samples(dir.path(), 1);
    let traces = write(
        dir.path(),
        "t2.jsonl",
        &[serde_json::json!({"id": "t", "sample_id": "s0", "text": "<answer>on the table"})],
    );
    let o = grit(&[
        "eval",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--metrics",
        "giou",
    ]);
    let lines: Vec<ReportLine> = parse_jsonl(&stdout(&o)).unwrap();
    match &lines[0] {
        ReportLine::Sample(r) => {
            assert_eq!(r.giou, Some(0.0));
            assert_eq!(r.acc_score, None);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn correlation_without_an_image_judge_aborts() {
    let dir = TempDir::new().unwrap();
    let (samples, traces) = box_samples(dir.path(), 2);
    let o = grit(&[
        "eval",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--metrics",
        "correlation",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("--judge remote --judge-url"),
        "{}",
        stderr(&o)
    );
    let o = grit(&[
        "eval",
        "--judge",
        "remote",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--judge-url"));
}

#[test]
fn image_blind_remote_judge_scores_chance() {
    let dir = TempDir::new().unwrap();
    let n = 400;
    let (samples, traces) = box_samples(dir.path(), n);
    let (url, calls) = mock_judge(200, "Image 0");
    let o = grit(&[
        "eval",
        "--judge",
        "remote",
        "--judge-url",
        &url,
        "--seed",
        "11",
        "--samples",
        s(&samples),
        "--traces",
        s(&traces),
        "--metrics",
        "correlation",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(calls.load(Ordering::SeqCst), 3 * n);
    let lines: Vec<ReportLine> = parse_jsonl(&stdout(&o)).unwrap();
    let ReportLine::Summary(summary) = lines.last().unwrap() else {
        panic!("no summary");
    };
    let c = summary.correlation.unwrap();
    let sigma = (0.25 / (3 * n) as f64).sqrt();
    assert!((c.mean - 0.5).abs() <= 3.0 * sigma, "{c:?}");
}

#[test]
fn rejected_credentials_are_fatal() {
    let (url, calls) = mock_judge(401, "denied");
    let o = grit(&[
        "judge-answer",
        "--judge",
        "remote",
        "--judge-url",
        &url,
        "--judge-retries",
        "4",
        "--question",
        "q",
        "--predicted",
        "a",
        "--answer",
        "a",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn judge_answer_uses_the_rule_judge_by_default() {
    let o = grit(&[
        "judge-answer",
        "--question",
        "q",
        "--predicted",
        "A cat.",
        "--answer",
        "cat",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["s_gpt"], 1.0);
}

#[test]
fn zero_step_training_dumps_the_initial_policy() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    let o = grit(&[
        "train-toy",
        "--steps",
        "0",
        "--log",
        s(&log),
        "--eval-tasks",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), "");
    let file: PolicyFile =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("log.policy.json")).unwrap())
            .unwrap();
    assert_eq!(
        file.to_policy().unwrap(),
        InitPrior::default().policy(StateSpace::default())
    );
}

#[test]
fn training_files_repeat_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let log = dir.path().join(format!("{name}.jsonl"));
        let o = grit(&[
            "train-toy",
            "--steps",
            "20",
            "--tasks-per-step",
            "8",
            "--seed",
            "7",
            "--log",
            s(&log),
            "--eval-tasks",
            "0",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let policy = dir.path().join(format!("{name}.policy.json"));
        (
            std::fs::read(log).unwrap(),
            std::fs::read_to_string(policy).unwrap(),
        )
    };
    let (la, pa) = run("a");
    let (lb, pb) = run("b");
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
    assert_eq!(String::from_utf8(la).unwrap().lines().count(), 20);
    assert!(pa.contains("\"seed\": 7"));
}

#[test]
fn counting_flag_controls_the_logged_count_reward() {
    let dir = TempDir::new().unwrap();
    let run = |flag: &str| {
        let log = dir.path().join(format!("{flag}.jsonl"));
        let o = grit(&[
            "train-toy",
            "--steps",
            "30",
            "--tasks-per-step",
            "8",
            "--counting-reward",
            flag,
            "--log",
            s(&log),
            "--eval-tasks",
            "0",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        (std::fs::read_to_string(log).unwrap(), report)
    };
    let (on, on_report) = run("on");
    let (off, off_report) = run("off");
    assert!(on.lines().all(|l| l.contains("mean_r_count")));
    assert!(!off.contains("mean_r_count"));
    assert!(on_report["final_ma_r_count"].as_f64().unwrap() >= 0.0);
    assert!(off_report.get("final_ma_r_count").is_none());
}

#[test]
fn invalid_training_flags_are_fatal() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("x.jsonl");
    for bad in [
        ["--group-size", "1"],
        ["--epsilon", "1.5"],
        ["--lr", "0"],
        ["--beta", "-1"],
    ] {
        let o = grit(&[
            "train-toy",
            "--steps",
            "1",
            bad[0],
            bad[1],
            "--log",
            s(&log),
        ]);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn config_file_supplies_defaults_under_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("grit.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[train]\nsteps = 4\ntasks_per_step = 2\n[reward]\ncounting_reward = false\n",
    )
    .unwrap();
    let log = dir.path().join("l.jsonl");
    let o = grit(&[
        "--config",
        s(&cfg),
        "train-toy",
        "--steps",
        "6",
        "--log",
        s(&log),
        "--eval-tasks",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["seed"], 3);
    assert_eq!(report["steps"], 6);
    assert!(!std::fs::read_to_string(&log)
        .unwrap()
        .contains("mean_r_count"));

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = grit(&["--config", s(&cfg), "parse", "--emit-prompt-suffix"]);
    assert_eq!(o.status.code(), Some(2));
}
