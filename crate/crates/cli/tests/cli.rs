//! End-to-end tests driving the installed binary through its subcommands
//! and checking the documented exit codes (0 ok, 1 usage, 2 data,
//! 3 transport).

use std::path::Path;
use std::process::{Command, Output};

fn estr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estr"))
        .args(args)
        .output()
        .expect("spawn estr")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Minimal evs1 writer: header (magic, geometry, count) plus 16-byte
/// records.
fn write_evs1(path: &Path, width: u16, height: u16, events: &[(u16, u16, u64, i8)]) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"EVS1");
    bytes.extend_from_slice(&width.to_le_bytes());
    bytes.extend_from_slice(&height.to_le_bytes());
    bytes.extend_from_slice(&(events.len() as u64).to_le_bytes());
    for &(x, y, t, p) in events {
        bytes.extend_from_slice(&x.to_le_bytes());
        bytes.extend_from_slice(&y.to_le_bytes());
        bytes.extend_from_slice(&t.to_le_bytes());
        bytes.push(p as u8);
        bytes.extend_from_slice(&[0, 0, 0]);
    }
    std::fs::write(path, bytes).unwrap();
}

fn sample_events() -> Vec<(u16, u16, u64, i8)> {
    (0..100u64)
        .map(|i| ((i % 32) as u16, (i / 4) as u16, i * 50, if i % 3 == 0 { -1 } else { 1 }))
        .collect()
}

#[test]
fn help_exits_zero_unknown_subcommand_exits_one() {
    assert_eq!(code(&estr(&["--help"])), 0);
    assert_eq!(code(&estr(&["frobnicate"])), 1);
    assert_eq!(code(&estr(&[])), 1);
}

#[test]
fn stats_reports_counts_for_evs1_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let evs = dir.path().join("sample.evs1");
    write_evs1(&evs, 32, 32, &sample_events());
    let out = estr(&["stats", evs.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["n_events"], 100);
    assert_eq!(report["width"], 32);
    assert_eq!(report["duration_us"], 99 * 50);

    let csv = dir.path().join("sample.csv");
    let mut text = String::from("x,y,t,p\n");
    for (x, y, t, p) in sample_events() {
        text.push_str(&format!("{x},{y},{t},{p}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let out = estr(&["stats", csv.to_str().unwrap(), "--width", "32", "--height", "32"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["n_events"], 100);
}

#[test]
fn stats_on_corrupt_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.evs1");
    std::fs::write(&bad, b"not an event file").unwrap();
    assert_eq!(code(&estr(&["stats", bad.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.evs1");
    assert_eq!(code(&estr(&["stats", missing.to_str().unwrap()])), 2);
}

#[test]
fn stack_writes_frames_and_representative() {
    let dir = tempfile::tempdir().unwrap();
    let evs = dir.path().join("sample.evs1");
    write_evs1(&evs, 32, 32, &sample_events());
    let outdir = dir.path().join("frames");
    let out = estr(&[
        "stack",
        evs.to_str().unwrap(),
        outdir.to_str().unwrap(),
        "--t",
        "5",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for i in 0..5 {
        let f = outdir.join(format!("frame_{i:03}.ppm"));
        let bytes = std::fs::read(&f).unwrap();
        assert!(bytes.starts_with(b"P6"), "{f:?}");
    }
    let rep = std::fs::read(outdir.join("representative.ppm")).unwrap();
    let frame0 = std::fs::read(outdir.join("frame_000.ppm")).unwrap();
    assert_eq!(rep, frame0);
}

#[test]
fn split_produces_seven_one_two() {
    let dir = tempfile::tempdir().unwrap();
    let ids = dir.path().join("ids.txt");
    let list: Vec<String> = (0..20).map(|i| format!("sample_{i:02}")).collect();
    std::fs::write(&ids, list.join("\n")).unwrap();
    let out = estr(&["split", ids.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["sizes"], serde_json::json!([14, 2, 4]));
    let mut all: Vec<String> = ["train", "val", "test"]
        .iter()
        .flat_map(|k| {
            report[*k]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_string())
        })
        .collect();
    all.sort();
    let mut expect = list.clone();
    expect.sort();
    assert_eq!(all, expect);
}

fn write_fixture_db(path: &Path) {
    std::fs::write(path, "枫\t松,柏\n松\t枫,柏\ncap\tmap,nap\nmap\tcap,nap\n").unwrap();
}

#[test]
fn correct_with_local_scorer_fixes_known_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let corpus = dir.path().join("corpus.txt");
    let lines: Vec<&str> = vec!["三只枫鼠"; 6];
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"三只松鼠\"}\n").unwrap();
    let out = estr(&[
        "correct",
        pred.to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--scorer",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rec: serde_json::Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(rec["corrected"], "三只枫鼠");
}

#[test]
fn correct_show_prompt_uses_default_template() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"松树\"}\n").unwrap();
    let out = estr(&[
        "correct",
        pred.to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--show-prompt",
    ]);
    assert_eq!(code(&out), 0);
    let line = stdout(&out);
    assert!(line.starts_with("Original text: 松树, candidate words: "));
    assert!(line.contains("please correct the incorrect words."));
}

#[test]
fn correct_without_scorer_or_endpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"x\"}\n").unwrap();
    let out = estr(&["correct", pred.to_str().unwrap(), "--db", db.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn correct_bad_template_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"x\"}\n").unwrap();
    let out = estr(&[
        "correct",
        pred.to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--template",
        "9",
        "--show-prompt",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn correct_unreachable_endpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"松树\"}\n").unwrap();
    let out = estr(&[
        "correct",
        pred.to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--endpoint",
        "127.0.0.1:9",
        "--timeout-ms",
        "500",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn score_bleu_and_accuracy_on_identical_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gt = dir.path().join("gt.jsonl");
    let body = "{\"id\":\"a\",\"text\":\"三只枫鼠红叶\"}\n{\"id\":\"b\",\"text\":\"the deed is done now\"}\n";
    std::fs::write(&pred, body).unwrap();
    std::fs::write(&gt, body).unwrap();
    let out = estr(&[
        "score", "--metric", "bleu",
        "--pred", pred.to_str().unwrap(),
        "--gt", gt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for n in 0..4 {
        assert!((report["bleu"][n].as_f64().unwrap() - 1.0).abs() < 1e-12, "BLEU-{}", n + 1);
    }
    let out = estr(&[
        "score", "--metric", "acc",
        "--pred", pred.to_str().unwrap(),
        "--gt", gt.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((report["word_accuracy"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn score_with_unmatched_id_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gt = dir.path().join("gt.jsonl");
    std::fs::write(&pred, "{\"id\":\"a\",\"text\":\"x\"}\n").unwrap();
    std::fs::write(&gt, "{\"id\":\"b\",\"text\":\"x\"}\n").unwrap();
    let out = estr(&[
        "score", "--metric", "acc",
        "--pred", pred.to_str().unwrap(),
        "--gt", gt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn memtest_passes() {
    let out = estr(&["memtest", "--seed", "11"]);
    assert_eq!(code(&out), 0, "stdout: {}", stdout(&out));
    assert!(stdout(&out).contains("PASS memtest"));
}

#[test]
fn bench_runs_four_arms_and_gecm_helps() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, vec!["三只枫鼠 cap", "三只枫鼠", "red cap"].join("\n")).unwrap();
    let mut manifest_lines = String::new();
    for i in 0..12 {
        let name = format!("rec_{i:02}.evs1");
        write_evs1(&dir.path().join(&name), 32, 32, &sample_events());
        manifest_lines.push_str(&format!(
            "{{\"id\":\"r{i}\",\"events\":\"{name}\",\"label\":\"三只枫鼠 cap\"}}\n"
        ));
    }
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, manifest_lines).unwrap();
    let out = estr(&[
        "bench",
        "--manifest", manifest.to_str().unwrap(),
        "--db", db.to_str().unwrap(),
        "--scorer", corpus.to_str().unwrap(),
        "--noise", "0.5",
        "--seed", "4",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let arms = report["arms"].as_array().unwrap();
    let names: Vec<&str> = arms.iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["baseline", "+gecm", "+mm", "+both"]);
    let bleu1 = |i: usize| arms[i]["bleu"][0].as_f64().unwrap();
    assert!(bleu1(1) >= bleu1(0), "correction should not hurt: {report}");
    assert_eq!(report["memory_smoke"]["records"], 12);
}

#[test]
fn bench_missing_event_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("glyphs.tsv");
    write_fixture_db(&db);
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "cap\n").unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, "{\"id\":\"a\",\"events\":\"nope.evs1\",\"label\":\"cap\"}\n")
        .unwrap();
    let out = estr(&[
        "bench",
        "--manifest", manifest.to_str().unwrap(),
        "--db", db.to_str().unwrap(),
        "--scorer", corpus.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_roundtrips_through_stack() {
    let dir = tempfile::tempdir().unwrap();
    // two hand-built P6 frames: one pixel darkens sharply
    let header = b"P6\n4 4\n255\n";
    let mut f0 = header.to_vec();
    f0.extend(std::iter::repeat(200u8).take(48));
    let mut f1 = f0.clone();
    f1[header.len()..header.len() + 3].copy_from_slice(&[10, 10, 10]);
    let p0 = dir.path().join("f0.ppm");
    let p1 = dir.path().join("f1.ppm");
    std::fs::write(&p0, &f0).unwrap();
    std::fs::write(&p1, &f1).unwrap();
    let events = dir.path().join("out.evs1");
    let out = estr(&[
        "simulate",
        p0.to_str().unwrap(),
        p1.to_str().unwrap(),
        events.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["events"].as_u64().unwrap() > 0);
    let stats = estr(&["stats", events.to_str().unwrap()]);
    assert_eq!(code(&stats), 0);
    let sj: serde_json::Value = serde_json::from_str(&stdout(&stats)).unwrap();
    assert_eq!(sj["n_events"], report["events"]);
    assert_eq!(sj["n_positive"], 0);
}
