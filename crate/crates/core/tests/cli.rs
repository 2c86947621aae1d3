use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn zsnav(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsnav"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_one_log_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let scenario = root().join("scenarios/warehouse.json");
    let o = zsnav(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--seeds",
            "1..10",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut logs: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    logs.sort();
    assert_eq!(logs.len(), 10);
    for log in &logs {
        let last = std::fs::read_to_string(log)
            .unwrap()
            .lines()
            .last()
            .unwrap()
            .to_string();
        assert!(
            last.contains("\"termination\":\"success\""),
            "{}: {last}",
            log.display()
        );
    }
    assert_eq!(stdout(&o).lines().count(), 10);
}

#[test]
fn missing_scenario_is_an_engine_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = zsnav(&["run", "nowhere/absent.json", "--out", "runs"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/absent.json"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(zsnav(&["hover"], dir.path()).status.code(), Some(1));
    assert_eq!(
        zsnav(&["run", "a.json", "--seeds", "x"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        zsnav(&["run", "a.json", "--set", "noequals"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(zsnav(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn replay_accepts_fresh_logs_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let o = zsnav(
        &["run", &fixture("hall.json"), "--seeds", "4", "--out", "runs"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = dir.path().join("runs/hall_seed4.jsonl");
    let o = zsnav(&["replay", log.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("replay identical"));

    let text = std::fs::read_to_string(&log).unwrap();
    let at = text.find("shortens the route").expect("mock response text");
    let mut bytes = text.into_bytes();
    bytes[at] = b'S';
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, bytes).unwrap();
    let o = zsnav(&["replay", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("divergence at record 1"), "{}", stdout(&o));
}

#[test]
fn fixture_logs_replay_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["hall_seed1", "hall_seed2", "annex_seed1", "annex_seed2"] {
        let o = zsnav(&["replay", &fixture(&format!("logs/{name}.jsonl"))], dir.path());
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
    }
}

#[test]
fn report_prints_table_and_json() {
    let pattern = fixture("logs/*.jsonl");
    let o = zsnav(&["report", &pattern], &root());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.txt")).unwrap();
    assert_eq!(stdout(&o), golden);

    let o = zsnav(&["report", &pattern, "--json"], &root());
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    let o = zsnav(&["report", "no/such/*.jsonl"], &root());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn annotate_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    let o = zsnav(
        &[
            "annotate",
            &fixture("logs/hall_seed1.jsonl"),
            "--out",
            frames.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let pngs: Vec<_> = std::fs::read_dir(&frames).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(!pngs.is_empty());
    for p in &pngs {
        assert_eq!(&std::fs::read(p).unwrap()[..8], b"\x89PNG\r\n\x1a\n");
    }
}
