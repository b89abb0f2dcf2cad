mod common;

use std::path::Path;
use std::process::{Command, Output};

use datamarket::ledger::{read_journal, write_journal};

use common::scenario_path;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_datamarket"))
}

fn run(scenario: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(scenario).args(extra).output().unwrap()
}

fn verify(journal: &Path) -> Output {
    bin().arg("verify").arg(journal).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn shipped_scenarios_pass() {
    for name in ["bank.toml", "telco.toml", "empty.toml"] {
        let out = run(&scenario_path(name), &[]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", text(&out.stdout));
        assert!(text(&out.stdout).contains("--- machine-readable ---"));
    }
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&dir.path().join("missing.toml"), &[]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n[[orders]]\nbuyer = \"ghost\"\n").unwrap();
    let out = run(&bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!text(&out.stderr).is_empty());

    let out = verify(&dir.path().join("nope.journal"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn artifacts_are_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut journals = Vec::new();
    let mut reports = Vec::new();
    for i in 0..2 {
        let j = dir.path().join(format!("j{i}"));
        let r = dir.path().join(format!("r{i}"));
        let out = run(
            &scenario_path("telco.toml"),
            &["--journal-out", j.to_str().unwrap(), "--report-out", r.to_str().unwrap()],
        );
        assert_eq!(out.status.code(), Some(0));
        let report = std::fs::read(&r).unwrap();
        assert_eq!(report, out.stdout);
        journals.push(std::fs::read(&j).unwrap());
        reports.push(report);
    }
    assert!(!journals[0].is_empty());
    assert_eq!(journals[0], journals[1]);
    assert_eq!(reports[0], reports[1]);

    let other = dir.path().join("j-other");
    run(&scenario_path("telco.toml"), &["--seed", "99", "--journal-out", other.to_str().unwrap()]);
    assert_ne!(std::fs::read(other).unwrap(), journals[0]);
}

#[test]
fn verify_accepts_clean_and_flags_tampered_journals() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("bank.journal");
    let out = run(&scenario_path("bank.toml"), &["--journal-out", j.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(verify(&j).status.code(), Some(0));

    let bytes = std::fs::read(&j).unwrap();

    let cut = dir.path().join("cut.journal");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = verify(&cut);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("sequence"));

    // raise the first mint without fixing the recorded state digest
    let mut events = read_journal(&bytes).unwrap();
    let payload = &mut events[0].payload;
    let last = payload.len() - 1;
    payload[last] ^= 0x01;
    let edited = dir.path().join("edited.journal");
    std::fs::write(&edited, write_journal(&events)).unwrap();
    let out = verify(&edited);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("sequence 0"), "{}", text(&out.stderr));
}

#[test]
fn tick_limit_failure_exits_one() {
    let out = run(&scenario_path("bank.toml"), &["--ticks", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("liveness"));
}
