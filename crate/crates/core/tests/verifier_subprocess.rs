//! The subprocess backend against a stand-in `dafny` script.
#![cfg(unix)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dafny_pilot::verifier::{DafnyVerifier, VerificationStatus, VerifierConfig, VerifierError, VerifierMode};
use dafny_pilot::{SourceText, Verifier};

/// Writes an executable shell script that behaves like `dafny`.
fn fake_dafny(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("dafny");
    std::fs::write(&path, format!("#!/bin/sh\nif [ \"$1\" = \"--version\" ]; then echo 4.3.0; exit 0; fi\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn subprocess(exe: PathBuf, timeout_s: u64) -> DafnyVerifier {
    DafnyVerifier::new(VerifierConfig { executable: exe, timeout_s, ..Default::default() }).unwrap()
}

const TEXT: &str = "method M(x: int)\n{\n  assert x > 0;\n}\n";

#[test]
fn failing_run_is_parsed_and_workspace_removed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace");
    // "$2" is the copied source; remember where it lived and what it held
    let exe = fake_dafny(
        dir.path(),
        &format!(
            "f=\"$2\"; echo \"$1 $f\" > {t}; cat \"$f\" >> {t}\n\
             echo \"$(basename \"$f\")(3,9): Error: assertion might not hold\"\n\
             echo\necho 'Dafny program verifier finished with 0 verified, 1 error'\nexit 4",
            t = trace.display()
        ),
    );
    let v = subprocess(exe, 30);
    let text = SourceText::new("Pos.dfy", TEXT);
    let r = v.verify(&text).unwrap();
    assert_eq!(r.status, VerificationStatus::Failed);
    assert_eq!(r.diagnostics.len(), 1);
    assert_eq!((r.diagnostics[0].span.start_line, r.diagnostics[0].span.start_col), (3, 9));
    assert_eq!(r.verifier_version, "4.3.0");
    assert_eq!(&r.content_hash, text.content_hash());

    let trace = std::fs::read_to_string(&trace).unwrap();
    let (first, copied) = trace.split_once('\n').unwrap();
    let (sub, file) = first.split_once(' ').unwrap();
    assert_eq!(sub, "verify");
    assert!(file.ends_with("Pos.dfy"));
    assert_eq!(copied, TEXT);
    assert!(!Path::new(file).exists(), "temporary copy is gone");
    assert!(!Path::new(file).parent().unwrap().exists(), "temporary workspace is gone");
}

#[test]
fn resolve_uses_its_own_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let exe = fake_dafny(dir.path(), "echo \"$1\" >&2\necho\necho 'Dafny program verifier did not attempt verification'");
    let r = subprocess(exe, 30).resolve(&SourceText::new("R.dfy", TEXT)).unwrap();
    assert_eq!(r.status, VerificationStatus::Verified);
    assert!(r.raw_output.ends_with("resolve\n"), "stderr follows stdout: {}", r.raw_output);
}

#[test]
fn slow_runs_are_killed_and_reported_as_timeouts() {
    let dir = tempfile::tempdir().unwrap();
    let exe = fake_dafny(dir.path(), "exec sleep 30");
    let started = Instant::now();
    let r = subprocess(exe, 1).verify(&SourceText::new("Slow.dfy", TEXT)).unwrap();
    assert_eq!(r.status, VerificationStatus::Timeout);
    assert!(started.elapsed().as_secs() < 10, "child was killed");
}

#[test]
fn garbage_output_is_not_success() {
    let dir = tempfile::tempdir().unwrap();
    let exe = fake_dafny(dir.path(), "echo 'Unhandled exception. System.NullReferenceException'\nexit 134");
    let r = subprocess(exe, 30).verify(&SourceText::new("G.dfy", TEXT)).unwrap();
    assert_eq!(r.status, VerificationStatus::CrashedOrUnparsable);
    assert!(!r.is_verified());
}

#[test]
fn missing_executable() {
    let v = subprocess(PathBuf::from("/nonexistent/dafny"), 30);
    match v.verify(&SourceText::new("M.dfy", TEXT)) {
        Err(VerifierError::VerifierNotFound(p)) => assert_eq!(p, PathBuf::from("/nonexistent/dafny")),
        other => panic!("expected VerifierNotFound, got {other:?}"),
    }
}

#[test]
fn recorded_runs_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let exe = fake_dafny(
        dir.path(),
        "echo \"$(basename \"$2\")(3,3): Error: assertion might not hold\"\necho\necho 'Dafny program verifier finished with 0 verified, 1 error'",
    );
    let fixtures = dir.path().join("fixtures");
    let text = SourceText::new("Rec.dfy", TEXT);
    let recorder = DafnyVerifier::new(VerifierConfig {
        executable: exe,
        mode: VerifierMode::Record(fixtures.clone()),
        ..Default::default()
    })
    .unwrap();
    let live = recorder.verify(&text).unwrap();
    assert!(fixtures.join(format!("{}.json", text.content_hash())).is_file());

    let replayed = DafnyVerifier::new(VerifierConfig::replay(&fixtures)).unwrap().verify(&text).unwrap();
    assert_eq!(live.without_timing(), replayed.without_timing());
    let miss = DafnyVerifier::new(VerifierConfig::replay(&fixtures)).unwrap().resolve(&text);
    assert!(matches!(miss, Err(VerifierError::ReplayMiss(_))));
}

#[test]
fn zero_timeout_is_rejected() {
    let err = DafnyVerifier::new(VerifierConfig { timeout_s: 0, ..Default::default() }).unwrap_err();
    assert!(matches!(err, VerifierError::InvalidConfig(_)));
}
