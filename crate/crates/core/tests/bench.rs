//! Manifest loading and case isolation in the bench runner.

mod common;

use dafny_pilot::bench::{load_manifest, run_bench, BenchConfig, BenchError};

fn write_manifest(dir: &std::path::Path, cases: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::json!({ "cases": cases }).to_string()).unwrap();
    path
}

#[test]
fn a_missing_cassette_fails_only_its_case() {
    let corpus = common::corpus();
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let factor0 = corpus.join("cases/factor0");
    let manifest = write_manifest(
        dir.path(),
        serde_json::json!([
            {
                "id": "ok", "task": "ProofInference", "expected": "Success",
                "source": factor0.join("Factor0.dfy"), "cassette_ref": factor0.join("cassettes"),
                "loop": { "max_rounds": 1 }
            },
            {
                "id": "no-cassette", "task": "ProofInference", "expected": "Success",
                "source": factor0.join("Factor0.dfy"), "cassette_ref": dir.path().join("empty"),
                "loop": { "max_rounds": 1 }
            }
        ]),
    );
    let cases = load_manifest(&manifest).unwrap();
    let report = run_bench(&cases, &BenchConfig { replay: true, parallelism: 2, ..Default::default() });
    assert_eq!(report.cases[0].outcome, "Success");
    assert_eq!(report.cases[1].outcome, "Failure");
    assert!(report.cases[1].reason.as_deref().unwrap().contains("replay miss"), "{:?}", report.cases[1].reason);
    assert_eq!(report.aggregate.success_rate, Some(0.5));
    assert!(!report.all_match());
}

#[test]
fn manifest_paths_must_exist() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        serde_json::json!([{ "id": "x", "task": "Repair", "expected": "Success", "source": "nope.dfy", "cassette_ref": "." }]),
    );
    assert!(matches!(load_manifest(&manifest), Err(BenchError::MissingFile { .. })));
}

#[test]
fn shipped_manifest_loads_in_file_order() {
    let cases = load_manifest(&common::manifest()).unwrap();
    assert!(cases.len() >= 10);
    assert_eq!(cases[0].id, "coincidence-count");
    assert!(cases.iter().any(|c| c.id == "factor0"));
}

#[test]
fn reports_are_written_in_both_forms() {
    let cases = load_manifest(&common::manifest()).unwrap();
    let report = run_bench(&cases, &BenchConfig { replay: true, ..Default::default() });
    let out = tempfile::tempdir().unwrap();
    report.write(out.path()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["aggregate"]["cases"], cases.len());
    let md = std::fs::read_to_string(out.path().join("report.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| case")).count(), cases.len());
}
