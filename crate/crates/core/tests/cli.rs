//! The `dafny-pilot` binary, end to end in replay mode.

mod common;

use std::path::Path;

use common::{case, cli, corpus, replay_args};

fn args<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

#[test]
fn lemmas_with_axioms_prints_the_patch() {
    let c = case("coincidence-count");
    let extra = replay_args(&c);
    let src = c.source.to_str().unwrap();
    let r = cli(&args(&["lemmas", src, "--allow-axioms", "--max-rounds", "1"], &extra), Path::new("."));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("--- a/"));
    assert_eq!(r.stdout.matches("+lemma {:axiom} ").count(), 3);
}

#[test]
fn partial_and_failure_exit_codes() {
    let c = case("coincidence-count");
    let extra = replay_args(&c);
    let r = cli(&args(&["lemmas", c.source.to_str().unwrap(), "--forbid-axioms", "--max-rounds", "1"], &extra), Path::new("."));
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stdout.starts_with("--- a/"), "stdout holds only the best attempt's diff");

    let c = case("no-code");
    let extra = replay_args(&c);
    let r = cli(&args(&["fix", c.source.to_str().unwrap(), "--max-rounds", "1", "--format", "json"], &extra), Path::new("."));
    assert_eq!(r.code, 3, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["outcome"], "Failure");
    assert_eq!(v["diff"], "");
}

#[test]
fn prove_factor0_text_summary() {
    let c = case("factor0");
    let extra = replay_args(&c);
    let r = cli(&args(&["prove", c.source.to_str().unwrap(), "--max-rounds", "1", "--format", "text"], &extra), Path::new("."));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("Success after 1 round(s)"), "{}", r.stdout);
}

#[test]
fn verified_files_are_no_ops_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["verified-abs", "verified-max", "verified-sum"] {
        let c = case(id);
        let extra = replay_args(&c);
        for cmd in ["fix", "lemmas", "prove", "explain"] {
            let log = dir.path().join(format!("{id}-{cmd}.jsonl"));
            let log_s = log.to_str().unwrap().to_string();
            let r = cli(&args(&[cmd, c.source.to_str().unwrap(), "--run-log", &log_s], &extra), Path::new("."));
            assert_eq!(r.code, 0, "{id} {cmd}: {}", r.stderr);
            assert_eq!(r.stdout, "", "{id} {cmd}: empty diff");
            let events = std::fs::read_to_string(&log).unwrap();
            assert!(!events.contains("\"action\":\"llm_call\""), "{id} {cmd}");
            assert!(events.contains("\"action\":\"verify\""));
        }
    }
}

fn copy_case(id: &str, to: &Path) -> std::path::PathBuf {
    let c = case(id);
    let from = c.source.parent().unwrap();
    for sub in ["fixtures", "cassettes"] {
        std::fs::create_dir_all(to.join(sub)).unwrap();
        for e in std::fs::read_dir(from.join(sub)).unwrap() {
            let p = e.unwrap().path();
            std::fs::copy(&p, to.join(sub).join(p.file_name().unwrap())).unwrap();
        }
    }
    let file = to.join(c.source.file_name().unwrap());
    std::fs::copy(&c.source, &file).unwrap();
    file
}

#[test]
fn write_applies_only_successes() {
    let dir = tempfile::tempdir().unwrap();
    let file = copy_case("coincidence-count", dir.path());
    let before = std::fs::read_to_string(&file).unwrap();
    let base = ["--llm", "replay:cassettes", "--verifier", "replay:fixtures", "--max-rounds", "1", "--write"];

    let r = cli(&[&["lemmas", "CoincidenceCount.dfy", "--forbid-axioms"][..], &base[..]].concat(), dir.path());
    assert_eq!(r.code, 2);
    assert_eq!(std::fs::read_to_string(&file).unwrap(), before, "partial results are not written");
    assert!(r.stderr.contains("not writing"));

    let r = cli(&[&["lemmas", "CoincidenceCount.dfy", "--allow-axioms"][..], &base[..]].concat(), dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let after = std::fs::read_to_string(&file).unwrap();
    assert_eq!(after.matches("{:axiom}").count(), 3);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().into_string().ok())
        .filter(|n| n.ends_with(".tmp") || n.starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    copy_case("coincidence-count", dir.path());
    std::fs::write(
        dir.path().join("dafny-pilot.toml"),
        "llm = \"replay:cassettes\"\nverifier = \"replay:fixtures\"\nmax_rounds = 1\nallow_axioms = true\n",
    )
    .unwrap();
    let r = cli(&["lemmas", "CoincidenceCount.dfy"], dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = cli(&["lemmas", "CoincidenceCount.dfy", "--forbid-axioms"], dir.path());
    assert_eq!(r.code, 2, "the flag wins over the file");

    std::fs::write(dir.path().join("dafny-pilot.toml"), "max_rounds = \"three\"\n").unwrap();
    assert_eq!(cli(&["lemmas", "CoincidenceCount.dfy"], dir.path()).code, 64);
}

#[test]
fn usage_and_internal_errors() {
    let here = Path::new(".");
    assert_eq!(cli(&["lemmas"], here).code, 64);
    assert_eq!(cli(&["lemmas", "does-not-exist.dfy", "--verifier", "subprocess"], here).code, 64);
    assert_eq!(cli(&["lemmas", "x.dfy", "--allow-axioms", "--forbid-axioms"], here).code, 64);
    assert_eq!(cli(&["fix", "x.dfy", "--target", "0:3"], here).code, 64);
    assert_eq!(cli(&["fix", "x.dfy", "--max-rounds", "0"], here).code, 64);

    // a cassette directory without the needed request is a replay miss
    let c = case("coincidence-count");
    let empty = tempfile::tempdir().unwrap();
    let llm = format!("replay:{}", empty.path().display());
    let ver = format!("replay:{}", c.fixture_dir().display());
    let r = cli(&["lemmas", c.source.to_str().unwrap(), "--llm", &llm, "--verifier", &ver], here);
    assert_eq!(r.code, 70);
    assert!(r.stderr.contains("replay"), "{}", r.stderr);
    assert_eq!(r.stdout, "");
}

#[test]
fn explain_and_translate() {
    let dir = corpus().join("text-tasks/explain");
    let r = cli(
        &["explain", "Factor0.dfy", "--llm", "replay:cassettes", "--verifier", "replay:fixtures"],
        &dir,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("witnesses"));

    let dir = corpus().join("text-tasks/translate");
    let r = cli(
        &["translate", "requirement.txt", "--llm", "replay:cassettes", "--verifier", "replay:fixtures"],
        &dir,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("method MaxElement(a: array<int>) returns (m: int)\n"));
}

#[test]
fn bench_in_replay_mode() {
    let out = tempfile::tempdir().unwrap();
    let m = common::manifest();
    let r = cli(&["bench", m.to_str().unwrap(), "--replay", "--out", out.path().to_str().unwrap()], Path::new("."));
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["cases"], 12);
    assert_eq!(report["aggregate"]["successes"], 9);
    assert_eq!(report["aggregate"]["success_rate"], 0.75);
    assert!(out.path().join("report.md").is_file());
    assert!(r.stdout.contains("coincidence-count"));
}
