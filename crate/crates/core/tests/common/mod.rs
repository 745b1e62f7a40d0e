//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use dafny_pilot::bench::{load_manifest, CorpusCase};
use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::repair::{Engine, LoopConfig};
use dafny_pilot::runlog::RunLog;
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};

pub fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn manifest() -> PathBuf {
    corpus().join("manifest.json")
}

pub fn case(id: &str) -> CorpusCase {
    load_manifest(&manifest()).unwrap().into_iter().find(|c| c.id == id).unwrap_or_else(|| panic!("no case {id}"))
}

/// Engine over the case's fixtures and cassettes, with its own run log.
pub fn replay_engine(c: &CorpusCase) -> (Engine, Arc<RunLog>) {
    let verifier = DafnyVerifier::new(VerifierConfig::replay(c.fixture_dir())).unwrap();
    let llm = LlmClient::new(ProviderConfig::replay(&c.cassette_ref)).unwrap();
    let log = Arc::new(RunLog::new());
    (Engine::new(Arc::new(verifier), Arc::new(llm)).with_log(log.clone()), log)
}

pub fn loop_cfg(c: &CorpusCase) -> LoopConfig {
    c.loop_overrides.apply(&LoopConfig::default())
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `dafny-pilot` binary with a clean `DAFNY_PILOT_*` environment.
pub fn cli(args: &[&str], cwd: &Path) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_dafny-pilot"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DAFNY_PILOT_DAFNY")
        .env_remove("DAFNY_PILOT_MODEL")
        .env_remove("DAFNY_PILOT_ENDPOINT")
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// `--llm replay:… --verifier replay:…` for a case.
pub fn replay_args(c: &CorpusCase) -> Vec<String> {
    vec![
        "--llm".into(),
        format!("replay:{}", c.cassette_ref.display()),
        "--verifier".into(),
        format!("replay:{}", c.fixture_dir().display()),
    ]
}

/// A `dafny` executable on PATH (or `DAFNY_PILOT_DAFNY`), if any.
pub fn installed_dafny() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("DAFNY_PILOT_DAFNY") {
        return Some(PathBuf::from(p));
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths).map(|d| d.join("dafny")).find(|p| p.is_file())
    })
}
