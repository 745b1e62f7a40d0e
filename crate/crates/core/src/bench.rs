//! Corpus manifests and the benchmark runner.
//!
//! A manifest is one JSON file listing cases; each case keeps its source,
//! cassettes and verifier fixtures together under `cases/<id>/`.

use std::collections::HashSet;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::llm::{LlmClient, LlmMode, ProviderConfig};
use crate::prompt::TaskKind;
use crate::repair::{Engine, LoopConfig, Outcome};
use crate::runlog::{Action, RunLog};
use crate::source::{SourceText, Span};
use crate::verifier::{
    Check, DafnyVerifier, Diagnostic, DiagnosticCategory, Severity, VerificationResult, Verifier, VerifierConfig,
    VerifierError, VerifierMode,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("duplicate case id {0}")]
    DuplicateId(String),
    #[error("case {id}: missing {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("manifest {path}: {message}")]
    ParseError { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expected {
    Success,
    Partial,
    Failure,
}

impl Expected {
    pub fn as_str(self) -> &'static str {
        match self {
            Expected::Success => "Success",
            Expected::Partial => "Partial",
            Expected::Failure => "Failure",
        }
    }
}

/// Per-case changes to the bench-wide loop settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopOverrides {
    pub max_rounds: Option<u32>,
    pub candidates_per_round: Option<u32>,
    pub allow_axioms: Option<bool>,
    pub enable_hint_commenting: Option<bool>,
    pub enable_witness_rewrite: Option<bool>,
}

impl LoopOverrides {
    pub fn apply(&self, base: &LoopConfig) -> LoopConfig {
        let mut c = base.clone();
        if let Some(v) = self.max_rounds {
            c.max_rounds = v;
        }
        if let Some(v) = self.candidates_per_round {
            c.candidates_per_round = v;
        }
        if let Some(v) = self.allow_axioms {
            c.allow_axioms = v;
        }
        if let Some(v) = self.enable_hint_commenting {
            c.enable_hint_commenting = v;
        }
        if let Some(v) = self.enable_witness_rewrite {
            c.enable_witness_rewrite = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub id: String,
    pub source: PathBuf,
    pub task: TaskKind,
    /// 1-based `(line, col)` of the obligation to work on.
    #[serde(default)]
    pub target: Option<(usize, usize)>,
    pub cassette_ref: PathBuf,
    /// Verifier fixtures; defaults to `fixtures/` next to the source.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    pub expected: Expected,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, rename = "loop")]
    pub loop_overrides: LoopOverrides,
}

impl CorpusCase {
    pub fn fixture_dir(&self) -> PathBuf {
        self.fixtures
            .clone()
            .unwrap_or_else(|| self.source.parent().unwrap_or(Path::new(".")).join("fixtures"))
    }

    pub fn target_diagnostic(&self) -> Option<Diagnostic> {
        self.target.map(|(line, col)| Diagnostic {
            severity: Severity::Error,
            span: Span::at(line, col),
            message: "selected obligation".into(),
            category: DiagnosticCategory::Other,
            related: Vec::new(),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    cases: Vec<CorpusCase>,
}

/// Reads a manifest; relative paths are taken from the manifest's
/// directory. Ids must be unique and every referenced path must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<CorpusCase>, BenchError> {
    let data = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&data)
        .map_err(|e| BenchError::ParseError { path: path.to_path_buf(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(manifest.cases.len());
    for mut c in manifest.cases {
        if !seen.insert(c.id.clone()) {
            return Err(BenchError::DuplicateId(c.id));
        }
        c.source = base.join(&c.source);
        c.cassette_ref = base.join(&c.cassette_ref);
        c.fixtures = c.fixtures.map(|f| base.join(f));
        for p in [c.source.clone(), c.cassette_ref.clone(), c.fixture_dir()] {
            if !p.exists() {
                return Err(BenchError::MissingFile { id: c.id.clone(), path: p });
            }
        }
        cases.push(c);
    }
    Ok(cases)
}

/// Counts full verifications and remembers the verifier version.
pub struct MeteredVerifier<V> {
    inner: V,
    verifies: AtomicUsize,
    resolves: AtomicUsize,
    version: Mutex<Option<String>>,
}

impl<V: Verifier> MeteredVerifier<V> {
    pub fn new(inner: V) -> Self {
        MeteredVerifier { inner, verifies: AtomicUsize::new(0), resolves: AtomicUsize::new(0), version: Mutex::new(None) }
    }

    pub fn verify_calls(&self) -> usize {
        self.verifies.load(Ordering::SeqCst)
    }

    pub fn resolve_calls(&self) -> usize {
        self.resolves.load(Ordering::SeqCst)
    }

    pub fn version(&self) -> Option<String> {
        self.version.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl<V: Verifier> Verifier for MeteredVerifier<V> {
    fn check(&self, check: Check, text: &SourceText) -> Result<VerificationResult, VerifierError> {
        match check {
            Check::Verify => self.verifies.fetch_add(1, Ordering::SeqCst),
            Check::Resolve => self.resolves.fetch_add(1, Ordering::SeqCst),
        };
        let r = self.inner.check(check, text)?;
        *self.version.lock().unwrap_or_else(|p| p.into_inner()) = Some(r.verifier_version.clone());
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub loop_cfg: LoopConfig,
    pub provider: ProviderConfig,
    pub verifier: VerifierConfig,
    /// Use each case's cassettes and fixtures instead of the configured
    /// modes.
    pub replay: bool,
    pub parallelism: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            loop_cfg: LoopConfig::default(),
            provider: ProviderConfig::default(),
            verifier: VerifierConfig::default(),
            replay: true,
            parallelism: default_parallelism(),
        }
    }
}

/// Processor count, capped at 4.
pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    pub task: TaskKind,
    pub expected: Expected,
    pub outcome: String,
    pub matches_expected: bool,
    pub rounds_used: u32,
    pub axioms_inserted: usize,
    pub llm_calls: usize,
    pub verifier_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub duration_s: f64,
}

fn rate<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("n/a"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub cases: usize,
    pub successes: usize,
    #[serde(serialize_with = "rate")]
    pub success_rate: Option<f64>,
    #[serde(serialize_with = "rate")]
    pub mean_rounds: Option<f64>,
    pub matching_expected: usize,
}

impl Aggregate {
    pub fn from_cases(cases: &[CaseReport]) -> Self {
        let n = cases.len();
        let successes = cases.iter().filter(|c| c.outcome == "Success").count();
        let rounds: u32 = cases.iter().map(|c| c.rounds_used).sum();
        Aggregate {
            cases: n,
            successes,
            success_rate: (n > 0).then(|| successes as f64 / n as f64),
            mean_rounds: (n > 0).then(|| rounds as f64 / n as f64),
            matching_expected: cases.iter().filter(|c| c.matches_expected).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub verifier_version: String,
    pub model_id: String,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub cases: Vec<CaseReport>,
    pub aggregate: Aggregate,
    pub environment: Environment,
}

impl BenchReport {
    /// The report with every duration zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.cases {
            c.duration_s = 0.0;
        }
        r
    }

    /// Every case ended the way the manifest says.
    pub fn all_match(&self) -> bool {
        self.cases.iter().all(|c| c.matches_expected)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let fmt_rate = |r: Option<f64>| r.map_or("n/a".to_string(), |x| format!("{:.1}%", x * 100.0));
        let mut md = String::from("# Bench report\n\n");
        md.push_str("| case | task | expected | outcome | rounds | axioms | LLM calls | time (s) |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for c in &self.cases {
            let mark = if c.matches_expected { "" } else { " (!)" };
            md.push_str(&format!(
                "| {} | {} | {} | {}{mark} | {} | {} | {} | {:.2} |\n",
                c.id,
                c.task,
                c.expected.as_str(),
                c.outcome,
                c.rounds_used,
                c.axioms_inserted,
                c.llm_calls,
                c.duration_s
            ));
        }
        let a = &self.aggregate;
        md.push_str(&format!(
            "\n- cases: {}\n- success rate: {}\n- mean rounds: {}\n- matching expected: {}/{}\n",
            a.cases,
            fmt_rate(a.success_rate),
            a.mean_rounds.map_or("n/a".to_string(), |m| format!("{m:.2}")),
            a.matching_expected,
            a.cases
        ));
        let e = &self.environment;
        md.push_str(&format!(
            "- verifier: {}\n- model: {}\n- engine: {}\n",
            e.verifier_version, e.model_id, e.engine_version
        ));
        md
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::write_atomic(&dir.join("report.json"), self.to_json().as_bytes())?;
        crate::write_atomic(&dir.join("report.md"), self.to_markdown().as_bytes())
    }
}

fn run_case(case: &CorpusCase, cfg: &BenchConfig) -> (CaseReport, Option<String>) {
    let started = Instant::now();
    let mut report = CaseReport {
        id: case.id.clone(),
        task: case.task,
        expected: case.expected,
        outcome: "Failure".into(),
        matches_expected: false,
        rounds_used: 0,
        axioms_inserted: 0,
        llm_calls: 0,
        verifier_calls: 0,
        reason: None,
        duration_s: 0.0,
    };
    let mut version = None;
    let result = (|| -> Result<(), String> {
        let (mut vcfg, mut pcfg) = (cfg.verifier.clone(), cfg.provider.clone());
        if cfg.replay {
            vcfg.mode = VerifierMode::Replay(case.fixture_dir());
            pcfg.mode = LlmMode::Replay(case.cassette_ref.clone());
        }
        let verifier = Arc::new(MeteredVerifier::new(DafnyVerifier::new(vcfg).map_err(|e| e.to_string())?));
        let llm = Arc::new(LlmClient::new(pcfg).map_err(|e| e.to_string())?);
        let log = Arc::new(RunLog::new());
        let engine = Engine::new(verifier.clone(), llm).with_log(log.clone());
        let text = SourceText::from_file(&case.source).map_err(|e| e.to_string())?;
        let target = case.target_diagnostic();
        let loop_cfg = case.loop_overrides.apply(&cfg.loop_cfg);
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
            engine.run_task(case.task, &text, target.as_ref(), &loop_cfg)
        }));
        report.llm_calls = log.count(Action::LlmCall);
        report.verifier_calls = verifier.verify_calls();
        version = verifier.version();
        let outcome = outcome.map_err(|_| "engine panicked".to_string())?.map_err(|e| e.to_string())?;
        report.outcome = outcome.label().to_string();
        // a round whose answer held no code leaves no attempt behind
        report.rounds_used = outcome.rounds_used().max(log.max_round(Action::LlmCall));
        report.axioms_inserted = outcome.axioms_inserted(&text);
        if let Outcome::Failure { reason, .. } = &outcome {
            report.reason = Some(reason.clone());
        }
        Ok(())
    })();
    if let Err(reason) = result {
        report.outcome = "Failure".into();
        report.reason = Some(reason);
    }
    report.matches_expected = report.outcome == case.expected.as_str();
    report.duration_s = started.elapsed().as_secs_f64();
    (report, version)
}

/// Runs every case on a pool of `cfg.parallelism` workers. A failing case
/// is reported as `Failure` with its reason; it never stops the others.
pub fn run_bench(cases: &[CorpusCase], cfg: &BenchConfig) -> BenchReport {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(CaseReport, Option<String>)>>> = Mutex::new(vec![None; cases.len()]);
    let workers = cfg.parallelism.clamp(1, cases.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = cases.get(i) else { break };
                let r = run_case(case, cfg);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    let done: Vec<(CaseReport, Option<String>)> =
        slots.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().map(|r| r.expect("every case ran")).collect();
    let mut versions: Vec<String> = done.iter().filter_map(|(_, v)| v.clone()).collect();
    versions.sort();
    versions.dedup();
    let cases: Vec<CaseReport> = done.into_iter().map(|(r, _)| r).collect();
    BenchReport {
        aggregate: Aggregate::from_cases(&cases),
        cases,
        environment: Environment {
            verifier_version: if versions.is_empty() { "unknown".into() } else { versions.join(", ") },
            model_id: cfg.provider.model_id.clone(),
            engine_version: crate::ENGINE_VERSION.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bench_reports_na() {
        let r = run_bench(&[], &BenchConfig::default());
        assert_eq!(r.aggregate.cases, 0);
        assert!(r.to_json().contains("\"success_rate\": \"n/a\""));
        assert!(r.to_markdown().contains("success rate: n/a"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("c/fixtures")).unwrap();
        std::fs::write(dir.path().join("c/source.dfy"), "").unwrap();
        let case = r#"{"id":"x","source":"c/source.dfy","task":"Repair","cassette_ref":"c","expected":"Success"}"#;
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, format!(r#"{{"cases":[{case},{case}]}}"#)).unwrap();
        assert!(matches!(load_manifest(&path), Err(BenchError::DuplicateId(id)) if id == "x"));
        std::fs::write(&path, format!(r#"{{"cases":[{case}]}}"#)).unwrap();
        assert_eq!(load_manifest(&path).unwrap().len(), 1);
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(load_manifest(&path), Err(BenchError::ParseError { .. })));
    }
}
