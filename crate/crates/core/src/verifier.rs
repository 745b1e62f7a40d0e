//! Running the Dafny verifier and reading what it says.
//!
//! Two backends sit behind the [`Verifier`] trait: a subprocess that runs a
//! real `dafny` binary, and a replay store of recorded results keyed by the
//! content hash of the verified text. Record mode runs the subprocess and
//! writes each result into the store.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::source::{scan_declarations, ContentHash, DeclKind, SourceText, Span};

/// Verifier release the shipped fixtures were recorded against.
pub const DEFAULT_DAFNY_VERSION: &str = "4.3.0";

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("verifier executable not found: {0}")]
    VerifierNotFound(PathBuf),
    #[error("no replay fixture for content hash {0}")]
    ReplayMiss(ContentHash),
    #[error("fixture directory {0} does not exist")]
    MissingFixtureDir(PathBuf),
    #[error("invalid verifier configuration: {0}")]
    InvalidConfig(String),
    #[error("bad fixture {path}: {source}")]
    BadFixture { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticCategory {
    InvariantNotMaintained,
    InvariantOnEntry,
    PostconditionViolation,
    PreconditionViolation,
    AssertionViolation,
    TerminationFailure,
    SyntaxOrResolution,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Related {
    pub span: Span,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub span: Span,
    pub message: String,
    pub category: DiagnosticCategory,
    #[serde(default)]
    pub related: Vec<Related>,
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// Resolves the byte offsets of this diagnostic against the verified text.
    pub fn anchor(&mut self, text: &SourceText) {
        if let Ok(span) = text.anchor(&self.span) {
            self.span = span;
        }
        for r in &mut self.related {
            if let Ok(span) = text.anchor(&r.span) {
                r.span = span;
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    rule: Vec<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
struct Rule {
    pattern: String,
    category: DiagnosticCategory,
}

/// Ordered substring rules mapping messages to categories.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: Vec<Rule>,
}

impl RuleTable {
    pub fn from_toml(src: &str) -> Result<Self, toml::de::Error> {
        let mut file: RuleFile = toml::from_str(src)?;
        for r in &mut file.rule {
            r.pattern = r.pattern.to_lowercase();
        }
        Ok(RuleTable { rules: file.rule })
    }

    pub fn builtin() -> &'static RuleTable {
        static TABLE: OnceLock<RuleTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            RuleTable::from_toml(include_str!("../rules/diagnostic_categories.toml"))
                .expect("builtin rule table parses")
        })
    }

    pub fn classify(&self, message: &str) -> DiagnosticCategory {
        let msg = message.to_lowercase();
        let mut best: Option<&Rule> = None;
        for r in &self.rules {
            if msg.contains(&r.pattern) && best.is_none_or(|b| r.pattern.len() > b.pattern.len()) {
                best = Some(r);
            }
        }
        best.map_or(DiagnosticCategory::Other, |r| r.category)
    }
}

pub fn classify_diagnostic(message: &str) -> DiagnosticCategory {
    RuleTable::builtin().classify(message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationStatus {
    Verified,
    Failed,
    Timeout,
    CrashedOrUnparsable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub content_hash: ContentHash,
    pub status: VerificationStatus,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub duration_s: f64,
    pub raw_output: String,
    pub verifier_version: String,
}

impl VerificationResult {
    pub fn is_verified(&self) -> bool {
        self.status == VerificationStatus::Verified
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    /// First error in document order.
    pub fn first_error(&self) -> Option<&Diagnostic> {
        self.errors().min_by_key(|d| (d.span.start_line, d.span.start_col))
    }

    /// Same result without the timing field, for determinism checks.
    pub fn without_timing(&self) -> Self {
        VerificationResult { duration_s: 0.0, ..self.clone() }
    }
}

/// What the verifier printed, before it is tied to a particular text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub status: VerificationStatus,
    pub diagnostics: Vec<Diagnostic>,
}

struct Patterns {
    diag: Regex,
    caret: Regex,
    finished: Regex,
    parse_errors: Regex,
    resolution_errors: Regex,
    not_attempted: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        diag: Regex::new(
            r"^(?P<file>.*?)\((?P<line>\d+),(?P<col>\d+)\):\s*(?P<kind>Error|Warning|Related location|Related message)(?: [A-Z]+\d+)?:?\s*(?P<msg>.*)$",
        )
        .unwrap(),
        caret: Regex::new(r"^\s*\|(?P<pad> *)(?P<carets>\^+)\s*$").unwrap(),
        finished: Regex::new(
            r"Dafny program verifier finished with (\d+) verified, (\d+) errors?(?:, (\d+) time outs?)?",
        )
        .unwrap(),
        parse_errors: Regex::new(r"^(\d+) parse errors? detected in").unwrap(),
        resolution_errors: Regex::new(r"^(\d+) resolution/type errors? detected in").unwrap(),
        not_attempted: Regex::new(r"Dafny program verifier did not attempt verification").unwrap(),
    })
}

#[derive(Debug, Deserialize)]
struct JsonDiag {
    location: JsonLocation,
    severity: u8,
    message: String,
    #[serde(default, rename = "relatedInformation")]
    related: Vec<JsonRelated>,
}

#[derive(Debug, Deserialize)]
struct JsonLocation {
    range: JsonRange,
}

#[derive(Debug, Deserialize)]
struct JsonRange {
    start: JsonPos,
    end: JsonPos,
}

#[derive(Debug, Deserialize)]
struct JsonPos {
    line: usize,
    character: usize,
}

#[derive(Debug, Deserialize)]
struct JsonRelated {
    location: JsonLocation,
    message: String,
}

fn json_span(r: &JsonRange) -> Span {
    Span {
        start_line: r.start.line,
        start_col: r.start.character + 1,
        end_line: r.end.line,
        end_col: r.end.character + 1,
        start_off: 0,
        end_off: 0,
    }
}

/// Parses verifier output. Understands the plain-text format
/// (`file(line,col): Error: message`, optional caret snippets and
/// `Related location` lines) and one-JSON-object-per-line diagnostics.
/// Never fails: output without a recognizable summary is reported as
/// [`VerificationStatus::CrashedOrUnparsable`].
pub fn parse_diagnostics(raw: &str) -> ParsedOutput {
    parse_with_files(raw).0
}

/// File names of the diagnostics reported by [`parse_diagnostics`], in the
/// same order (`None` for JSON diagnostics).
fn parsed_files(raw: &str) -> Vec<Option<String>> {
    parse_with_files(raw).1
}

fn parse_with_files(raw: &str) -> (ParsedOutput, Vec<Option<String>>) {
    let p = patterns();
    let mut files: Vec<Option<String>> = Vec::new();
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut summary: Option<(usize, usize)> = None; // (errors, time outs)
    let mut snippet_for: Option<usize> = None;

    for line in raw.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('{') {
            if let Ok(j) = serde_json::from_str::<JsonDiag>(trimmed) {
                let severity = if j.severity == 1 { Severity::Error } else { Severity::Warning };
                files.push(None);
                diags.push(Diagnostic {
                    severity,
                    span: json_span(&j.location.range),
                    category: classify_diagnostic(&j.message),
                    message: j.message,
                    related: j
                        .related
                        .iter()
                        .map(|r| Related { span: json_span(&r.location.range), message: r.message.clone() })
                        .collect(),
                });
                continue;
            }
        }
        if let Some(c) = p.diag.captures(line) {
            let line_no: usize = c["line"].parse().unwrap_or(0);
            let col: usize = c["col"].parse().unwrap_or(0);
            let msg = c["msg"].trim().to_string();
            match &c["kind"] {
                "Related location" | "Related message" => {
                    if let Some(last) = diags.last_mut() {
                        last.related.push(Related { span: Span::at(line_no, col), message: msg });
                    }
                    snippet_for = None;
                }
                kind => {
                    let severity = if kind == "Error" { Severity::Error } else { Severity::Warning };
                    files.push(Some(c["file"].to_string()));
                    diags.push(Diagnostic {
                        severity,
                        span: Span::at(line_no, col),
                        category: classify_diagnostic(&msg),
                        message: msg,
                        related: Vec::new(),
                    });
                    snippet_for = Some(diags.len() - 1);
                }
            }
            continue;
        }
        if let (Some(idx), Some(c)) = (snippet_for, p.caret.captures(line)) {
            // `  |   ^^^^` — the pipe is followed by one space, then the source line
            let start_col = c["pad"].chars().count();
            let d = &mut diags[idx];
            if start_col == d.span.start_col {
                d.span.end_col = start_col + c["carets"].len();
            }
            snippet_for = None;
            continue;
        }
        if let Some(c) = p.finished.captures(trimmed) {
            let errors = c[2].parse().unwrap_or(0);
            let timeouts = c.get(3).map_or(0, |m| m.as_str().parse().unwrap_or(0));
            summary = Some((errors, timeouts));
        } else if let Some(c) = p.parse_errors.captures(trimmed).or_else(|| p.resolution_errors.captures(trimmed)) {
            summary = Some((c[1].parse().unwrap_or(1).max(1), 0));
        } else if p.not_attempted.is_match(trimmed) && summary.is_none() {
            summary = Some((0, 0));
        }
    }

    let errors = diags.iter().filter(|d| d.is_error()).count();
    let status = match summary {
        None => VerificationStatus::CrashedOrUnparsable,
        // timed-out members are also printed as errors
        Some((0, t)) if t > 0 => VerificationStatus::Timeout,
        Some(_) if errors > 0 => VerificationStatus::Failed,
        Some((0, _)) => VerificationStatus::Verified,
        // the summary counts errors that were not printed in a known format
        Some(_) => VerificationStatus::CrashedOrUnparsable,
    };
    (ParsedOutput { status, diagnostics: diags }, files)
}

/// Which verifier pass to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    /// Full verification.
    Verify,
    /// Parse and resolve only.
    Resolve,
}

impl Check {
    fn subcommand(self) -> &'static str {
        match self {
            Check::Verify => "verify",
            Check::Resolve => "resolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "dir")]
pub enum VerifierMode {
    Subprocess,
    Replay(PathBuf),
    Record(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub executable: PathBuf,
    pub extra_args: Vec<String>,
    pub timeout_s: u64,
    pub mode: VerifierMode,
    pub expected_version: Option<String>,
    /// Ask the verifier for one-JSON-object-per-line diagnostics.
    pub json_diagnostics: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            executable: PathBuf::from("dafny"),
            extra_args: Vec::new(),
            timeout_s: 60,
            mode: VerifierMode::Subprocess,
            expected_version: Some(DEFAULT_DAFNY_VERSION.to_string()),
            json_diagnostics: false,
        }
    }
}

impl VerifierConfig {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        VerifierConfig { mode: VerifierMode::Replay(dir.into()), ..Default::default() }
    }
}

/// Anything that can check a Dafny text.
pub trait Verifier: Send + Sync {
    fn check(&self, check: Check, text: &SourceText) -> Result<VerificationResult, VerifierError>;

    fn verify(&self, text: &SourceText) -> Result<VerificationResult, VerifierError> {
        self.check(Check::Verify, text)
    }

    fn resolve(&self, text: &SourceText) -> Result<VerificationResult, VerifierError> {
        self.check(Check::Resolve, text)
    }
}

/// A recorded verifier result, stored as `<content_hash>.json` (full
/// verification) or `<content_hash>.resolve.json` (resolution only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub content_hash: ContentHash,
    #[serde(default = "default_check")]
    pub check: Check,
    pub raw_output: String,
    pub status: VerificationStatus,
    pub diagnostics: Vec<Diagnostic>,
    pub verifier_version: String,
    #[serde(default)]
    pub duration_s: f64,
}

fn default_check() -> Check {
    Check::Verify
}

impl Fixture {
    pub fn from_result(check: Check, r: &VerificationResult) -> Self {
        Fixture {
            content_hash: r.content_hash.clone(),
            check,
            raw_output: r.raw_output.clone(),
            status: r.status,
            diagnostics: r.diagnostics.clone(),
            verifier_version: r.verifier_version.clone(),
            duration_s: r.duration_s,
        }
    }

    pub fn into_result(self) -> VerificationResult {
        VerificationResult {
            content_hash: self.content_hash,
            status: self.status,
            diagnostics: self.diagnostics,
            duration_s: self.duration_s,
            raw_output: self.raw_output,
            verifier_version: self.verifier_version,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, VerifierError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(VerifierError::MissingFixtureDir(dir));
        }
        Ok(FixtureStore { dir })
    }

    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, VerifierError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(FixtureStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, check: Check, hash: &ContentHash) -> PathBuf {
        match check {
            Check::Verify => self.dir.join(format!("{hash}.json")),
            Check::Resolve => self.dir.join(format!("{hash}.resolve.json")),
        }
    }

    pub fn load(&self, check: Check, hash: &ContentHash) -> Result<Fixture, VerifierError> {
        let path = self.path_for(check, hash);
        let data = match std::fs::read_to_string(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(VerifierError::ReplayMiss(hash.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&data).map_err(|source| VerifierError::BadFixture { path, source })
    }

    pub fn save(&self, fixture: &Fixture) -> Result<PathBuf, VerifierError> {
        let path = self.path_for(fixture.check, &fixture.content_hash);
        let json = serde_json::to_string_pretty(fixture).expect("fixtures serialize");
        crate::write_atomic(&path, format!("{json}\n").as_bytes())?;
        Ok(path)
    }
}

/// The Dafny backend, configured by a [`VerifierConfig`].
#[derive(Debug)]
pub struct DafnyVerifier {
    cfg: VerifierConfig,
    store: Option<FixtureStore>,
    version: OnceLock<String>,
}

impl DafnyVerifier {
    pub fn new(cfg: VerifierConfig) -> Result<Self, VerifierError> {
        if cfg.timeout_s == 0 {
            return Err(VerifierError::InvalidConfig("timeout_s must be positive".into()));
        }
        let store = match &cfg.mode {
            VerifierMode::Subprocess => None,
            VerifierMode::Replay(dir) => Some(FixtureStore::open(dir)?),
            VerifierMode::Record(dir) => Some(FixtureStore::create(dir)?),
        };
        Ok(DafnyVerifier { cfg, store, version: OnceLock::new() })
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.cfg
    }

    fn version(&self) -> String {
        self.version
            .get_or_init(|| {
                let v = Command::new(&self.cfg.executable)
                    .arg("--version")
                    .stdin(Stdio::null())
                    .output()
                    .ok()
                    .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
                    .filter(|v| !v.is_empty())
                    .unwrap_or_else(|| "unknown".to_string());
                if let Some(expected) = &self.cfg.expected_version {
                    if !v.starts_with(expected.as_str()) {
                        tracing::warn!(found = %v, expected = %expected, "unexpected verifier version");
                    }
                }
                v
            })
            .clone()
    }

    fn run_subprocess(&self, check: Check, text: &SourceText) -> Result<VerificationResult, VerifierError> {
        // the workspace (and the copy inside it) is removed on every exit path
        let workspace = tempfile::tempdir()?;
        let file_name = text
            .path()
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_else(|| "input.dfy".into());
        let file = workspace.path().join(file_name);
        std::fs::write(&file, text.to_disk_string())?;

        let mut cmd = Command::new(&self.cfg.executable);
        cmd.arg(check.subcommand());
        if self.cfg.json_diagnostics {
            cmd.arg("--json-diagnostics");
        }
        cmd.args(&self.cfg.extra_args)
            .arg(&file)
            .current_dir(workspace.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => VerifierError::VerifierNotFound(self.cfg.executable.clone()),
            _ => VerifierError::Io(e),
        })?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let finished = child.wait_timeout(Duration::from_secs(self.cfg.timeout_s))?;
        let timed_out = finished.is_none();
        if timed_out {
            let _ = child.kill();
            let _ = child.wait();
        }
        let mut raw = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !err.is_empty() {
            if !raw.is_empty() && !raw.ends_with('\n') {
                raw.push('\n');
            }
            raw.push_str(&err);
        }
        let duration_s = started.elapsed().as_secs_f64();
        let mut result = result_from_output(text, &raw, duration_s, self.version());
        if timed_out {
            result.status = VerificationStatus::Timeout;
        }
        Ok(result)
    }
}

/// Builds the result for `text` from what the verifier printed: parses
/// it, anchors spans to `text`, and drops diagnostics that point into
/// other files.
pub fn result_from_output(text: &SourceText, raw: &str, duration_s: f64, verifier_version: String) -> VerificationResult {
    let mut parsed = parse_diagnostics(raw);
    let base = text.path().file_name().map(|n| n.to_string_lossy().into_owned());
    for d in &mut parsed.diagnostics {
        d.anchor(text);
    }
    // diagnostics against included files are left in raw_output only
    if let Some(base) = base {
        let mut files = parsed_files(raw).into_iter();
        parsed.diagnostics.retain(|_| files.next().flatten().is_none_or(|f| f.ends_with(base.as_str())));
        if !parsed.diagnostics.iter().any(|d| d.is_error()) && parsed.status == VerificationStatus::Failed {
            parsed.status = VerificationStatus::Verified;
        }
    }
    VerificationResult {
        content_hash: text.content_hash().clone(),
        status: parsed.status,
        diagnostics: parsed.diagnostics,
        duration_s,
        raw_output: raw.to_string(),
        verifier_version,
    }
}

impl Verifier for DafnyVerifier {
    fn check(&self, check: Check, text: &SourceText) -> Result<VerificationResult, VerifierError> {
        match (&self.cfg.mode, &self.store) {
            (VerifierMode::Replay(_), Some(store)) => {
                Ok(store.load(check, text.content_hash())?.into_result())
            }
            (VerifierMode::Record(_), Some(store)) => {
                let result = self.run_subprocess(check, text)?;
                store.save(&Fixture::from_result(check, &result))?;
                Ok(result)
            }
            _ => self.run_subprocess(check, text),
        }
    }
}

/// Message used for lemmas that are assumed without proof.
pub fn unproven_lemma_message(name: &str) -> String {
    format!("lemma '{name}' has no body: give it a proof or mark it {{:axiom}}")
}

/// Adds an error for every lemma that has no body and no `{:axiom}`
/// attribute. The verifier silently assumes such lemmas; the engine treats
/// them as open obligations. A verified result with such lemmas becomes
/// failed. `raw_output` is left untouched.
pub fn flag_unproven_lemmas(text: &SourceText, result: &mut VerificationResult) {
    let mut added = 0;
    for d in scan_declarations(text) {
        if d.kind != DeclKind::Lemma || d.body.is_some() || d.has_attribute(text, "axiom") {
            continue;
        }
        let header_line_end = text
            .line_range(d.header_extent.start_line)
            .map_or(d.header_extent.end_off, |(_, e)| e.min(d.header_extent.end_off));
        let span = text.span(d.header_extent.start_off, header_line_end).unwrap_or(d.header_extent);
        result.diagnostics.push(Diagnostic {
            severity: Severity::Error,
            span,
            message: unproven_lemma_message(&d.name),
            category: DiagnosticCategory::Other,
            related: Vec::new(),
        });
        added += 1;
    }
    if added > 0 && result.status == VerificationStatus::Verified {
        result.status = VerificationStatus::Failed;
    }
}

/// Names of lemmas without a body or `{:axiom}` attribute.
pub fn unproven_lemmas(text: &SourceText) -> Vec<String> {
    scan_declarations(text)
        .into_iter()
        .filter(|d| d.kind == DeclKind::Lemma && d.body.is_none() && !d.has_attribute(text, "axiom"))
        .map(|d| d.name)
        .collect()
}
