//! The `dafny-pilot` command line.
//!
//! Settings are layered: flags, then `dafny-pilot.toml` in the working
//! directory (or `--config`), then `DAFNY_PILOT_*` environment variables,
//! then defaults. The model key is only ever read from the environment
//! variable named by `api_key_env`.
//!
//! Exit codes: 0 success, 2 partial, 3 failure, 64 usage error, 70
//! internal error. `bench` exits 0 when every case ends as expected and 2
//! otherwise.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::bench::{default_parallelism, load_manifest, run_bench, BenchConfig};
use crate::llm::{LlmClient, LlmMode, ProviderConfig};
use crate::prompt::{TaskKind, TemplateSet};
use crate::repair::{Engine, LoopConfig, Outcome, TextTaskInput};
use crate::runlog::{Action, RunLog};
use crate::service::{AppState, DEFAULT_BIND};
use crate::source::{unified_diff, SourceText, Span};
use crate::verifier::{DafnyVerifier, Diagnostic, DiagnosticCategory, Severity, VerifierConfig, VerifierMode};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INTERNAL: i32 = 70;

pub const CONFIG_FILE: &str = "dafny-pilot.toml";

#[derive(Debug, Parser)]
#[command(name = "dafny-pilot", version, about = "LLM-assisted lemma inference, proof inference and repair for Dafny")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repair a program that does not verify.
    Fix(TaskArgs),
    /// Suggest lemmas (and calls to them) for a failing obligation.
    Lemmas(TaskArgs),
    /// Write a proof for a lemma the verifier does not accept.
    Prove(TaskArgs),
    /// Explain a verifier error in plain language.
    Explain(TaskArgs),
    /// Translate a natural-language requirement into a Dafny specification.
    Translate(TranslateArgs),
    /// Run a corpus manifest and write report.json and report.md.
    Bench(BenchArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Patch,
    Json,
    Text,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Model access: `live`, `record:DIR` or `replay:DIR`.
    #[arg(long, value_name = "MODE")]
    pub llm: Option<String>,
    /// Verifier access: `subprocess`, `record:DIR` or `replay:DIR`.
    #[arg(long, value_name = "MODE")]
    pub verifier: Option<String>,
    /// Path of the Dafny executable.
    #[arg(long, value_name = "PATH")]
    pub dafny: Option<PathBuf>,
    /// Extra argument for every verifier run; repeatable.
    #[arg(long = "dafny-arg", value_name = "ARG", allow_hyphen_values = true)]
    pub dafny_args: Vec<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Chat-completions endpoint URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_rounds: Option<u32>,
    /// Candidates requested per round.
    #[arg(long, value_name = "N")]
    pub candidates: Option<u32>,
    /// Let the loop turn unproven lemmas into axioms as a last resort.
    #[arg(long, conflicts_with = "forbid_axioms")]
    pub allow_axioms: bool,
    #[arg(long)]
    pub forbid_axioms: bool,
    #[arg(long)]
    pub no_hint_commenting: bool,
    #[arg(long)]
    pub no_witness_rewrite: bool,
    /// Verifier timeout in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub timeout: Option<u64>,
    /// Prompt budget in tokens.
    #[arg(long, value_name = "TOKENS")]
    pub budget: Option<usize>,
    /// Append the run log (JSON lines) to this file.
    #[arg(long, value_name = "PATH")]
    pub run_log: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory with template overrides (`<task>.tmpl`).
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    pub file: PathBuf,
    /// Obligation to work on, as LINE:COL (default: first error).
    #[arg(long, value_name = "LINE:COL", value_parser = parse_target)]
    pub target: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Apply a successful result to FILE in place.
    #[arg(long)]
    pub write: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    /// File holding the requirement; use --text to pass it inline.
    #[arg(required_unless_present = "text", conflicts_with = "text")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    pub manifest: PathBuf,
    /// Use each case's cassettes and verifier fixtures.
    #[arg(long)]
    pub replay: bool,
    /// Where report.json and report.md go.
    #[arg(long, value_name = "DIR", default_value = "bench-report")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = DEFAULT_BIND)]
    pub bind: SocketAddr,
    /// Static files for /ui/ (default: ./ui if present).
    #[arg(long, value_name = "DIR")]
    pub ui: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_target(s: &str) -> Result<(usize, usize), String> {
    let (l, c) = s.split_once(':').ok_or("expected LINE:COL")?;
    let l: usize = l.parse().map_err(|_| "bad line")?;
    let c: usize = c.parse().map_err(|_| "bad column")?;
    if l == 0 || c == 0 {
        return Err("positions are 1-based".into());
    }
    Ok((l, c))
}

/// Keys accepted in `dafny-pilot.toml`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub llm: Option<String>,
    pub verifier: Option<String>,
    pub dafny: Option<PathBuf>,
    pub dafny_args: Option<Vec<String>>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub temperature: Option<f64>,
    pub api_key_env: Option<String>,
    pub max_rounds: Option<u32>,
    pub candidates: Option<u32>,
    pub allow_axioms: Option<bool>,
    pub hint_commenting: Option<bool>,
    pub witness_rewrite: Option<bool>,
    pub timeout: Option<u64>,
    pub budget: Option<usize>,
    pub templates: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub provider: ProviderConfig,
    pub verifier: VerifierConfig,
    pub loop_cfg: LoopConfig,
    pub templates: Option<PathBuf>,
}

#[derive(Debug)]
pub struct UsageError(pub String);

fn parse_mode(s: &str, what: &str) -> Result<(String, Option<PathBuf>), UsageError> {
    match s.split_once(':') {
        Some((m @ ("replay" | "record"), dir)) if !dir.is_empty() => Ok((m.to_string(), Some(PathBuf::from(dir)))),
        None if s == "live" || s == "subprocess" => Ok((s.to_string(), None)),
        _ => Err(UsageError(format!("bad {what} mode {s:?}"))),
    }
}

impl Settings {
    /// Layers flags over the config file over `env` over defaults.
    pub fn resolve(
        flags: &CommonArgs,
        file: &FileConfig,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Settings, UsageError> {
        let mut provider = ProviderConfig::default();
        let mut verifier = VerifierConfig::default();
        let mut loop_cfg = LoopConfig::default();

        if let Some(v) = env("DAFNY_PILOT_DAFNY") {
            verifier.executable = v.into();
        }
        if let Some(v) = env("DAFNY_PILOT_MODEL") {
            provider.model_id = v;
        }
        if let Some(v) = env("DAFNY_PILOT_ENDPOINT") {
            provider.endpoint_url = v;
        }

        let pick = |flag: Option<String>, file: Option<String>| flag.or(file);
        if let Some(m) = pick(flags.llm.clone(), file.llm.clone()) {
            provider.mode = match parse_mode(&m, "llm")? {
                (m, None) if m == "live" => LlmMode::Live,
                (m, Some(d)) if m == "replay" => LlmMode::Replay(d),
                (m, Some(d)) if m == "record" => LlmMode::Record(d),
                _ => return Err(UsageError(format!("bad llm mode {m:?}"))),
            };
        }
        if let Some(m) = pick(flags.verifier.clone(), file.verifier.clone()) {
            verifier.mode = match parse_mode(&m, "verifier")? {
                (m, None) if m == "subprocess" => VerifierMode::Subprocess,
                (m, Some(d)) if m == "replay" => VerifierMode::Replay(d),
                (m, Some(d)) if m == "record" => VerifierMode::Record(d),
                _ => return Err(UsageError(format!("bad verifier mode {m:?}"))),
            };
        }
        if let Some(v) = flags.dafny.clone().or(file.dafny.clone()) {
            verifier.executable = v;
        }
        if !flags.dafny_args.is_empty() {
            verifier.extra_args = flags.dafny_args.clone();
        } else if let Some(a) = file.dafny_args.clone() {
            verifier.extra_args = a;
        }
        if let Some(v) = pick(flags.model.clone(), file.model.clone()) {
            provider.model_id = v;
        }
        if let Some(v) = pick(flags.endpoint.clone(), file.endpoint.clone()) {
            provider.endpoint_url = v;
        }
        if let Some(v) = flags.temperature.or(file.temperature) {
            provider.temperature = v;
        }
        if let Some(v) = file.api_key_env.clone() {
            provider.api_key_env = v;
        }
        if let Some(v) = flags.max_rounds.or(file.max_rounds) {
            loop_cfg.max_rounds = v;
        }
        if let Some(v) = flags.candidates.or(file.candidates) {
            loop_cfg.candidates_per_round = v;
        }
        loop_cfg.allow_axioms = if flags.allow_axioms {
            true
        } else if flags.forbid_axioms {
            false
        } else {
            file.allow_axioms.unwrap_or(false)
        };
        loop_cfg.enable_hint_commenting = !flags.no_hint_commenting && file.hint_commenting.unwrap_or(true);
        loop_cfg.enable_witness_rewrite = !flags.no_witness_rewrite && file.witness_rewrite.unwrap_or(true);
        if let Some(v) = flags.timeout.or(file.timeout) {
            verifier.timeout_s = v;
            loop_cfg.verify_timeout_s = v;
        }
        if let Some(v) = flags.budget.or(file.budget) {
            loop_cfg.budget_tokens = v;
        }
        if loop_cfg.max_rounds == 0 || loop_cfg.candidates_per_round == 0 || loop_cfg.budget_tokens == 0 {
            return Err(UsageError("--max-rounds, --candidates and --budget must be positive".into()));
        }
        if verifier.timeout_s == 0 {
            return Err(UsageError("--timeout must be positive".into()));
        }
        Ok(Settings { provider, verifier, loop_cfg, templates: flags.templates.clone().or(file.templates.clone()) })
    }
}

fn load_file_config(flags: &CommonArgs) -> Result<FileConfig, UsageError> {
    let (path, required) = match &flags.config {
        Some(p) => (p.clone(), true),
        None => (PathBuf::from(CONFIG_FILE), false),
    };
    match std::fs::read_to_string(&path) {
        Ok(s) => toml::from_str(&s).map_err(|e| UsageError(format!("{}: {e}", path.display()))),
        Err(_) if !required => Ok(FileConfig::default()),
        Err(e) => Err(UsageError(format!("{}: {e}", path.display()))),
    }
}

fn settings(flags: &CommonArgs) -> Result<Settings, UsageError> {
    let file = load_file_config(flags)?;
    Settings::resolve(flags, &file, &|k| std::env::var(k).ok().filter(|v| !v.is_empty()))
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn build_engine(s: &Settings, log: Arc<RunLog>) -> Result<Engine, Failure> {
    let verifier = Arc::new(DafnyVerifier::new(s.verifier.clone()).map_err(internal)?);
    let llm = Arc::new(LlmClient::new(s.provider.clone()).map_err(internal)?);
    let templates = match &s.templates {
        Some(dir) => TemplateSet::with_overrides(dir).map_err(internal)?,
        None => TemplateSet::builtin(),
    };
    Ok(Engine::new(verifier, llm).with_log(log).with_templates(templates))
}

fn run_log(flags: &CommonArgs) -> Result<Arc<RunLog>, Failure> {
    Ok(Arc::new(match &flags.run_log {
        Some(p) => RunLog::with_file(p).map_err(internal)?,
        None => RunLog::new(),
    }))
}

fn target_diag(t: Option<(usize, usize)>) -> Option<Diagnostic> {
    t.map(|(line, col)| Diagnostic {
        severity: Severity::Error,
        span: Span::at(line, col),
        message: "selected obligation".into(),
        category: DiagnosticCategory::Other,
        related: Vec::new(),
    })
}

fn exit_for(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Success { .. } => EXIT_SUCCESS,
        Outcome::Partial { .. } => EXIT_PARTIAL,
        Outcome::Failure { .. } => EXIT_FAILURE,
    }
}

fn run_loop_task(task: TaskKind, a: &TaskArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let s = settings(&a.common)?;
    let log = run_log(&a.common)?;
    let engine = build_engine(&s, log)?;
    let text = SourceText::from_file(&a.file).map_err(|e| Failure::Usage(format!("{}: {e}", a.file.display())))?;
    let outcome = engine.run_task(task, &text, target_diag(a.target).as_ref(), &s.loop_cfg).map_err(internal)?;
    let proposed = outcome.proposed_text().unwrap_or(text.content());
    let diff = unified_diff(&a.file, text.content(), proposed);
    let code = exit_for(&outcome);
    let rounds = outcome.rounds_used().max(engine.log.max_round(Action::LlmCall));

    match a.format.unwrap_or(Format::Patch) {
        Format::Patch => out.write_all(diff.as_bytes()).map_err(internal)?,
        Format::Json => {
            let v = json!({
                "outcome": outcome.label(),
                "rounds_used": rounds,
                "axioms_inserted": outcome.axioms_inserted(&text),
                "diff": diff,
                "detail": outcome,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("outcomes serialize")).map_err(internal)?;
        }
        Format::Text => {
            writeln!(
                out,
                "{}: {} after {} round(s), {} attempt(s), {} axiom(s) inserted",
                a.file.display(),
                outcome.label(),
                rounds,
                outcome.attempts().len(),
                outcome.axioms_inserted(&text)
            )
            .map_err(internal)?;
            if let Outcome::Failure { reason, .. } = &outcome {
                writeln!(out, "reason: {reason}").map_err(internal)?;
            }
        }
    }
    if a.write {
        if let Outcome::Success { final_text, .. } = &outcome {
            let updated = text.with_content(final_text.clone());
            crate::write_atomic(&a.file, updated.to_disk_string().as_bytes()).map_err(internal)?;
        } else {
            let _ = writeln!(err, "not writing {}: the result is {}", a.file.display(), outcome.label());
        }
    }
    Ok(code)
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Fix(a) => run_loop_task(TaskKind::Repair, &a, out, err),
        Command::Lemmas(a) => run_loop_task(TaskKind::LemmaInference, &a, out, err),
        Command::Prove(a) => run_loop_task(TaskKind::ProofInference, &a, out, err),
        Command::Explain(a) => {
            let s = settings(&a.common)?;
            let engine = build_engine(&s, run_log(&a.common)?)?;
            let text = SourceText::from_file(&a.file).map_err(|e| Failure::Usage(format!("{}: {e}", a.file.display())))?;
            let input = TextTaskInput::Explain { text, target: target_diag(a.target) };
            match engine.run_text_task(TaskKind::Explain, input, s.loop_cfg.budget_tokens) {
                Ok(t) => {
                    writeln!(out, "{}", t.trim_end()).map_err(internal)?;
                    Ok(EXIT_SUCCESS)
                }
                Err(crate::repair::RepairError::NothingToExplain) => {
                    let _ = writeln!(err, "{} verifies; nothing to explain", a.file.display());
                    Ok(EXIT_SUCCESS)
                }
                Err(e) => Err(internal(e)),
            }
        }
        Command::Translate(a) => {
            let s = settings(&a.common)?;
            let engine = build_engine(&s, run_log(&a.common)?)?;
            let requirement = match (&a.text, &a.input) {
                (Some(t), _) => t.clone(),
                (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
                (None, None) => return Err(Failure::Usage("give a requirement file or --text".into())),
            };
            match engine.run_text_task(TaskKind::Nl2Spec, TextTaskInput::Nl2Spec { requirement }, s.loop_cfg.budget_tokens) {
                Ok(snippet) => {
                    writeln!(out, "{}", snippet.trim_end()).map_err(internal)?;
                    Ok(EXIT_SUCCESS)
                }
                Err(
                    e @ (crate::repair::RepairError::Suggestion(_) | crate::repair::RepairError::PrecheckFailed(_)),
                ) => {
                    let _ = writeln!(err, "{e}");
                    Ok(EXIT_FAILURE)
                }
                Err(e) => Err(internal(e)),
            }
        }
        Command::Bench(a) => {
            let s = settings(&a.common)?;
            let cases = load_manifest(&a.manifest).map_err(|e| Failure::Usage(e.to_string()))?;
            let cfg = BenchConfig {
                loop_cfg: s.loop_cfg,
                provider: s.provider,
                verifier: s.verifier,
                replay: a.replay,
                parallelism: a.parallelism.unwrap_or_else(default_parallelism).max(1),
            };
            let report = run_bench(&cases, &cfg);
            report.write(&a.out).map_err(internal)?;
            let body = match a.format {
                Some(Format::Json) => report.to_json(),
                _ => report.to_markdown(),
            };
            out.write_all(body.as_bytes()).map_err(internal)?;
            Ok(if report.all_match() { EXIT_SUCCESS } else { EXIT_PARTIAL })
        }
        Command::Serve(a) => {
            let s = settings(&a.common)?;
            let verifier = Arc::new(DafnyVerifier::new(s.verifier.clone()).map_err(internal)?);
            let llm = Arc::new(LlmClient::new(s.provider.clone()).map_err(internal)?);
            let mut state = AppState::new(verifier, llm, s.loop_cfg.clone());
            if let Some(dir) = &s.templates {
                state = state.with_templates(TemplateSet::with_overrides(dir).map_err(internal)?);
            }
            // the bundled page, when run from the repository root
            let ui = a.ui.clone().or_else(|| Some(PathBuf::from("ui")).filter(|d| d.is_dir()));
            if let Some(ui) = ui {
                state = state.with_ui_dir(ui);
            }
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            let _ = writeln!(err, "listening on http://{}/ (UI under /ui/)", a.bind);
            rt.block_on(crate::service::serve(a.bind, state)).map_err(internal)?;
            Ok(EXIT_SUCCESS)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_SUCCESS
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Internal(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INTERNAL
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("DAFNY_PILOT_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Whether `path` looks like a corpus manifest (used by the examples).
pub fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> CommonArgs {
        let mut all = vec!["dafny-pilot", "lemmas", "x.dfy"];
        all.extend_from_slice(args);
        match Cli::try_parse_from(all).unwrap().command {
            Command::Lemmas(a) => a.common,
            _ => unreachable!(),
        }
    }

    #[test]
    fn precedence_flags_file_env_default() {
        let env = |k: &str| (k == "DAFNY_PILOT_MODEL").then(|| "from-env".to_string());
        let none = FileConfig::default();
        assert_eq!(Settings::resolve(&flags(&[]), &none, &|_| None).unwrap().provider.model_id, crate::llm::DEFAULT_MODEL);
        assert_eq!(Settings::resolve(&flags(&[]), &none, &env).unwrap().provider.model_id, "from-env");
        let file = FileConfig { model: Some("from-file".into()), ..Default::default() };
        assert_eq!(Settings::resolve(&flags(&[]), &file, &env).unwrap().provider.model_id, "from-file");
        let s = Settings::resolve(&flags(&["--model", "from-flag"]), &file, &env).unwrap();
        assert_eq!(s.provider.model_id, "from-flag");
    }

    #[test]
    fn dafny_args_pass_through() {
        let file = FileConfig { dafny_args: Some(vec!["--from-file".into()]), ..Default::default() };
        let s = Settings::resolve(&flags(&[]), &file, &|_| None).unwrap();
        assert_eq!(s.verifier.extra_args, ["--from-file"]);
        let s = Settings::resolve(&flags(&["--dafny-arg", "--cores", "--dafny-arg", "2"]), &file, &|_| None).unwrap();
        assert_eq!(s.verifier.extra_args, ["--cores", "2"]);
    }

    #[test]
    fn axiom_flags_conflict() {
        let r = Cli::try_parse_from(["dafny-pilot", "lemmas", "x.dfy", "--allow-axioms", "--forbid-axioms"]);
        assert!(r.is_err());
        let file = FileConfig { allow_axioms: Some(true), ..Default::default() };
        let s = Settings::resolve(&flags(&["--forbid-axioms"]), &file, &|_| None).unwrap();
        assert!(!s.loop_cfg.allow_axioms);
    }

    #[test]
    fn usage_errors_exit_64() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["dafny-pilot", "frobnicate"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["dafny-pilot", "lemmas", "x.dfy", "--llm", "tape"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["dafny-pilot", "--help"], &mut o, &mut e), EXIT_SUCCESS);
    }
}
