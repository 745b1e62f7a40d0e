//! The verify → prompt → candidate → check → re-verify loop.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::lex::{self, TokKind};
use crate::llm::{extract_code_blocks, CompletionResponse, LanguageModel, LlmError};
use crate::prompt::{fit_to_budget, render_prompt, Feedback, PromptContext, PromptError, RenderedPrompt, TaskKind, TemplateSet, DEFAULT_BUDGET_TOKENS};
use crate::runlog::{Action, Hashes, RunLog};
use crate::source::{
    insert_error_marker, line_diff, scan_declarations, DeclKind, DeclarationInfo, Edit, Patch, SourceError, SourceText,
};
use crate::suggestion::{
    axiomatize, candidates_from_response, combine, count_axioms, syntax_precheck, Candidate, PlacementContext,
    PrecheckResult, SuggestionError, DEFAULT_REWRITE_THRESHOLD,
};
use crate::verifier::{flag_unproven_lemmas, unproven_lemmas, Diagnostic, VerificationResult, VerificationStatus, Verifier, VerifierError};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("task {0} is not a repair-loop task")]
    UnsupportedTask(TaskKind),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("prompt budget exhausted: {0}")]
    BudgetExhausted(PromptError),
    #[error(transparent)]
    Prompt(PromptError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Suggestion(#[from] SuggestionError),
    #[error("the program has no failing obligation to explain")]
    NothingToExplain,
    #[error("the suggested specification does not resolve: {0:?}")]
    PrecheckFailed(Vec<Diagnostic>),
}

impl From<PromptError> for RepairError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::CannotFit { .. } => RepairError::BudgetExhausted(e),
            other => RepairError::Prompt(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_rounds: u32,
    pub candidates_per_round: u32,
    pub allow_axioms: bool,
    pub enable_hint_commenting: bool,
    pub enable_witness_rewrite: bool,
    pub verify_timeout_s: u64,
    pub budget_tokens: usize,
    pub rewrite_threshold: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_rounds: 3,
            candidates_per_round: 1,
            allow_axioms: false,
            enable_hint_commenting: true,
            enable_witness_rewrite: true,
            verify_timeout_s: 60,
            budget_tokens: DEFAULT_BUDGET_TOKENS,
            rewrite_threshold: DEFAULT_REWRITE_THRESHOLD,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), RepairError> {
        if self.max_rounds == 0 {
            return Err(RepairError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if self.candidates_per_round == 0 {
            return Err(RepairError::InvalidConfig("candidates_per_round must be at least 1".into()));
        }
        if self.budget_tokens == 0 {
            return Err(RepairError::InvalidConfig("budget_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn enabled_heuristics(&self) -> u32 {
        self.enable_hint_commenting as u32 + self.enable_witness_rewrite as u32 + self.allow_axioms as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    CommentFailingHints,
    RewriteWitnessBindings,
    Axiomatize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub round: u32,
    pub candidate: Candidate,
    pub heuristics_applied: Vec<Heuristic>,
    /// Full verification, or the resolver's result when the precheck failed.
    pub result: VerificationResult,
    pub residual_errors: usize,
    pub axioms_inserted: usize,
    pub patch_size_bytes: usize,
    /// Program text after the candidate and heuristics.
    pub text: String,
}

impl Attempt {
    pub fn passed_precheck(&self) -> bool {
        self.candidate.precheck == PrecheckResult::Passed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum Outcome {
    Success { final_text: String, patch: Patch, attempts: Vec<Attempt> },
    Partial { best_attempt: Box<Attempt>, attempts: Vec<Attempt> },
    Failure { attempts: Vec<Attempt>, reason: String },
}

impl Outcome {
    /// Builds `Success` only from a verification of exactly `final_text`
    /// that came back clean.
    pub fn success(
        original: &SourceText,
        final_text: &SourceText,
        evidence: &VerificationResult,
        attempts: Vec<Attempt>,
    ) -> Option<Outcome> {
        if evidence.content_hash != *final_text.content_hash() || !evidence.is_verified() {
            return None;
        }
        Some(Outcome::Success {
            final_text: final_text.content().to_string(),
            patch: line_diff(original, final_text.content()),
            attempts,
        })
    }

    pub fn attempts(&self) -> &[Attempt] {
        match self {
            Outcome::Success { attempts, .. } | Outcome::Partial { attempts, .. } | Outcome::Failure { attempts, .. } => {
                attempts
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success { .. } => "Success",
            Outcome::Partial { .. } => "Partial",
            Outcome::Failure { .. } => "Failure",
        }
    }

    /// Rounds that produced attempts (0 for the no-op case).
    pub fn rounds_used(&self) -> u32 {
        self.attempts().iter().map(|a| a.round).max().unwrap_or(0)
    }

    /// Text the outcome proposes: the final text, the best attempt's text,
    /// or `None` for failures.
    pub fn proposed_text(&self) -> Option<&str> {
        match self {
            Outcome::Success { final_text, .. } => Some(final_text),
            Outcome::Partial { best_attempt, .. } => Some(&best_attempt.text),
            Outcome::Failure { .. } => None,
        }
    }

    pub fn axioms_inserted(&self, original: &SourceText) -> usize {
        self.proposed_text()
            .map_or(0, |t| count_axioms(&original.with_content(t)).saturating_sub(count_axioms(original)))
    }
}

/// Lexicographic minimum of (residual errors, axioms, patch size, round);
/// the earliest attempt wins ties.
pub fn score_attempts(attempts: &[Attempt]) -> Option<&Attempt> {
    let key = |a: &Attempt| (a.residual_errors, a.axioms_inserted, a.patch_size_bytes, a.round);
    let mut best: Option<&Attempt> = None;
    for a in attempts {
        if best.is_none_or(|b| key(a) < key(b)) {
            best = Some(a);
        }
    }
    best
}

fn calc_blocks(src: &str, toks: &[lex::Token]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        if t.kind != TokKind::Ident || !t.is(src, "calc") {
            continue;
        }
        let mut k = i + 1;
        while k < toks.len() && !(toks[k].is(src, "{") && !lex::is_attribute_open(src, toks, k)) {
            if lex::is_attribute_open(src, toks, k) {
                k = lex::matching_close(src, toks, k).unwrap_or(toks.len());
            }
            k += 1;
        }
        if let Some(close) = (k < toks.len()).then(|| lex::matching_close(src, toks, k)).flatten() {
            out.push((k, close));
        }
    }
    out
}

const STEP_OPS: &[&str] = &["==", "!=", "<", "<=", ">", ">=", "==>", "<==", "<==>", "&&", "||", "="];

/// Token index pairs of the hint groups (`{ ... }` after a step operator
/// that begins its line) directly inside the calc body `open..close`.
fn hint_groups(src: &str, toks: &[lex::Token], open: usize, close: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut k = open + 1;
    while k < close {
        let t = toks[k];
        if t.is(src, "{") || t.is(src, "(") || t.is(src, "[") {
            let end = lex::matching_close(src, toks, k).unwrap_or(close);
            let prev = toks[k - 1];
            let line_start = src[..prev.start].rfind('\n').map_or(0, |n| n + 1);
            let op_leads_line = src[line_start..prev.start].trim().is_empty();
            if t.is(src, "{") && STEP_OPS.contains(&prev.text(src)) && op_leads_line && !lex::is_attribute_open(src, toks, k) {
                out.push((k, end));
            }
            k = end + 1;
            continue;
        }
        k += 1;
    }
    out
}

/// Wraps calc hints that the verifier rejects in block comments. A hint
/// containing an error, or whose step operator is on the error's line, is
/// commented; an error elsewhere in a calc block comments all its hints.
pub fn comment_failing_hints(text: &SourceText, diags: &[Diagnostic]) -> (SourceText, bool) {
    let src = text.content();
    let toks = lex::code_tokens(src);
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for d in diags.iter().filter(|d| d.is_error()) {
        let Ok(off) = text.offset_of(d.span.start_line, d.span.start_col.max(1)) else { continue };
        for (open, close) in calc_blocks(src, &toks) {
            if off < toks[open].start || off > toks[close].end {
                continue;
            }
            let hints = hint_groups(src, &toks, open, close);
            let hit = hints
                .iter()
                .copied()
                .find(|&(o, c)| off >= toks[o].start && off < toks[c].end)
                .or_else(|| hints.iter().copied().find(|&(o, _)| text.position_of(toks[o - 1].start).0 == d.span.start_line));
            match hit {
                Some(h) => chosen.push(h),
                None => chosen.extend(hints),
            }
        }
    }
    chosen.sort();
    chosen.dedup();
    // nested calc blocks can yield overlapping hints; keep the outermost
    let mut edits: Vec<Edit> = Vec::new();
    for (o, c) in chosen {
        let (s, e) = (toks[o].start, toks[c].end);
        if edits.last().is_some_and(|last| s < last.span.end_off) {
            continue;
        }
        let span = text.span(s, e).expect("token offsets are valid");
        edits.push(Edit::new(span, format!("/* {} */", &src[s..e])));
    }
    if edits.is_empty() {
        return (text.clone(), false);
    }
    let patch = Patch::new(text.content_hash().clone(), edits).expect("hints are disjoint");
    (crate::apply_patch(text, &patch).expect("patch matches its base"), true)
}

const CLAUSE_WORDS: &[&str] = &["requires", "ensures", "decreases", "modifies", "reads"];

/// `(variable, predicate)` for every `requires exists v :: P` clause.
pub fn existential_requires(text: &SourceText, lemma: &DeclarationInfo) -> Vec<(String, String)> {
    let header = text.slice(&lemma.header_extent);
    let toks = lex::code_tokens(header);
    let mut out = Vec::new();
    for i in 0..toks.len() {
        if !(toks[i].is(header, "requires") && toks.get(i + 1).is_some_and(|t| t.is(header, "exists"))) {
            continue;
        }
        let Some(var) = toks.get(i + 2).filter(|t| t.kind == TokKind::Ident) else { continue };
        let Some(sep) = (i + 3..toks.len()).find(|&k| toks[k].is(header, "::")) else { continue };
        // only single-variable binders
        if (i + 3..sep).any(|k| toks[k].is(header, ",")) {
            continue;
        }
        let mut end = toks.len();
        let mut k = sep + 1;
        while k < toks.len() {
            if toks[k].kind == TokKind::Ident && CLAUSE_WORDS.contains(&toks[k].text(header)) {
                end = k;
                break;
            }
            if lex::is_attribute_open(header, &toks, k) || ["(", "["].contains(&toks[k].text(header)) {
                k = lex::matching_close(header, &toks, k).unwrap_or(toks.len() - 1);
            }
            k += 1;
        }
        if end <= sep + 1 {
            continue;
        }
        let pred = &header[toks[sep + 1].start..toks[end - 1].end];
        out.push((var.text(header).to_string(), pred.split_whitespace().collect::<Vec<_>>().join(" ")));
    }
    out
}

/// Rewrites `var v[: T] := e;` in the lemma body into `var v :| P;` when
/// the lemma requires `exists v :: P`.
pub fn rewrite_witness_bindings(text: &SourceText, lemma: &DeclarationInfo) -> (SourceText, bool) {
    let Some(body) = &lemma.body else { return (text.clone(), false) };
    let witnesses = existential_requires(text, lemma);
    if witnesses.is_empty() {
        return (text.clone(), false);
    }
    let src = text.content();
    let body_src = &src[body.start_off..body.end_off];
    let toks = lex::code_tokens(body_src);
    let mut edits = Vec::new();
    for i in 0..toks.len() {
        if !toks[i].is(body_src, "var") {
            continue;
        }
        let Some(name) = toks.get(i + 1) else { continue };
        let Some((_, pred)) = witnesses.iter().find(|(v, _)| name.is(body_src, v)) else { continue };
        let Some(assign) = (i + 2..toks.len()).find(|&k| toks[k].is(body_src, ":=") || toks[k].is(body_src, ";")) else {
            continue;
        };
        if !toks[assign].is(body_src, ":=") {
            continue;
        }
        let Some(semi) = (assign..toks.len()).find(|&k| toks[k].is(body_src, ";")) else { continue };
        let s = body.start_off + toks[i].start;
        let e = body.start_off + toks[semi].end;
        edits.push(Edit::new(text.span(s, e).expect("token offsets are valid"), format!("var {} :| {pred};", name.text(body_src))));
    }
    if edits.is_empty() {
        return (text.clone(), false);
    }
    let patch = Patch::new(text.content_hash().clone(), edits).expect("bindings are disjoint");
    (crate::apply_patch(text, &patch).expect("patch matches its base"), true)
}

/// `path(line,col): Error: message` lines, like the verifier prints.
pub fn format_diagnostics(path: &Path, diags: &[Diagnostic]) -> String {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    diags
        .iter()
        .map(|d| {
            let sev = if d.is_error() { "Error" } else { "Warning" };
            format!("{name}({},{}): {sev}: {}", d.span.start_line, d.span.start_col, d.message)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn first_error(result: &VerificationResult) -> Option<Diagnostic> {
    result.errors().min_by_key(|d| (d.span.start_line, d.span.start_col)).cloned()
}

/// Input for the single-shot tasks.
#[derive(Debug, Clone)]
pub enum TextTaskInput {
    Explain { text: SourceText, target: Option<Diagnostic> },
    Nl2Spec { requirement: String },
}

/// Verifier, model and templates, plus the log every step goes to.
#[derive(Clone)]
pub struct Engine {
    pub verifier: Arc<dyn Verifier>,
    pub llm: Arc<dyn LanguageModel>,
    pub templates: Arc<TemplateSet>,
    pub log: Arc<RunLog>,
}

impl Engine {
    pub fn new(verifier: Arc<dyn Verifier>, llm: Arc<dyn LanguageModel>) -> Self {
        Engine { verifier, llm, templates: Arc::new(TemplateSet::builtin()), log: Arc::new(RunLog::new()) }
    }

    pub fn with_log(mut self, log: Arc<RunLog>) -> Self {
        self.log = log;
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    /// Full verification; lemmas without a proof or `{:axiom}` count as
    /// errors.
    pub fn verify(&self, text: &SourceText, round: u32) -> Result<VerificationResult, RepairError> {
        let mut result = self.verifier.verify(text)?;
        flag_unproven_lemmas(text, &mut result);
        let summary = match result.status {
            VerificationStatus::Failed => format!("Failed ({} errors)", result.error_count()),
            s => format!("{s:?}"),
        };
        let errors: Vec<&str> = result.errors().map(|d| d.message.as_str()).collect();
        self.log.record(
            round,
            Action::Verify,
            Hashes { before: None, after: Some(text.content_hash().to_string()) },
            summary,
            json!({ "status": result.status, "errors": errors }),
        );
        Ok(result)
    }

    pub fn precheck(&self, text: &SourceText, round: u32) -> Result<(PrecheckResult, VerificationResult), RepairError> {
        let resolved = self.verifier.resolve(text)?;
        let pre = syntax_precheck(&FixedResult(&resolved), text)?;
        let summary = match &pre {
            PrecheckResult::Failed(d) => format!("failed ({} errors)", d.len()),
            _ => "passed".to_string(),
        };
        self.log.record(
            round,
            Action::Precheck,
            Hashes { before: None, after: Some(text.content_hash().to_string()) },
            summary,
            serde_json::Value::Null,
        );
        Ok((pre, resolved))
    }

    /// Renders and budget-fits the prompt for `task` about `target`.
    pub fn build_prompt(
        &self,
        task: TaskKind,
        text: &SourceText,
        result: &VerificationResult,
        target: &Diagnostic,
        feedback: Option<Feedback>,
        round: u32,
        budget_tokens: usize,
    ) -> Result<RenderedPrompt, RepairError> {
        let annotated = insert_error_marker(text, target)?;
        let errors: Vec<Diagnostic> = result.errors().cloned().collect();
        let ctx = PromptContext {
            annotated_source: Some(annotated.content().trim_end().to_string()),
            diagnostics: Some(format_diagnostics(text.path(), &errors)),
            feedback,
            nl_spec: None,
            round,
        };
        let prompt = fit_to_budget(&render_prompt(&self.templates.get(task), &ctx)?, budget_tokens)?;
        self.log.record(
            round,
            Action::Prompt,
            Hashes { before: Some(text.content_hash().to_string()), after: None },
            format!("{task} prompt, ~{} tokens", prompt.token_estimate),
            json!({ "messages": prompt.messages, "token_estimate": prompt.token_estimate }),
        );
        Ok(prompt)
    }

    pub fn ask(&self, prompt: &RenderedPrompt) -> Result<CompletionResponse, RepairError> {
        let response = self.llm.complete(prompt)?;
        self.log.record(
            prompt.round,
            Action::LlmCall,
            Hashes::default(),
            format!("{} chars from {}", response.text.len(), response.provenance.source),
            json!({ "provenance": response.provenance, "text": response.text }),
        );
        Ok(response)
    }

    /// Runs a repair-loop task to completion.
    pub fn run_task(
        &self,
        task: TaskKind,
        text: &SourceText,
        target: Option<&Diagnostic>,
        cfg: &LoopConfig,
    ) -> Result<Outcome, RepairError> {
        if !matches!(task, TaskKind::LemmaInference | TaskKind::ProofInference | TaskKind::Repair) {
            return Err(RepairError::UnsupportedTask(task));
        }
        cfg.validate()?;
        let initial = self.verify(text, 0)?;
        if let Some(done) = Outcome::success(text, text, &initial, Vec::new()) {
            self.log_outcome(&done, text);
            return Ok(done);
        }

        let mut attempts: Vec<Attempt> = Vec::new();
        let mut current = text.clone();
        let mut current_result = initial;
        let mut feedback: Option<Feedback> = None;
        let mut last_problem = String::new();

        for round in 1..=cfg.max_rounds {
            let chosen = match target.filter(|_| round == 1) {
                Some(t) => Some(t.clone()),
                None => first_error(&current_result),
            };
            let Some(chosen) = chosen else {
                last_problem = format!("verifier reported {:?} without a located error", current_result.status);
                break;
            };
            let prompt =
                self.build_prompt(task, &current, &current_result, &chosen, feedback.take(), round, cfg.budget_tokens)?;
            let placement = PlacementContext { target: Some(&chosen), rewrite_threshold: cfg.rewrite_threshold };

            let first_of_round = attempts.len();
            for _ in 0..cfg.candidates_per_round {
                let response = self.ask(&prompt)?;
                let candidates = match candidates_from_response(&current, &response, placement) {
                    Ok(c) => c,
                    Err(e @ (SuggestionError::NoCodeFound | SuggestionError::UnplaceableSnippet(_))) => {
                        last_problem = e.to_string();
                        self.log.record(round, Action::Candidate, Hashes::default(), last_problem.clone(), serde_json::Value::Null);
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let Some(candidate) = combine(&current, &candidates) else {
                    last_problem = "the suggestion does not change the program".into();
                    self.log.record(round, Action::Candidate, Hashes::default(), last_problem.clone(), serde_json::Value::Null);
                    continue;
                };
                let attempt = self.try_candidate(text, &current, candidate, round, cfg)?;
                let verified = attempt.passed_precheck() && attempt.result.is_verified();
                attempts.push(attempt);
                if verified {
                    let last = attempts.last().unwrap();
                    let final_text = text.with_content(last.text.clone());
                    let evidence = last.result.clone();
                    let outcome = Outcome::success(text, &final_text, &evidence, attempts)
                        .expect("attempt result verifies its own text");
                    self.log_outcome(&outcome, text);
                    return Ok(outcome);
                }
            }

            // carry the latest well-formed attempt into the next round
            let round_attempts = &attempts[first_of_round..];
            if let Some(last) = round_attempts.iter().rev().find(|a| a.passed_precheck()) {
                current = text.with_content(last.text.clone());
                current_result = last.result.clone();
            }
            let last = round_attempts.last();
            feedback = Some(Feedback {
                round,
                previous_code: last.map(|a| a.text.clone()),
                diagnostics: last.map_or_else(|| current_result.errors().cloned().collect(), |a| a.result.errors().cloned().collect()),
                rejected: Vec::new(),
            });
        }

        let verified_attempts: Vec<Attempt> = attempts.iter().filter(|a| a.passed_precheck()).cloned().collect();
        let outcome = match score_attempts(&verified_attempts) {
            Some(best) => Outcome::Partial { best_attempt: Box::new(best.clone()), attempts },
            None => {
                let reason = if attempts.is_empty() {
                    if last_problem.is_empty() { "no usable suggestion".to_string() } else { last_problem }
                } else {
                    "no candidate passed the syntax precheck".to_string()
                };
                Outcome::Failure { attempts, reason }
            }
        };
        self.log_outcome(&outcome, text);
        Ok(outcome)
    }

    /// Precheck, verify and repair one candidate.
    fn try_candidate(
        &self,
        original: &SourceText,
        current: &SourceText,
        mut candidate: Candidate,
        round: u32,
        cfg: &LoopConfig,
    ) -> Result<Attempt, RepairError> {
        let mut heuristics = Vec::new();
        let mut text = crate::apply_patch(current, &candidate.patch)?;
        self.log.record(
            round,
            Action::Candidate,
            Hashes { before: Some(current.content_hash().to_string()), after: Some(text.content_hash().to_string()) },
            format!("{:?}, {} bytes", candidate.kind, candidate.patch.size_bytes()),
            json!({ "display_code": candidate.display_code }),
        );

        let (mut pre, mut resolved) = self.precheck(&text, round)?;
        if let (PrecheckResult::Failed(diags), true) = (&pre, cfg.enable_hint_commenting) {
            let (fixed, changed) = comment_failing_hints(&text, diags);
            if changed {
                self.log_heuristic(round, Heuristic::CommentFailingHints, &text, &fixed);
                heuristics.push(Heuristic::CommentFailingHints);
                text = fixed;
                (pre, resolved) = self.precheck(&text, round)?;
            }
        }
        candidate.precheck = pre.clone();
        if let PrecheckResult::Failed(_) = pre {
            return Ok(self.attempt(original, round, candidate, heuristics, resolved, text));
        }

        let mut result = self.verify(&text, round)?;
        let steps = [
            (Heuristic::CommentFailingHints, cfg.enable_hint_commenting),
            (Heuristic::RewriteWitnessBindings, cfg.enable_witness_rewrite),
            (Heuristic::Axiomatize, cfg.allow_axioms),
        ];
        for (h, enabled) in steps {
            if result.is_verified() {
                break;
            }
            if !enabled {
                continue;
            }
            let errors: Vec<Diagnostic> = result.errors().cloned().collect();
            let (next, changed) = match h {
                Heuristic::CommentFailingHints => comment_failing_hints(&text, &errors),
                Heuristic::RewriteWitnessBindings => rewrite_all_witnesses(&text, &errors),
                Heuristic::Axiomatize => axiomatize_failing(&text, &errors)?,
            };
            if !changed {
                continue;
            }
            self.log_heuristic(round, h, &text, &next);
            if !heuristics.contains(&h) {
                heuristics.push(h);
            }
            text = next;
            result = self.verify(&text, round)?;
        }
        Ok(self.attempt(original, round, candidate, heuristics, result, text))
    }

    fn attempt(
        &self,
        original: &SourceText,
        round: u32,
        candidate: Candidate,
        heuristics_applied: Vec<Heuristic>,
        result: VerificationResult,
        text: SourceText,
    ) -> Attempt {
        Attempt {
            round,
            candidate,
            heuristics_applied,
            residual_errors: result.error_count(),
            axioms_inserted: count_axioms(&text).saturating_sub(count_axioms(original)),
            patch_size_bytes: line_diff(original, text.content()).size_bytes(),
            result,
            text: text.content().to_string(),
        }
    }

    fn log_heuristic(&self, round: u32, h: Heuristic, before: &SourceText, after: &SourceText) {
        self.log.record(
            round,
            Action::Heuristic,
            Hashes { before: Some(before.content_hash().to_string()), after: Some(after.content_hash().to_string()) },
            format!("{h:?}"),
            json!({ "heuristic": h }),
        );
    }

    fn log_outcome(&self, outcome: &Outcome, original: &SourceText) {
        self.log.record(
            outcome.rounds_used(),
            Action::Outcome,
            Hashes {
                before: Some(original.content_hash().to_string()),
                after: outcome.proposed_text().map(|t| crate::ContentHash::of(t).to_string()),
            },
            format!("{} after {} rounds", outcome.label(), outcome.rounds_used()),
            json!({ "outcome": outcome.label(), "attempts": outcome.attempts().len() }),
        );
    }

    /// Explain and Nl2Spec: one prompt, one answer.
    pub fn run_text_task(&self, task: TaskKind, input: TextTaskInput, budget_tokens: usize) -> Result<String, RepairError> {
        match (task, input) {
            (TaskKind::Explain, TextTaskInput::Explain { text, target }) => {
                let result = self.verify(&text, 1)?;
                let target = target.or_else(|| first_error(&result)).ok_or(RepairError::NothingToExplain)?;
                let prompt = self.build_prompt(TaskKind::Explain, &text, &result, &target, None, 1, budget_tokens)?;
                Ok(self.ask(&prompt)?.text)
            }
            (TaskKind::Nl2Spec, TextTaskInput::Nl2Spec { requirement }) => {
                let ctx = PromptContext { nl_spec: Some(requirement), round: 1, ..Default::default() };
                let prompt = fit_to_budget(&render_prompt(&self.templates.get(TaskKind::Nl2Spec), &ctx)?, budget_tokens)?;
                self.log.record(
                    1,
                    Action::Prompt,
                    Hashes::default(),
                    "Nl2Spec prompt",
                    json!({ "messages": prompt.messages }),
                );
                let response = self.ask(&prompt)?;
                let snippet = extract_code_blocks(&response.text)
                    .into_iter()
                    .find(|s| !s.trim().is_empty())
                    .ok_or(SuggestionError::NoCodeFound)?
                    .to_string();
                match self.precheck(&SourceText::new("spec.dfy", snippet.clone()), 1)?.0 {
                    PrecheckResult::Failed(d) => Err(RepairError::PrecheckFailed(d)),
                    _ => Ok(snippet),
                }
            }
            (task, _) => Err(RepairError::UnsupportedTask(task)),
        }
    }
}

/// Adapts an already-obtained resolver result to [`syntax_precheck`].
struct FixedResult<'a>(&'a VerificationResult);

impl Verifier for FixedResult<'_> {
    fn check(&self, _: crate::verifier::Check, _: &SourceText) -> Result<VerificationResult, VerifierError> {
        Ok(self.0.clone())
    }
}

fn lemmas_with_errors(text: &SourceText, errors: &[Diagnostic]) -> Vec<DeclarationInfo> {
    scan_declarations(text)
        .into_iter()
        .filter(|d| d.kind == DeclKind::Lemma)
        .filter(|d| errors.iter().any(|e| e.span.start_line >= d.extent.start_line && e.span.start_line <= d.extent.end_line))
        .collect()
}

fn rewrite_all_witnesses(text: &SourceText, errors: &[Diagnostic]) -> (SourceText, bool) {
    let mut out = text.clone();
    let mut changed = false;
    for name in lemmas_with_errors(text, errors).into_iter().map(|d| d.name) {
        // rescan: earlier rewrites shift offsets
        let Some(decl) = crate::source::find_declaration(&out, DeclKind::Lemma, &name) else { continue };
        let (next, c) = rewrite_witness_bindings(&out, &decl);
        out = next;
        changed |= c;
    }
    (out, changed)
}

/// Axiomatizes every unproven lemma and every lemma an error points into.
pub fn axiomatize_failing(text: &SourceText, errors: &[Diagnostic]) -> Result<(SourceText, bool), RepairError> {
    let mut names = unproven_lemmas(text);
    for d in lemmas_with_errors(text, errors) {
        if !names.contains(&d.name) {
            names.push(d.name);
        }
    }
    let mut out = text.clone();
    let mut changed = false;
    for name in names {
        let (next, c) = axiomatize(&out, &name)?;
        out = next;
        changed |= c;
    }
    Ok((out, changed))
}
