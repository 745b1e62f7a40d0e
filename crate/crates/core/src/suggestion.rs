//! From model answers to placed, checkable edits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lex;
use crate::llm::{extract_code_blocks, CompletionResponse, Provenance};
use crate::source::{
    find_declaration, find_enclosing_declaration, line_diff, scan_declarations, strip_error_markers, DeclKind, Edit,
    Patch, SourceError, SourceText,
};
use crate::verifier::{Diagnostic, DiagnosticCategory, VerificationStatus, Verifier, VerifierError};

/// Share of the original's non-blank lines that must reappear, in order, in
/// a snippet for it to count as a whole-file rewrite.
pub const DEFAULT_REWRITE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum SuggestionError {
    #[error("the response contains no code")]
    NoCodeFound,
    #[error("cannot place snippet: {0}")]
    UnplaceableSnippet(String),
    #[error("no lemma named {0}")]
    NoSuchLemma(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateKind {
    FullFileRewrite,
    NewLemmaDeclaration,
    LemmaCallInsertion,
    ProofBody,
    GenericPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "diagnostics")]
pub enum PrecheckResult {
    Unchecked,
    Passed,
    Failed(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: CandidateKind,
    pub patch: Patch,
    pub display_code: String,
    pub provenance: Provenance,
    pub precheck: PrecheckResult,
}

/// Where snippets go when the answer does not say.
#[derive(Debug, Clone, Copy)]
pub struct PlacementContext<'a> {
    /// The diagnostic the prompt was about.
    pub target: Option<&'a Diagnostic>,
    pub rewrite_threshold: f64,
}

impl Default for PlacementContext<'_> {
    fn default() -> Self {
        PlacementContext { target: None, rewrite_threshold: DEFAULT_REWRITE_THRESHOLD }
    }
}

fn non_blank(s: &str) -> Vec<&str> {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Fraction of `original`'s non-blank lines found in order in `snippet`.
pub fn overlap_ratio(original: &str, snippet: &str) -> f64 {
    let old = non_blank(original);
    if old.is_empty() {
        return 0.0;
    }
    let new = non_blank(snippet);
    let diff = similar::capture_diff_slices(similar::Algorithm::Myers, &old, &new);
    let common: usize = diff
        .iter()
        .map(|op| match *op {
            similar::DiffOp::Equal { len, .. } => len,
            _ => 0,
        })
        .sum();
    common as f64 / old.len() as f64
}

fn net_code(patch: &Patch) -> String {
    patch.edits().iter().map(|e| e.replacement.as_str()).collect::<Vec<_>>().join("").trim_end().to_string()
}

/// Normalizes a snippet the way [`SourceText`] normalizes files.
fn as_file_text(snippet: &str, like: &SourceText) -> String {
    let mut s = strip_error_markers(&snippet.replace("\r\n", "\n"));
    if like.content().ends_with('\n') && !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Turns a model answer into candidates against `text`.
///
/// A snippet that reproduces most of the file becomes one
/// [`CandidateKind::FullFileRewrite`] (the line diff, or nothing when the
/// diff is empty). Otherwise each snippet is classified and placed on its
/// own: lemma declarations go before the first declaration, calls to known
/// lemmas go into the named `case` branch or before the statement after
/// the target, and proofs replace the named lemma's body.
pub fn candidates_from_response(
    text: &SourceText,
    response: &CompletionResponse,
    ctx: PlacementContext<'_>,
) -> Result<Vec<Candidate>, SuggestionError> {
    let snippets = extract_code_blocks(&response.text);
    if snippets.iter().all(|s| s.trim().is_empty()) {
        return Err(SuggestionError::NoCodeFound);
    }
    let make = |kind, patch: Patch| Candidate {
        kind,
        display_code: net_code(&patch),
        patch,
        provenance: response.provenance.clone(),
        precheck: PrecheckResult::Unchecked,
    };

    for s in &snippets {
        if overlap_ratio(text.content(), s) >= ctx.rewrite_threshold {
            let patch = line_diff(text, &as_file_text(s, text));
            return Ok(if patch.is_empty() { Vec::new() } else { vec![make(CandidateKind::FullFileRewrite, patch)] });
        }
    }

    // lemmas declared by this answer count as known for call placement
    let mut known: Vec<String> = scan_declarations(text)
        .into_iter()
        .filter(|d| d.kind == DeclKind::Lemma)
        .map(|d| d.name)
        .collect();
    for s in &snippets {
        let snippet = SourceText::new("snippet.dfy", strip_error_markers(s));
        known.extend(scan_declarations(&snippet).into_iter().filter(|d| d.kind == DeclKind::Lemma).map(|d| d.name));
    }

    let mut out = Vec::new();
    for s in snippets.iter().filter(|s| !s.trim().is_empty()) {
        let snippet = strip_error_markers(s).trim_matches('\n').to_string();
        let (kind, patch) = place_snippet(text, &snippet, &known, &ctx)?;
        if !patch.is_empty() {
            out.push(make(kind, patch));
        }
    }
    Ok(out)
}

fn first_code_word(s: &str) -> Option<(usize, &str)> {
    let toks = lex::code_tokens(s);
    let mut i = 0;
    while i < toks.len() && ["ghost", "static"].contains(&toks[i].text(s)) {
        i += 1;
    }
    toks.get(i).map(|t| (i, t.text(s)))
}

fn place_snippet(
    text: &SourceText,
    snippet: &str,
    known: &[String],
    ctx: &PlacementContext<'_>,
) -> Result<(CandidateKind, Patch), SuggestionError> {
    let hash = text.content_hash().clone();
    match first_code_word(snippet) {
        Some((_, "lemma")) => {
            let st = SourceText::new("snippet.dfy", snippet);
            let decls = scan_declarations(&st);
            // a single lemma that already exists: its proof
            if let [only] = decls.as_slice() {
                if let Some(existing) = find_declaration(text, DeclKind::Lemma, &only.name) {
                    let Some(body) = only.body.as_ref() else {
                        return Err(SuggestionError::UnplaceableSnippet(format!("lemma {} has no proof", only.name)));
                    };
                    let patch = replace_body(text, &existing, st.slice(body))?;
                    return Ok((CandidateKind::ProofBody, patch));
                }
            }
            let first = scan_declarations(text).into_iter().next();
            let at = first.map_or(0, |d| line_start(text, d.extent.start_off));
            let edit = Edit::new(text.span(at, at)?, format!("{snippet}\n\n"));
            Ok((CandidateKind::NewLemmaDeclaration, Patch::new(hash, vec![edit])?))
        }
        Some((_, w)) if known.iter().any(|k| k == w) || snippet.lines().any(|l| l.trim_start().starts_with("case ")) => {
            let edit = place_calls(text, snippet, ctx)?;
            Ok((CandidateKind::LemmaCallInsertion, Patch::new(hash, vec![edit])?))
        }
        Some(_) => {
            let lemma = ctx
                .target
                .and_then(|d| find_enclosing_declaration(text, &d.span))
                .filter(|d| d.kind == DeclKind::Lemma)
                .or_else(|| scan_declarations(text).into_iter().find(|d| d.kind == DeclKind::Lemma && d.body.is_none()))
                .ok_or_else(|| SuggestionError::UnplaceableSnippet("no lemma to attach the proof to".into()))?;
            let patch = replace_body(text, &lemma, &format!("{{\n{snippet}\n}}"))?;
            Ok((CandidateKind::ProofBody, patch))
        }
        None => Err(SuggestionError::UnplaceableSnippet(snippet.to_string())),
    }
}

fn line_start(text: &SourceText, off: usize) -> usize {
    text.content()[..off].rfind('\n').map_or(0, |i| i + 1)
}

/// Replaces (or adds) the `{ ... }` body of `lemma` with `body`.
fn replace_body(text: &SourceText, lemma: &crate::DeclarationInfo, body: &str) -> Result<Patch, SuggestionError> {
    let hash = text.content_hash().clone();
    let edit = match &lemma.body {
        Some(b) => Edit::new(*b, body),
        None => {
            let end = lemma.extent.end_off;
            Edit::new(text.span(end, end)?, format!(" {body}"))
        }
    };
    if text.slice(&edit.span) == edit.replacement {
        return Ok(Patch::empty(hash));
    }
    Ok(Patch::new(hash, vec![edit])?)
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Call statements: into the `case` branch named in the snippet, else
/// before the first statement at or after the target diagnostic.
fn place_calls(text: &SourceText, snippet: &str, ctx: &PlacementContext<'_>) -> Result<Edit, SuggestionError> {
    let src = text.content();
    let mut lines: Vec<&str> = snippet.lines().collect();
    let case_guard = lines
        .iter()
        .position(|l| l.trim_start().starts_with("case "))
        .map(|i| lines.remove(i).trim().trim_end_matches('{').trim().to_string());
    let calls: Vec<&str> = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty() && *l != "}").collect();
    if calls.is_empty() {
        return Err(SuggestionError::UnplaceableSnippet(snippet.to_string()));
    }

    let (at, indent) = if let Some(guard) = case_guard {
        let want = squash(&guard);
        let line = (1..=text.line_count())
            .find(|&n| text.line_text(n).is_some_and(|l| squash(l).starts_with(&want)))
            .ok_or_else(|| SuggestionError::UnplaceableSnippet(format!("no branch `{guard}`")))?;
        let (s, e) = text.line_range(line).unwrap();
        let head = &src[s..e];
        let indent = format!("{}  ", &head[..head.len() - head.trim_start().len()]);
        let after_arrow = head.find("=>").map_or(e, |i| s + i + 2);
        // the branch body starts after `=> {` (or on the next line)
        let open = src[after_arrow..e].find('{').map(|i| after_arrow + i + 1);
        let at = match open {
            Some(o) if src[o..e].trim().is_empty() => e + 1,
            Some(o) => o,
            None => e + 1,
        };
        if at <= e && at > s {
            // statements continue on the `case` line: break the line first
            let joined: String = calls.iter().map(|c| format!("\n{indent}{c}")).collect();
            return Ok(Edit::new(text.span(at, at)?, format!("{joined}\n{indent}")));
        }
        let at = at.min(src.len());
        let next_indent = text
            .line_text(text.position_of(at).0)
            .map(|l| l[..l.len() - l.trim_start().len()].to_string())
            .filter(|i| !i.is_empty())
            .unwrap_or(indent);
        (at, next_indent)
    } else {
        let target = ctx
            .target
            .ok_or_else(|| SuggestionError::UnplaceableSnippet("calls without a target location".into()))?;
        const CLAUSES: &[&str] = &["invariant", "requires", "ensures", "decreases", "modifies", "reads", "while", "//"];
        let line = (target.span.start_line..=text.line_count())
            .find(|&n| {
                text.line_text(n).is_some_and(|l| {
                    let t = l.trim_start_matches(|c: char| c.is_whitespace() || c == '{' || c == '}');
                    l.trim_end().ends_with(';') && !CLAUSES.iter().any(|c| t.starts_with(c)) && !t.starts_with("case ")
                })
            })
            .ok_or_else(|| SuggestionError::UnplaceableSnippet("no statement after the target".into()))?;
        let (s, _) = text.line_range(line).unwrap();
        let l = text.line_text(line).unwrap();
        (s, l[..l.len() - l.trim_start().len()].to_string())
    };
    let block: String = calls.iter().map(|c| format!("{indent}{c}\n")).collect();
    Ok(Edit::new(text.span(at, at)?, block))
}

/// Merges candidates for the same text into one. Insertions at the same
/// point are concatenated; a candidate that overlaps an earlier one is
/// left out. Returns `None` for an empty list.
pub fn combine(text: &SourceText, candidates: &[Candidate]) -> Option<Candidate> {
    let first = candidates.first()?;
    if candidates.len() == 1 {
        return Some(first.clone());
    }
    let mut edits: Vec<Edit> = Vec::new();
    for c in candidates {
        let mut trial = edits.clone();
        for e in c.patch.edits() {
            match trial.iter_mut().find(|x| x.span.is_empty() && e.span.is_empty() && x.span.start_off == e.span.start_off) {
                Some(x) => x.replacement.push_str(&e.replacement),
                None => trial.push(e.clone()),
            }
        }
        if Patch::new(text.content_hash().clone(), trial.clone()).is_ok() {
            edits = trial;
        } else {
            tracing::debug!(kind = ?c.kind, "dropping overlapping candidate");
        }
    }
    let patch = Patch::new(text.content_hash().clone(), edits).ok()?;
    Some(Candidate {
        kind: CandidateKind::GenericPatch,
        display_code: net_code(&patch),
        patch,
        provenance: first.provenance.clone(),
        precheck: PrecheckResult::Unchecked,
    })
}

/// Parse/resolve-only check of a patched text: passes iff the resolver
/// reports no syntax or resolution errors.
pub fn syntax_precheck(verifier: &dyn Verifier, text_after_patch: &SourceText) -> Result<PrecheckResult, VerifierError> {
    let r = verifier.resolve(text_after_patch)?;
    let bad: Vec<Diagnostic> = r
        .diagnostics
        .into_iter()
        .filter(|d| d.is_error() && d.category == DiagnosticCategory::SyntaxOrResolution)
        .collect();
    Ok(if !bad.is_empty() || r.status == VerificationStatus::CrashedOrUnparsable {
        PrecheckResult::Failed(bad)
    } else {
        PrecheckResult::Passed
    })
}

/// Turns lemma `name` into an axiom: `{:axiom}` after the keyword and no
/// body. Idempotent; `Ok((text, false))` when nothing changed.
pub fn axiomatize(text: &SourceText, name: &str) -> Result<(SourceText, bool), SuggestionError> {
    let decl = find_declaration(text, DeclKind::Lemma, name).ok_or_else(|| SuggestionError::NoSuchLemma(name.into()))?;
    let src = text.content();
    let mut edits = Vec::new();
    if !decl.has_attribute(text, "axiom") {
        let header = text.slice(&decl.header_extent);
        let kw = lex::code_tokens(header)
            .into_iter()
            .find(|t| t.is(header, "lemma"))
            .expect("lemma declarations contain the keyword");
        let at = decl.header_extent.start_off + kw.end;
        edits.push(Edit::new(text.span(at, at)?, " {:axiom}"));
    }
    if let Some(body) = &decl.body {
        // take the whitespace before the body with it
        let start = src[..body.start_off].trim_end().len().max(decl.header_extent.end_off.min(body.start_off));
        edits.push(Edit::new(text.span(start, body.end_off)?, ""));
    }
    if edits.is_empty() {
        return Ok((text.clone(), false));
    }
    let patch = Patch::new(text.content_hash().clone(), edits)?;
    Ok((crate::apply_patch(text, &patch)?, true))
}

/// Number of lemmas carrying `{:axiom}`.
pub fn count_axioms(text: &SourceText) -> usize {
    scan_declarations(text).iter().filter(|d| d.kind == DeclKind::Lemma && d.has_attribute(text, "axiom")).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FinishReason;
    use crate::source::Span;
    use crate::verifier::Severity;

    fn response(text: &str) -> CompletionResponse {
        CompletionResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
            provenance: Provenance { source: "test".into(), round: 1 },
        }
    }

    const PROG: &str = "method M(x: int) returns (y: int)\n  ensures y == x\n{\n  y := x;\n}\n";

    #[test]
    fn identical_file_gives_no_candidates() {
        let t = SourceText::new("a.dfy", PROG);
        let r = response(&format!("```dafny\n{PROG}```"));
        assert!(candidates_from_response(&t, &r, PlacementContext::default()).unwrap().is_empty());
    }

    #[test]
    fn prose_only_is_no_code() {
        let t = SourceText::new("a.dfy", PROG);
        let err = candidates_from_response(&t, &response("I cannot help."), PlacementContext::default()).unwrap_err();
        assert!(matches!(err, SuggestionError::NoCodeFound));
    }

    #[test]
    fn new_lemma_goes_before_first_declaration() {
        let t = SourceText::new("a.dfy", PROG);
        let r = response("```dafny\nlemma Id(x: int)\n  ensures x == x\n{}\n```");
        let c = candidates_from_response(&t, &r, PlacementContext::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, CandidateKind::NewLemmaDeclaration);
        let out = crate::apply_patch(&t, &c[0].patch).unwrap();
        assert!(out.content().starts_with("lemma Id(x: int)\n  ensures x == x\n{}\n\nmethod M"));
    }

    #[test]
    fn calls_go_into_named_branch() {
        let src = "lemma L(x: int)\n\nmethod M(x: int) {\n  if {\n    case x > 0 => {\n      print x;\n    }\n    case x <= 0 => {\n      print 0;\n    }\n  }\n}\n";
        let t = SourceText::new("a.dfy", src);
        let r = response("```dafny\ncase x <= 0 =>\n  L(x);\n```");
        let c = candidates_from_response(&t, &r, PlacementContext::default()).unwrap();
        assert_eq!(c[0].kind, CandidateKind::LemmaCallInsertion);
        let out = crate::apply_patch(&t, &c[0].patch).unwrap();
        assert!(out.content().contains("case x <= 0 => {\n      L(x);\n      print 0;"), "{}", out.content());
    }

    #[test]
    fn calls_go_before_statement_after_target() {
        let src = "lemma L()\n\nmethod M() {\n  var i := 0;\n  while i < 3\n    invariant i <= 3\n  {\n    i := i + 1;\n  }\n}\n";
        let t = SourceText::new("a.dfy", src);
        let target = Diagnostic {
            severity: Severity::Error,
            span: Span::at(6, 5),
            message: "m".into(),
            category: DiagnosticCategory::InvariantNotMaintained,
            related: vec![],
        };
        let ctx = PlacementContext { target: Some(&target), ..Default::default() };
        let c = candidates_from_response(&t, &response("```\nL();\n```"), ctx).unwrap();
        let out = crate::apply_patch(&t, &c[0].patch).unwrap();
        assert!(out.content().contains("  {\n    L();\n    i := i + 1;"), "{}", out.content());
    }

    #[test]
    fn proof_replaces_named_lemma_body() {
        let src = "lemma P(x: nat)\n  ensures x + 0 == x\n\nmethod M() {}\n";
        let t = SourceText::new("a.dfy", src);
        let r = response("```dafny\nlemma P(x: nat)\n  ensures x + 0 == x\n{\n  assert x + 0 == x;\n}\n```");
        let c = candidates_from_response(&t, &r, PlacementContext::default()).unwrap();
        assert_eq!(c[0].kind, CandidateKind::ProofBody);
        let out = crate::apply_patch(&t, &c[0].patch).unwrap();
        assert_eq!(out.content(), "lemma P(x: nat)\n  ensures x + 0 == x {\n  assert x + 0 == x;\n}\n\nmethod M() {}\n");
    }

    #[test]
    fn axiomatize_is_idempotent() {
        let src = "lemma A(x: int)\n  ensures x == x\n{\n  assert true;\n}\n\nlemma B()\n";
        let t = SourceText::new("a.dfy", src);
        let (once, changed) = axiomatize(&t, "A").unwrap();
        assert!(changed);
        assert_eq!(once.content(), "lemma {:axiom} A(x: int)\n  ensures x == x\n\nlemma B()\n");
        let (twice, changed) = axiomatize(&once, "A").unwrap();
        assert!(!changed);
        assert_eq!(twice, once);
        assert!(matches!(axiomatize(&t, "Nonexistent"), Err(SuggestionError::NoSuchLemma(_))));
        assert_eq!(count_axioms(&once), 1);
    }

    #[test]
    fn combine_merges_same_point_inserts() {
        let t = SourceText::new("a.dfy", PROG);
        let r = response("```dafny\nlemma A()\n```\n```dafny\nlemma B()\n```");
        let c = candidates_from_response(&t, &r, PlacementContext::default()).unwrap();
        assert_eq!(c.len(), 2);
        let merged = combine(&t, &c).unwrap();
        let out = crate::apply_patch(&t, &merged.patch).unwrap();
        assert!(out.content().starts_with("lemma A()\n\nlemma B()\n\nmethod M"));
    }
}
