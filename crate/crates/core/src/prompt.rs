//! Task prompts: templates, rendering and token budgeting.
//!
//! A template file is plain text with a small front-matter header:
//!
//! ```text
//! ---
//! task: ProofInference
//! version: 1
//! placeholders: EXEMPLARS, ANNOTATED_SOURCE, FEEDBACK
//! exemplar: 10 | Calculational proofs in Dafny | exemplars/calculations.dfy
//! ---
//! [system]
//! ...
//! [user]
//! ... {ANNOTATED_SOURCE} ...
//! ```
//!
//! Exemplar paths are relative to the template file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{is_marker_line, marker_comment};
use crate::verifier::Diagnostic;

/// Default budget: the context size of the model used in the original
/// experiments.
pub const DEFAULT_BUDGET_TOKENS: usize = 128_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt context is missing {0}")]
    MissingContextField(Placeholder),
    #[error("prompt does not fit in {budget} tokens (needs at least {needed})")]
    CannotFit { budget: usize, needed: usize },
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    LemmaInference,
    ProofInference,
    Repair,
    Explain,
    Nl2Spec,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] =
        [TaskKind::LemmaInference, TaskKind::ProofInference, TaskKind::Repair, TaskKind::Explain, TaskKind::Nl2Spec];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::LemmaInference => "LemmaInference",
            TaskKind::ProofInference => "ProofInference",
            TaskKind::Repair => "Repair",
            TaskKind::Explain => "Explain",
            TaskKind::Nl2Spec => "Nl2Spec",
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            TaskKind::LemmaInference => include_str!("../templates/lemma_inference.tmpl"),
            TaskKind::ProofInference => include_str!("../templates/proof_inference.tmpl"),
            TaskKind::Repair => include_str!("../templates/repair.tmpl"),
            TaskKind::Explain => include_str!("../templates/explain.tmpl"),
            TaskKind::Nl2Spec => include_str!("../templates/nl2spec.tmpl"),
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            TaskKind::LemmaInference => "lemma_inference",
            TaskKind::ProofInference => "proof_inference",
            TaskKind::Repair => "repair",
            TaskKind::Explain => "explain",
            TaskKind::Nl2Spec => "nl2spec",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Placeholder {
    AnnotatedSource,
    Diagnostics,
    Exemplars,
    Feedback,
    NlSpec,
}

impl Placeholder {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "ANNOTATED_SOURCE" => Placeholder::AnnotatedSource,
            "DIAGNOSTICS" => Placeholder::Diagnostics,
            "EXEMPLARS" => Placeholder::Exemplars,
            "FEEDBACK" => Placeholder::Feedback,
            "NL_SPEC" => Placeholder::NlSpec,
            _ => return None,
        })
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placeholder::AnnotatedSource => "{ANNOTATED_SOURCE}",
            Placeholder::Diagnostics => "{DIAGNOSTICS}",
            Placeholder::Exemplars => "{EXEMPLARS}",
            Placeholder::Feedback => "{FEEDBACK}",
            Placeholder::NlSpec => "{NL_SPEC}",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub title: String,
    pub text: String,
    /// Higher is more important; the lowest is dropped first under budget
    /// pressure.
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: TaskKind,
    pub version: u32,
    pub system_text: String,
    pub user_skeleton: String,
    pub exemplars: Vec<Exemplar>,
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z_]*)\}").unwrap())
}

impl PromptTemplate {
    /// Parses a template file. `load_exemplar` resolves the exemplar paths
    /// named in the header.
    pub fn parse(
        src: &str,
        mut load_exemplar: impl FnMut(&str) -> Result<String, String>,
    ) -> Result<Self, PromptError> {
        let bad = |m: &str| PromptError::Template(m.to_string());
        let rest = src.strip_prefix("---\n").ok_or_else(|| bad("missing front matter"))?;
        let (header, body) = rest.split_once("\n---\n").ok_or_else(|| bad("unterminated front matter"))?;

        let mut task = None;
        let mut version = 1;
        let mut exemplars = Vec::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once(':').ok_or_else(|| bad(line))?;
            let value = value.trim();
            match key.trim() {
                "task" => task = Some(value.parse::<TaskKind>().map_err(|e| bad(&e))?),
                "version" => version = value.parse().map_err(|_| bad("version must be an integer"))?,
                "placeholders" => {}
                "exemplar" => {
                    let parts: Vec<&str> = value.split('|').map(str::trim).collect();
                    let [priority, title, path] = parts[..] else {
                        return Err(bad("exemplar lines are `priority | title | path`"));
                    };
                    exemplars.push(Exemplar {
                        title: title.to_string(),
                        text: load_exemplar(path).map_err(|e| bad(&e))?,
                        priority: priority.parse().map_err(|_| bad("exemplar priority must be an integer"))?,
                    });
                }
                other => return Err(bad(&format!("unknown header key {other:?}"))),
            }
        }
        let body = body.strip_prefix("[system]\n").ok_or_else(|| bad("body must start with [system]"))?;
        let (system, user) = body.split_once("\n[user]\n").ok_or_else(|| bad("missing [user] section"))?;
        let template = PromptTemplate {
            task: task.ok_or_else(|| bad("missing task"))?,
            version,
            system_text: system.trim_end().to_string(),
            user_skeleton: user.trim_end().to_string(),
            exemplars,
        };
        template.placeholders()?;
        Ok(template)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&src, |rel| std::fs::read_to_string(dir.join(rel)).map_err(|e| format!("{rel}: {e}")))
    }

    pub fn builtin(task: TaskKind) -> Self {
        Self::parse(task.builtin_source(), |rel| match rel {
            "exemplars/calculations.dfy" => Ok(include_str!("../templates/exemplars/calculations.dfy").to_string()),
            other => Err(format!("no builtin exemplar {other}")),
        })
        .expect("builtin templates parse")
    }

    /// Placeholders used by the user skeleton, in order of first use.
    pub fn placeholders(&self) -> Result<Vec<Placeholder>, PromptError> {
        let mut out = Vec::new();
        for c in placeholder_re().captures_iter(&self.user_skeleton) {
            let p = Placeholder::from_name(&c[1])
                .ok_or_else(|| PromptError::Template(format!("unknown placeholder {{{}}}", &c[1])))?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Templates for every task.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TaskKind, Arc<PromptTemplate>>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TaskKind::ALL.into_iter().map(|t| (t, Arc::new(PromptTemplate::builtin(t)))).collect();
        TemplateSet { templates }
    }

    /// Built-ins overridden by any `<task>.tmpl` files found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for task in TaskKind::ALL {
            let path = dir.join(format!("{}.tmpl", task.file_stem()));
            if path.is_file() {
                let t = PromptTemplate::load(&path)?;
                if t.task != task {
                    return Err(PromptError::Template(format!("{} declares task {}", path.display(), t.task)));
                }
                set.templates.insert(task, Arc::new(t));
            }
        }
        Ok(set)
    }

    pub fn get(&self, task: TaskKind) -> Arc<PromptTemplate> {
        self.templates[&task].clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// What a round's feedback section reports about earlier attempts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    /// Round the feedback is about.
    pub round: u32,
    /// Program text of the previous attempt, if one was verified.
    pub previous_code: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    /// Suggestions the developer turned down.
    pub rejected: Vec<String>,
}

impl Feedback {
    pub fn is_empty(&self) -> bool {
        self.previous_code.is_none() && self.diagnostics.is_empty() && self.rejected.is_empty()
    }

    /// The previous code fenced, followed by the diagnostics as marker lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(code) = &self.previous_code {
            out.push_str(&format!(
                "Your suggestion from round {} was applied, but the program still does not verify:\n```dafny\n{}\n```\n",
                self.round,
                code.trim_end()
            ));
        }
        if !self.diagnostics.is_empty() {
            out.push_str("The verifier reports:\n");
            for d in &self.diagnostics {
                out.push_str(&marker_comment(&format!("{} (line {})", d.message, d.span.start_line)));
                out.push('\n');
            }
        }
        for r in &self.rejected {
            out.push_str(&format!("The developer rejected this suggestion:\n```dafny\n{}\n```\n", r.trim_end()));
        }
        if !out.is_empty() {
            out.push_str("Please provide a different solution.");
        }
        out
    }
}

/// Values substituted into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub annotated_source: Option<String>,
    pub diagnostics: Option<String>,
    pub feedback: Option<Feedback>,
    pub nl_spec: Option<String>,
    pub round: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
    pub token_estimate: usize,
    pub task: TaskKind,
    pub round: u32,
    #[serde(skip)]
    origin: Option<Arc<(PromptTemplate, PromptContext)>>,
}

impl PartialEq for RenderedPrompt {
    fn eq(&self, other: &Self) -> bool {
        self.messages == other.messages && self.task == other.task && self.round == other.round
    }
}

impl RenderedPrompt {
    /// A prompt built from raw messages (no template to re-render from).
    pub fn from_messages(task: TaskKind, round: u32, messages: Vec<Message>) -> Self {
        let token_estimate = estimate_tokens(&messages);
        RenderedPrompt { messages, token_estimate, task, round, origin: None }
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn user(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| &m.content)
    }
}

/// `ceil(bytes / 4)` over all message contents. A heuristic, not a tokenizer.
pub fn estimate_tokens(messages: &[Message]) -> usize {
    let bytes: usize = messages.iter().map(|m| m.content.len()).sum();
    bytes.div_ceil(4)
}

fn render_exemplars(exemplars: &[Exemplar]) -> String {
    exemplars
        .iter()
        .map(|e| format!("### {}\n```dafny\n{}\n```", e.title, e.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_prompt(template: &PromptTemplate, ctx: &PromptContext) -> Result<RenderedPrompt, PromptError> {
    let round = ctx.round.max(1);
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    for p in template.placeholders()? {
        let (name, value) = match p {
            Placeholder::AnnotatedSource => ("ANNOTATED_SOURCE", ctx.annotated_source.clone()),
            Placeholder::Diagnostics => ("DIAGNOSTICS", ctx.diagnostics.clone()),
            Placeholder::NlSpec => ("NL_SPEC", ctx.nl_spec.clone()),
            Placeholder::Exemplars => ("EXEMPLARS", Some(render_exemplars(&template.exemplars))),
            Placeholder::Feedback => match &ctx.feedback {
                Some(f) => ("FEEDBACK", Some(f.render())),
                None if round > 1 => return Err(PromptError::MissingContextField(p)),
                None => ("FEEDBACK", Some(String::new())),
            },
        };
        values.insert(name, value.ok_or(PromptError::MissingContextField(p))?);
    }

    let mut user = String::new();
    for line in template.user_skeleton.split('\n') {
        let whole = placeholder_re().captures(line.trim()).filter(|c| c[0].len() == line.trim().len());
        if let Some(c) = whole {
            if values.get(&c[1]).is_some_and(|v| v.is_empty()) {
                continue;
            }
        }
        let replaced = placeholder_re().replace_all(line, |c: &regex::Captures| values.get(&c[1]).cloned().unwrap_or_default());
        user.push_str(&replaced);
        user.push('\n');
    }
    let user = user.trim_end().to_string();

    let messages = vec![
        Message { role: Role::System, content: template.system_text.clone() },
        Message { role: Role::User, content: user },
    ];
    Ok(RenderedPrompt {
        token_estimate: estimate_tokens(&messages),
        messages,
        task: template.task,
        round,
        origin: Some(Arc::new((template.clone(), ctx.clone()))),
    })
}

/// Shrinks a prompt until its estimate fits `budget_tokens`: first drops
/// exemplars lowest priority first, then shows only a window of the
/// annotated source centred on the first error marker.
pub fn fit_to_budget(p: &RenderedPrompt, budget_tokens: usize) -> Result<RenderedPrompt, PromptError> {
    if budget_tokens == 0 {
        return Err(PromptError::ZeroBudget);
    }
    if p.token_estimate <= budget_tokens {
        return Ok(p.clone());
    }
    let Some(origin) = p.origin.as_deref() else {
        return Err(PromptError::CannotFit { budget: budget_tokens, needed: p.token_estimate });
    };
    let (mut template, ctx) = origin.clone();

    while !template.exemplars.is_empty() {
        let lowest = template
            .exemplars
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (e.priority, std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
            .unwrap();
        template.exemplars.remove(lowest);
        let r = render_prompt(&template, &ctx)?;
        if r.token_estimate <= budget_tokens {
            return Ok(r);
        }
    }

    let Some(source) = ctx.annotated_source.clone() else {
        let needed = render_prompt(&template, &ctx)?.token_estimate;
        return Err(PromptError::CannotFit { budget: budget_tokens, needed });
    };
    let lines: Vec<&str> = source.lines().collect();
    let centre = lines.iter().position(|l| is_marker_line(l)).unwrap_or(lines.len() / 2);
    let render_window = |radius: usize| {
        let mut c = ctx.clone();
        c.annotated_source = Some(window(&lines, centre, radius));
        render_prompt(&template, &c)
    };
    let smallest = render_window(0)?;
    if smallest.token_estimate > budget_tokens {
        return Err(PromptError::CannotFit { budget: budget_tokens, needed: smallest.token_estimate });
    }
    // largest radius that still fits
    let (mut lo, mut hi) = (0usize, lines.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if render_window(mid)?.token_estimate <= budget_tokens {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    render_window(lo)
}

/// Lines `centre - radius ..= centre + 1 + radius`, with elision comments
/// for what was cut. The line after the centre (the marked line itself)
/// is always kept.
fn window(lines: &[&str], centre: usize, radius: usize) -> String {
    let start = centre.saturating_sub(radius);
    let end = (centre + 2 + radius).min(lines.len());
    let mut out = Vec::new();
    if start > 0 {
        out.push(format!("// ... {start} lines omitted ..."));
    }
    out.extend(lines[start..end].iter().map(|l| l.to_string()));
    if end < lines.len() {
        out.push(format!("// ... {} lines omitted ...", lines.len() - end));
    }
    out.join("\n")
}
