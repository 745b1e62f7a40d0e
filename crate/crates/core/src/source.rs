//! Positioned Dafny source text and span-safe edits.
//!
//! Byte offsets are the source of truth; 1-based line/column pairs are
//! derived from them so that verifier positions can be mapped back onto the
//! text. Columns count characters, as the verifier does.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lex::{self, TokKind, Token};
use crate::verifier::Diagnostic;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SourceError {
    #[error("patch was built against {expected} but the text is {actual}")]
    StaleBase { expected: ContentHash, actual: ContentHash },
    #[error("edits overlap at byte {0}")]
    OverlappingEdits(usize),
    #[error("span {line}:{col} lies outside the text")]
    SpanOutOfRange { line: usize, col: usize },
    #[error("byte range {0}..{1} is not a valid span of the text")]
    BadOffsets(usize, usize),
}

/// Hex SHA-256 of the (LF-normalized) content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(content: &str) -> Self {
        ContentHash(hex::encode(Sha256::digest(content.as_bytes())))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 12 hex digits, for logs and reports.
    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(12)]
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineEnding {
    #[default]
    Lf,
    Crlf,
}

impl LineEnding {
    /// Majority style of `raw`; ties and line-less input default to LF.
    pub fn detect(raw: &str) -> Self {
        let crlf = raw.matches("\r\n").count();
        let lf = raw.matches('\n').count() - crlf;
        if crlf > lf {
            LineEnding::Crlf
        } else {
            LineEnding::Lf
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceText {
    path: PathBuf,
    content: String,
    line_index: Vec<usize>,
    content_hash: ContentHash,
    line_ending: LineEnding,
}

impl SourceText {
    /// Builds a text from raw file content. CRLF line endings are normalized
    /// to LF internally and restored by [`SourceText::to_disk_string`].
    pub fn new(path: impl Into<PathBuf>, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let line_ending = LineEnding::detect(&raw);
        let content = if raw.contains('\r') { raw.replace("\r\n", "\n") } else { raw };
        Self::with_line_ending(path.into(), content, line_ending)
    }

    fn with_line_ending(path: PathBuf, content: String, line_ending: LineEnding) -> Self {
        let mut line_index = vec![0];
        line_index.extend(content.match_indices('\n').map(|(i, _)| i + 1));
        if line_index.len() > 1 && *line_index.last().unwrap() == content.len() {
            // a trailing newline does not open a new line
            line_index.pop();
        }
        let content_hash = ContentHash::of(&content);
        SourceText { path, content, line_index, content_hash, line_ending }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)?;
        Ok(Self::new(path, raw))
    }

    /// A new text at the same path with the same line-ending style.
    pub fn with_content(&self, content: impl Into<String>) -> Self {
        Self::with_line_ending(self.path.clone(), content.into(), self.line_ending)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn line_index(&self) -> &[usize] {
        &self.line_index
    }

    pub fn content_hash(&self) -> &ContentHash {
        &self.content_hash
    }

    pub fn line_ending(&self) -> LineEnding {
        self.line_ending
    }

    pub fn line_count(&self) -> usize {
        self.line_index.len()
    }

    pub fn to_disk_string(&self) -> String {
        match self.line_ending {
            LineEnding::Lf => self.content.clone(),
            LineEnding::Crlf => self.content.replace('\n', "\r\n"),
        }
    }

    /// Byte range of line `line` (1-based), excluding its newline.
    pub fn line_range(&self, line: usize) -> Option<(usize, usize)> {
        let start = *self.line_index.get(line.checked_sub(1)?)?;
        let end = self.content[start..].find('\n').map_or(self.content.len(), |n| start + n);
        Some((start, end))
    }

    pub fn line_text(&self, line: usize) -> Option<&str> {
        self.line_range(line).map(|(s, e)| &self.content[s..e])
    }

    /// 1-based (line, col) of a byte offset.
    pub fn position_of(&self, offset: usize) -> (usize, usize) {
        let line = self.line_index.partition_point(|&s| s <= offset).max(1);
        let start = self.line_index[line - 1];
        let col = self.content[start..offset.min(self.content.len())].chars().count() + 1;
        (line, col)
    }

    /// Byte offset of a 1-based (line, col). A column one past the end of the
    /// line is accepted and maps to the line end.
    pub fn offset_of(&self, line: usize, col: usize) -> Result<usize, SourceError> {
        let out = SourceError::SpanOutOfRange { line, col };
        let (start, end) = self.line_range(line).ok_or_else(|| out.clone())?;
        if col == 0 {
            return Err(out);
        }
        let mut off = start;
        for _ in 1..col {
            let c = self.content[off..end].chars().next().ok_or_else(|| out.clone())?;
            off += c.len_utf8();
        }
        Ok(off)
    }

    pub fn span(&self, start_off: usize, end_off: usize) -> Result<Span, SourceError> {
        if start_off > end_off
            || end_off > self.content.len()
            || !self.content.is_char_boundary(start_off)
            || !self.content.is_char_boundary(end_off)
        {
            return Err(SourceError::BadOffsets(start_off, end_off));
        }
        let (start_line, start_col) = self.position_of(start_off);
        let (end_line, end_col) = self.position_of(end_off);
        Ok(Span { start_line, start_col, end_line, end_col, start_off, end_off })
    }

    /// Re-derives the offsets of a span that only carries line/column data.
    pub fn anchor(&self, span: &Span) -> Result<Span, SourceError> {
        let start = self.offset_of(span.start_line, span.start_col)?;
        let end = self
            .offset_of(span.end_line, span.end_col)
            .unwrap_or(start)
            .max(start);
        self.span(start, end)
    }

    pub fn slice(&self, span: &Span) -> &str {
        &self.content[span.start_off..span.end_off]
    }
}

/// A region of a [`SourceText`]. Line/column positions are 1-based; the end
/// position is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start_line: usize,
    pub start_col: usize,
    pub end_line: usize,
    pub end_col: usize,
    pub start_off: usize,
    pub end_off: usize,
}

impl Span {
    /// A span known only by position, with unresolved offsets.
    pub fn at(line: usize, col: usize) -> Self {
        Span { start_line: line, start_col: col, end_line: line, end_col: col, start_off: 0, end_off: 0 }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start_off <= other.start_off && other.end_off <= self.end_off
    }

    pub fn contains_offset(&self, off: usize) -> bool {
        self.start_off <= off && off <= self.end_off
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start_off < other.end_off && other.start_off < self.end_off
    }

    pub fn len(&self) -> usize {
        self.end_off - self.start_off
    }

    pub fn is_empty(&self) -> bool {
        self.start_off == self.end_off
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub span: Span,
    pub replacement: String,
}

impl Edit {
    pub fn new(span: Span, replacement: impl Into<String>) -> Self {
        Edit { span, replacement: replacement.into() }
    }
}

/// An ordered set of non-overlapping edits against one exact text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub base_hash: ContentHash,
    edits: Vec<Edit>,
}

impl Patch {
    /// Sorts `edits` by position and rejects overlaps. Two insertions at the
    /// same offset count as overlapping since their order would be ambiguous.
    pub fn new(base_hash: ContentHash, mut edits: Vec<Edit>) -> Result<Self, SourceError> {
        edits.sort_by_key(|e| (e.span.start_off, e.span.end_off));
        for pair in edits.windows(2) {
            let (a, b) = (&pair[0].span, &pair[1].span);
            let same_point = a.is_empty() && b.is_empty() && a.start_off == b.start_off;
            if a.overlaps(b) || same_point || b.start_off < a.end_off {
                return Err(SourceError::OverlappingEdits(b.start_off));
            }
        }
        Ok(Patch { base_hash, edits })
    }

    pub fn empty(base_hash: ContentHash) -> Self {
        Patch { base_hash, edits: Vec::new() }
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// Bytes removed plus bytes inserted.
    pub fn size_bytes(&self) -> usize {
        self.edits.iter().map(|e| e.span.len() + e.replacement.len()).sum()
    }
}

pub fn apply_patch(text: &SourceText, patch: &Patch) -> Result<SourceText, SourceError> {
    if patch.base_hash != text.content_hash {
        return Err(SourceError::StaleBase {
            expected: patch.base_hash.clone(),
            actual: text.content_hash.clone(),
        });
    }
    if patch.edits.is_empty() {
        return Ok(text.clone());
    }
    let src = &text.content;
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for edit in &patch.edits {
        let span = &edit.span;
        if span.start_off < cursor {
            return Err(SourceError::OverlappingEdits(span.start_off));
        }
        if span.end_off > src.len()
            || !src.is_char_boundary(span.start_off)
            || !src.is_char_boundary(span.end_off)
        {
            return Err(SourceError::BadOffsets(span.start_off, span.end_off));
        }
        out.push_str(&src[cursor..span.start_off]);
        out.push_str(&edit.replacement);
        cursor = span.end_off;
    }
    out.push_str(&src[cursor..]);
    Ok(text.with_content(out))
}

/// Opening token of an error marker comment.
pub const MARKER_PREFIX: &str = "// VERIFIER_ERROR ";
const MARKER_SUFFIX: &str = " //";

/// Collapses a (possibly multi-line) verifier message onto one line.
pub fn flatten_message(message: &str) -> String {
    message
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn marker_comment(message: &str) -> String {
    format!("{MARKER_PREFIX}{}{MARKER_SUFFIX}", flatten_message(message))
}

pub fn is_marker_line(line: &str) -> bool {
    let t = line.trim();
    t.starts_with(MARKER_PREFIX) && t.ends_with(MARKER_SUFFIX)
}

/// Inserts `// VERIFIER_ERROR <message> //` on its own line directly above
/// the line where the diagnostic starts, using that line's indentation.
pub fn insert_error_marker(text: &SourceText, diag: &Diagnostic) -> Result<SourceText, SourceError> {
    let line = diag.span.start_line;
    let (start, end) = text
        .line_range(line)
        .ok_or(SourceError::SpanOutOfRange { line, col: diag.span.start_col })?;
    let line_text = &text.content[start..end];
    let indent: String = line_text.chars().take_while(|c| *c == ' ' || *c == '\t').collect();
    let marker = format!("{indent}{}\n", marker_comment(&diag.message));
    let at = text.span(start, start)?;
    apply_patch(text, &Patch::new(text.content_hash.clone(), vec![Edit::new(at, marker)])?)
}

/// Inserts one marker per diagnostic (bottom-up so positions stay valid).
pub fn insert_error_markers(text: &SourceText, diags: &[Diagnostic]) -> Result<SourceText, SourceError> {
    let mut sorted: Vec<&Diagnostic> = diags.iter().collect();
    sorted.sort_by_key(|d| std::cmp::Reverse((d.span.start_line, d.span.start_col)));
    let mut out = text.clone();
    for d in sorted {
        out = insert_error_marker(&out, d)?;
    }
    Ok(out)
}

/// Removes every marker line.
pub fn strip_error_markers(content: &str) -> String {
    let mut out = String::with_capacity(content.len());
    for line in content.split_inclusive('\n') {
        if !is_marker_line(line) {
            out.push_str(line);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeclKind {
    Method,
    Lemma,
    Function,
    Predicate,
    GhostFunction,
    GhostPredicate,
    Datatype,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclarationInfo {
    pub kind: DeclKind,
    pub name: String,
    pub extent: Span,
    pub header_extent: Span,
    /// The `{ ... }` body, when the declaration has one.
    pub body: Option<Span>,
}

impl DeclarationInfo {
    pub fn has_attribute(&self, text: &SourceText, attr: &str) -> bool {
        let header = text.slice(&self.header_extent);
        let toks = lex::code_tokens(header);
        toks.iter().enumerate().any(|(i, _)| {
            lex::is_attribute_open(header, &toks, i)
                && toks.get(i + 2).is_some_and(|t| t.is(header, attr))
        })
    }
}

const MODIFIERS: &[&str] = &["ghost", "static", "opaque", "abstract", "twostate", "least", "greatest", "inductive", "copredicate"];
const CONTAINERS: &[&str] = &["module", "class", "trait"];
const LEAF_KINDS: &[&str] = &[
    "method", "constructor", "lemma", "function", "predicate", "datatype", "codatatype", "type",
    "newtype", "const", "iterator", "var", "include", "import", "export",
];

struct DeclScanner<'a> {
    src: &'a str,
    toks: Vec<Token>,
    out: Vec<(DeclKind, String, usize, usize, usize, Option<(usize, usize)>)>,
}

impl<'a> DeclScanner<'a> {
    fn word(&self, i: usize) -> &'a str {
        let t = self.toks[i];
        if t.kind == TokKind::Ident {
            t.text(self.src)
        } else {
            ""
        }
    }

    /// Index just past the modifiers starting at `i`, if a declaration
    /// keyword follows them.
    fn decl_keyword_at(&self, i: usize) -> Option<usize> {
        let mut k = i;
        while k < self.toks.len() && MODIFIERS.contains(&self.word(k)) {
            k += 1;
        }
        if k >= self.toks.len() {
            return None;
        }
        let w = self.word(k);
        (CONTAINERS.contains(&w) || LEAF_KINDS.contains(&w)).then_some(k)
    }

    /// Scans declarations from `i` until the closing brace of the current
    /// container (or the end of input). Returns the index after that brace.
    fn scan_level(&mut self, mut i: usize) -> usize {
        while i < self.toks.len() {
            if self.toks[i].is(self.src, "}") {
                return i + 1;
            }
            let Some(kw) = self.decl_keyword_at(i) else {
                if self.toks[i].is(self.src, "{") {
                    i = lex::matching_close(self.src, &self.toks, i).map_or(self.toks.len(), |c| c + 1);
                } else {
                    i += 1;
                }
                continue;
            };
            if CONTAINERS.contains(&self.word(kw)) {
                let mut k = kw + 1;
                while k < self.toks.len() && !(self.toks[k].is(self.src, "{") && !lex::is_attribute_open(self.src, &self.toks, k)) {
                    if let Some(close) = self.attr_close(k) {
                        k = close + 1;
                    } else {
                        k += 1;
                    }
                }
                i = self.scan_level(k + 1);
                continue;
            }
            i = self.scan_leaf(i, kw);
        }
        i
    }

    fn attr_close(&self, k: usize) -> Option<usize> {
        if lex::is_attribute_open(self.src, &self.toks, k) {
            lex::matching_close(self.src, &self.toks, k)
        } else {
            None
        }
    }

    fn scan_leaf(&mut self, start: usize, kw: usize) -> usize {
        let src = self.src;
        let mods: Vec<&str> = (start..kw).map(|k| self.word(k)).collect();
        let ghost = mods.contains(&"ghost");
        let kind = match self.word(kw) {
            "method" | "constructor" => DeclKind::Method,
            "lemma" => DeclKind::Lemma,
            "function" if ghost => DeclKind::GhostFunction,
            "predicate" if ghost => DeclKind::GhostPredicate,
            "function" => DeclKind::Function,
            "predicate" => DeclKind::Predicate,
            "datatype" | "codatatype" => DeclKind::Datatype,
            _ => DeclKind::Other,
        };
        let mut k = kw + 1;
        // `function method` / `predicate method`
        if matches!(kind, DeclKind::Function | DeclKind::Predicate) && self.word(k) == "method" {
            k += 1;
        }
        while let Some(close) = self.attr_close(k) {
            k = close + 1;
        }
        let name = if k < self.toks.len() && matches!(self.toks[k].kind, TokKind::Ident | TokKind::Str) {
            self.toks[k].text(src).to_string()
        } else {
            String::new()
        };

        let mut last = kw;
        let mut body = None;
        let mut j = k;
        while j < self.toks.len() {
            let t = self.toks[j];
            if t.is(src, "}") || self.decl_keyword_at(j).is_some() {
                break;
            }
            if t.is(src, "(") || t.is(src, "[") || self.attr_close(j).is_some() {
                let close = self.attr_close(j).or_else(|| lex::matching_close(src, &self.toks, j));
                let close = close.unwrap_or(self.toks.len() - 1);
                last = close;
                j = close + 1;
                continue;
            }
            if t.is(src, "{") {
                let close = lex::matching_close(src, &self.toks, j).unwrap_or(self.toks.len() - 1);
                body = Some((j, close));
                last = close;
                j = close + 1;
                break;
            }
            last = j;
            j += 1;
        }
        let extent_start = self.toks[start].start;
        let extent_end = self.toks[last].end;
        let header_end = match body {
            Some((open, _)) if open > kw => self.toks[open - 1].end,
            Some(_) => self.toks[kw].end,
            None => extent_end,
        };
        let body_range = body.map(|(o, c)| (self.toks[o].start, self.toks[c].end));
        self.out.push((kind, name, extent_start, extent_end, header_end, body_range));
        j
    }
}

/// All non-container declarations of the file in document order. Members
/// of modules, classes and traits are reported; the containers are not, so
/// extents never overlap.
pub fn scan_declarations(text: &SourceText) -> Vec<DeclarationInfo> {
    let mut scanner = DeclScanner { src: text.content(), toks: lex::code_tokens(text.content()), out: Vec::new() };
    let mut i = 0;
    while i < scanner.toks.len() {
        i = scanner.scan_level(i);
    }
    scanner
        .out
        .into_iter()
        .filter_map(|(kind, name, s, e, h, body)| {
            Some(DeclarationInfo {
                kind,
                name,
                extent: text.span(s, e).ok()?,
                header_extent: text.span(s, h).ok()?,
                body: body.and_then(|(bs, be)| text.span(bs, be).ok()),
            })
        })
        .collect()
}

/// The declaration whose extent contains `span`, if any.
pub fn find_enclosing_declaration(text: &SourceText, span: &Span) -> Option<DeclarationInfo> {
    scan_declarations(text).into_iter().find(|d| d.extent.contains(span))
}

pub fn find_declaration(text: &SourceText, kind: DeclKind, name: &str) -> Option<DeclarationInfo> {
    scan_declarations(text).into_iter().find(|d| d.kind == kind && d.name == name)
}

/// A line-based diff between two texts as a [`Patch`] on `from`. Every edit
/// covers whole lines and changes them.
pub fn line_diff(from: &SourceText, to: &str) -> Patch {
    use similar::{DiffOp, TextDiff};
    let old = from.content();
    let diff = TextDiff::from_lines(old, to);
    let old_lines: Vec<&str> = old.split_inclusive('\n').collect();
    let new_lines: Vec<&str> = to.split_inclusive('\n').collect();
    let mut old_starts = Vec::with_capacity(old_lines.len() + 1);
    let mut acc = 0;
    for l in &old_lines {
        old_starts.push(acc);
        acc += l.len();
    }
    old_starts.push(acc);

    let mut edits = Vec::new();
    for op in diff.ops() {
        let (old_range, new_range) = match *op {
            DiffOp::Equal { .. } => continue,
            DiffOp::Delete { old_index, old_len, new_index } => (old_index..old_index + old_len, new_index..new_index),
            DiffOp::Insert { old_index, new_index, new_len } => (old_index..old_index, new_index..new_index + new_len),
            DiffOp::Replace { old_index, old_len, new_index, new_len } => {
                (old_index..old_index + old_len, new_index..new_index + new_len)
            }
        };
        let s = old_starts[old_range.start];
        let e = old_starts[old_range.end];
        let replacement: String = new_lines[new_range].concat();
        if old[s..e] == replacement {
            continue;
        }
        let span = from.span(s, e).expect("line boundaries are valid offsets");
        edits.push(Edit::new(span, replacement));
    }
    merge_adjacent(from, edits)
}

fn merge_adjacent(from: &SourceText, edits: Vec<Edit>) -> Patch {
    let mut merged: Vec<Edit> = Vec::new();
    for e in edits {
        match merged.last_mut() {
            Some(prev) if prev.span.end_off == e.span.start_off => {
                prev.replacement.push_str(&e.replacement);
                prev.span = from.span(prev.span.start_off, e.span.end_off).unwrap();
            }
            _ => merged.push(e),
        }
    }
    Patch::new(from.content_hash().clone(), merged).expect("diff hunks are disjoint")
}

/// Standard unified diff between two versions of one file.
pub fn unified_diff(path: &Path, old: &str, new: &str) -> String {
    if old == new {
        return String::new();
    }
    let display = path.display().to_string();
    let name = display.trim_start_matches('/');
    similar::TextDiff::from_lines(old, new)
        .unified_diff()
        .context_radius(3)
        .header(&format!("a/{name}"), &format!("b/{name}"))
        .to_string()
}
