//! A small lexical scanner for Dafny source.
//!
//! It understands just enough of the language to find declaration
//! boundaries and brace groups: identifiers, numbers, string and char
//! literals, nested block comments, line comments and punctuation.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokKind {
    Ident,
    Number,
    Str,
    Char,
    Comment,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn is(&self, src: &str, s: &str) -> bool {
        self.text(src) == s
    }
}

const MULTI_PUNCT: &[&str] = &[
    "<==>", "==>", "<==", "==", "!=", "<=", ">=", ":=", "::", ":|", "=>", "&&", "||", "..", "!!",
];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '?'
}

/// Tokenizes `src`. Never fails: anything unrecognized becomes a one-char
/// punctuation token, and unterminated literals/comments run to the end.
pub(crate) fn tokenize(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        let start = i;
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if src[i..].starts_with("//") {
            i = src[i..].find('\n').map_or(src.len(), |n| i + n);
            toks.push(Token { kind: TokKind::Comment, start, end: i });
            continue;
        }
        if src[i..].starts_with("/*") {
            i = skip_block_comment(src, i);
            toks.push(Token { kind: TokKind::Comment, start, end: i });
            continue;
        }
        if c == '"' || (c == '@' && bytes.get(i + 1) == Some(&b'"')) {
            i = skip_string(src, i);
            toks.push(Token { kind: TokKind::Str, start, end: i });
            continue;
        }
        if c == '\'' {
            if let Some(end) = char_literal_end(src, i) {
                i = end;
                toks.push(Token { kind: TokKind::Char, start, end: i });
                continue;
            }
        }
        if is_ident_start(c) {
            i += c.len_utf8();
            while let Some(n) = src[i..].chars().next() {
                if !is_ident_continue(n) {
                    break;
                }
                i += n.len_utf8();
            }
            toks.push(Token { kind: TokKind::Ident, start, end: i });
            continue;
        }
        if c.is_ascii_digit() {
            while i < src.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            // decimals, but not the `..` of a slice
            if i + 1 < src.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < src.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            toks.push(Token { kind: TokKind::Number, start, end: i });
            continue;
        }
        let len = MULTI_PUNCT
            .iter()
            .find(|p| src[i..].starts_with(**p))
            .map_or(c.len_utf8(), |p| p.len());
        i += len;
        toks.push(Token { kind: TokKind::Punct, start, end: i });
    }
    toks
}

fn skip_block_comment(src: &str, from: usize) -> usize {
    let bytes = src.as_bytes();
    let mut depth = 0usize;
    let mut i = from;
    while i < bytes.len() {
        if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
            depth += 1;
            i += 2;
        } else if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
            depth -= 1;
            i += 2;
            if depth == 0 {
                return i;
            }
        } else {
            i += 1;
        }
    }
    src.len()
}

fn skip_string(src: &str, from: usize) -> usize {
    let bytes = src.as_bytes();
    if bytes[from] == b'@' {
        let mut i = from + 2;
        while i < bytes.len() {
            if bytes[i] == b'"' {
                if bytes.get(i + 1) == Some(&b'"') {
                    i += 2;
                    continue;
                }
                return i + 1;
            }
            i += 1;
        }
        return src.len();
    }
    let mut i = from + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            b'\n' => return i,
            _ => i += 1,
        }
    }
    src.len()
}

fn char_literal_end(src: &str, from: usize) -> Option<usize> {
    let rest = &src[from + 1..];
    let mut chars = rest.char_indices();
    let (_, c) = chars.next()?;
    if c == '\\' {
        for (k, n) in chars {
            if n == '\'' {
                return Some(from + 1 + k + 1);
            }
            if n == '\n' || k > 12 {
                return None;
            }
        }
        None
    } else if c == '\'' || c == '\n' {
        None
    } else {
        let after = from + 1 + c.len_utf8();
        (src.as_bytes().get(after) == Some(&b'\'')).then_some(after + 1)
    }
}

/// Non-comment tokens only.
pub(crate) fn code_tokens(src: &str) -> Vec<Token> {
    tokenize(src)
        .into_iter()
        .filter(|t| t.kind != TokKind::Comment)
        .collect()
}

/// Given `toks[open]` is an opening bracket, returns the index of its
/// matching closer, or `None` when the group is unterminated.
pub(crate) fn matching_close(src: &str, toks: &[Token], open: usize) -> Option<usize> {
    let (o, c) = match toks[open].text(src) {
        "{" => ("{", "}"),
        "(" => ("(", ")"),
        "[" => ("[", "]"),
        _ => return None,
    };
    let mut depth = 0usize;
    for (k, t) in toks.iter().enumerate().skip(open) {
        if t.kind != TokKind::Punct {
            continue;
        }
        let s = t.text(src);
        if s == o {
            depth += 1;
        } else if s == c {
            depth -= 1;
            if depth == 0 {
                return Some(k);
            }
        }
    }
    None
}

/// True when the `{` at `toks[i]` opens an attribute such as `{:axiom}`.
pub(crate) fn is_attribute_open(src: &str, toks: &[Token], i: usize) -> bool {
    toks[i].is(src, "{")
        && toks
            .get(i + 1)
            .is_some_and(|n| n.text(src).starts_with(':') && n.start == toks[i].end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<&str> {
        tokenize(src).iter().map(|t| t.text(src)).collect()
    }

    #[test]
    fn primes_belong_to_identifiers() {
        assert_eq!(texts("x' := 'a';"), vec!["x'", ":=", "'a'", ";"]);
    }

    #[test]
    fn nested_block_comments() {
        let src = "a /* b /* c */ d */ e";
        assert_eq!(texts(src), vec!["a", "/* b /* c */ d */", "e"]);
    }

    #[test]
    fn braces_inside_strings_are_not_punctuation() {
        let src = r#"var s := "{ } \" {"; }"#;
        let toks = code_tokens(src);
        let braces = toks.iter().filter(|t| t.kind == TokKind::Punct && t.text(src) == "}").count();
        assert_eq!(braces, 1);
    }

    #[test]
    fn slices_are_not_decimals() {
        assert_eq!(texts("a[1..]"), vec!["a", "[", "1", "..", "]"]);
    }

    #[test]
    fn attribute_detection() {
        let src = "lemma {:axiom} L() { }";
        let toks = code_tokens(src);
        assert!(is_attribute_open(src, &toks, 1));
        let body = toks.iter().rposition(|t| t.is(src, "{")).unwrap();
        assert!(!is_attribute_open(src, &toks, body));
    }
}
