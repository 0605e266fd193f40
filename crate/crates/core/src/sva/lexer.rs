use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    Operator,
    Punctuation,
    SystemTask,
    Str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvaToken {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset into the lexed source.
    pub offset: usize,
}

/// Cycle delay carried by a `##` operator token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delay {
    Fixed(u64),
    /// `##[lo:hi]`; `hi` is `None` for `$`.
    Range(u64, Option<u64>),
}

impl SvaToken {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn is_keyword(&self, text: &str) -> bool {
        self.is(TokenKind::Keyword, text)
    }

    pub fn is_punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuation, text)
    }

    /// Delay argument of a `##N` or `##[a:b]` token.
    pub fn delay(&self) -> Option<Delay> {
        if self.kind != TokenKind::Operator {
            return None;
        }
        let rest = self.text.strip_prefix("##")?;
        if let Some(inner) = rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let (lo, hi) = inner.split_once(':')?;
            let hi = if hi == "$" { None } else { Some(hi.parse().ok()?) };
            return Some(Delay::Range(lo.parse().ok()?, hi));
        }
        rest.parse().ok().map(Delay::Fixed)
    }
}

impl fmt::Display for SvaToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

const KEYWORDS: &[&str] = &[
    "accept_on", "always", "and", "assert", "assume", "begin", "bit", "case", "clocking", "cover", "default",
    "disable", "edge", "else", "end", "endcase", "endclocking", "endproperty", "endsequence", "eventually",
    "expect", "final", "first_match", "if", "iff", "implies", "int", "intersect", "logic", "negedge",
    "nexttime", "not", "or", "posedge", "property", "reject_on", "restrict", "s_always", "s_eventually",
    "s_nexttime", "s_until", "s_until_with", "sequence", "strong", "sync_accept_on", "sync_reject_on",
    "throughout", "until", "until_with", "weak", "within",
];

/// Multi-character operators, longest first.
const OPERATORS: &[&str] = &[
    "<<<=", ">>>=", "|->", "|=>", "<->", "===", "!==", "==?", "!=?", "<<<", ">>>", "[->", "->", "==", "!=",
    "<=", ">=", "&&", "||", "<<", ">>", "**", "~&", "~|", "~^", "^~", "[*", "[=", "::", "+:", "-:",
];

const SINGLE_OPERATORS: &str = "+-*/%!~&|^<>=?:";
const PUNCTUATION: &str = "()[]{};,.@#'$";

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok()
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn lex_error(text: &str, offset: usize, message: impl Into<String>) -> Error {
    let (line, column) = line_col(text, offset);
    Error::Lex { line, column, message: message.into() }
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_'
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

fn is_base_char(c: u8) -> bool {
    matches!(c.to_ascii_lowercase(), b'b' | b'o' | b'd' | b'h')
}

fn is_based_digit(c: u8) -> bool {
    c.is_ascii_hexdigit() || matches!(c.to_ascii_lowercase(), b'x' | b'z' | b'?' | b'_')
}

/// Length of a `'[s]b0101`-style based literal starting at `i` (the quote).
fn based_literal_len(bytes: &[u8], i: usize) -> Option<usize> {
    let mut j = i + 1;
    if j < bytes.len() && matches!(bytes[j], b's' | b'S') {
        j += 1;
    }
    if j < bytes.len() && is_base_char(bytes[j]) {
        j += 1;
        let start = j;
        while j < bytes.len() && is_based_digit(bytes[j]) {
            j += 1;
        }
        if j > start {
            return Some(j - i);
        }
        return None;
    }
    // unbased unsized fill: '0 '1 'x 'z
    if j == i + 1 && j < bytes.len() && matches!(bytes[j], b'0' | b'1' | b'x' | b'X' | b'z' | b'Z') {
        let next = bytes.get(j + 1).copied();
        if !next.is_some_and(is_ident_char) {
            return Some(2);
        }
    }
    None
}

/// Longest-match tokenization of an SVA fragment. Comments are dropped.
pub fn lex(text: &str) -> Result<Vec<SvaToken>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let push = |tokens: &mut Vec<SvaToken>, kind, s: &str, offset| {
        tokens.push(SvaToken { kind, text: s.to_string(), offset });
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if text[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if text[i..].starts_with("/*") {
            match text[i + 2..].find("*/") {
                Some(end) => i += end + 4,
                None => return Err(lex_error(text, i, "unterminated block comment")),
            }
            continue;
        }
        let start = i;
        if is_ident_start(c) {
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            let word = &text[start..i];
            let kind = if is_keyword(word) { TokenKind::Keyword } else { TokenKind::Identifier };
            push(&mut tokens, kind, word, start);
            continue;
        }
        if c == b'$' && bytes.get(i + 1).copied().is_some_and(is_ident_start) {
            i += 1;
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            push(&mut tokens, TokenKind::SystemTask, &text[start..i], start);
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'\'' {
                if let Some(n) = based_literal_len(bytes, i) {
                    i += n;
                }
            }
            push(&mut tokens, TokenKind::Number, &text[start..i], start);
            continue;
        }
        if c == b'\'' {
            if let Some(n) = based_literal_len(bytes, i) {
                i += n;
                push(&mut tokens, TokenKind::Number, &text[start..i], start);
                continue;
            }
        }
        if c == b'"' {
            i += 1;
            while i < bytes.len() && bytes[i] != b'"' {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'\n' {
                    return Err(lex_error(text, start, "unterminated string literal"));
                }
                i += 1;
            }
            if i >= bytes.len() {
                return Err(lex_error(text, start, "unterminated string literal"));
            }
            i += 1;
            push(&mut tokens, TokenKind::Str, &text[start..i], start);
            continue;
        }
        if text[i..].starts_with("##") {
            let after = i + 2;
            if bytes.get(after).is_some_and(|b| b.is_ascii_digit()) {
                let mut j = after;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
                push(&mut tokens, TokenKind::Operator, &text[start..i], start);
                continue;
            }
            if bytes.get(after) == Some(&b'[') {
                if let Some(close) = text[after..].find(']') {
                    let inner = &text[after + 1..after + close];
                    let compact: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
                    let ok = compact
                        .split_once(':')
                        .is_some_and(|(lo, hi)| is_uint(lo) && (is_uint(hi) || hi == "$"));
                    if ok {
                        i = after + close + 1;
                        push(&mut tokens, TokenKind::Operator, &format!("##[{compact}]"), start);
                        continue;
                    }
                }
            }
            i += 2;
            push(&mut tokens, TokenKind::Operator, "##", start);
            continue;
        }
        if let Some(op) = OPERATORS.iter().find(|op| text[i..].starts_with(**op)) {
            i += op.len();
            push(&mut tokens, TokenKind::Operator, op, start);
            continue;
        }
        if c.is_ascii() && SINGLE_OPERATORS.contains(c as char) {
            i += 1;
            push(&mut tokens, TokenKind::Operator, &text[start..i], start);
            continue;
        }
        if c.is_ascii() && PUNCTUATION.contains(c as char) {
            i += 1;
            push(&mut tokens, TokenKind::Punctuation, &text[start..i], start);
            continue;
        }
        let ch = text[i..].chars().next().unwrap_or('?');
        return Err(lex_error(text, i, format!("illegal character {ch:?}")));
    }
    Ok(tokens)
}

fn is_uint(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Token texts joined by single spaces.
pub fn join_tokens(tokens: &[SvaToken]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds(text: &str) -> Vec<(TokenKind, String)> {
        lex(text).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        assert!(KEYWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn implication() {
        assert_eq!(
            kinds("a |-> b"),
            vec![(Identifier, "a".into()), (Operator, "|->".into()), (Identifier, "b".into())]
        );
        assert_eq!(kinds("a|=>b")[1], (Operator, "|=>".into()));
    }

    #[test]
    fn delays() {
        let t = lex("##1").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].kind, Operator);
        assert_eq!(t[0].delay(), Some(Delay::Fixed(1)));
        let t = lex("##[1:3] ##[0:$] ##[ 2 : 4 ]").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].delay(), Some(Delay::Range(1, Some(3))));
        assert_eq!(t[1].delay(), Some(Delay::Range(0, None)));
        assert_eq!(t[2].text, "##[2:4]");
        assert_eq!(kinds("## 2"), vec![(Operator, "##".into()), (Number, "2".into())]);
    }

    #[test]
    fn comments_are_stripped() {
        assert_eq!(kinds("/* x */ a"), vec![(Identifier, "a".into())]);
        assert_eq!(kinds("a // tail\nb"), vec![(Identifier, "a".into()), (Identifier, "b".into())]);
        let err = lex("a /* open").unwrap_err();
        assert!(matches!(err, Error::Lex { line: 1, column: 3, .. }), "{err}");
    }

    #[test]
    fn system_tasks_clocking_and_numbers() {
        let t = kinds("@(posedge clk) $rose(req) |-> 8'hFF == 'b0 && $past(q, 2)");
        assert_eq!(t[0], (Punctuation, "@".into()));
        assert_eq!(t[2], (Keyword, "posedge".into()));
        assert_eq!(t[5], (SystemTask, "$rose".into()));
        assert!(t.contains(&(Number, "8'hFF".into())));
        assert!(t.contains(&(Number, "'b0".into())));
        assert!(!t.contains(&(Keyword, "disable".into())));
    }

    #[test]
    fn sequence_keywords() {
        let t = kinds("disable iff (rst) a throughout b until c");
        assert_eq!(t[0], (Keyword, "disable".into()));
        assert_eq!(t[1], (Keyword, "iff".into()));
        assert!(t.contains(&(Keyword, "throughout".into())));
        assert!(t.contains(&(Keyword, "until".into())));
    }

    #[test]
    fn illegal_character_position() {
        let err = lex("a\n  `define").unwrap_err();
        assert!(matches!(err, Error::Lex { line: 2, column: 3, .. }), "{err}");
    }

    #[test]
    fn repetition_operators() {
        let t = kinds("a[*3] b[->1] c[=2]");
        assert!(t.contains(&(Operator, "[*".into())));
        assert!(t.contains(&(Operator, "[->".into())));
        assert!(t.contains(&(Operator, "[=".into())));
    }
}
