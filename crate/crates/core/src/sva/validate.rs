use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, line_col, SvaToken, TokenKind};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

struct Checker<'a> {
    text: &'a str,
    tokens: Vec<SvaToken>,
    diags: Vec<Diagnostic>,
}

fn ends_operand(t: &SvaToken) -> bool {
    matches!(t.kind, TokenKind::Identifier | TokenKind::Number | TokenKind::SystemTask | TokenKind::Str)
        || t.is_punct(")")
        || t.is_punct("]")
        || t.is_punct("}")
}

fn starts_operand(t: &SvaToken) -> bool {
    match t.kind {
        TokenKind::Identifier | TokenKind::Number | TokenKind::SystemTask | TokenKind::Str => true,
        TokenKind::Punctuation => matches!(t.text.as_str(), "(" | "{" | "@"),
        TokenKind::Operator => t.text.starts_with("##") || matches!(t.text.as_str(), "!" | "~" | "-" | "&" | "|" | "^"),
        TokenKind::Keyword => matches!(
            t.text.as_str(),
            "not" | "if" | "strong" | "weak" | "first_match" | "nexttime" | "s_nexttime" | "always" | "s_always"
                | "eventually" | "s_eventually" | "accept_on" | "reject_on" | "sync_accept_on" | "sync_reject_on"
        ),
    }
}

impl<'a> Checker<'a> {
    fn report(&mut self, offset: usize, message: impl Into<String>) {
        let (line, column) = line_col(self.text, offset);
        self.diags.push(Diagnostic { line, column, message: message.into() });
    }

    fn end_offset(&self) -> usize {
        self.text.trim_end().len()
    }

    fn offset_at(&self, i: usize) -> usize {
        self.tokens.get(i).map_or_else(|| self.end_offset(), |t| t.offset)
    }

    fn brackets(&mut self) {
        let mut stack: Vec<(char, usize)> = Vec::new();
        let mut found = Vec::new();
        for t in &self.tokens {
            let opener = match t.text.as_str() {
                "(" | "{" | "[" if t.kind == TokenKind::Punctuation => t.text.chars().next(),
                "[*" | "[=" | "[->" => Some('['),
                _ => None,
            };
            if let Some(o) = opener {
                stack.push((o, t.offset));
                continue;
            }
            if t.kind != TokenKind::Punctuation {
                continue;
            }
            let want = match t.text.as_str() {
                ")" => '(',
                "}" => '{',
                "]" => '[',
                _ => continue,
            };
            match stack.pop() {
                Some((o, _)) if o == want => {}
                Some((o, off)) => {
                    found.push((t.offset, format!("'{}' does not close '{o}'", t.text)));
                    stack.push((o, off));
                }
                None => found.push((t.offset, format!("unmatched '{}'", t.text))),
            }
        }
        for (o, off) in stack {
            found.push((off, format!("unclosed '{o}'")));
        }
        for (off, msg) in found {
            self.report(off, msg);
        }
    }

    /// Index just past the group opened at `open`, if it closes.
    fn group_end(&self, open: usize) -> Option<usize> {
        let mut depth = 0usize;
        for (j, t) in self.tokens.iter().enumerate().skip(open) {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(j + 1);
                }
            }
        }
        None
    }

    fn properties(&mut self) {
        let mut open: Option<(usize, String)> = None;
        let mut i = 0;
        while i < self.tokens.len() {
            if super::is_declaration(&self.tokens, i) {
                let decl = self.tokens[i].offset;
                if let Some((off, name)) = open.take() {
                    self.report(off, format!("property '{name}' is missing endproperty"));
                }
                let Some(name) = self.tokens.get(i + 1).filter(|t| t.kind == TokenKind::Identifier).cloned() else {
                    self.report(decl, "property declaration needs a name");
                    i += 1;
                    continue;
                };
                let mut j = i + 2;
                if self.tokens.get(j).is_some_and(|t| t.is_punct("(")) {
                    j = self.group_end(j).unwrap_or(self.tokens.len());
                }
                if self.tokens.get(j).is_some_and(|t| t.is_punct(";")) {
                    j += 1;
                } else {
                    self.report(self.offset_at(j), format!("expected ';' after property '{}' header", name.text));
                }
                if self.tokens.get(j).is_some_and(|t| t.is_keyword("endproperty")) {
                    self.report(self.tokens[j].offset, format!("property '{}' has an empty body", name.text));
                }
                open = Some((decl, name.text));
                i = j;
                continue;
            }
            let t = &self.tokens[i];
            if t.is_keyword("endproperty") {
                let off = t.offset;
                match open.take() {
                    None => self.report(off, "endproperty without matching property"),
                    Some(_) => {
                        if !self.tokens[i - 1].is_punct(";") {
                            self.report(off, "missing ';' before endproperty");
                        }
                    }
                }
            }
            i += 1;
        }
        if let Some((off, name)) = open {
            self.report(off, format!("property '{name}' is missing endproperty"));
        }
    }

    fn assertion_statements(&mut self) -> bool {
        let mut any = self.tokens.iter().enumerate().any(|(i, _)| super::is_declaration(&self.tokens, i));
        let mut i = 0;
        while i < self.tokens.len() {
            let t = &self.tokens[i];
            let is_verb = t.kind == TokenKind::Keyword && matches!(t.text.as_str(), "assert" | "assume" | "cover");
            if !is_verb {
                i += 1;
                continue;
            }
            any = true;
            let verb = t.text.clone();
            let mut j = i + 1;
            if self.tokens.get(j).is_some_and(|n| n.is_keyword("property") || n.is_keyword("final")) {
                j += 1;
            }
            if !self.tokens.get(j).is_some_and(|n| n.is_punct("(")) {
                self.report(self.offset_at(j), format!("expected '(' after {verb}"));
                i = j;
                continue;
            }
            let Some(end) = self.group_end(j) else {
                // reported by the bracket pass
                return any;
            };
            if end == j + 2 {
                self.report(self.tokens[j].offset, format!("empty {verb} expression"));
            }
            match self.tokens.get(end) {
                Some(n) if n.is_punct(";") || n.is_keyword("else") || n.is_keyword("begin") => {}
                Some(n) if n.kind == TokenKind::Identifier || n.kind == TokenKind::SystemTask => {
                    // action statement: must terminate
                    if !self.tokens[end..].iter().any(|x| x.is_punct(";")) {
                        self.report(self.offset_at(end), format!("missing ';' after {verb} statement"));
                    }
                }
                _ => self.report(self.offset_at(end), format!("missing ';' after {verb} statement")),
            }
            i = end;
        }
        any
    }

    fn clocking_events(&mut self) {
        for i in 0..self.tokens.len() {
            if !self.tokens[i].is_punct("@") {
                continue;
            }
            let at = self.tokens[i].offset;
            match self.tokens.get(i + 1) {
                Some(n) if n.kind == TokenKind::Identifier => {}
                Some(n) if n.is_punct("(") => {
                    let Some(end) = self.group_end(i + 1) else { continue };
                    let inner = &self.tokens[i + 2..end - 1];
                    let bad = match inner {
                        [] => Some("empty clocking event"),
                        [e] if e.is_keyword("posedge") || e.is_keyword("negedge") || e.is_keyword("edge") => {
                            Some("clocking edge has no signal")
                        }
                        [e, s, ..]
                            if (e.is_keyword("posedge") || e.is_keyword("negedge") || e.is_keyword("edge"))
                                && !starts_operand(s) =>
                        {
                            Some("clocking edge has no signal")
                        }
                        _ => None,
                    };
                    if let Some(msg) = bad {
                        self.report(at, msg);
                    }
                }
                _ => self.report(at, "malformed clocking event"),
            }
        }
    }

    /// Indices of `)` closing a clocking event or a `disable iff` condition.
    /// These end a prefix, not an operand.
    fn prefix_closers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let opens_prefix = (t.is_punct("@") || t.is_keyword("iff"))
                && self.tokens.get(i + 1).is_some_and(|n| n.is_punct("("));
            if opens_prefix {
                if let Some(end) = self.group_end(i + 1) {
                    out.push(end - 1);
                }
            }
        }
        out
    }

    fn implications(&mut self) {
        let closers = self.prefix_closers();
        let mut found = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let binary = matches!(t.text.as_str(), "|->" | "|=>" | "#-#" | "#=#")
                || (t.kind == TokenKind::Keyword
                    && matches!(t.text.as_str(), "implies" | "iff" | "throughout" | "within" | "intersect" | "until"));
            if t.kind == TokenKind::Keyword && t.text == "iff" {
                // `disable iff (` is checked separately
                if i > 0 && self.tokens[i - 1].is_keyword("disable") {
                    if !self.tokens.get(i + 1).is_some_and(|n| n.is_punct("(")) {
                        found.push((t.offset, "expected '(' after disable iff".to_string()));
                    }
                    continue;
                }
            }
            if !binary {
                continue;
            }
            let left_ok = i > 0 && ends_operand(&self.tokens[i - 1]) && !closers.contains(&(i - 1));
            if !left_ok {
                found.push((t.offset, format!("'{}' is missing its left operand", t.text)));
            }
            let right_ok = self.tokens.get(i + 1).is_some_and(starts_operand);
            if !right_ok {
                found.push((t.offset, format!("'{}' is missing its right operand", t.text)));
            }
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.is_keyword("disable") && !self.tokens.get(i + 1).is_some_and(|n| n.is_keyword("iff")) {
                found.push((t.offset, "expected 'iff' after disable".to_string()));
            }
        }
        for (off, msg) in found {
            self.report(off, msg);
        }
    }
}

/// Structural check of an SVA fragment. Returns every problem found, each
/// with a 1-based line and column.
pub fn validate_syntax(text: &str) -> Result<(), Vec<Diagnostic>> {
    let tokens = match lex(text) {
        Ok(t) => t,
        Err(Error::Lex { line, column, message }) => return Err(vec![Diagnostic { line, column, message }]),
        Err(e) => return Err(vec![Diagnostic { line: 1, column: 1, message: e.to_string() }]),
    };
    let mut c = Checker { text, tokens, diags: Vec::new() };
    c.brackets();
    c.properties();
    let any = c.assertion_statements();
    c.clocking_events();
    c.implications();
    if !any {
        c.report(0, "no assertion or property found");
    }
    c.diags.sort_by_key(|d| (d.line, d.column));
    c.diags.dedup();
    if c.diags.is_empty() {
        Ok(())
    } else {
        Err(c.diags)
    }
}
