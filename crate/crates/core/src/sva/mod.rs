//! SystemVerilog Assertion lexing, canonicalization and structural checks.

mod lexer;
mod validate;

pub use lexer::{is_keyword, join_tokens, lex, line_col, Delay, SvaToken, TokenKind};
pub use validate::{validate_syntax, Diagnostic};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An assertion with declared property names renamed to `P0, P1, ...` in
/// declaration order. Equality compares canonical token sequences only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalAssertion {
    pub original: String,
    pub tokens: Vec<SvaToken>,
    /// `(original, canonical)` in declaration order.
    pub renames: Vec<(String, String)>,
}

impl CanonicalAssertion {
    /// Space-joined token text. Lexing it again yields the same tokens.
    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }

    /// Kind and text of each token, ignoring source offsets.
    pub fn key(&self) -> Vec<(TokenKind, &str)> {
        self.tokens.iter().map(|t| (t.kind, t.text.as_str())).collect()
    }

    pub fn is_property_name(&self, text: &str) -> bool {
        self.renames.iter().any(|(_, c)| c == text)
    }
}

impl PartialEq for CanonicalAssertion {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for CanonicalAssertion {}

fn is_assert_verb(t: &SvaToken) -> bool {
    t.kind == TokenKind::Keyword && matches!(t.text.as_str(), "assert" | "assume" | "cover" | "expect" | "restrict")
}

/// True when `tokens[i]` is the `property` keyword of a declaration rather
/// than of `assert property`.
pub(crate) fn is_declaration(tokens: &[SvaToken], i: usize) -> bool {
    tokens[i].is_keyword("property") && (i == 0 || !is_assert_verb(&tokens[i - 1]))
}

fn declared_names(tokens: &[SvaToken]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for i in 0..tokens.len() {
        if is_declaration(tokens, i) {
            if let Some(name) = tokens.get(i + 1).filter(|t| t.kind == TokenKind::Identifier) {
                if !names.contains(&name.text) {
                    names.push(name.text.clone());
                }
            }
        }
    }
    names
}

/// Matches `prefix` followed by one or more digits.
fn collides(ident: &str, prefix: &str) -> bool {
    ident
        .strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

pub fn canonicalize(text: &str) -> Result<CanonicalAssertion> {
    let mut tokens = lex(text)?;
    let names = declared_names(&tokens);
    let declared: BTreeSet<&str> = names.iter().map(String::as_str).collect();
    let others: BTreeSet<&str> = tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Identifier && !declared.contains(t.text.as_str()))
        .map(|t| t.text.as_str())
        .collect();
    let mut prefix = String::from("P");
    while others.iter().any(|o| collides(o, &prefix)) {
        prefix.push('_');
    }
    let renames: Vec<(String, String)> =
        names.iter().enumerate().map(|(i, n)| (n.clone(), format!("{prefix}{i}"))).collect();
    for t in tokens.iter_mut().filter(|t| t.kind == TokenKind::Identifier) {
        if let Some((_, canon)) = renames.iter().find(|(orig, _)| *orig == t.text) {
            t.text = canon.clone();
        }
    }
    Ok(CanonicalAssertion { original: text.to_string(), tokens, renames })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionBody {
    pub tokens: Vec<SvaToken>,
    /// Canonical names of declared properties whose body is empty.
    pub empty_properties: Vec<String>,
}

impl AssertionBody {
    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }
}

/// Index just past the parenthesis group opening at `open`.
fn skip_group(tokens: &[SvaToken], open: usize) -> Result<usize> {
    let mut depth = 0usize;
    for (j, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return Ok(j + 1);
            }
        }
    }
    Err(Error::Unbalanced(format!("unclosed '(' at token {open}")))
}

/// Property expressions of every declaration and inline `assert property`,
/// without the `property NAME(...);` header, `endproperty`, or references to
/// declared properties.
pub fn assertion_body(canonical: &CanonicalAssertion) -> Result<AssertionBody> {
    let tokens = &canonical.tokens;
    let mut body = Vec::new();
    let mut empty = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if is_declaration(tokens, i) {
            let name = tokens
                .get(i + 1)
                .filter(|n| n.kind == TokenKind::Identifier)
                .ok_or_else(|| Error::Unbalanced("property declaration without a name".into()))?;
            let mut j = i + 2;
            if tokens.get(j).is_some_and(|p| p.is_punct("(")) {
                j = skip_group(tokens, j)?;
            }
            if tokens.get(j).is_some_and(|p| p.is_punct(";")) {
                j += 1;
            }
            let start = j;
            while j < tokens.len() && !tokens[j].is_keyword("endproperty") {
                if is_declaration(tokens, j) {
                    return Err(Error::Unbalanced(format!("property {} is not closed", name.text)));
                }
                j += 1;
            }
            if j == tokens.len() {
                return Err(Error::Unbalanced(format!("property {} has no endproperty", name.text)));
            }
            if j == start {
                empty.push(name.text.clone());
            }
            body.extend_from_slice(&tokens[start..j]);
            i = j + 1;
            // optional `endproperty : NAME`
            if tokens.get(i).is_some_and(|c| c.text == ":") && tokens.get(i + 1).is_some_and(|n| n.text == name.text)
            {
                i += 2;
            }
            continue;
        }
        if t.is_keyword("endproperty") {
            return Err(Error::Unbalanced("endproperty without property".into()));
        }
        if is_assert_verb(t)
            && tokens.get(i + 1).is_some_and(|p| p.is_keyword("property"))
            && tokens.get(i + 2).is_some_and(|p| p.is_punct("("))
        {
            let end = skip_group(tokens, i + 2)?;
            let inner = &tokens[i + 3..end - 1];
            // a reference to a declared property contributes only its arguments
            match inner.first() {
                Some(first) if canonical.is_property_name(&first.text) => body.extend_from_slice(&inner[1..]),
                _ => body.extend_from_slice(inner),
            }
            i = end;
            continue;
        }
        i += 1;
    }
    Ok(AssertionBody { tokens: body, empty_properties: empty })
}
