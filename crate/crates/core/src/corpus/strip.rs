//! Comment removal.
//!
//! One pass over the characters with three states (code / string / comment).
//! Newlines inside removed comments are kept so line numbers survive.

use alloc::string::String;
use alloc::vec::Vec;

use super::{CommentFamily, Language};

/// Output of [`strip_comments`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub code: String,
    /// A `/*` was never closed; everything after it was dropped.
    pub unterminated_block: bool,
}

pub fn strip_comments(code: &str, language: Language) -> Stripped {
    let chars: Vec<char> = code.chars().collect();
    match language.comment_family() {
        CommentFamily::Slash => strip_slash(&chars, language),
        CommentFamily::Hash => strip_hash(&chars),
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum QuoteKind {
    /// Backslash escapes, ends at newline if unterminated.
    Plain,
    /// C# `@"..."`: doubled quote escapes, newlines allowed.
    Verbatim,
    /// Go raw string: no escapes, newlines allowed.
    Raw,
    /// JS template literal: escapes, newlines allowed.
    Template,
}

fn strip_slash(chars: &[char], language: Language) -> Stripped {
    let mut out = String::with_capacity(chars.len());
    let mut unterminated_block = false;
    let mut i = 0;
    let n = chars.len();
    while i < n {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            '/' if next == Some('/') => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if next == Some('*') => {
                i += 2;
                let mut closed = false;
                while i < n {
                    if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                        i += 2;
                        closed = true;
                        break;
                    }
                    if chars[i] == '\n' {
                        out.push('\n');
                    }
                    i += 1;
                }
                if !closed {
                    unterminated_block = true;
                } else if out.chars().last().is_some_and(is_word)
                    && chars.get(i).copied().is_some_and(is_word)
                {
                    // `int/**/x` must not fuse into `intx`
                    out.push(' ');
                }
            }
            'R' if language == Language::Cpp && next == Some('"') && raw_prefix_ok(&out) => {
                i = copy_cpp_raw(chars, i, &mut out);
            }
            '"' | '\'' | '`' => {
                if c == '\'' && language == Language::Cpp && out.chars().last().is_some_and(|p| p.is_ascii_hexdigit()) {
                    // digit separator: 1'000'000
                    out.push(c);
                    i += 1;
                    continue;
                }
                let kind = match c {
                    '`' if language == Language::Go => QuoteKind::Raw,
                    '`' => QuoteKind::Template,
                    '"' if language == Language::CSharp && verbatim_prefix(&out) => QuoteKind::Verbatim,
                    _ => QuoteKind::Plain,
                };
                i = copy_quoted(chars, i, c, kind, &mut out);
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    Stripped {
        code: out,
        unterminated_block,
    }
}

/// `R"` starts a raw string only when `R` is a whole token or follows an
/// encoding prefix (`u8R`, `LR`, `uR`, `UR`).
fn raw_prefix_ok(out: &str) -> bool {
    let word: String = out.chars().rev().take_while(|c| is_word(*c)).collect();
    matches!(word.as_str(), "" | "8u" | "L" | "u" | "U")
}

fn verbatim_prefix(out: &str) -> bool {
    let mut it = out.chars().rev();
    match (it.next(), it.next()) {
        (Some('@'), _) => true,
        (Some('$'), Some('@')) => true,
        _ => false,
    }
}

/// Copy a quoted literal starting at `start` (the opening quote). Returns the
/// index just past the literal.
fn copy_quoted(chars: &[char], start: usize, quote: char, kind: QuoteKind, out: &mut String) -> usize {
    out.push(quote);
    let mut i = start + 1;
    let n = chars.len();
    while i < n {
        let c = chars[i];
        match kind {
            QuoteKind::Plain | QuoteKind::Template if c == '\\' => {
                out.push(c);
                if let Some(&e) = chars.get(i + 1) {
                    out.push(e);
                }
                i += 2;
                continue;
            }
            QuoteKind::Verbatim if c == '"' && chars.get(i + 1) == Some(&'"') => {
                out.push_str("\"\"");
                i += 2;
                continue;
            }
            QuoteKind::Plain if c == '\n' => {
                // unterminated literal; resume scanning code on the next line
                return i;
            }
            _ => {}
        }
        out.push(c);
        i += 1;
        if c == quote {
            return i;
        }
    }
    i
}

fn copy_cpp_raw(chars: &[char], start: usize, out: &mut String) -> usize {
    // R"delim( ... )delim"
    let n = chars.len();
    let mut i = start + 2;
    let mut delim = String::new();
    while i < n && chars[i] != '(' && delim.len() <= 16 {
        delim.push(chars[i]);
        i += 1;
    }
    if i >= n || chars[i] != '(' {
        // not a raw string after all
        out.push('R');
        return start + 1;
    }
    let mut close: Vec<char> = Vec::with_capacity(delim.len() + 2);
    close.push(')');
    close.extend(delim.chars());
    close.push('"');
    out.push('R');
    out.push('"');
    out.push_str(&delim);
    out.push('(');
    i += 1;
    while i < n {
        if chars[i..].starts_with(&close) {
            for &c in &close {
                out.push(c);
            }
            return i + close.len();
        }
        out.push(chars[i]);
        i += 1;
    }
    i
}

fn strip_hash(chars: &[char]) -> Stripped {
    let mut out = String::with_capacity(chars.len());
    let n = chars.len();
    let mut i = 0;
    let mut depth: usize = 0;
    while i < n {
        let c = chars[i];
        match c {
            '#' => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\'' | '"' => {
                let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                let prefix_len = string_prefix_len(&out);
                if triple {
                    let end = find_triple_end(chars, i, c);
                    let bare = depth == 0 && at_statement_start(&out, prefix_len) && rest_of_line_blank(chars, end);
                    if bare {
                        for _ in 0..prefix_len {
                            out.pop();
                        }
                        for &d in &chars[i..end] {
                            if d == '\n' {
                                out.push('\n');
                            }
                        }
                    } else {
                        out.extend(&chars[i..end]);
                    }
                    i = end;
                } else {
                    i = copy_py_single(chars, i, c, &mut out);
                }
            }
            '(' | '[' | '{' => {
                depth += 1;
                out.push(c);
                i += 1;
            }
            ')' | ']' | '}' => {
                depth = depth.saturating_sub(1);
                out.push(c);
                i += 1;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    Stripped {
        code: out,
        unterminated_block: false,
    }
}

/// Length of a string prefix (`r`, `b`, `f`, `rb`, ...) at the end of `out`.
fn string_prefix_len(out: &str) -> usize {
    let word: Vec<char> = out.chars().rev().take_while(|c| is_word(*c)).collect();
    let is_prefix = !word.is_empty()
        && word.len() <= 2
        && word.iter().all(|c| matches!(c, 'r' | 'R' | 'b' | 'B' | 'u' | 'U' | 'f' | 'F'));
    if is_prefix {
        word.len()
    } else {
        0
    }
}

fn find_triple_end(chars: &[char], start: usize, quote: char) -> usize {
    let n = chars.len();
    let mut i = start + 3;
    while i < n {
        // a backslash keeps the next char from closing the literal, raw or not
        if chars[i] == '\\' {
            i += 2;
            continue;
        }
        if chars[i] == quote && chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
            return i + 3;
        }
        i += 1;
    }
    n
}

fn at_statement_start(out: &str, prefix_len: usize) -> bool {
    let before: Vec<char> = out.chars().collect();
    let before = &before[..before.len() - prefix_len];
    let line_start = before.iter().rposition(|&c| c == '\n').map_or(0, |p| p + 1);
    if !before[line_start..].iter().all(|&c| c == ' ' || c == '\t') {
        return false;
    }
    // previous physical line must not continue into this one
    let prev = &before[..line_start];
    let prev = prev.strip_suffix(&['\n']).unwrap_or(prev);
    let prev = prev.strip_suffix(&['\r']).unwrap_or(prev);
    prev.last() != Some(&'\\')
}

fn rest_of_line_blank(chars: &[char], from: usize) -> bool {
    for &c in &chars[from..] {
        match c {
            '\n' | '#' => return true,
            ' ' | '\t' | '\r' => {}
            _ => return false,
        }
    }
    true
}

fn copy_py_single(chars: &[char], start: usize, quote: char, out: &mut String) -> usize {
    out.push(quote);
    let n = chars.len();
    let mut i = start + 1;
    while i < n {
        let c = chars[i];
        if c == '\\' {
            out.push(c);
            if let Some(&e) = chars.get(i + 1) {
                out.push(e);
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            return i;
        }
        out.push(c);
        i += 1;
        if c == quote {
            return i;
        }
    }
    i
}
