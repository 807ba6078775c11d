//! Lexical scanner shared by theorem extraction and proof segmentation.
//!
//! Classifies every character of a Lean 4 source text as code, comment, or
//! string content, and tracks bracket depth over `()`, `[]`, `{}`, and `⟨⟩`.
//! Block comments `/- ... -/` nest; `--` comments run to end of line; string
//! escapes are honored. This is not a Lean parser — it only needs to be right
//! about where comments, strings, and bracket nesting are.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CharClass {
    Code,
    Comment,
    Str,
}

pub(crate) struct Scanned {
    /// (byte offset, char) for every char of the input.
    pub chars: Vec<(usize, char)>,
    pub class: Vec<CharClass>,
    /// Bracket depth before consuming the char at the same index.
    pub depth: Vec<i32>,
    /// 1-based line number of the char at the same index.
    pub line: Vec<u32>,
    /// False when depth went negative, never returned to zero, or a comment
    /// or string was left open at end of input.
    pub balanced: bool,
    /// Line on which imbalance was first observed (valid when !balanced).
    pub imbalance_line: u32,
}

fn opens(c: char) -> bool {
    matches!(c, '(' | '[' | '{' | '⟨')
}

fn closes(c: char) -> bool {
    matches!(c, ')' | ']' | '}' | '⟩')
}

pub(crate) fn scan(source: &str) -> Scanned {
    let chars: Vec<(usize, char)> = source.char_indices().collect();
    let n = chars.len();
    let mut class = vec![CharClass::Code; n];
    let mut depth = vec![0i32; n];
    let mut line = vec![1u32; n];

    let mut d = 0i32;
    let mut ln = 1u32;
    let mut block = 0usize;
    let mut in_line_comment = false;
    let mut in_str = false;
    let mut balanced = true;
    let mut imbalance_line = 0u32;

    let mut i = 0;
    while i < n {
        let c = chars[i].1;
        depth[i] = d;
        line[i] = ln;
        if c == '\n' {
            ln += 1;
        }

        if in_str {
            class[i] = CharClass::Str;
            match c {
                '\\' if i + 1 < n => {
                    depth[i + 1] = d;
                    line[i + 1] = ln;
                    class[i + 1] = CharClass::Str;
                    if chars[i + 1].1 == '\n' {
                        ln += 1;
                    }
                    i += 2;
                    continue;
                }
                '"' => in_str = false,
                _ => {}
            }
            i += 1;
            continue;
        }
        if in_line_comment {
            if c == '\n' {
                in_line_comment = false;
            } else {
                class[i] = CharClass::Comment;
            }
            i += 1;
            continue;
        }
        if block > 0 {
            class[i] = CharClass::Comment;
            let next = chars.get(i + 1).map(|&(_, c)| c);
            if c == '-' && next == Some('/') {
                depth[i + 1] = d;
                line[i + 1] = ln;
                class[i + 1] = CharClass::Comment;
                block -= 1;
                i += 2;
                continue;
            }
            if c == '/' && next == Some('-') {
                depth[i + 1] = d;
                line[i + 1] = ln;
                class[i + 1] = CharClass::Comment;
                block += 1;
                i += 2;
                continue;
            }
            i += 1;
            continue;
        }

        let next = chars.get(i + 1).map(|&(_, c)| c);
        match c {
            '-' if next == Some('-') => {
                in_line_comment = true;
                class[i] = CharClass::Comment;
            }
            '/' if next == Some('-') => {
                block = 1;
                class[i] = CharClass::Comment;
                depth[i + 1] = d;
                line[i + 1] = ln;
                class[i + 1] = CharClass::Comment;
                i += 2;
                continue;
            }
            '"' => {
                in_str = true;
                class[i] = CharClass::Str;
            }
            c if opens(c) => d += 1,
            c if closes(c) => {
                d -= 1;
                if d < 0 && balanced {
                    balanced = false;
                    imbalance_line = ln;
                }
            }
            _ => {}
        }
        i += 1;
    }

    if d != 0 || block > 0 || in_str {
        if balanced {
            imbalance_line = ln;
        }
        balanced = false;
    }

    Scanned {
        chars,
        class,
        depth,
        line,
        balanced,
        imbalance_line,
    }
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '!' || c == '?'
}

impl Scanned {
    /// Yields (char index, token text byte range) for every identifier-like
    /// token made of code-class chars.
    pub(crate) fn code_tokens<'a>(&'a self, source: &'a str) -> CodeTokens<'a> {
        CodeTokens {
            scanned: self,
            source,
            idx: 0,
        }
    }
}

pub(crate) struct CodeToken {
    /// Index into `Scanned::chars` of the token's first char.
    pub char_idx: usize,
    pub start: usize,
    pub end: usize,
}

pub(crate) struct CodeTokens<'a> {
    scanned: &'a Scanned,
    source: &'a str,
    idx: usize,
}

impl<'a> Iterator for CodeTokens<'a> {
    type Item = (CodeToken, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        let s = self.scanned;
        let n = s.chars.len();
        while self.idx < n {
            let (_, c) = s.chars[self.idx];
            if s.class[self.idx] == CharClass::Code && is_ident_char(c) {
                let first = self.idx;
                let start = s.chars[first].0;
                let mut last = first;
                while last + 1 < n
                    && s.class[last + 1] == CharClass::Code
                    && is_ident_char(s.chars[last + 1].1)
                {
                    last += 1;
                }
                let end = s.chars[last].0 + s.chars[last].1.len_utf8();
                self.idx = last + 1;
                return Some((
                    CodeToken {
                        char_idx: first,
                        start,
                        end,
                    },
                    &self.source[start..end],
                ));
            }
            self.idx += 1;
        }
        None
    }
}
