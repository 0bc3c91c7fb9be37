//! A lenient JavaScript/TypeScript tokenizer.
//!
//! Only the token classes that pattern rules look at are distinguished:
//! identifiers (keywords included), string literals (quoted strings and the
//! literal chunks of template strings, escapes decoded) and punctuation.
//! Comments, numbers and regular expression literals are consumed and
//! dropped. Malformed input never fails; an unterminated construct simply
//! ends at the end of the line or file.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Ident(String),
    Str(StrLit),
    Punct(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrLit {
    pub value: String,
    /// Template chunk adjacent to a `${...}` substitution.
    pub interpolated: bool,
}

impl Token {
    pub fn ident(&self) -> Option<&str> {
        match self {
            Token::Ident(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_punct(&self, p: &str) -> bool {
        matches!(self, Token::Punct(q) if *q == p)
    }

    pub fn is_ident(&self, name: &str) -> bool {
        matches!(self, Token::Ident(s) if s == name)
    }

    /// A string literal that is fully static.
    pub fn plain_str(&self) -> Option<&str> {
        match self {
            Token::Str(s) if !s.interpolated => Some(&s.value),
            _ => None,
        }
    }
}

const PUNCT_3: &[&str] = &["...", "===", "!==", "**=", "<<=", ">>=", ">>>"];
const PUNCT_2: &[&str] = &[
    "?.", "=>", "==", "!=", "<=", ">=", "&&", "||", "??", "++", "--", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "**", "<<", ">>",
];
const PUNCT_1: &[&str] = &[
    "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/", "%", "&", "|", "^",
    "!", "~", "?", ":", "=", ".", "@", "#",
];

/// Keywords after which a `/` starts a regular expression rather than a division.
const REGEX_PRECEDERS: &[&str] = &[
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void", "throw", "case",
    "do", "else", "yield", "await",
];

enum Frame {
    Brace,
    Template,
}

pub fn tokenize(src: &str) -> Vec<Token> {
    Lexer::new(src).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    out: Vec<Token>,
    stack: Vec<Frame>,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            out: Vec::new(),
            stack: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn run(mut self) -> Vec<Token> {
        if self.peek(0) == Some('#') && self.peek(1) == Some('!') {
            self.skip_line();
        }
        while let Some(c) = self.peek(0) {
            match c {
                c if c.is_whitespace() => self.pos += 1,
                '/' if self.peek(1) == Some('/') => self.skip_line(),
                '/' if self.peek(1) == Some('*') => self.skip_block_comment(),
                '/' if self.regex_allowed() => self.skip_regex(),
                '\'' | '"' => {
                    self.pos += 1;
                    let value = self.quoted(c);
                    self.out.push(Token::Str(StrLit {
                        value,
                        interpolated: false,
                    }));
                }
                '`' => {
                    self.pos += 1;
                    self.template_chunk(false);
                }
                '}' if matches!(self.stack.last(), Some(Frame::Template)) => {
                    self.stack.pop();
                    self.pos += 1;
                    self.template_chunk(true);
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    self.skip_number()
                }
                c if is_ident_start(c) => {
                    let start = self.pos;
                    while self.peek(0).is_some_and(is_ident_part) {
                        self.pos += 1;
                    }
                    let word: String = self.chars[start..self.pos].iter().collect();
                    self.out.push(Token::Ident(word));
                }
                _ => self.punct(),
            }
        }
        self.out
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek(0) {
            if c == '\n' {
                break;
            }
            self.pos += 1;
        }
    }

    fn skip_block_comment(&mut self) {
        self.pos += 2;
        while self.pos < self.chars.len() {
            if self.peek(0) == Some('*') && self.peek(1) == Some('/') {
                self.pos += 2;
                return;
            }
            self.pos += 1;
        }
    }

    fn regex_allowed(&self) -> bool {
        match self.out.last() {
            None => true,
            Some(Token::Ident(w)) => REGEX_PRECEDERS.contains(&w.as_str()),
            Some(Token::Str(_)) => false,
            Some(Token::Punct(p)) => !matches!(*p, ")" | "]" | "}"),
        }
    }

    fn skip_regex(&mut self) {
        self.pos += 1;
        let mut in_class = false;
        while let Some(c) = self.peek(0) {
            match c {
                '\n' => return,
                '\\' => self.pos += 1,
                '[' => in_class = true,
                ']' => in_class = false,
                '/' if !in_class => {
                    self.pos += 1;
                    while self.peek(0).is_some_and(|f| f.is_ascii_alphabetic()) {
                        self.pos += 1;
                    }
                    return;
                }
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn skip_number(&mut self) {
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                let exp = (c == 'e' || c == 'E') && matches!(self.peek(1), Some('+' | '-'));
                self.pos += if exp { 2 } else { 1 };
            } else {
                break;
            }
        }
    }

    fn punct(&mut self) {
        let rest = |n: usize| -> String { self.chars[self.pos..(self.pos + n).min(self.chars.len())].iter().collect() };
        for (table, n) in [(PUNCT_3, 3), (PUNCT_2, 2), (PUNCT_1, 1)] {
            let s = rest(n);
            if let Some(p) = table.iter().find(|p| **p == s) {
                // `a?.5:b` is a conditional, not optional chaining
                if *p == "?." && self.peek(2).is_some_and(|d| d.is_ascii_digit()) {
                    continue;
                }
                match *p {
                    "{" => self.stack.push(Frame::Brace),
                    "}" => {
                        self.stack.pop();
                    }
                    _ => {}
                }
                self.pos += n;
                self.out.push(Token::Punct(p));
                return;
            }
        }
        // unknown character: drop it
        self.pos += 1;
    }

    /// Reads a quoted string body after the opening quote.
    fn quoted(&mut self, quote: char) -> String {
        let mut value = String::new();
        while let Some(c) = self.peek(0) {
            self.pos += 1;
            match c {
                c if c == quote => return value,
                '\n' => return value,
                '\\' => self.escape(&mut value),
                c => value.push(c),
            }
        }
        value
    }

    /// Reads a template chunk up to the closing backtick or the next `${`.
    fn template_chunk(&mut self, after_substitution: bool) {
        let mut value = String::new();
        while let Some(c) = self.peek(0) {
            self.pos += 1;
            match c {
                '`' => {
                    self.out.push(Token::Str(StrLit {
                        value,
                        interpolated: after_substitution,
                    }));
                    return;
                }
                '$' if self.peek(0) == Some('{') => {
                    self.pos += 1;
                    self.out.push(Token::Str(StrLit {
                        value,
                        interpolated: true,
                    }));
                    self.stack.push(Frame::Template);
                    return;
                }
                '\\' => self.escape(&mut value),
                c => value.push(c),
            }
        }
        self.out.push(Token::Str(StrLit {
            value,
            interpolated: after_substitution,
        }));
    }

    fn escape(&mut self, value: &mut String) {
        let Some(c) = self.peek(0) else { return };
        self.pos += 1;
        match c {
            'n' => value.push('\n'),
            't' => value.push('\t'),
            'r' => value.push('\r'),
            'b' => value.push('\u{8}'),
            'f' => value.push('\u{c}'),
            'v' => value.push('\u{b}'),
            '0' if !self.peek(0).is_some_and(|d| d.is_ascii_digit()) => value.push('\0'),
            'x' => {
                if let Some(ch) = self.hex_digits(2) {
                    value.push(ch);
                } else {
                    value.push('x');
                }
            }
            'u' => {
                if self.peek(0) == Some('{') {
                    let close = (self.pos..self.chars.len()).find(|&i| self.chars[i] == '}');
                    if let Some(end) = close {
                        let hex: String = self.chars[self.pos + 1..end].iter().collect();
                        if let Some(ch) = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            value.push(ch);
                            self.pos = end + 1;
                            return;
                        }
                    }
                    value.push('u');
                } else if let Some(ch) = self.hex_digits(4) {
                    value.push(ch);
                } else {
                    value.push('u');
                }
            }
            // line continuation
            '\n' => {}
            '\r' => {
                if self.peek(0) == Some('\n') {
                    self.pos += 1;
                }
            }
            other => value.push(other),
        }
    }

    fn hex_digits(&mut self, n: usize) -> Option<char> {
        if self.pos + n > self.chars.len() {
            return None;
        }
        let hex: String = self.chars[self.pos..self.pos + n].iter().collect();
        let ch = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32)?;
        self.pos += n;
        Some(ch)
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_part(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric() || c == '\u{200c}' || c == '\u{200d}'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idents(src: &str) -> Vec<String> {
        tokenize(src)
            .into_iter()
            .filter_map(|t| t.ident().map(str::to_owned))
            .collect()
    }

    fn strings(src: &str) -> Vec<String> {
        tokenize(src)
            .into_iter()
            .filter_map(|t| match t {
                Token::Str(s) => Some(s.value),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(idents("a // eval\n/* exec */ b"), ["a", "b"]);
        assert_eq!(idents("#!/usr/bin/env node\nx"), ["x"]);
    }

    #[test]
    fn string_escapes_decode() {
        assert_eq!(strings(r#""\x70assword" 'it\'s' "\u0063ookie" "\u{62}toa""#), [
            "password", "it's", "cookie", "btoa"
        ]);
    }

    #[test]
    fn template_literals_split_around_substitutions() {
        let toks = tokenize("`a${ {b: 1}.b }c` d");
        assert_eq!(
            toks.iter().filter_map(|t| t.ident()).collect::<Vec<_>>(),
            ["b", "b", "d"]
        );
        assert_eq!(strings("`a${x}c${y}`"), ["a", "c", ""]);
        assert_eq!(tokenize("`fs`")[0].plain_str(), Some("fs"));
        assert_eq!(tokenize("`${x}`")[0].plain_str(), None);
    }

    #[test]
    fn regex_versus_division() {
        // the regex body must not leak identifiers
        assert_eq!(idents("x = /eval(/g.test(s)"), ["x", "test", "s"]);
        assert_eq!(idents("a = b / c / d"), ["a", "b", "c", "d"]);
        assert_eq!(idents("return /[/]exec/.source"), ["return", "source"]);
    }

    #[test]
    fn optional_chaining_and_conditional() {
        let toks = tokenize("a?.b; c?.5:1");
        assert!(toks[1].is_punct("?."));
        assert!(toks.iter().filter(|t| t.is_punct("?.")).count() == 1);
    }

    #[test]
    fn unterminated_input_does_not_panic() {
        tokenize("\"abc");
        tokenize("`abc ${");
        tokenize("/* never closed");
        tokenize("x = /unclosed");
        tokenize("'\\");
        tokenize("\"\\u{zzzz\"");
    }
}
