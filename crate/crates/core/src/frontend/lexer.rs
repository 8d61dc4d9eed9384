use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    /// `@name`
    Label(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCTS: &[&str] = &[
    "..", "::", "->", "+=", "-=", "*=", "/=", "==", "!=", "<=", ">=", "&&", "||", "#", "(", ")", "[", "]", "{", "}",
    "<", ">", ",", ";", ":", "=", "+", "-", "*", "/", "%", "!", "&", "|", "^", ".", "\\",
];

/// Tokenize source text. Identifiers may contain `-` when `dash_idents` is
/// set (used by the schedule language for pass names such as `fork-chunk`).
pub fn lex(file: &str, src: &str, dash_idents: bool) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = vec![];
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| Error::Syntax { file: file.to_string(), line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(err(sl, sc, "unterminated block comment".into()));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let (sl, sc) = (line, col);
        let start = i;
        let is_ident_start = |c: char| c.is_ascii_alphabetic() || c == '_';
        let is_ident_char = |c: char, next: Option<&char>| {
            c.is_ascii_alphanumeric()
                || c == '_'
                || (dash_idents && c == '-' && next.is_some_and(|n| n.is_ascii_alphabetic()))
        };
        if is_ident_start(c) || (c == '@' && chars.get(i + 1).is_some_and(|&n| is_ident_start(n))) {
            if c == '@' {
                i += 1;
            }
            let name_start = i;
            while i < chars.len() && is_ident_char(chars[i], chars.get(i + 1)) {
                i += 1;
            }
            let name: String = chars[name_start..i].iter().collect();
            col += i - start;
            let tok = if c == '@' { Tok::Label(name) } else { Tok::Ident(name) };
            toks.push(Token { tok, line: sl, col: sc });
            continue;
        }
        if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            col += i - start;
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| err(sl, sc, format!("bad float literal `{text}`")))?)
            } else if chars.get(i) == Some(&'.') && chars.get(i + 1) != Some(&'.') {
                // `1.` style float
                i += 1;
                col += 1;
                Tok::Float(text.parse().map_err(|_| err(sl, sc, format!("bad float literal `{text}`")))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(sl, sc, format!("integer literal `{text}` too large")))?)
            };
            toks.push(Token { tok, line: sl, col: sc });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len();
                toks.push(Token { tok: Tok::Punct(p), line: sl, col: sc });
            }
            None => return Err(err(sl, sc, format!("unexpected character `{c}`"))),
        }
    }
    toks.push(Token { tok: Tok::Eof, line, col });
    Ok(toks)
}

/// Cursor over a token stream shared by both parsers.
pub struct Cursor {
    pub toks: Vec<Token>,
    pub pos: usize,
    pub file: String,
}

impl Cursor {
    pub fn new(file: &str, toks: Vec<Token>) -> Self {
        Cursor { toks, pos: 0, file: file.to_string() }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    pub fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        let t = &self.toks[self.pos];
        Error::Syntax { file: self.file.clone(), line: t.line, col: t.col, msg: msg.into() }
    }

    pub fn is(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    pub fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(n) if n == name)
    }

    pub fn eat(&mut self, p: &str) -> bool {
        if self.is(p) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn eat_ident(&mut self, name: &str) -> bool {
        if self.is_ident(name) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, p: &str) -> Result<()> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`, found {}", describe(self.peek()))))
        }
    }

    pub fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                self.next();
                Ok(n)
            }
            t => Err(self.error(format!("expected identifier, found {}", describe(&t)))),
        }
    }

    pub fn int(&mut self) -> Result<u64> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                Ok(v)
            }
            t => Err(self.error(format!("expected integer, found {}", describe(&t)))),
        }
    }
}

pub fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Label(n) => format!("`@{n}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_labels_ranges_and_floats() {
        let t = lex("t", "@outer for i in 0..n { x += 1.5; } // c", false).unwrap();
        let toks: Vec<Tok> = t.into_iter().map(|t| t.tok).collect();
        assert_eq!(toks[0], Tok::Label("outer".into()));
        assert_eq!(toks[5], Tok::Punct(".."));
        assert_eq!(toks[10], Tok::Float(1.5));
        assert_eq!(*toks.last().unwrap(), Tok::Eof);
    }

    #[test]
    fn dashed_identifiers_only_in_schedule_mode() {
        let t = lex("t", "fork-chunk", true).unwrap();
        assert_eq!(t[0].tok, Tok::Ident("fork-chunk".into()));
        let t = lex("t", "a-b", false).unwrap();
        assert_eq!(t.len(), 4);
    }
}
