use std::fmt;

use rust_decimal::Decimal;

use super::HclError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Decimal(Decimal),
    Bool(bool),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Comma,
    Dot,
    Eof,
}

impl Tok {
    /// Grammar terminal for this token, keywords aside.
    pub fn terminal(&self) -> &'static str {
        match self {
            Tok::Ident(_) => "IDENT",
            Tok::Str(_) => "STRING",
            Tok::Int(_) | Tok::Decimal(_) => "NUMBER",
            Tok::Bool(_) => "BOOL",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Eq => "=",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::Eof => "EOF",
        }
    }
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Int(i) => write!(f, "number {i}"),
            Tok::Decimal(d) => write!(f, "number {d}"),
            Tok::Bool(b) => write!(f, "`{b}`"),
            Tok::Eof => f.write_str("end of input"),
            other => write!(f, "`{}`", other.terminal()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = *self.chars.get(self.pos)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> HclError {
        HclError::Syntax { line, column, message: message.into(), expected: Vec::new() }
    }

    fn string(&mut self, line: usize, column: usize) -> Result<Tok, HclError> {
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.error(line, column, "unterminated string literal")),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    other => {
                        return Err(self.error(self.line, self.column, format!("invalid escape `\\{}`", other.unwrap_or(' '))))
                    }
                },
                Some('$') => match (self.peek(), self.peek2()) {
                    (Some('{'), _) => return Err(self.error(self.line, self.column - 1, "interpolation is not supported")),
                    (Some('$'), Some('{')) => {
                        self.bump();
                        self.bump();
                        s.push_str("${");
                    }
                    _ => s.push('$'),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, first: char, line: usize, column: usize) -> Result<Tok, HclError> {
        let mut text = String::from(first);
        let digits = |lx: &mut Self, text: &mut String| {
            while let Some(c) = lx.peek().filter(char::is_ascii_digit) {
                text.push(c);
                lx.bump();
            }
        };
        digits(self, &mut text);
        if text == "-" {
            return Err(self.error(line, column, "expected digits after `-`"));
        }
        if self.peek() == Some('.') {
            text.push('.');
            self.bump();
            let before = text.len();
            digits(self, &mut text);
            if text.len() == before {
                return Err(self.error(line, column, format!("malformed number `{text}`")));
            }
            return text
                .parse::<Decimal>()
                .map(Tok::Decimal)
                .map_err(|e| self.error(line, column, format!("malformed number `{text}`: {e}")));
        }
        text.parse::<i64>().map(Tok::Int).map_err(|_| self.error(line, column, format!("integer out of range `{text}`")))
    }
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, HclError> {
    let mut lx = Lexer { chars: text.chars().collect(), pos: 0, line: 1, column: 1 };
    let mut out = Vec::new();
    loop {
        let (line, column) = (lx.line, lx.column);
        let Some(c) = lx.bump() else {
            out.push(Token { tok: Tok::Eof, line, column });
            return Ok(out);
        };
        let tok = match c {
            c if c.is_whitespace() => continue,
            '#' => {
                while lx.peek().is_some_and(|c| c != '\n') {
                    lx.bump();
                }
                continue;
            }
            '/' if lx.peek() == Some('/') => {
                while lx.peek().is_some_and(|c| c != '\n') {
                    lx.bump();
                }
                continue;
            }
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '=' => Tok::Eq,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            '"' => lx.string(line, column)?,
            c if c.is_ascii_digit() || c == '-' => lx.number(c, line, column)?,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::from(c);
                while let Some(c) = lx.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '-') {
                    s.push(c);
                    lx.bump();
                }
                match s.as_str() {
                    "true" => Tok::Bool(true),
                    "false" => Tok::Bool(false),
                    _ => Tok::Ident(s),
                }
            }
            other => return Err(lx.error(line, column, format!("unexpected character `{other}`"))),
        };
        out.push(Token { tok, line, column });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<Tok> {
        tokenize(text).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn basic_tokens() {
        assert_eq!(
            toks("a = [1, -2.50] # c\n// d\nb.c = true"),
            vec![
                Tok::Ident("a".into()),
                Tok::Eq,
                Tok::LBracket,
                Tok::Int(1),
                Tok::Comma,
                Tok::Decimal("-2.50".parse().unwrap()),
                Tok::RBracket,
                Tok::Ident("b".into()),
                Tok::Dot,
                Tok::Ident("c".into()),
                Tok::Eq,
                Tok::Bool(true),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""a\"b\\$${x}""#)[0], Tok::Str("a\"b\\${x}".into()));
        assert!(tokenize(r#""${var.x}""#).is_err());
        assert!(tokenize("\"open").is_err());
        assert_eq!(toks(r#""$$${""#)[0], Tok::Str("$${".into()));
    }

    #[test]
    fn positions() {
        let t = tokenize("a\n  b").unwrap();
        assert_eq!((t[1].line, t[1].column), (2, 3));
    }
}
