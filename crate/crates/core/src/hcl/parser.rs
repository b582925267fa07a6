use std::collections::BTreeSet;

use super::ast::{Attribute, Block, BlockType, Body, HclExpr, HclProgram, NestedBlock};
use super::lexer::{tokenize, Tok, Token};
use super::HclError;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, HclError>;

const EXPR_START: [&str; 6] = ["STRING", "NUMBER", "BOOL", "[", "{", "IDENT"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str], context: &str) -> PResult<T> {
        let t = self.peek();
        let expected: Vec<String> = expected.iter().map(|s| s.to_string()).collect();
        Err(HclError::Syntax { line: t.line, column: t.column, message: format!("unexpected {} {context}", t.tok), expected })
    }

    fn expect(&mut self, tok: Tok, context: &str) -> PResult<Token> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            self.fail(&[tok.terminal()], context)
        }
    }

    fn ident(&mut self, context: &str) -> PResult<String> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => self.fail(&["IDENT"], context),
        }
    }

    fn program(&mut self) -> PResult<HclProgram> {
        let mut blocks = Vec::new();
        let mut addresses = BTreeSet::new();
        loop {
            let start = self.peek().clone();
            let keyword = match &start.tok {
                Tok::Eof => return Ok(HclProgram { blocks }),
                Tok::Ident(s) => s.parse::<BlockType>().ok(),
                _ => None,
            };
            let Some(block_type) = keyword else {
                let keywords: Vec<&str> = BlockType::ALL.iter().map(|b| b.keyword()).chain(["EOF"]).collect();
                return self.fail(&keywords, "at top level");
            };
            self.next();
            let mut labels = Vec::new();
            for i in 0..block_type.label_count() {
                match &self.peek().tok {
                    Tok::Str(s) => {
                        labels.push(s.clone());
                        self.next();
                    }
                    _ => {
                        let context =
                            format!("in {block_type} block: label {} of {} is missing", i + 1, block_type.label_count());
                        return self.fail(&["STRING"], &context);
                    }
                }
            }
            let block = Block { block_type, labels, body: self.body()? };
            if !addresses.insert(block.address()) {
                return Err(HclError::Syntax {
                    line: start.line,
                    column: start.column,
                    message: format!("duplicate block `{}`", block.address()),
                    expected: Vec::new(),
                });
            }
            blocks.push(block);
        }
    }

    fn body(&mut self) -> PResult<Body> {
        self.expect(Tok::LBrace, "before block body")?;
        let mut body = Body::default();
        loop {
            let start = self.peek().clone();
            match &start.tok {
                Tok::RBrace => {
                    self.next();
                    return Ok(body);
                }
                Tok::Ident(name) => {
                    let name = name.clone();
                    self.next();
                    match self.peek().tok {
                        Tok::Eq => {
                            self.next();
                            if body.has(&name) {
                                return Err(HclError::Syntax {
                                    line: start.line,
                                    column: start.column,
                                    message: format!("duplicate attribute `{name}`"),
                                    expected: Vec::new(),
                                });
                            }
                            let value = self.expr()?;
                            body.attributes.push(Attribute { name, value });
                        }
                        Tok::LBrace => {
                            let inner = self.body()?;
                            body.blocks.push(NestedBlock { name, body: inner });
                        }
                        _ => return self.fail(&["=", "{"], &format!("after `{name}`")),
                    }
                }
                _ => return self.fail(&["IDENT", "}"], "in block body"),
            }
        }
    }

    fn expr(&mut self) -> PResult<HclExpr> {
        let t = self.peek().tok.clone();
        Ok(match t {
            Tok::Str(s) => {
                self.next();
                HclExpr::String(s)
            }
            Tok::Int(i) => {
                self.next();
                HclExpr::Int(i)
            }
            Tok::Decimal(d) => {
                self.next();
                HclExpr::Decimal(d)
            }
            Tok::Bool(b) => {
                self.next();
                HclExpr::Bool(b)
            }
            Tok::LBracket => {
                self.next();
                let mut items = Vec::new();
                loop {
                    if self.peek().tok == Tok::RBracket {
                        self.next();
                        break;
                    }
                    items.push(self.expr()?);
                    match self.peek().tok {
                        Tok::Comma => {
                            self.next();
                        }
                        Tok::RBracket => {}
                        _ => return self.fail(&[",", "]"], "in list"),
                    }
                }
                HclExpr::List(items)
            }
            Tok::LBrace => {
                self.next();
                let mut entries: Vec<(String, HclExpr)> = Vec::new();
                loop {
                    let start = self.peek().clone();
                    let key = match &start.tok {
                        Tok::RBrace => {
                            self.next();
                            break;
                        }
                        Tok::Ident(k) | Tok::Str(k) => k.clone(),
                        _ => return self.fail(&["IDENT", "STRING", "}"], "in map"),
                    };
                    self.next();
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(HclError::Syntax {
                            line: start.line,
                            column: start.column,
                            message: format!("duplicate map key `{key}`"),
                            expected: Vec::new(),
                        });
                    }
                    self.expect(Tok::Eq, "after map key")?;
                    let value = self.expr()?;
                    entries.push((key, value));
                    if self.peek().tok == Tok::Comma {
                        self.next();
                    }
                }
                HclExpr::Map(entries)
            }
            Tok::Ident(first) => {
                self.next();
                let mut parts = vec![first];
                while self.peek().tok == Tok::Dot {
                    self.next();
                    parts.push(self.ident("after `.` in reference")?);
                }
                HclExpr::Reference(parts)
            }
            _ => return self.fail(&EXPR_START, "where an expression was expected"),
        })
    }
}

pub fn parse(text: &str) -> Result<HclProgram, HclError> {
    let tokens = tokenize(text)?;
    Parser { tokens, pos: 0 }.program()
}

/// Parses a single expression; trailing tokens are an error.
pub fn parse_expr(text: &str) -> Result<HclExpr, HclError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    p.expect(Tok::Eof, "after the expression")?;
    Ok(e)
}
