//! LL(1) automaton generated at load time from the published EBNF.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use super::lexer::{tokenize, Tok};

pub const GRAMMAR_EBNF: &str = include_str!("../../grammar/hcl_subset.ebnf");

/// End-of-input terminal.
pub const EOF: &str = "EOF";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    T(String),
    N(usize),
}

#[derive(Debug, Clone)]
pub struct Grammar {
    /// Nonterminal names; synthesized helpers are named `<rule>#<n>`.
    pub names: Vec<String>,
    pub productions: Vec<Vec<Vec<Symbol>>>,
    pub start: usize,
    pub terminals: BTreeSet<String>,
    /// Quoted alphabetic terminals; lexed as identifiers.
    pub keywords: BTreeSet<String>,
    table: BTreeMap<(usize, String), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EbnfTok {
    Name(String),
    Quoted(String),
    Punct(char),
}

fn lex_ebnf(text: &str) -> Result<Vec<EbnfTok>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' && chars.get(i + 1) == Some(&'*') {
            let mut j = i + 2;
            while j + 1 < chars.len() && !(chars[j] == '*' && chars[j + 1] == ')') {
                j += 1;
            }
            if j + 1 >= chars.len() {
                return Err("unterminated comment".into());
            }
            i = j + 2;
        } else if c == '"' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            if j >= chars.len() {
                return Err("unterminated terminal".into());
            }
            out.push(EbnfTok::Quoted(chars[i + 1..j].iter().collect()));
            i = j + 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            out.push(EbnfTok::Name(chars[i..j].iter().collect()));
            i = j;
        } else if "=|;{}[]()".contains(c) {
            out.push(EbnfTok::Punct(c));
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}` in grammar"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Ebnf {
    Term(String),
    NonTerm(String),
    Seq(Vec<Ebnf>),
    Alt(Vec<Ebnf>),
    Repeat(Box<Ebnf>),
    Optional(Box<Ebnf>),
}

struct EbnfParser {
    toks: Vec<EbnfTok>,
    pos: usize,
}

impl EbnfParser {
    fn peek(&self) -> Option<&EbnfTok> {
        self.toks.get(self.pos)
    }

    fn punct(&mut self, c: char) -> Result<(), String> {
        match self.toks.get(self.pos) {
            Some(EbnfTok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            other => Err(format!("expected `{c}`, found {other:?}")),
        }
    }

    fn alternatives(&mut self) -> Result<Ebnf, String> {
        let mut alts = vec![self.sequence()?];
        while self.peek() == Some(&EbnfTok::Punct('|')) {
            self.pos += 1;
            alts.push(self.sequence()?);
        }
        Ok(if alts.len() == 1 { alts.pop().expect("one") } else { Ebnf::Alt(alts) })
    }

    fn sequence(&mut self) -> Result<Ebnf, String> {
        let mut items = Vec::new();
        loop {
            let item = match self.peek().cloned() {
                Some(EbnfTok::Quoted(t)) => {
                    self.pos += 1;
                    Ebnf::Term(t)
                }
                Some(EbnfTok::Name(n)) => {
                    self.pos += 1;
                    if n.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                        Ebnf::Term(n)
                    } else {
                        Ebnf::NonTerm(n)
                    }
                }
                Some(EbnfTok::Punct(open @ ('{' | '[' | '('))) => {
                    self.pos += 1;
                    let inner = self.alternatives()?;
                    let close = match open {
                        '{' => '}',
                        '[' => ']',
                        _ => ')',
                    };
                    self.punct(close)?;
                    match open {
                        '{' => Ebnf::Repeat(Box::new(inner)),
                        '[' => Ebnf::Optional(Box::new(inner)),
                        _ => inner,
                    }
                }
                _ => break,
            };
            items.push(item);
        }
        Ok(Ebnf::Seq(items))
    }
}

struct Builder {
    names: Vec<String>,
    productions: Vec<Vec<Vec<Symbol>>>,
    index: BTreeMap<String, usize>,
    helpers: usize,
}

impl Builder {
    fn fresh(&mut self, base: &str) -> usize {
        self.helpers += 1;
        self.names.push(format!("{base}#{}", self.helpers));
        self.productions.push(Vec::new());
        self.names.len() - 1
    }

    fn lower_alt(&mut self, e: &Ebnf, owner: &str) -> Result<Vec<Vec<Symbol>>, String> {
        Ok(match e {
            Ebnf::Alt(alts) => alts.iter().map(|a| self.lower_seq(a, owner)).collect::<Result<_, _>>()?,
            other => vec![self.lower_seq(other, owner)?],
        })
    }

    fn lower_seq(&mut self, e: &Ebnf, owner: &str) -> Result<Vec<Symbol>, String> {
        let items = match e {
            Ebnf::Seq(items) => items.clone(),
            other => vec![other.clone()],
        };
        let mut out = Vec::new();
        for item in &items {
            match item {
                Ebnf::Term(t) => out.push(Symbol::T(t.clone())),
                Ebnf::NonTerm(n) => {
                    let i = *self.index.get(n).ok_or_else(|| format!("undefined rule `{n}`"))?;
                    out.push(Symbol::N(i));
                }
                Ebnf::Seq(_) => out.extend(self.lower_seq(item, owner)?),
                Ebnf::Alt(_) => {
                    let h = self.fresh(owner);
                    self.productions[h] = self.lower_alt(item, owner)?;
                    out.push(Symbol::N(h));
                }
                Ebnf::Optional(inner) => {
                    let h = self.fresh(owner);
                    let mut alts = self.lower_alt(inner, owner)?;
                    alts.push(Vec::new());
                    self.productions[h] = alts;
                    out.push(Symbol::N(h));
                }
                Ebnf::Repeat(inner) => {
                    let h = self.fresh(owner);
                    let mut alts = self.lower_alt(inner, owner)?;
                    for a in &mut alts {
                        a.push(Symbol::N(h));
                    }
                    alts.push(Vec::new());
                    self.productions[h] = alts;
                    out.push(Symbol::N(h));
                }
            }
        }
        Ok(out)
    }
}

impl Grammar {
    pub fn from_ebnf(text: &str) -> Result<Grammar, String> {
        let toks = lex_ebnf(text)?;
        let mut p = EbnfParser { toks, pos: 0 };
        let mut rules = Vec::new();
        while let Some(t) = p.peek().cloned() {
            let EbnfTok::Name(name) = t else { return Err(format!("expected rule name, found {t:?}")) };
            p.pos += 1;
            p.punct('=')?;
            let body = p.alternatives()?;
            p.punct(';')?;
            rules.push((name, body));
        }
        if rules.is_empty() {
            return Err("grammar has no rules".into());
        }
        let mut b = Builder { names: Vec::new(), productions: Vec::new(), index: BTreeMap::new(), helpers: 0 };
        for (name, _) in &rules {
            if b.index.insert(name.clone(), b.names.len()).is_some() {
                return Err(format!("rule `{name}` defined twice"));
            }
            b.names.push(name.clone());
            b.productions.push(Vec::new());
        }
        for (i, (name, body)) in rules.iter().enumerate() {
            b.productions[i] = b.lower_alt(body, name)?;
        }
        let mut terminals = BTreeSet::new();
        for alts in &b.productions {
            for s in alts.iter().flatten() {
                if let Symbol::T(t) = s {
                    terminals.insert(t.clone());
                }
            }
        }
        let keywords = terminals.iter().filter(|t| t.chars().all(|c| c.is_ascii_lowercase())).cloned().collect();
        let mut g = Grammar { names: b.names, productions: b.productions, start: 0, terminals, keywords, table: BTreeMap::new() };
        g.check_reachable()?;
        g.build_table()?;
        Ok(g)
    }

    fn check_reachable(&self) -> Result<(), String> {
        let mut seen = BTreeSet::from([self.start]);
        let mut work = vec![self.start];
        while let Some(n) = work.pop() {
            for s in self.productions[n].iter().flatten() {
                if let Symbol::N(m) = s {
                    if seen.insert(*m) {
                        work.push(*m);
                    }
                }
            }
        }
        match (0..self.names.len()).find(|n| !seen.contains(n)) {
            Some(n) => Err(format!("rule `{}` is unreachable", self.names[n])),
            None => Ok(()),
        }
    }

    fn first_of_seq(&self, seq: &[Symbol], first: &[BTreeSet<String>], nullable: &[bool]) -> (BTreeSet<String>, bool) {
        let mut out = BTreeSet::new();
        for s in seq {
            match s {
                Symbol::T(t) => {
                    out.insert(t.clone());
                    return (out, false);
                }
                Symbol::N(n) => {
                    out.extend(first[*n].iter().cloned());
                    if !nullable[*n] {
                        return (out, false);
                    }
                }
            }
        }
        (out, true)
    }

    fn build_table(&mut self) -> Result<(), String> {
        let n = self.names.len();
        let mut nullable = vec![false; n];
        let mut first: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
        let mut changed = true;
        while changed {
            changed = false;
            for a in 0..n {
                for prod in &self.productions[a] {
                    let (f, null) = self.first_of_seq(prod, &first, &nullable);
                    if null && !nullable[a] {
                        nullable[a] = true;
                        changed = true;
                    }
                    let before = first[a].len();
                    first[a].extend(f);
                    changed |= first[a].len() != before;
                }
            }
        }
        let mut follow: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
        follow[self.start].insert(EOF.to_owned());
        changed = true;
        while changed {
            changed = false;
            for a in 0..n {
                for prod in &self.productions[a] {
                    for (i, s) in prod.iter().enumerate() {
                        let Symbol::N(b) = s else { continue };
                        let (mut f, null) = self.first_of_seq(&prod[i + 1..], &first, &nullable);
                        if null {
                            f.extend(follow[a].iter().cloned());
                        }
                        let before = follow[*b].len();
                        follow[*b].extend(f);
                        changed |= follow[*b].len() != before;
                    }
                }
            }
        }
        for a in 0..n {
            if first[a].is_empty() && !nullable[a] {
                return Err(format!("rule `{}` derives no string", self.names[a]));
            }
            for (pi, prod) in self.productions[a].iter().enumerate() {
                let (mut f, null) = self.first_of_seq(prod, &first, &nullable);
                if null {
                    f.extend(follow[a].iter().cloned());
                }
                for t in f {
                    if let Some(prev) = self.table.insert((a, t.clone()), pi) {
                        if prev != pi {
                            return Err(format!("LL(1) conflict in `{}` on `{t}`", self.names[a]));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, nonterminal: usize, terminal: &str) -> Option<&[Symbol]> {
        self.table.get(&(nonterminal, terminal.to_owned())).map(|&p| self.productions[nonterminal][p].as_slice())
    }

    pub fn table_size(&self) -> usize {
        self.table.len()
    }
}

/// The grammar bundled with the crate.
pub fn hcl_grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar::from_ebnf(GRAMMAR_EBNF).expect("bundled grammar is LL(1)"))
}

/// Pushdown recognizer state: a deterministic LL(1) automaton over terminals.
#[derive(Debug, Clone)]
pub struct GrammarAutomaton {
    grammar: &'static Grammar,
    stack: Vec<Symbol>,
}

impl Default for GrammarAutomaton {
    fn default() -> Self {
        Self::new()
    }
}

impl GrammarAutomaton {
    pub fn new() -> Self {
        Self::with_grammar(hcl_grammar())
    }

    pub fn with_grammar(grammar: &'static Grammar) -> Self {
        Self { grammar, stack: vec![Symbol::T(EOF.to_owned()), Symbol::N(grammar.start)] }
    }

    pub fn grammar(&self) -> &'static Grammar {
        self.grammar
    }

    /// Advances on one terminal; on failure the state is unchanged.
    pub fn feed_terminal(&mut self, terminal: &str) -> Result<(), String> {
        let mut stack = self.stack.clone();
        loop {
            match stack.pop() {
                None => return Err("input after end of program".into()),
                Some(Symbol::T(t)) if t == terminal => break,
                Some(Symbol::T(t)) => return Err(format!("expected `{t}`, found `{terminal}`")),
                Some(Symbol::N(n)) => match self.grammar.predict(n, terminal) {
                    Some(rhs) => stack.extend(rhs.iter().rev().cloned()),
                    None => {
                        return Err(format!("`{terminal}` cannot continue `{}`", self.grammar.names[n]));
                    }
                },
            }
        }
        self.stack = stack;
        Ok(())
    }

    /// Terminal a token stands for here; identifiers become keywords where a keyword fits.
    pub fn classify(&self, tok: &Tok) -> String {
        if let Tok::Ident(text) = tok {
            if self.grammar.keywords.contains(text) && self.admits(text) {
                return text.clone();
            }
        }
        tok.terminal().to_owned()
    }

    pub fn feed(&mut self, tok: &Tok) -> Result<(), String> {
        let t = self.classify(tok);
        self.feed_terminal(&t)
    }

    pub fn admits(&self, terminal: &str) -> bool {
        self.clone().feed_terminal(terminal).is_ok()
    }

    /// Exact set of terminals that can follow the input consumed so far.
    pub fn admissible(&self) -> BTreeSet<String> {
        self.grammar.terminals.iter().map(String::as_str).chain([EOF]).filter(|t| self.admits(t)).map(str::to_owned).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }
}

/// Accepts `text` iff the grammar derives its token stream.
pub fn recognize(text: &str) -> Result<(), String> {
    let tokens = tokenize(text).map_err(|e| e.to_string())?;
    let mut a = GrammarAutomaton::new();
    for t in &tokens {
        a.feed(&t.tok).map_err(|e| format!("{}:{}: {e}", t.line, t.column))?;
    }
    Ok(())
}
