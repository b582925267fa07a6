//! Token-level admissibility: the grammar automaton (syntax) intersected with the
//! provider-field automaton (schema).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rust_decimal::prelude::ToPrimitive;

use super::symbols::SymbolTable;
use super::SynthesisError;
use crate::hcl::{BlockType, GrammarAutomaton, Tok};
use crate::registry::{FieldDecl, SchemaRegistry, ValueDomain, COMPUTED_ATTRIBUTES, RESERVED_ATTRIBUTES};

/// A class of tokens admissible at a decoder state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenDescriptor {
    Keyword(String),
    AttributeName(String),
    NestedBlockName(String),
    /// An identifier with exactly this text (reference segments).
    Identifier(String),
    StringLiteral(String),
    AnyString,
    Integer {
        min: Option<i64>,
        max: Option<i64>,
    },
    AnyNumber,
    Bool(bool),
    /// Closes a resource or rule body.
    BlockClose,
    /// Any token of a grammar terminal class, for schema-free regions.
    Terminal(String),
    EndOfInput,
}

impl TokenDescriptor {
    /// Grammar terminal this descriptor refines.
    pub fn terminal(&self) -> &str {
        match self {
            TokenDescriptor::Keyword(k) => k,
            TokenDescriptor::AttributeName(_) | TokenDescriptor::NestedBlockName(_) | TokenDescriptor::Identifier(_) => "IDENT",
            TokenDescriptor::StringLiteral(_) | TokenDescriptor::AnyString => "STRING",
            TokenDescriptor::Integer { .. } | TokenDescriptor::AnyNumber => "NUMBER",
            TokenDescriptor::Bool(_) => "BOOL",
            TokenDescriptor::BlockClose => "}",
            TokenDescriptor::Terminal(t) => t,
            TokenDescriptor::EndOfInput => "EOF",
        }
    }

    pub fn matches(&self, tok: &Tok) -> bool {
        match (self, tok) {
            (TokenDescriptor::Keyword(k), Tok::Ident(s))
            | (TokenDescriptor::AttributeName(k), Tok::Ident(s))
            | (TokenDescriptor::NestedBlockName(k), Tok::Ident(s))
            | (TokenDescriptor::Identifier(k), Tok::Ident(s))
            | (TokenDescriptor::StringLiteral(k), Tok::Str(s)) => k == s,
            (TokenDescriptor::AnyString, Tok::Str(_)) => true,
            (TokenDescriptor::Integer { min, max }, Tok::Int(i)) => min.is_none_or(|m| *i >= m) && max.is_none_or(|m| *i <= m),
            (TokenDescriptor::AnyNumber, Tok::Int(_) | Tok::Decimal(_)) => true,
            (TokenDescriptor::Bool(b), Tok::Bool(t)) => b == t,
            (TokenDescriptor::BlockClose, Tok::RBrace) => true,
            (TokenDescriptor::EndOfInput, Tok::Eof) => true,
            (TokenDescriptor::Terminal(t), tok) => {
                if t == "IDENT" {
                    matches!(tok, Tok::Ident(_))
                } else {
                    tok.terminal() == t
                }
            }
            _ => false,
        }
    }
}

impl fmt::Display for TokenDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenDescriptor::Keyword(k) => write!(f, "keyword `{k}`"),
            TokenDescriptor::AttributeName(n) => write!(f, "attribute `{n}`"),
            TokenDescriptor::NestedBlockName(n) => write!(f, "block `{n}`"),
            TokenDescriptor::Identifier(n) => write!(f, "identifier `{n}`"),
            TokenDescriptor::StringLiteral(s) => write!(f, "{s:?}"),
            TokenDescriptor::AnyString => f.write_str("string"),
            TokenDescriptor::Integer { min, max } => {
                let b = |v: &Option<i64>| v.map(|v| v.to_string()).unwrap_or_default();
                write!(f, "integer[{}..{}]", b(min), b(max))
            }
            TokenDescriptor::AnyNumber => f.write_str("number"),
            TokenDescriptor::Bool(b) => write!(f, "{b}"),
            TokenDescriptor::BlockClose => f.write_str("block close"),
            TokenDescriptor::Terminal(t) => write!(f, "any {t}"),
            TokenDescriptor::EndOfInput => f.write_str("end of input"),
        }
    }
}

/// Value acceptor for one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Acceptor {
    Str(Option<Vec<String>>),
    Int {
        min: Option<i64>,
        max: Option<i64>,
    },
    Number,
    Bool,
    /// `kind.name.attr` with the target kind fixed (or any) and names from the symbol table.
    Ref {
        kind: Option<String>,
        parts: Vec<String>,
    },
    /// Any well-formed expression; the grammar alone constrains it.
    Free {
        depth: usize,
        can_end: bool,
        after_dot: bool,
    },
}

impl Acceptor {
    pub fn for_decl(decl: &FieldDecl) -> Acceptor {
        let bound = |d: &Option<rust_decimal::Decimal>| d.and_then(|d| d.trunc().to_i64());
        match &decl.domain {
            ValueDomain::String => {
                Acceptor::Str(decl.allowed.as_ref().map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect()))
            }
            ValueDomain::Int => Acceptor::Int { min: bound(&decl.min), max: bound(&decl.max) },
            ValueDomain::Decimal => Acceptor::Number,
            ValueDomain::Bool => Acceptor::Bool,
            ValueDomain::Reference(kind) => Acceptor::Ref { kind: kind.clone(), parts: Vec::new() },
            ValueDomain::Map | ValueDomain::List(_) | ValueDomain::Blocks(_) => Acceptor::free(),
        }
    }

    fn free() -> Acceptor {
        Acceptor::Free { depth: 0, can_end: false, after_dot: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Frame {
    Top,
    Labels {
        block_type: BlockType,
        labels: Vec<String>,
    },
    Resource {
        kind: String,
        id: String,
        emitted: BTreeSet<String>,
    },
    Rule {
        kind: String,
        field: String,
        emitted: BTreeSet<String>,
    },
    /// Body of a non-resource block; unconstrained, brace depth tracked.
    OpaqueBody {
        depth: usize,
    },
    AttrEq(Acceptor),
    NestedOpen {
        kind: String,
        field: String,
        allow_eq: bool,
    },
    Value(Acceptor),
    Done,
}

/// Σ_prov: tracks which resource/attribute/value the decoder is in and which
/// schema-conforming tokens may come next.
#[derive(Debug, Clone)]
pub struct ProviderFieldAutomaton<'r> {
    registry: &'r SchemaRegistry,
    symbols: SymbolTable,
    stack: Vec<Frame>,
}

enum Step {
    Consumed,
    /// Value finished without consuming; re-offer the token to the parent frame.
    Reprocess,
}

impl<'r> ProviderFieldAutomaton<'r> {
    pub fn new(registry: &'r SchemaRegistry, symbols: SymbolTable) -> Self {
        Self { registry, symbols, stack: vec![Frame::Top] }
    }

    fn body_decls(&self, frame: &Frame) -> Vec<FieldDecl> {
        match frame {
            Frame::Resource { kind, .. } => self.registry.kind(kind).map(|k| k.fields.clone()).unwrap_or_default(),
            Frame::Rule { kind, field, .. } => {
                self.registry.kind(kind).and_then(|k| k.field(field)).map(|f| f.nested().to_vec()).unwrap_or_default()
            }
            _ => Vec::new(),
        }
    }

    fn resource_attribute(&self, kind: &str, name: &str) -> Option<Acceptor> {
        let schema = self.registry.kind(kind)?;
        match name {
            "region" => Some(Acceptor::Str(Some(schema.regions.iter().cloned().collect()))),
            "effects" | "depends_on" => Some(Acceptor::free()),
            _ => schema.field(name).map(Acceptor::for_decl),
        }
    }

    fn required_missing(&self, frame: &Frame) -> bool {
        let emitted = match frame {
            Frame::Resource { emitted, .. } | Frame::Rule { emitted, .. } => emitted,
            _ => return false,
        };
        let decls = self.body_decls(frame);
        let missing_field = decls.iter().any(|d| d.required && !emitted.contains(&d.name));
        let missing_region = matches!(frame, Frame::Resource { .. }) && !emitted.contains("region");
        missing_field || missing_region
    }

    /// Schema-level continuations, before intersection with the grammar.
    pub fn admissible(&self) -> BTreeSet<TokenDescriptor> {
        let mut out = BTreeSet::new();
        self.admissible_into(self.stack.len(), &mut out);
        out
    }

    fn admissible_into(&self, depth: usize, out: &mut BTreeSet<TokenDescriptor>) {
        let Some(frame) = depth.checked_sub(1).and_then(|i| self.stack.get(i)) else { return };
        match frame {
            Frame::Top => {
                out.extend(BlockType::ALL.iter().map(|b| TokenDescriptor::Keyword(b.keyword().into())));
                out.insert(TokenDescriptor::EndOfInput);
            }
            Frame::Labels { block_type, labels } => {
                if labels.len() == block_type.label_count() {
                    out.insert(TokenDescriptor::Terminal("{".into()));
                } else if *block_type == BlockType::Resource && labels.is_empty() {
                    out.extend(self.registry.kinds().map(|k| TokenDescriptor::StringLiteral(k.kind.clone())));
                } else if *block_type == BlockType::Resource {
                    out.extend(self.symbols.ids_of_kind(Some(&labels[0])).map(|id| TokenDescriptor::StringLiteral(id.into())));
                } else {
                    out.insert(TokenDescriptor::AnyString);
                }
            }
            Frame::Resource { kind, emitted, .. } => {
                if let Some(schema) = self.registry.kind(kind) {
                    for m in RESERVED_ATTRIBUTES {
                        if !emitted.contains(m) {
                            out.insert(TokenDescriptor::AttributeName(m.into()));
                        }
                    }
                    for f in &schema.fields {
                        if f.is_blocks() {
                            out.insert(TokenDescriptor::NestedBlockName(f.name.clone()));
                        }
                        if !emitted.contains(&f.name) {
                            out.insert(TokenDescriptor::AttributeName(f.name.clone()));
                        }
                    }
                }
                if !self.required_missing(frame) {
                    out.insert(TokenDescriptor::BlockClose);
                }
            }
            Frame::Rule { emitted, .. } => {
                for d in self.body_decls(frame) {
                    if !emitted.contains(&d.name) {
                        out.insert(TokenDescriptor::AttributeName(d.name.clone()));
                    }
                }
                if !self.required_missing(frame) {
                    out.insert(TokenDescriptor::BlockClose);
                }
            }
            Frame::OpaqueBody { .. } => {
                out.insert(TokenDescriptor::Terminal("*".into()));
            }
            Frame::AttrEq(_) => {
                out.insert(TokenDescriptor::Terminal("=".into()));
            }
            Frame::NestedOpen { allow_eq, .. } => {
                out.insert(TokenDescriptor::Terminal("{".into()));
                if *allow_eq {
                    out.insert(TokenDescriptor::Terminal("=".into()));
                }
            }
            Frame::Value(acc) => match acc {
                Acceptor::Str(Some(values)) => out.extend(values.iter().map(|v| TokenDescriptor::StringLiteral(v.clone()))),
                Acceptor::Str(None) => {
                    out.insert(TokenDescriptor::AnyString);
                }
                Acceptor::Int { min, max } => {
                    out.insert(TokenDescriptor::Integer { min: *min, max: *max });
                }
                Acceptor::Number => {
                    out.insert(TokenDescriptor::AnyNumber);
                }
                Acceptor::Bool => {
                    out.extend([TokenDescriptor::Bool(false), TokenDescriptor::Bool(true)]);
                }
                Acceptor::Ref { kind, parts } => match parts.len() {
                    0 => {
                        let kinds: BTreeSet<&str> = self
                            .symbols
                            .entries()
                            .filter(|(id, k)| kind.as_deref().is_none_or(|w| w == *k) && Some(*id) != self.current_id())
                            .map(|(_, k)| k)
                            .collect();
                        out.extend(kinds.into_iter().map(|k| TokenDescriptor::Identifier(k.into())));
                    }
                    1 | 3 => {
                        out.insert(TokenDescriptor::Terminal(".".into()));
                    }
                    2 => {
                        let current = self.current_id();
                        out.extend(
                            self.symbols
                                .ids_of_kind(Some(&parts[0]))
                                .filter(|id| Some(*id) != current)
                                .map(|id| TokenDescriptor::Identifier(id.into())),
                        );
                    }
                    _ => {
                        if let Some(schema) = self.registry.kind(&parts[0]) {
                            out.extend(COMPUTED_ATTRIBUTES.iter().map(|a| TokenDescriptor::Identifier((*a).into())));
                            out.extend(
                                schema
                                    .fields
                                    .iter()
                                    .filter(|f| !f.is_blocks())
                                    .map(|f| TokenDescriptor::Identifier(f.name.clone())),
                            );
                        }
                    }
                },
                Acceptor::Free { depth: d, can_end, after_dot } => {
                    if *d > 0 {
                        out.insert(TokenDescriptor::Terminal("*".into()));
                    } else if *after_dot {
                        out.insert(TokenDescriptor::Terminal("IDENT".into()));
                    } else if *can_end {
                        out.insert(TokenDescriptor::Terminal(".".into()));
                        self.admissible_into(depth - 1, out);
                    } else {
                        for t in ["STRING", "NUMBER", "BOOL", "[", "{", "IDENT"] {
                            out.insert(TokenDescriptor::Terminal(t.into()));
                        }
                    }
                }
            },
            Frame::Done => {}
        }
    }

    fn current_id(&self) -> Option<&str> {
        self.stack.iter().rev().find_map(|f| match f {
            Frame::Resource { id, .. } => Some(id.as_str()),
            _ => None,
        })
    }

    fn reject<T>(&self, tok: &Tok) -> Result<T, SynthesisError> {
        let expected: Vec<String> = self.admissible().iter().map(|d| d.to_string()).collect();
        Err(SynthesisError::InadmissibleToken { token: tok.to_string(), expected })
    }

    pub fn advance(&mut self, tok: &Tok) -> Result<(), SynthesisError> {
        if !self.admissible().iter().any(|d| d.matches(tok) || d == &TokenDescriptor::Terminal("*".into())) {
            return self.reject(tok);
        }
        loop {
            match self.step(tok)? {
                Step::Consumed => return Ok(()),
                Step::Reprocess => continue,
            }
        }
    }

    fn step(&mut self, tok: &Tok) -> Result<Step, SynthesisError> {
        let frame = self.stack.pop().expect("non-empty stack");
        match (frame, tok) {
            (Frame::Top, Tok::Eof) => self.stack.push(Frame::Done),
            (Frame::Top, Tok::Ident(k)) => {
                let block_type: BlockType =
                    k.parse().map_err(|_| SynthesisError::InadmissibleToken { token: tok.to_string(), expected: vec![] })?;
                self.stack.push(Frame::Top);
                self.stack.push(Frame::Labels { block_type, labels: Vec::new() });
            }
            (Frame::Labels { block_type, mut labels }, Tok::Str(s)) if labels.len() < block_type.label_count() => {
                labels.push(s.clone());
                self.stack.push(Frame::Labels { block_type, labels });
            }
            (Frame::Labels { block_type, mut labels }, Tok::LBrace) => {
                if block_type == BlockType::Resource {
                    let id = labels.pop().expect("two labels");
                    let kind = labels.pop().expect("two labels");
                    self.stack.push(Frame::Resource { kind, id, emitted: BTreeSet::new() });
                } else {
                    self.stack.push(Frame::OpaqueBody { depth: 1 });
                }
            }
            (Frame::OpaqueBody { depth: 1 }, Tok::RBrace) => {}
            (Frame::OpaqueBody { depth }, t) => {
                let depth = match t {
                    Tok::LBrace => depth + 1,
                    Tok::RBrace => depth - 1,
                    _ => depth,
                };
                self.stack.push(Frame::OpaqueBody { depth });
            }
            (Frame::Resource { .. } | Frame::Rule { .. }, Tok::RBrace) => {}
            (Frame::Resource { kind, id, mut emitted }, Tok::Ident(name)) => {
                let nested = self.registry.kind(&kind).and_then(|k| k.field(name)).is_some_and(|f| f.is_blocks());
                let acceptor = self.resource_attribute(&kind, name);
                if nested && emitted.contains(name) {
                    self.stack.push(Frame::Resource { kind: kind.clone(), id, emitted });
                    self.stack.push(Frame::NestedOpen { kind, field: name.clone(), allow_eq: false });
                } else {
                    emitted.insert(name.clone());
                    self.stack.push(Frame::Resource { kind: kind.clone(), id, emitted });
                    if nested {
                        // Either `name = [...]` or `name { ... }`; decided by the next token.
                        self.stack.push(Frame::NestedOpen { kind, field: name.clone(), allow_eq: true });
                    } else {
                        self.stack.push(Frame::AttrEq(acceptor.expect("admissible attribute")));
                    }
                }
            }
            (Frame::Rule { kind, field, mut emitted }, Tok::Ident(name)) => {
                let decl = self
                    .registry
                    .kind(&kind)
                    .and_then(|k| k.field(&field))
                    .and_then(|f| f.nested().iter().find(|d| d.name == *name))
                    .cloned()
                    .expect("admissible rule attribute");
                emitted.insert(name.clone());
                self.stack.push(Frame::Rule { kind, field, emitted });
                self.stack.push(Frame::AttrEq(Acceptor::for_decl(&decl)));
            }
            (Frame::AttrEq(acc), Tok::Eq) => self.stack.push(Frame::Value(acc)),
            (Frame::NestedOpen { kind, field, .. }, Tok::LBrace) => {
                self.stack.push(Frame::Rule { kind, field, emitted: BTreeSet::new() });
            }
            (Frame::NestedOpen { allow_eq: true, .. }, Tok::Eq) => self.stack.push(Frame::Value(Acceptor::free())),
            (Frame::Value(acc), t) => return self.value_step(acc, t),
            (frame, _) => {
                self.stack.push(frame);
                return self.reject(tok);
            }
        }
        Ok(Step::Consumed)
    }

    fn value_step(&mut self, acc: Acceptor, tok: &Tok) -> Result<Step, SynthesisError> {
        match acc {
            Acceptor::Ref { kind, mut parts } => {
                let done = match (parts.len(), tok) {
                    (0 | 2 | 4, Tok::Ident(s)) => {
                        parts.push(s.clone());
                        parts.len() == 5
                    }
                    (1 | 3, Tok::Dot) => {
                        parts.push(".".into());
                        false
                    }
                    _ => {
                        self.stack.push(Frame::Value(Acceptor::Ref { kind, parts }));
                        return self.reject(tok);
                    }
                };
                if !done {
                    self.stack.push(Frame::Value(Acceptor::Ref { kind, parts }));
                }
            }
            Acceptor::Free { depth, can_end, after_dot } => {
                if depth == 0 && can_end && *tok != Tok::Dot {
                    return Ok(Step::Reprocess);
                }
                let next = match tok {
                    Tok::LBrace | Tok::LBracket => Some(Acceptor::Free { depth: depth + 1, can_end: false, after_dot: false }),
                    Tok::RBrace | Tok::RBracket if depth == 1 => None,
                    Tok::RBrace | Tok::RBracket => Some(Acceptor::Free { depth: depth - 1, can_end: false, after_dot: false }),
                    _ if depth > 0 => Some(Acceptor::Free { depth, can_end: false, after_dot: false }),
                    Tok::Ident(_) => Some(Acceptor::Free { depth: 0, can_end: true, after_dot: false }),
                    Tok::Dot if can_end => Some(Acceptor::Free { depth: 0, can_end: false, after_dot: true }),
                    Tok::Str(_) | Tok::Int(_) | Tok::Decimal(_) | Tok::Bool(_) if !after_dot => None,
                    _ => {
                        self.stack.push(Frame::Value(Acceptor::Free { depth, can_end, after_dot }));
                        return self.reject(tok);
                    }
                };
                if let Some(n) = next {
                    self.stack.push(Frame::Value(n));
                }
            }
            // Scalar acceptors take exactly one token, already checked against admissible().
            _ => {}
        }
        Ok(Step::Consumed)
    }

    pub fn is_done(&self) -> bool {
        self.stack.last() == Some(&Frame::Done)
    }

    /// Value acceptor active at this state, if the next token starts or continues a value.
    pub fn current_acceptor(&self) -> Option<&Acceptor> {
        match self.stack.last()? {
            Frame::Value(a) => Some(a),
            _ => None,
        }
    }
}

/// Joint decoder state: Σ_HCL × Σ_prov.
#[derive(Debug, Clone)]
pub struct DecoderState<'r> {
    pub grammar: GrammarAutomaton,
    pub provider: ProviderFieldAutomaton<'r>,
}

impl<'r> DecoderState<'r> {
    pub fn new(registry: &'r SchemaRegistry, symbols: SymbolTable) -> Self {
        Self { grammar: GrammarAutomaton::new(), provider: ProviderFieldAutomaton::new(registry, symbols) }
    }

    /// Tokens consistent with both the grammar and the provider schemas.
    pub fn admissible_tokens(&self) -> Result<BTreeSet<TokenDescriptor>, SynthesisError> {
        let syntactic = self.grammar.admissible();
        let mut out = BTreeSet::new();
        for d in self.provider.admissible() {
            match &d {
                TokenDescriptor::Terminal(t) if t == "*" => {
                    out.extend(syntactic.iter().map(|t| match t.as_str() {
                        "EOF" => TokenDescriptor::EndOfInput,
                        t => TokenDescriptor::Terminal(t.to_owned()),
                    }));
                }
                d if syntactic.contains(d.terminal()) => {
                    out.insert(d.clone());
                }
                _ => {}
            }
        }
        if out.is_empty() && !self.provider.is_done() {
            return Err(SynthesisError::DeadState(format!(
                "grammar admits {:?}, schema admits {:?}",
                syntactic,
                self.provider.admissible().iter().map(|d| d.to_string()).collect::<Vec<_>>()
            )));
        }
        Ok(out)
    }

    /// Checks `tok` against the admissible set, then advances both automata.
    pub fn advance(&mut self, tok: &Tok) -> Result<BTreeSet<TokenDescriptor>, SynthesisError> {
        let admissible = self.admissible_tokens()?;
        if !admissible.iter().any(|d| d.matches(tok) && (d.terminal() == self.grammar.classify(tok) || d.terminal() == "IDENT")) {
            return Err(SynthesisError::InadmissibleToken {
                token: tok.to_string(),
                expected: admissible.iter().map(|d| d.to_string()).collect(),
            });
        }
        self.grammar.feed(tok).map_err(SynthesisError::Grammar)?;
        self.provider.advance(tok)?;
        Ok(admissible)
    }

    pub fn is_done(&self) -> bool {
        self.provider.is_done() && self.grammar.is_complete()
    }
}

/// Admissible descriptors keyed by their grammar terminal, for diagnostics.
pub fn by_terminal(set: &BTreeSet<TokenDescriptor>) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in set {
        out.entry(d.terminal().to_owned()).or_default().push(d.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hcl::tokenize;

    fn state_after(text: &str, symbols: &[(&str, &str)]) -> DecoderState<'static> {
        let registry: &'static SchemaRegistry = Box::leak(Box::new(fixtures::registry()));
        let mut table = SymbolTable::default();
        for (id, kind) in symbols {
            table.insert(id, kind);
        }
        let mut s = DecoderState::new(registry, table);
        for t in tokenize(text).unwrap() {
            if t.tok == Tok::Eof {
                break;
            }
            s.advance(&t.tok).unwrap_or_else(|e| panic!("{text}: {e}"));
        }
        s
    }

    #[test]
    fn attribute_names_follow_schema() {
        let s = state_after(r#"resource "ec2" "web" { region = "eu-west-1""#, &[("web", "ec2")]);
        let adm = s.admissible_tokens().unwrap();
        assert!(adm.contains(&TokenDescriptor::AttributeName("ami".into())));
        assert!(!adm.contains(&TokenDescriptor::AttributeName("cidr_block".into())));
        assert!(!adm.contains(&TokenDescriptor::AttributeName("region".into())));
        assert!(!adm.contains(&TokenDescriptor::BlockClose));
    }

    #[test]
    fn close_only_when_required_fields_emitted() {
        let s = state_after(r#"resource "vpc" "main" { region = "eu-west-1" cidr_block = "10.0.0.0/16""#, &[("main", "vpc")]);
        assert!(s.admissible_tokens().unwrap().contains(&TokenDescriptor::BlockClose));
    }

    #[test]
    fn allowed_values_mask() {
        let s = state_after(r#"resource "ec2" "web" { instance_type ="#, &[("web", "ec2")]);
        let adm: Vec<_> = s.admissible_tokens().unwrap().into_iter().collect();
        assert_eq!(
            adm,
            vec![TokenDescriptor::StringLiteral("t3.micro".into()), TokenDescriptor::StringLiteral("t3.small".into())]
        );
    }

    #[test]
    fn reference_kind_mask() {
        let symbols = [("web", "ec2"), ("a", "subnet"), ("b", "subnet"), ("main", "vpc")];
        let s = state_after(r#"resource "ec2" "web" { subnet_id ="#, &symbols);
        let adm: Vec<_> = s.admissible_tokens().unwrap().into_iter().collect();
        assert_eq!(adm, vec![TokenDescriptor::Identifier("subnet".into())]);
        let s = state_after(r#"resource "ec2" "web" { subnet_id = subnet."#, &symbols);
        let adm: Vec<_> = s.admissible_tokens().unwrap().into_iter().collect();
        assert_eq!(adm, vec![TokenDescriptor::Identifier("a".into()), TokenDescriptor::Identifier("b".into())]);
    }

    #[test]
    fn free_values_end_by_lookahead() {
        let s = state_after(r#"resource "vpc" "main" { tags = x"#, &[("main", "vpc")]);
        let adm = s.admissible_tokens().unwrap();
        assert!(adm.contains(&TokenDescriptor::Terminal(".".into())));
        assert!(adm.contains(&TokenDescriptor::AttributeName("cidr_block".into())));
        let s = state_after(r#"resource "vpc" "main" { tags = { a = [1, "b"] } cidr_block"#, &[("main", "vpc")]);
        assert!(s.admissible_tokens().unwrap().contains(&TokenDescriptor::Terminal("=".into())));
    }

    #[test]
    fn rejects_schema_violations() {
        let registry = fixtures::registry();
        let mut s = DecoderState::new(&registry, SymbolTable::default());
        for t in [Tok::Ident("resource".into()), Tok::Str("vpc".into())] {
            s.advance(&t).unwrap();
        }
        assert!(s.advance(&Tok::Str("ghost".into())).is_err());
        assert!(matches!(
            DecoderState::new(&registry, SymbolTable::default()).advance(&Tok::Str("x".into())),
            Err(SynthesisError::InadmissibleToken { .. })
        ));
    }
}
