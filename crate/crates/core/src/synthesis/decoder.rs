use std::collections::{BTreeMap, BTreeSet};

use super::automata::{DecoderState, TokenDescriptor};
use super::proposer::{DeterministicStub, HoleRequest, Proposer, ValueSet};
use super::skeleton::{Hole, SkeletonProgram, Slot};
use super::symbols::SymbolTable;
use super::SynthesisError;
use crate::hcl::{print_expr, tokenize, Body, HclExpr, HclProgram, Tok};
use crate::registry::SchemaRegistry;

/// Proposals tried per hole before the stub choice is forced.
pub const MAX_PROPOSER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_attempts: usize,
    /// When false, an exhausted proposer is an error instead of a forced stub choice.
    pub fallback_to_stub: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { max_attempts: MAX_PROPOSER_ATTEMPTS, fallback_to_stub: true }
    }
}

/// One emitted token together with the admissible set it was checked against.
#[derive(Debug, Clone)]
pub struct DecodeEvent<'a> {
    pub step: usize,
    pub token: &'a Tok,
    pub admissible: &'a BTreeSet<TokenDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub program: HclProgram,
    /// Filled value per hole id.
    pub filled: BTreeMap<usize, HclExpr>,
    /// Rejected proposals and forced fallbacks, for the blackboard.
    pub notes: Vec<String>,
    pub steps: usize,
}

/// Tokens of an expression exactly as the canonical printer renders it.
pub fn expr_tokens(e: &HclExpr) -> Vec<Tok> {
    tokenize(&print_expr(e)).expect("printed expressions lex").into_iter().map(|t| t.tok).filter(|t| *t != Tok::Eof).collect()
}

struct Session<'a, 'r> {
    state: DecoderState<'r>,
    symbols: &'a SymbolTable,
    steps: usize,
    observer: &'a mut dyn FnMut(&DecodeEvent),
}

impl Session<'_, '_> {
    fn emit(&mut self, tok: Tok) -> Result<(), SynthesisError> {
        let admissible = self.state.advance(&tok)?;
        (self.observer)(&DecodeEvent { step: self.steps, token: &tok, admissible: &admissible });
        self.steps += 1;
        Ok(())
    }

    fn emit_all(&mut self, toks: impl IntoIterator<Item = Tok>) -> Result<(), SynthesisError> {
        toks.into_iter().try_for_each(|t| self.emit(t))
    }

    /// Emits `toks` only if the whole sequence is admissible; otherwise leaves the state untouched.
    fn try_emit(&mut self, toks: &[Tok]) -> Result<(), SynthesisError> {
        let mut probe = self.state.clone();
        for t in toks {
            probe.advance(t)?;
        }
        self.emit_all(toks.iter().cloned())
    }

    fn body(&mut self, body: &Body) -> Result<(), SynthesisError> {
        for a in &body.attributes {
            self.emit_all([Tok::Ident(a.name.clone()), Tok::Eq])?;
            self.emit_all(expr_tokens(&a.value))?;
        }
        for b in &body.blocks {
            self.emit_all([Tok::Ident(b.name.clone()), Tok::LBrace])?;
            self.body(&b.body)?;
            self.emit(Tok::RBrace)?;
        }
        Ok(())
    }

    fn hole(
        &mut self,
        hole: &Hole,
        address: &str,
        proposer: &mut dyn Proposer,
        options: DecodeOptions,
        notes: &mut Vec<String>,
    ) -> Result<HclExpr, SynthesisError> {
        let acceptor = self
            .state
            .provider
            .current_acceptor()
            .ok_or_else(|| SynthesisError::DeadState(format!("hole {} is not at a value position", hole.id)))?
            .clone();
        let admissible = ValueSet::from_acceptor(&acceptor, hole, self.symbols);
        if admissible.is_empty() {
            return Err(SynthesisError::DeadState(format!("no admissible value for {address}.{}", hole.field)));
        }
        for attempt in 0..options.max_attempts {
            let request =
                HoleRequest { hole: hole.clone(), admissible: admissible.clone(), address: address.to_owned(), attempt };
            let rejection = match proposer.propose(&request) {
                Ok(v) if admissible.contains(&v) => match self.try_emit(&expr_tokens(&v)) {
                    Ok(()) => return Ok(v),
                    Err(e) => format!("`{}` rejected by automata: {e}", print_expr(&v)),
                },
                Ok(v) => format!("`{}` is outside the admissible set", print_expr(&v)),
                Err(e) => format!("proposer error: {e}"),
            };
            notes.push(format!("{address}.{} attempt {}: {rejection}", hole.field, attempt + 1));
        }
        if !options.fallback_to_stub {
            return Err(SynthesisError::ProposerExhausted {
                proposer: proposer.name().to_owned(),
                hole: hole.id,
                attempts: options.max_attempts,
            });
        }
        let v = DeterministicStub::choose(hole, &admissible).expect("non-empty admissible set");
        self.try_emit(&expr_tokens(&v))?;
        notes.push(format!(
            "{address}.{}: forced stub value `{}` after {} attempts",
            hole.field,
            print_expr(&v),
            options.max_attempts
        ));
        Ok(v)
    }
}

/// Fills every hole in document order with the proposer's admissible choice,
/// verifying each emitted token against Σ_HCL × Σ_prov.
pub fn decode(
    skeleton: &SkeletonProgram,
    symbols: &SymbolTable,
    registry: &SchemaRegistry,
    proposer: &mut dyn Proposer,
) -> Result<DecodeOutcome, SynthesisError> {
    decode_with(skeleton, symbols, registry, proposer, DecodeOptions::default(), &mut |_| {})
}

pub fn decode_with(
    skeleton: &SkeletonProgram,
    symbols: &SymbolTable,
    registry: &SchemaRegistry,
    proposer: &mut dyn Proposer,
    options: DecodeOptions,
    observer: &mut dyn FnMut(&DecodeEvent),
) -> Result<DecodeOutcome, SynthesisError> {
    let mut session = Session { state: DecoderState::new(registry, symbols.clone()), symbols, steps: 0, observer };
    let mut filled = BTreeMap::new();
    let mut notes = Vec::new();
    for block in &skeleton.blocks {
        session.emit(Tok::Ident(block.block_type.keyword().to_owned()))?;
        session.emit_all(block.labels.iter().map(|l| Tok::Str(l.clone())))?;
        session.emit(Tok::LBrace)?;
        let address = block.labels.join(".");
        for a in &block.attributes {
            session.emit_all([Tok::Ident(a.name.clone()), Tok::Eq])?;
            match &a.slot {
                Slot::Value(v) => session.emit_all(expr_tokens(v))?,
                Slot::Hole(h) => {
                    let v = session.hole(h, &address, proposer, options, &mut notes)?;
                    filled.insert(h.id, v);
                }
            }
        }
        session.body(&Body { attributes: Vec::new(), blocks: block.blocks.clone() })?;
        session.emit(Tok::RBrace)?;
    }
    session.emit(Tok::Eof)?;
    if !session.state.is_done() {
        return Err(SynthesisError::DeadState("input ended before the automata accepted".into()));
    }
    let program = HclProgram { blocks: skeleton.blocks.iter().map(|b| b.to_block(|h| filled[&h.id].clone())).collect() };
    Ok(DecodeOutcome { program, filled, notes, steps: session.steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hcl::{parse, print};
    use crate::iir::{Plan, PlanEdge, Protocol, ResourceNode, TypedValue};
    use crate::synthesis::{compile_skeleton, RandomizedStub};

    fn plan() -> Plan {
        Plan {
            nodes: vec![
                ResourceNode::new("main", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16")),
                ResourceNode::new("a", "subnet", "eu-west-1")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("cidr_block", TypedValue::str("10.0.1.0/24")),
                ResourceNode::new("web", "ec2", "eu-west-1").with_field("subnet_id", TypedValue::reference("a", "id")),
                ResourceNode::new("sg", "security_group", "eu-west-1").with_field("vpc_id", TypedValue::reference("main", "id")),
            ],
            edges: vec![
                PlanEdge::depends("a", "main"),
                PlanEdge::depends("web", "a"),
                PlanEdge::depends("sg", "main"),
                PlanEdge::connects("web", "sg", Protocol::Tcp, 443),
            ],
            ..Plan::default()
        }
    }

    struct Fixed(Vec<HclExpr>);

    impl Proposer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn propose(&mut self, _: &HoleRequest) -> Result<HclExpr, String> {
            Ok(self.0.remove(0))
        }
    }

    #[test]
    fn stub_fills_lexicographic_first() {
        let r = fixtures::registry();
        let (sk, symbols) = compile_skeleton(&plan(), &r).unwrap();
        let out = decode(&sk, &symbols, &r, &mut DeterministicStub).unwrap();
        let web = out.program.resource("web").unwrap();
        assert_eq!(web.body.get("instance_type"), Some(&HclExpr::str("t3.micro")));
        assert!(out.notes.is_empty());
        assert_eq!(parse(&print(&out.program)).unwrap(), out.program);
    }

    #[test]
    fn hole_free_skeleton_prints_identically() {
        let r = fixtures::registry();
        let mut p = plan();
        let web = p.node_mut("web").unwrap();
        web.fields.insert("ami".into(), TypedValue::str("ami-0f1e2d3c4b5a69788"));
        web.fields.insert("instance_type".into(), TypedValue::str("t3.small"));
        let (sk, symbols) = compile_skeleton(&p, &r).unwrap();
        assert_eq!(sk.hole_count(), 0);
        let out = decode(&sk, &symbols, &r, &mut DeterministicStub).unwrap();
        assert_eq!(print(&out.program), sk.print());
    }

    #[test]
    fn inadmissible_proposals_retry_then_fall_back() {
        let r = fixtures::registry();
        let (sk, symbols) = compile_skeleton(&plan(), &r).unwrap();
        let bad = || HclExpr::str("m5.huge");
        let mut p = Fixed(vec![HclExpr::str("ami-0f1e2d3c4b5a69788"), bad(), bad(), HclExpr::str("t3.small")]);
        let out = decode(&sk, &symbols, &r, &mut p).unwrap();
        assert_eq!(out.program.resource("web").unwrap().body.get("instance_type"), Some(&HclExpr::str("t3.small")));
        assert_eq!(out.notes.len(), 2);

        let mut p = Fixed(vec![HclExpr::str("ami-0f1e2d3c4b5a69788"), bad(), bad(), bad()]);
        let out = decode(&sk, &symbols, &r, &mut p).unwrap();
        assert_eq!(out.program.resource("web").unwrap().body.get("instance_type"), Some(&HclExpr::str("t3.micro")));
        assert!(out.notes.last().unwrap().contains("forced"));

        let mut p = Fixed(vec![HclExpr::str("ami-0f1e2d3c4b5a69788"), bad(), bad(), bad()]);
        let strict = DecodeOptions { fallback_to_stub: false, ..DecodeOptions::default() };
        let err = decode_with(&sk, &symbols, &r, &mut p, strict, &mut |_| {}).unwrap_err();
        assert!(matches!(err, SynthesisError::ProposerExhausted { attempts: 3, .. }));
    }

    #[test]
    fn every_token_is_admissible_under_random_proposals() {
        let r = fixtures::registry();
        let (sk, symbols) = compile_skeleton(&plan(), &r).unwrap();
        for seed in 0..20 {
            let mut prop = RandomizedStub::new(seed).with_error_rate(0.3);
            let mut violations = 0;
            let out = decode_with(&sk, &symbols, &r, &mut prop, DecodeOptions::default(), &mut |ev| {
                if !ev.admissible.iter().any(|d| d.matches(ev.token)) {
                    violations += 1;
                }
            })
            .unwrap();
            assert_eq!(violations, 0);
            assert_eq!(parse(&print(&out.program)).unwrap(), out.program);
        }
    }

    #[test]
    fn deterministic_output() {
        let r = fixtures::registry();
        let (sk, symbols) = compile_skeleton(&plan(), &r).unwrap();
        let a = print(&decode(&sk, &symbols, &r, &mut DeterministicStub).unwrap().program);
        let b = print(&decode(&sk, &symbols, &r, &mut DeterministicStub).unwrap().program);
        assert_eq!(a, b);
    }
}
