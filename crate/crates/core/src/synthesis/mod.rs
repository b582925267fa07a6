//! Plan → HCL: structural compilation to a skeleton, then constrained decoding of
//! the holes under the grammar and provider-field automata.

mod automata;
mod decoder;
mod proposer;
mod skeleton;
mod symbols;

use thiserror::Error;

pub use automata::{by_terminal, Acceptor, DecoderState, ProviderFieldAutomaton, TokenDescriptor};
pub use decoder::{decode, decode_with, expr_tokens, DecodeEvent, DecodeOptions, DecodeOutcome, MAX_PROPOSER_ATTEMPTS};
pub use proposer::{DeterministicStub, HoleRequest, Proposer, RandomizedStub, ValueSet};
pub(crate) use skeleton::value_expr;
pub use skeleton::{
    compile_node, compile_skeleton, provider_block, Hole, SkeletonAttribute, SkeletonBlock, SkeletonProgram, Slot,
};
pub use symbols::SymbolTable;

use crate::hcl::HclProgram;
use crate::iir::Plan;
use crate::registry::SchemaRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("node `{node}` has unknown kind `{kind}`")]
    UnknownKind { node: String, kind: String },
    #[error("{at}: reference to undeclared node `{target}`")]
    DanglingReference { at: String, target: String },
    #[error("node `{node}` receives a connection but has no rule field")]
    InvalidConnection { node: String },
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("plan has a dependency cycle")]
    CyclicPlan,
    #[error("dead decoder state: {0}")]
    DeadState(String),
    #[error("inadmissible token {token}; admissible: {}", .expected.join(", "))]
    InadmissibleToken { token: String, expected: Vec<String> },
    #[error("grammar automaton rejected token: {0}")]
    Grammar(String),
    #[error("proposer `{proposer}` gave no admissible value for hole {hole} after {attempts} attempts")]
    ProposerExhausted { proposer: String, hole: usize, attempts: usize },
}

/// `decode(compile_skeleton(plan))` with the deterministic stub.
pub fn synthesize(plan: &Plan, registry: &SchemaRegistry) -> Result<HclProgram, SynthesisError> {
    let (skeleton, symbols) = compile_skeleton(plan, registry)?;
    Ok(decode(&skeleton, &symbols, registry, &mut DeterministicStub)?.program)
}
