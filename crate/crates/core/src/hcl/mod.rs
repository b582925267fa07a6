//! The Terraform-HCL subset: AST, lexer, parser, canonical printer, grammar automaton
//! and the lifter back to I-IR.

mod ast;
pub mod grammar;
mod lexer;
mod lift;
mod parser;
mod printer;

use thiserror::Error;

pub use ast::{Attribute, Block, BlockType, Body, HclExpr, HclProgram, NestedBlock};
pub use grammar::{hcl_grammar, recognize, GrammarAutomaton};
pub use lexer::{tokenize, Tok, Token};
pub use lift::{lift, lift_lenient, lift_with, LiftMode, SOURCE_ATTRIBUTE};
pub use parser::{parse, parse_expr};
pub use printer::{escape_string, print, print_block, print_expr};

/// Attributes a resource block reserves for plan metadata.
pub const META_ATTRIBUTES: [&str; 3] = crate::registry::RESERVED_ATTRIBUTES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HclError {
    #[error("syntax error at {line}:{column}: {message}{}", expected_suffix(.expected))]
    Syntax { line: usize, column: usize, message: String, expected: Vec<String> },
    #[error("`{address}` has unknown kind `{kind}`")]
    UnknownKind { address: String, kind: String },
    #[error("{at}: unresolvable reference `{reference}`")]
    UnresolvableReference { at: String, reference: String },
    #[error("`{address}` has undeclared attribute `{attribute}`")]
    UnknownAttribute { address: String, attribute: String },
    #[error("resource name `{0}` is declared more than once")]
    DuplicateAddress(String),
    #[error("{0}")]
    Lift(String),
}

fn expected_suffix(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected one of: {})", expected.join(", "))
    }
}
