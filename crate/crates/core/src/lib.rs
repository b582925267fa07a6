//! Synthesis of Terraform-subset configurations from structured intents.
//!
//! The pipeline lowers a typed infrastructure IR ([`iir::Plan`]) to HCL through
//! schema- and grammar-constrained decoding, validates the result with a family
//! of validators, and repairs it with a deterministic counterexample-to-edit
//! mapping until every validator passes or the attempt budget runs out.
//! Successful runs emit an evidence bundle that can be verified offline.

pub mod agents;
pub mod digest;
pub mod eval;
pub mod evidence;
pub mod fixtures;
pub mod gen;
pub mod hcl;
pub mod iir;
pub mod memory;
pub mod orchestrator;
pub mod registry;
pub mod repair;
pub mod synthesis;
pub mod validators;

pub use iir::{ConstraintSet, Effect, Plan, PlanEdge, ResourceNode, TypedValue};
pub use registry::SchemaRegistry;
