//! Counterexample-guided repair: the routing score J, edit operators, the edit order
//! and the deterministic error-to-edit mapping.

mod apply;
mod mapping;

use std::fmt;

use rust_decimal::Decimal;
use serde::{Serialize, Serializer};
use thiserror::Error;

pub use apply::apply_edit;
pub(crate) use apply::recompile;
pub use mapping::{
    candidate_edits, error_to_edit, mapping_table, mapping_table_digest, near_miss, Candidate, MappingRow, MAPPING_TABLE_VERSION,
};

use crate::hcl::{print_expr, HclExpr};
use crate::iir::{ConstraintSet, Effect, PlanEdge, ResourceNode, TypedValue};
use crate::registry::SchemaRegistry;
use crate::synthesis::SynthesisError;
use crate::validators::{CeClass, PolicyRule, PriceCatalog, ValidatorReport};

/// λ1..λ4 of the routing score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoutingWeights {
    #[serde(with = "crate::digest::decimal_number")]
    pub schema: Decimal,
    #[serde(with = "crate::digest::decimal_number")]
    pub policy: Decimal,
    #[serde(with = "crate::digest::decimal_number")]
    pub cost: Decimal,
    #[serde(with = "crate::digest::decimal_number")]
    pub deploy: Decimal,
}

impl RoutingWeights {
    pub fn new(schema: Decimal, policy: Decimal, cost: Decimal, deploy: Decimal) -> Result<Self, RepairError> {
        let w = Self { schema, policy, cost, deploy };
        let all = [schema, policy, cost, deploy];
        if all.iter().any(|x| x.is_sign_negative() && !x.is_zero()) || all.iter().all(|x| x.is_zero()) {
            return Err(RepairError::InvalidWeights(format!("{all:?}")));
        }
        Ok(w)
    }

    /// (1, 1, 1/B, 1); the cost weight is 0 without a ceiling and 1 for a zero ceiling,
    /// so a 100% overrun weighs as much as one hard failure.
    pub fn for_constraints(constraints: &ConstraintSet) -> Self {
        let cost = match constraints.budget_ceiling {
            None => Decimal::ZERO,
            Some(b) if b.is_zero() => Decimal::ONE,
            Some(b) => Decimal::ONE / b,
        };
        Self { schema: Decimal::ONE, policy: Decimal::ONE, cost, deploy: Decimal::ONE }
    }
}

/// J = λ1(1−v_schema) + λ2(1−v_policy) + λ3·max(0, v_cost − B) + λ4(1−v_deploy).
/// Gated validators count as failed; the cost term is 0 without a ceiling.
pub fn routing_score(report: &ValidatorReport, constraints: &ConstraintSet, weights: &RoutingWeights) -> Decimal {
    let miss = |ok: bool| if ok { Decimal::ZERO } else { Decimal::ONE };
    let overrun = constraints.budget_ceiling.map_or(Decimal::ZERO, |b| (report.v_cost - b).max(Decimal::ZERO));
    weights.schema * miss(report.v_schema())
        + weights.policy * miss(report.v_policy())
        + weights.cost * overrun
        + weights.deploy * miss(report.v_deploy())
}

fn expr_text<S: Serializer>(e: &HclExpr, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&print_expr(e))
}

/// Structural edits on the plan; the affected blocks are recompiled afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlanEdit {
    SetRegion {
        node: String,
        region: String,
    },
    /// Adds the effect and realizes it through the registry.
    AddEffect {
        node: String,
        effect: Effect,
    },
    /// Drops rule entries `drop` (indices into `field`) of `node` and edits Connects edges.
    AdjustConnectivity {
        node: String,
        field: String,
        drop: Vec<usize>,
        remove: Vec<PlanEdge>,
        add: Vec<PlanEdge>,
    },
    AddNode {
        node: ResourceNode,
    },
    RemoveNode {
        node: String,
    },
    SetPlanField {
        node: String,
        field: String,
        value: TypedValue,
    },
}

/// Local edits on one block of the program; the plan is re-lifted afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CodeEdit {
    AddRequiredField {
        block: String,
        field: String,
        #[serde(serialize_with = "expr_text")]
        value: HclExpr,
    },
    /// `target` is the full reference path, e.g. `subnet.a.id`.
    CorrectReference {
        block: String,
        field: String,
        target: String,
    },
    RenameAttribute {
        block: String,
        old: String,
        new: String,
    },
    SetAttributeValue {
        block: String,
        field: String,
        #[serde(serialize_with = "expr_text")]
        value: HclExpr,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "level", content = "edit", rename_all = "snake_case")]
pub enum Edit {
    Plan(PlanEdit),
    Code(CodeEdit),
}

impl Edit {
    pub fn is_structural(&self) -> bool {
        matches!(self, Edit::Plan(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Edit::Plan(PlanEdit::SetRegion { .. }) => "SetRegion",
            Edit::Plan(PlanEdit::AddEffect { .. }) => "AddEffect",
            Edit::Plan(PlanEdit::AdjustConnectivity { .. }) => "AdjustConnectivity",
            Edit::Plan(PlanEdit::AddNode { .. }) => "AddNode",
            Edit::Plan(PlanEdit::RemoveNode { .. }) => "RemoveNode",
            Edit::Plan(PlanEdit::SetPlanField { .. }) => "SetPlanField",
            Edit::Code(CodeEdit::AddRequiredField { .. }) => "AddRequiredField",
            Edit::Code(CodeEdit::CorrectReference { .. }) => "CorrectReference",
            Edit::Code(CodeEdit::RenameAttribute { .. }) => "RenameAttribute",
            Edit::Code(CodeEdit::SetAttributeValue { .. }) => "SetAttributeValue",
        }
    }

    /// Blocks or nodes the edit touches.
    pub fn blast_radius(&self) -> usize {
        match self {
            Edit::Plan(PlanEdit::AdjustConnectivity { remove, add, .. }) => {
                let mut touched: std::collections::BTreeSet<&str> =
                    remove.iter().chain(add).flat_map(|e| [e.src(), e.dst()]).collect();
                if let Edit::Plan(PlanEdit::AdjustConnectivity { node, .. }) = self {
                    touched.insert(node);
                }
                touched.len()
            }
            _ => 1,
        }
    }

    /// The node id or block address the edit names.
    pub fn locus(&self) -> String {
        match self {
            Edit::Plan(
                PlanEdit::SetRegion { node, .. }
                | PlanEdit::AddEffect { node, .. }
                | PlanEdit::AdjustConnectivity { node, .. }
                | PlanEdit::RemoveNode { node }
                | PlanEdit::SetPlanField { node, .. },
            ) => node.clone(),
            Edit::Plan(PlanEdit::AddNode { node }) => node.id.clone(),
            Edit::Code(
                CodeEdit::AddRequiredField { block, .. }
                | CodeEdit::CorrectReference { block, .. }
                | CodeEdit::RenameAttribute { block, .. }
                | CodeEdit::SetAttributeValue { block, .. },
            ) => block.clone(),
        }
    }
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edit::Plan(PlanEdit::SetRegion { node, region }) => write!(f, "SetRegion({node}, {region})"),
            Edit::Plan(PlanEdit::AddEffect { node, effect }) => write!(f, "AddEffect({node}, {effect})"),
            Edit::Plan(PlanEdit::AdjustConnectivity { node, field, drop, remove, add }) => {
                write!(f, "AdjustConnectivity({node}, drop {field}{drop:?}, remove {}, add {})", remove.len(), add.len())
            }
            Edit::Plan(PlanEdit::AddNode { node }) => write!(f, "AddNode({}.{})", node.kind, node.id),
            Edit::Plan(PlanEdit::RemoveNode { node }) => write!(f, "RemoveNode({node})"),
            Edit::Plan(PlanEdit::SetPlanField { node, field, value }) => {
                write!(f, "SetPlanField({node}, {field}, {})", value.to_json())
            }
            Edit::Code(CodeEdit::AddRequiredField { block, field, value }) => {
                write!(f, "AddRequiredField({block}, {field}, {})", print_expr(value))
            }
            Edit::Code(CodeEdit::CorrectReference { block, field, target }) => {
                write!(f, "CorrectReference({block}, {field}, {target})")
            }
            Edit::Code(CodeEdit::RenameAttribute { block, old, new }) => write!(f, "RenameAttribute({block}, {old}, {new})"),
            Edit::Code(CodeEdit::SetAttributeValue { block, field, value }) => {
                write!(f, "SetAttributeValue({block}, {field}, {})", print_expr(value))
            }
        }
    }
}

/// Total order key for edits: class priority, structural before local, smaller blast
/// radius, then locus; the rendered edit breaks any remaining tie.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EditOrder {
    pub class: CeClass,
    pub local: bool,
    pub blast_radius: usize,
    pub locus: String,
    pub rendered: String,
}

impl EditOrder {
    pub fn of(class: CeClass, edit: &Edit) -> Self {
        Self {
            class,
            local: !edit.is_structural(),
            blast_radius: edit.blast_radius(),
            locus: edit.locus(),
            rendered: edit.to_string(),
        }
    }
}

/// Configuration the mapper consults besides the counterexamples.
#[derive(Clone, Copy)]
pub struct RepairContext<'a> {
    pub registry: &'a SchemaRegistry,
    pub rules: &'a [PolicyRule],
    pub catalog: &'a PriceCatalog,
    pub constraints: &'a ConstraintSet,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RepairError {
    #[error("no counterexamples to repair")]
    NoCounterexamples,
    #[error("no applicable edit for `{code}` at {locus}")]
    NoApplicableEdit { code: String, locus: String },
    #[error("edit locus not found: {0}")]
    LocusNotFound(String),
    #[error("edit conflicts with the current artifact: {0}")]
    Conflict(String),
    #[error("invalid routing weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}
