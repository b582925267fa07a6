use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::Value;

use super::apply::stub_value;
use super::{CodeEdit, Edit, EditOrder, PlanEdit, RepairContext, RepairError};
use crate::digest::canonical_digest;
use crate::hcl::{HclExpr, HclProgram};
use crate::iir::{Plan, ResourceNode, TypedValue};
use crate::registry::{FieldDecl, KindSchema, RESERVED_ATTRIBUTES};
use crate::synthesis::{value_expr, SymbolTable};
use crate::validators::{CeClass, Counterexample, Remedy};

pub const MAPPING_TABLE_VERSION: &str = "e2e-mapping/1";

/// One row of the documented error-to-edit matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MappingRow {
    pub class: CeClass,
    pub code: &'static str,
    pub edit: &'static str,
    pub rule: &'static str,
}

const TABLE: &[MappingRow] = &[
    MappingRow {
        class: CeClass::Schema,
        code: "missing_required",
        edit: "AddRequiredField",
        rule: "registry default, else the stub's smallest admissible value",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "unknown_field",
        edit: "RenameAttribute",
        rule: "unique nearest undeclared-yet field within distance 2 (an added or dropped `_segment` counts 1)",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "dangling_reference",
        edit: "CorrectReference | AddNode",
        rule: "the unique kind-compatible target; otherwise add the named node",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "reference_kind_mismatch",
        edit: "CorrectReference",
        rule: "the unique kind-compatible target",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "type_mismatch",
        edit: "SetAttributeValue",
        rule: "registry default, else stub value",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "value_not_allowed",
        edit: "SetAttributeValue",
        rule: "registry default, else stub value",
    },
    MappingRow {
        class: CeClass::Schema,
        code: "region_unavailable",
        edit: "SetRegion",
        rule: "first available region admitted by residency",
    },
    MappingRow { class: CeClass::Run, code: "unsupported_sku", edit: "SetAttributeValue", rule: "cheapest other admissible sku" },
    MappingRow {
        class: CeClass::Run,
        code: "region_unavailable",
        edit: "SetRegion",
        rule: "next available region admitted by residency",
    },
    MappingRow {
        class: CeClass::Run,
        code: "az_unavailable",
        edit: "SetPlanField",
        rule: "smallest allowed zone no sibling uses, else smallest other",
    },
    MappingRow {
        class: CeClass::Policy,
        code: "encrypt_at_rest",
        edit: "AddEffect",
        rule: "rule obligation, realized through the registry",
    },
    MappingRow {
        class: CeClass::Policy,
        code: "redundancy",
        edit: "AddEffect",
        rule: "rule obligation, realized through the registry",
    },
    MappingRow {
        class: CeClass::Policy,
        code: "restricted_ingress",
        edit: "AdjustConnectivity",
        rule: "drop the offending rule entry",
    },
    MappingRow { class: CeClass::Policy, code: "least_privilege", edit: "SetAttributeValue", rule: "the rule's remedy" },
    MappingRow { class: CeClass::Policy, code: "tagging", edit: "SetAttributeValue", rule: "the rule's remedy (tag merge)" },
    MappingRow {
        class: CeClass::Policy,
        code: "residency",
        edit: "SetRegion",
        rule: "first region admitted by residency and the registry",
    },
    MappingRow {
        class: CeClass::Policy,
        code: "availability_zones",
        edit: "SetPlanField | AddNode",
        rule: "move a subnet sharing a zone to an unused zone, else add one",
    },
    MappingRow {
        class: CeClass::Cost,
        code: "budget_exceeded",
        edit: "SetAttributeValue",
        rule: "largest line item's sku to the next cheaper catalog entry",
    },
];

pub fn mapping_table() -> &'static [MappingRow] {
    TABLE
}

/// Digest of the versioned table, cited by evidence bundles.
pub fn mapping_table_digest() -> String {
    canonical_digest(&serde_json::json!({ "version": MAPPING_TABLE_VERSION, "rows": TABLE }))
}

/// An edit proposed for one counterexample, with its order key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub edit: Edit,
    pub order: EditOrder,
    pub ce: Counterexample,
}

/// Every mapped edit, ≺-sorted and without duplicates.
pub fn candidate_edits(ces: &[Counterexample], plan: &Plan, program: &HclProgram, ctx: &RepairContext) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = ces
        .iter()
        .filter_map(|ce| {
            let edit = map_one(ce, plan, program, ctx)?;
            Some(Candidate { order: EditOrder::of(ce.class, &edit), edit, ce: ce.clone() })
        })
        .collect();
    out.sort_by(|a, b| a.order.cmp(&b.order).then_with(|| a.ce.cmp(&b.ce)));
    out.dedup_by(|a, b| a.edit == b.edit);
    out
}

/// The ≺-minimal mapped edit; when nothing maps, the error names the most fundamental CE.
pub fn error_to_edit(
    ces: &[Counterexample],
    plan: &Plan,
    program: &HclProgram,
    ctx: &RepairContext,
) -> Result<Edit, RepairError> {
    let first = ces.iter().min().ok_or(RepairError::NoCounterexamples)?;
    candidate_edits(ces, plan, program, ctx)
        .into_iter()
        .next()
        .map(|c| c.edit)
        .ok_or_else(|| RepairError::NoApplicableEdit { code: first.code.clone(), locus: first.locus.to_string() })
}

/// Distance for near-miss renames: Levenshtein, except that adding or dropping one
/// `_segment` suffix (`subnet` ↔ `subnet_id`) counts as 1.
fn rename_distance(a: &str, b: &str) -> usize {
    let segment = |long: &str, short: &str| {
        long.strip_prefix(short).and_then(|rest| rest.strip_prefix('_')).is_some_and(|s| !s.is_empty() && !s.contains('_'))
    };
    if segment(a, b) || segment(b, a) {
        1
    } else {
        strsim::levenshtein(a, b)
    }
}

/// The unique closest candidate within distance 2; ties give `None`.
pub fn near_miss<'a>(name: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut scored: Vec<(usize, &str)> =
        candidates.into_iter().map(|c| (rename_distance(name, c), c)).filter(|(d, _)| *d <= 2).collect();
    scored.sort();
    match scored.as_slice() {
        [(d, c), rest @ ..] if rest.first().is_none_or(|(d2, _)| d2 > d) => Some(c),
        _ => None,
    }
}

struct Site<'a> {
    node: &'a ResourceNode,
    schema: &'a KindSchema,
    address: String,
}

fn site<'a>(ce: &Counterexample, plan: &'a Plan, ctx: &RepairContext<'a>) -> Option<Site<'a>> {
    let node = plan.node(&ce.locus.node)?;
    let schema = ctx.registry.kind(&node.kind)?;
    Some(Site { node, schema, address: format!("{}.{}", node.kind, node.id) })
}

/// Top-level field of a locus path (`ingress[0].port` → `None`).
fn top_field(field: &str) -> Option<&str> {
    (!field.is_empty() && !field.contains(['[', '.'])).then_some(field)
}

/// Declared fields the node does not set yet.
fn free_fields<'a>(s: &Site<'a>) -> impl Iterator<Item = &'a str> + 'a {
    let node = s.node;
    s.schema
        .fields
        .iter()
        .map(|d| d.name.as_str())
        .filter(move |n| !node.fields.contains_key(*n) && !RESERVED_ATTRIBUTES.contains(n))
}

fn default_or_stub(decl: &FieldDecl, s: &Site, symbols: &SymbolTable) -> Option<HclExpr> {
    match &decl.default {
        Some(d) => value_expr(d, symbols, &s.address).ok(),
        None => stub_value(decl, &s.node.id, &s.node.kind, symbols),
    }
}

fn other_region(s: &Site, ctx: &RepairContext) -> Option<PlanEdit> {
    let region = s.schema.regions.iter().filter(|r| ctx.constraints.allows_region(r) && **r != s.node.region).min()?;
    Some(PlanEdit::SetRegion { node: s.node.id.clone(), region: region.clone() })
}

fn sku_family(sku: &str) -> &str {
    sku.split('.').next().unwrap_or(sku)
}

fn map_one(ce: &Counterexample, plan: &Plan, program: &HclProgram, ctx: &RepairContext) -> Option<Edit> {
    let symbols = SymbolTable::from_plan(plan);
    match (ce.class, ce.code.as_str()) {
        (CeClass::Cost, "budget_exceeded") => return downgrade(ce, plan, ctx),
        (CeClass::Policy, "availability_zones") => return spread_zones(plan, ctx),
        _ => {}
    }
    let s = site(ce, plan, ctx)?;
    let field = top_field(&ce.locus.field);
    let code_edit = |e: CodeEdit| Some(Edit::Code(e));
    match (ce.class, ce.code.as_str()) {
        (CeClass::Schema, "missing_required") => {
            let decl = s.schema.field(field?)?;
            // A misspelt attribute that would be renamed to this field is the better fix.
            if let Some(old) = s
                .node
                .fields
                .keys()
                .find(|k| s.schema.field(k).is_none() && near_miss(k, free_fields(&s)) == Some(decl.name.as_str()))
            {
                return code_edit(CodeEdit::RenameAttribute {
                    block: s.address.clone(),
                    old: old.clone(),
                    new: decl.name.clone(),
                });
            }
            let value = default_or_stub(decl, &s, &symbols)?;
            code_edit(CodeEdit::AddRequiredField { block: s.address.clone(), field: decl.name.clone(), value })
        }
        (CeClass::Schema, "unknown_field") => {
            let old = field?;
            let new = near_miss(old, free_fields(&s))?;
            code_edit(CodeEdit::RenameAttribute { block: s.address.clone(), old: old.to_owned(), new: new.to_owned() })
        }
        (CeClass::Schema, code @ ("dangling_reference" | "reference_kind_mismatch")) => {
            let decl = s.schema.field(field?)?;
            let want = decl.reference_kind()?;
            let parts = match program.resource(&s.node.id)?.body.get(&decl.name)? {
                HclExpr::Reference(p) => p.clone(),
                _ => return None,
            };
            let attr = if parts.len() > 2 { parts[2..].join(".") } else { "id".to_owned() };
            let targets: Vec<&ResourceNode> =
                plan.nodes.iter().filter(|n| n.id != s.node.id && want.is_none_or(|k| k == n.kind)).collect();
            if let [t] = targets.as_slice() {
                return code_edit(CodeEdit::CorrectReference {
                    block: s.address.clone(),
                    field: decl.name.clone(),
                    target: format!("{}.{}.{attr}", t.kind, t.id),
                });
            }
            let [kind, name, ..] = parts.as_slice() else { return None };
            if code != "dangling_reference" || want.is_some_and(|k| k != kind) || ctx.registry.kind(kind).is_none() {
                return None;
            }
            let mut node = ResourceNode::new(name.clone(), kind.clone(), s.node.region.clone());
            if !ctx.registry.kind(kind)?.regions.contains(&node.region) {
                node.region = ctx.registry.kind(kind)?.regions.iter().find(|r| ctx.constraints.allows_region(r))?.clone();
            }
            Some(Edit::Plan(PlanEdit::AddNode { node }))
        }
        (CeClass::Schema, "type_mismatch" | "value_not_allowed") => {
            let decl = s.schema.field(field?)?;
            let value = default_or_stub(decl, &s, &symbols)?;
            code_edit(CodeEdit::SetAttributeValue { block: s.address.clone(), field: decl.name.clone(), value })
        }
        (CeClass::Schema | CeClass::Run, "region_unavailable") | (CeClass::Policy, "residency") => {
            other_region(&s, ctx).map(Edit::Plan)
        }
        (CeClass::Run, "az_unavailable") => {
            let decl = s.schema.field(field.unwrap_or("availability_zone"))?;
            let current = crate::validators::effective_field(&s.node.fields, &s.node.kind, &decl.name, ctx.registry);
            let used: Vec<_> = plan
                .nodes
                .iter()
                .filter(|n| n.kind == s.node.kind && n.id != s.node.id)
                .filter_map(|n| crate::validators::effective_field(&n.fields, &n.kind, &decl.name, ctx.registry))
                .collect();
            let others = || decl.allowed.iter().flatten().filter(|z| Some(*z) != current);
            let zone = others().filter(|z| !used.contains(z)).min().or_else(|| others().min())?;
            Some(Edit::Plan(PlanEdit::SetPlanField { node: s.node.id.clone(), field: decl.name.clone(), value: zone.clone() }))
        }
        (CeClass::Run, "unsupported_sku") => {
            let decl = s.schema.field(field?)?;
            let current = ce.witness.get("value").and_then(Value::as_str).unwrap_or_default();
            let provider = s.schema.provider.as_str();
            let priced = ctx.catalog.skus_by_price(provider, &s.node.region);
            let mut options: Vec<String> = match &decl.allowed {
                Some(a) => a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect(),
                None => priced.iter().filter(|(k, _)| sku_family(k) == sku_family(current)).map(|(k, _)| k.clone()).collect(),
            };
            options.retain(|o| o != current);
            let price = |o: &str| priced.iter().find(|(k, _)| k == o).map(|(_, p)| *p);
            options.sort_by(|a, b| (price(a).is_none(), price(a), a).cmp(&(price(b).is_none(), price(b), b)));
            let sku = options.into_iter().next()?;
            code_edit(CodeEdit::SetAttributeValue {
                block: s.address.clone(),
                field: decl.name.clone(),
                value: HclExpr::String(sku),
            })
        }
        (CeClass::Policy, "restricted_ingress") => {
            let block = ce.witness.get("block")?.as_str()?.to_owned();
            let index = usize::try_from(ce.witness.get("index")?.as_u64()?).ok()?;
            Some(Edit::Plan(PlanEdit::AdjustConnectivity {
                node: s.node.id.clone(),
                field: block,
                drop: vec![index],
                remove: vec![],
                add: vec![],
            }))
        }
        (CeClass::Policy, _) => {
            let rule_id = ce.witness.get("rule")?.as_str()?;
            let rule = ctx.rules.iter().find(|r| r.id == rule_id)?;
            if let Some(effect) = rule.obligation.filter(|e| s.schema.effects.contains_key(e)) {
                return Some(Edit::Plan(PlanEdit::AddEffect { node: s.node.id.clone(), effect }));
            }
            match rule.remedy.as_ref()? {
                Remedy::Set { field, value } => {
                    let value = value_expr(value, &symbols, &s.address).ok()?;
                    code_edit(CodeEdit::SetAttributeValue { block: s.address.clone(), field: field.clone(), value })
                }
                Remedy::MergeTag { key, value } => {
                    let mut tags = match s.node.fields.get("tags") {
                        Some(TypedValue::Map(m)) => m.clone(),
                        _ => Default::default(),
                    };
                    tags.insert(key.clone(), TypedValue::str(value.clone()));
                    let value = value_expr(&TypedValue::Map(tags), &symbols, &s.address).ok()?;
                    code_edit(CodeEdit::SetAttributeValue { block: s.address.clone(), field: "tags".into(), value })
                }
            }
        }
        _ => None,
    }
}

/// Next cheaper sku of the same family for the largest line item that has one.
fn downgrade(ce: &Counterexample, plan: &Plan, ctx: &RepairContext) -> Option<Edit> {
    for item in ce.witness.get("top")?.as_array()? {
        let Some(node) = item.get("node").and_then(Value::as_str).and_then(|id| plan.node(id)) else { continue };
        let Some(schema) = ctx.registry.kind(&node.kind) else { continue };
        let Some(pk) = ctx.catalog.priced_kind(&schema.provider, &node.kind) else { continue };
        let sku = item.get("sku").and_then(Value::as_str).unwrap_or_default();
        let Some(current) = ctx.catalog.price(&schema.provider, &node.region, sku) else { continue };
        let decl = schema.field(&pk.sku_field);
        let cheaper = ctx
            .catalog
            .skus_by_price(&schema.provider, &node.region)
            .into_iter()
            .filter(|(k, p)| *p < current && sku_family(k) == sku_family(sku))
            .rfind(|(k, _)| decl.and_then(|d| d.allowed.as_ref()).is_none_or(|a| a.contains(&TypedValue::str(k.clone()))));
        if let Some((next, _)) = cheaper {
            return Some(Edit::Code(CodeEdit::SetAttributeValue {
                block: format!("{}.{}", node.kind, node.id),
                field: pk.sku_field.clone(),
                value: HclExpr::String(next),
            }));
        }
    }
    None
}

/// Moves a subnet that shares a zone to an unused zone, or adds a subnet in one.
fn spread_zones(plan: &Plan, ctx: &RepairContext) -> Option<Edit> {
    let schema = ctx.registry.kind("subnet")?;
    let decl = schema.field("availability_zone")?;
    let mut subnets: Vec<&ResourceNode> = plan.nodes.iter().filter(|n| n.kind == "subnet").collect();
    subnets.sort_by(|a, b| a.id.cmp(&b.id));
    let zone_of = |n: &ResourceNode| crate::validators::effective_field(&n.fields, &n.kind, &decl.name, ctx.registry).cloned();
    let used: BTreeSet<TypedValue> = subnets.iter().filter_map(|n| zone_of(n)).collect();
    let free = decl.allowed.as_ref()?.iter().filter(|z| !used.contains(z)).min()?.clone();
    let mut seen = BTreeSet::new();
    for n in &subnets {
        let z = zone_of(n);
        if !seen.insert(z) {
            return Some(Edit::Plan(PlanEdit::SetPlanField { node: n.id.clone(), field: decl.name.clone(), value: free }));
        }
    }
    let template = subnets.first()?;
    let suffix = free.as_str().unwrap_or("x");
    let mut node = (*template).clone();
    node.id = format!("{}_{suffix}", template.id);
    node.fields.insert(decl.name.clone(), free);
    node.meta.clear();
    (plan.node(&node.id).is_none()).then_some(Edit::Plan(PlanEdit::AddNode { node }))
}
