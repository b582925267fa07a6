use std::collections::BTreeSet;

use super::{CodeEdit, Edit, PlanEdit, RepairError};
use crate::hcl::{lift_lenient, Block, HclExpr, HclProgram};
use crate::iir::{is_valid_id, Plan, PlanEdge, TypedValue};
use crate::registry::{FieldDecl, SchemaRegistry};
use crate::synthesis::{compile_node, provider_block, Acceptor, DeterministicStub, Hole, SymbolTable, ValueSet};

/// The stub's value for a field: registry default, else the smallest admissible value.
pub(crate) fn stub_value(decl: &FieldDecl, node: &str, kind: &str, symbols: &SymbolTable) -> Option<HclExpr> {
    let hole = Hole { id: 0, node: node.to_owned(), kind: kind.to_owned(), field: decl.name.clone(), decl: decl.clone() };
    DeterministicStub::choose(&hole, &ValueSet::from_acceptor(&Acceptor::for_decl(decl), &hole, symbols))
}

fn block_mut<'a>(program: &'a mut HclProgram, address: &str) -> Result<&'a mut Block, RepairError> {
    program
        .blocks
        .iter_mut()
        .find(|b| b.is_resource() && b.address() == address)
        .ok_or_else(|| RepairError::LocusNotFound(address.to_owned()))
}

pub(crate) fn recompile(plan: &Plan, program: &mut HclProgram, id: &str, registry: &SchemaRegistry) -> Result<(), RepairError> {
    let node = plan.node(id).ok_or_else(|| RepairError::LocusNotFound(id.to_owned()))?;
    let symbols = SymbolTable::from_plan(plan);
    let skeleton = compile_node(node, plan, registry, &symbols, 0)?;
    let mut unfilled = None;
    let block = skeleton.to_block(|h| {
        stub_value(&h.decl, &h.node, &h.kind, &symbols).unwrap_or_else(|| {
            unfilled = Some(format!("{}.{}.{}", h.kind, h.node, h.field));
            HclExpr::List(Vec::new())
        })
    });
    if let Some(at) = unfilled {
        return Err(RepairError::Conflict(format!("no admissible value for {at}")));
    }
    match program.resource_index(id) {
        Some(i) => program.blocks[i] = block,
        None => {
            // New blocks go right before their first referrer, so dependency order holds.
            let referrer = program.blocks.iter().position(|b| {
                b.resource_name().and_then(|n| plan.node(n)).is_some_and(|n| plan.depends_targets(&n.id).contains(&id))
            });
            let provider = registry.kind(&node.kind).map(|k| k.provider.clone()).unwrap_or_default();
            let has_provider = program.blocks.iter().any(|b| b.address() == format!("provider.{provider}"));
            let at = referrer.unwrap_or(program.blocks.len());
            program.blocks.insert(at, block);
            if !has_provider && !provider.is_empty() {
                let p = provider_block(&provider).to_block(|_| unreachable!("provider blocks have no holes"));
                let first_resource = program.blocks.iter().position(Block::is_resource).unwrap_or(0);
                program.blocks.insert(first_resource, p);
            }
        }
    }
    Ok(())
}

/// Applies one edit. Plan edits mutate the plan and recompile only the touched blocks;
/// code edits mutate one block. Either way the plan is re-lifted from the new program
/// when the program lifts, so both stay in sync; other blocks are left untouched.
pub fn apply_edit(
    plan: &Plan,
    program: &HclProgram,
    edit: &Edit,
    registry: &SchemaRegistry,
) -> Result<(Plan, HclProgram), RepairError> {
    let mut plan = plan.clone();
    let mut program = program.clone();
    match edit {
        Edit::Plan(e) => {
            let touched = apply_plan_edit(&mut plan, &mut program, e, registry)?;
            for id in touched {
                recompile(&plan, &mut program, &id, registry)?;
            }
        }
        Edit::Code(e) => apply_code_edit(&mut program, e)?,
    }
    let synced = match lift_lenient(&program, registry) {
        Ok(mut lifted) => {
            lifted.specs = plan.specs.clone();
            lifted
        }
        Err(_) => plan,
    };
    Ok((synced, program))
}

fn node_mut<'a>(plan: &'a mut Plan, id: &str) -> Result<&'a mut crate::iir::ResourceNode, RepairError> {
    plan.node_mut(id).ok_or_else(|| RepairError::LocusNotFound(id.to_owned()))
}

/// Returns the ids whose blocks must be recompiled.
fn apply_plan_edit(
    plan: &mut Plan,
    program: &mut HclProgram,
    edit: &PlanEdit,
    registry: &SchemaRegistry,
) -> Result<Vec<String>, RepairError> {
    Ok(match edit {
        PlanEdit::SetRegion { node, region } => {
            node_mut(plan, node)?.region = region.clone();
            vec![node.clone()]
        }
        PlanEdit::AddEffect { node, effect } => {
            let n = node_mut(plan, node)?;
            n.effects.insert(*effect);
            if let Some(r) = registry.kind(&n.kind).and_then(|k| k.effects.get(effect)) {
                n.fields.insert(r.field.clone(), r.value.clone());
            }
            vec![node.clone()]
        }
        PlanEdit::AdjustConnectivity { node, field, drop, remove, add } => {
            let n = node_mut(plan, node)?;
            if !drop.is_empty() {
                let Some(TypedValue::List(entries)) = n.fields.get_mut(field) else {
                    return Err(RepairError::LocusNotFound(format!("{node}.{field}")));
                };
                let drop: BTreeSet<usize> = drop.iter().copied().collect();
                if drop.iter().any(|i| *i >= entries.len()) {
                    return Err(RepairError::LocusNotFound(format!("{node}.{field}{drop:?}")));
                }
                let mut i = 0;
                entries.retain(|_| {
                    i += 1;
                    !drop.contains(&(i - 1))
                });
            }
            for e in remove {
                let before = plan.edges.len();
                plan.edges.retain(|x| x != e);
                if plan.edges.len() == before {
                    return Err(RepairError::LocusNotFound(format!("edge {e:?}")));
                }
            }
            for e in add {
                if plan.node(e.src()).is_none() || plan.node(e.dst()).is_none() {
                    return Err(RepairError::LocusNotFound(format!("edge {e:?}")));
                }
                plan.add_edge(e.clone());
            }
            let mut touched: BTreeSet<String> = remove.iter().chain(add).map(|e| e.dst().to_owned()).collect();
            touched.insert(node.clone());
            touched.into_iter().collect()
        }
        PlanEdit::AddNode { node } => {
            if !is_valid_id(&node.id) || plan.node(&node.id).is_some() || program.resource(&node.id).is_some() {
                return Err(RepairError::Conflict(format!("cannot add node `{}`", node.id)));
            }
            if registry.kind(&node.kind).is_none() {
                return Err(RepairError::Conflict(format!("unknown kind `{}`", node.kind)));
            }
            let targets: BTreeSet<String> = node.fields.values().flat_map(|v| v.references()).map(|r| r.target.clone()).collect();
            plan.nodes.push(node.clone());
            for t in targets {
                plan.add_edge(PlanEdge::depends(node.id.clone(), t));
            }
            vec![node.id.clone()]
        }
        PlanEdit::RemoveNode { node } => {
            if plan.node(node).is_none() {
                return Err(RepairError::LocusNotFound(node.clone()));
            }
            if let Some(r) = plan
                .nodes
                .iter()
                .find(|n| n.id != *node && n.fields.values().flat_map(|v| v.references()).any(|r| r.target == *node))
            {
                return Err(RepairError::Conflict(format!("`{node}` is referenced by `{}`", r.id)));
            }
            let affected: BTreeSet<String> = plan
                .edges
                .iter()
                .filter(|e| e.dst() == node || e.src() == node)
                .flat_map(|e| [e.src().to_owned(), e.dst().to_owned()])
                .filter(|x| x != node)
                .collect();
            plan.nodes.retain(|n| n.id != *node);
            plan.edges.retain(|e| e.src() != node && e.dst() != node);
            if let Some(i) = program.resource_index(node) {
                program.blocks.remove(i);
            }
            affected.into_iter().collect()
        }
        PlanEdit::SetPlanField { node, field, value } => {
            node_mut(plan, node)?.fields.insert(field.clone(), value.clone());
            vec![node.clone()]
        }
    })
}

fn apply_code_edit(program: &mut HclProgram, edit: &CodeEdit) -> Result<(), RepairError> {
    match edit {
        CodeEdit::AddRequiredField { block, field, value } | CodeEdit::SetAttributeValue { block, field, value } => {
            block_mut(program, block)?.body.set(field, value.clone());
        }
        CodeEdit::CorrectReference { block, field, target } => {
            let b = block_mut(program, block)?;
            if !b.body.has(field) {
                return Err(RepairError::LocusNotFound(format!("{block}.{field}")));
            }
            b.body.set(field, HclExpr::reference(target));
        }
        CodeEdit::RenameAttribute { block, old, new } => {
            let b = block_mut(program, block)?;
            if b.body.has(new) {
                return Err(RepairError::Conflict(format!("{block} already has `{new}`")));
            }
            if !b.body.rename(old, new) {
                return Err(RepairError::LocusNotFound(format!("{block}.{old}")));
            }
        }
    }
    Ok(())
}
