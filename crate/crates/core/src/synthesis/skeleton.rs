use std::collections::BTreeSet;

use super::symbols::SymbolTable;
use super::SynthesisError;
use crate::hcl::{self, Attribute, Block, BlockType, Body, HclExpr, HclProgram, NestedBlock, SOURCE_ATTRIBUTE};
use crate::iir::{topological_order, Plan, PlanEdge, ResourceNode, TypedValue};
use crate::registry::{FieldDecl, SchemaRegistry};

/// A typed placeholder for a required value the plan leaves open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hole {
    /// Position in document order, from 0.
    pub id: usize,
    pub node: String,
    pub kind: String,
    pub field: String,
    pub decl: FieldDecl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Value(HclExpr),
    Hole(Hole),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonAttribute {
    pub name: String,
    pub slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonBlock {
    pub block_type: BlockType,
    pub labels: Vec<String>,
    pub attributes: Vec<SkeletonAttribute>,
    pub blocks: Vec<NestedBlock>,
}

impl SkeletonBlock {
    pub fn holes(&self) -> impl Iterator<Item = &Hole> {
        self.attributes.iter().filter_map(|a| match &a.slot {
            Slot::Hole(h) => Some(h),
            Slot::Value(_) => None,
        })
    }

    /// The block with every hole replaced by `fill(hole)`.
    pub fn to_block(&self, mut fill: impl FnMut(&Hole) -> HclExpr) -> Block {
        Block {
            block_type: self.block_type,
            labels: self.labels.clone(),
            body: Body {
                attributes: self
                    .attributes
                    .iter()
                    .map(|a| Attribute {
                        name: a.name.clone(),
                        value: match &a.slot {
                            Slot::Value(v) => v.clone(),
                            Slot::Hole(h) => fill(h),
                        },
                    })
                    .collect(),
                blocks: self.blocks.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkeletonProgram {
    pub blocks: Vec<SkeletonBlock>,
}

impl SkeletonProgram {
    pub fn holes(&self) -> impl Iterator<Item = &Hole> {
        self.blocks.iter().flat_map(SkeletonBlock::holes)
    }

    pub fn hole_count(&self) -> usize {
        self.holes().count()
    }

    /// The program when no holes remain.
    pub fn to_program(&self) -> Option<HclProgram> {
        if self.hole_count() > 0 {
            return None;
        }
        Some(HclProgram { blocks: self.blocks.iter().map(|b| b.to_block(|_| unreachable!("no holes"))).collect() })
    }

    /// Canonical text with holes rendered as `?<id>:<domain>`; equals `hcl::print` when hole-free.
    pub fn print(&self) -> String {
        let program = HclProgram {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.to_block(|h| HclExpr::Reference(vec![format!("?{}", h.id), h.decl.domain.to_string()])))
                .collect(),
        };
        hcl::print(&program)
    }
}

pub(crate) fn value_expr(v: &TypedValue, symbols: &SymbolTable, at: &str) -> Result<HclExpr, SynthesisError> {
    Ok(match v {
        TypedValue::String(s) => HclExpr::String(s.clone()),
        TypedValue::Integer(i) => HclExpr::Int(*i),
        TypedValue::Bool(b) => HclExpr::Bool(*b),
        TypedValue::Decimal(d) => HclExpr::Decimal(*d),
        TypedValue::List(items) => HclExpr::List(items.iter().map(|i| value_expr(i, symbols, at)).collect::<Result<_, _>>()?),
        TypedValue::Map(m) => HclExpr::Map(
            m.iter().map(|(k, v)| Ok((k.clone(), value_expr(v, symbols, at)?))).collect::<Result<_, SynthesisError>>()?,
        ),
        TypedValue::Reference(r) => symbols
            .reference_expr(r)
            .ok_or_else(|| SynthesisError::DanglingReference { at: at.to_owned(), target: r.target.clone() })?,
    })
}

fn entry_body(entry: &TypedValue, decls: &[FieldDecl], symbols: &SymbolTable, at: &str) -> Result<Option<Body>, SynthesisError> {
    let TypedValue::Map(m) = entry else { return Ok(None) };
    let mut body = Body::default();
    let declared = decls.iter().map(|d| d.name.as_str());
    let undeclared: Vec<&str> = m.keys().map(String::as_str).filter(|k| !decls.iter().any(|d| d.name == *k)).collect();
    for name in declared.chain(undeclared) {
        if let Some(v) = m.get(name) {
            body.attributes.push(Attribute { name: name.to_owned(), value: value_expr(v, symbols, at)? });
        }
    }
    Ok(Some(body))
}

/// Skeleton block for one node. `holes_from` numbers the holes.
pub fn compile_node(
    node: &ResourceNode,
    plan: &Plan,
    registry: &SchemaRegistry,
    symbols: &SymbolTable,
    holes_from: usize,
) -> Result<SkeletonBlock, SynthesisError> {
    let schema = registry
        .kind(&node.kind)
        .ok_or_else(|| SynthesisError::UnknownKind { node: node.id.clone(), kind: node.kind.clone() })?;
    let at = |f: &str| format!("{}.{}.{f}", node.kind, node.id);
    let mut attributes =
        vec![SkeletonAttribute { name: "region".into(), slot: Slot::Value(HclExpr::String(node.region.clone())) }];
    if !node.effects.is_empty() {
        attributes.push(SkeletonAttribute {
            name: "effects".into(),
            slot: Slot::Value(HclExpr::List(node.effects.iter().map(|e| HclExpr::str(e.as_str())).collect())),
        });
    }
    let mut next_hole = holes_from;
    let mut nested = Vec::new();
    for d in schema.emission_order() {
        match node.fields.get(&d.name) {
            Some(v) => attributes
                .push(SkeletonAttribute { name: d.name.clone(), slot: Slot::Value(value_expr(v, symbols, &at(&d.name))?) }),
            None if d.required => {
                attributes.push(SkeletonAttribute {
                    name: d.name.clone(),
                    slot: Slot::Hole(Hole {
                        id: next_hole,
                        node: node.id.clone(),
                        kind: node.kind.clone(),
                        field: d.name.clone(),
                        decl: d.clone(),
                    }),
                });
                next_hole += 1;
            }
            None => {}
        }
    }
    for d in schema.block_fields() {
        let Some(v) = node.fields.get(&d.name) else { continue };
        let bodies = match v {
            TypedValue::List(entries) if !entries.is_empty() => entries
                .iter()
                .map(|e| entry_body(e, d.nested(), symbols, &at(&d.name)))
                .collect::<Result<Option<Vec<Body>>, _>>()?,
            _ => None,
        };
        match bodies {
            Some(bodies) => nested.extend(bodies.into_iter().map(|body| NestedBlock { name: d.name.clone(), body })),
            // Empty or non-block-shaped values keep attribute form so they survive a round trip.
            None => attributes
                .push(SkeletonAttribute { name: d.name.clone(), slot: Slot::Value(value_expr(v, symbols, &at(&d.name))?) }),
        }
    }
    for (name, v) in &node.fields {
        if schema.field(name).is_none() {
            attributes.push(SkeletonAttribute { name: name.clone(), slot: Slot::Value(value_expr(v, symbols, &at(name))?) });
        }
    }
    let referenced: BTreeSet<&str> = node.fields.values().flat_map(|v| v.references()).map(|r| r.target.as_str()).collect();
    let explicit: BTreeSet<&str> = plan.depends_targets(&node.id).into_iter().filter(|t| !referenced.contains(t)).collect();
    if !explicit.is_empty() {
        let items = explicit
            .iter()
            .map(|t| {
                symbols
                    .address(t)
                    .map(|a| HclExpr::reference(&a))
                    .ok_or_else(|| SynthesisError::DanglingReference { at: at("depends_on"), target: t.to_string() })
            })
            .collect::<Result<_, _>>()?;
        attributes.push(SkeletonAttribute { name: "depends_on".into(), slot: Slot::Value(HclExpr::List(items)) });
    }
    let mut connections: Vec<&PlanEdge> =
        plan.edges.iter().filter(|e| matches!(e, PlanEdge::Connects { .. }) && e.dst() == node.id).collect();
    connections.sort();
    connections.dedup();
    if !connections.is_empty() && !schema.block_fields().any(|d| d.name == "ingress") {
        return Err(SynthesisError::InvalidConnection { node: node.id.clone() });
    }
    for e in connections {
        let PlanEdge::Connects { src, proto, port, .. } = e else { continue };
        let source =
            symbols.address(src).ok_or_else(|| SynthesisError::DanglingReference { at: at("ingress"), target: src.clone() })?;
        nested.push(NestedBlock {
            name: "ingress".into(),
            body: Body {
                attributes: vec![
                    Attribute { name: "protocol".into(), value: HclExpr::str(proto.as_str()) },
                    Attribute { name: "port".into(), value: HclExpr::Int(i64::from(*port)) },
                    Attribute { name: SOURCE_ATTRIBUTE.into(), value: HclExpr::reference(&format!("{source}.id")) },
                ],
                blocks: Vec::new(),
            },
        });
    }
    Ok(SkeletonBlock {
        block_type: BlockType::Resource,
        labels: vec![node.kind.clone(), node.id.clone()],
        attributes,
        blocks: nested,
    })
}

pub fn provider_block(provider: &str) -> SkeletonBlock {
    SkeletonBlock {
        block_type: BlockType::Provider,
        labels: vec![provider.to_owned()],
        attributes: Vec::new(),
        blocks: Vec::new(),
    }
}

/// One provider block per provider in use, then one resource block per node in
/// dependency order; missing required values become holes.
pub fn compile_skeleton(plan: &Plan, registry: &SchemaRegistry) -> Result<(SkeletonProgram, SymbolTable), SynthesisError> {
    plan.check_well_formed().map_err(|e| SynthesisError::MalformedPlan(e.to_string()))?;
    let order = topological_order(plan).map_err(|_| SynthesisError::CyclicPlan)?;
    let symbols = SymbolTable::from_plan(plan);
    let mut providers = BTreeSet::new();
    for n in &plan.nodes {
        let schema =
            registry.kind(&n.kind).ok_or_else(|| SynthesisError::UnknownKind { node: n.id.clone(), kind: n.kind.clone() })?;
        providers.insert(schema.provider.clone());
    }
    let mut blocks: Vec<SkeletonBlock> = providers.iter().map(|p| provider_block(p)).collect();
    let mut holes = 0;
    for id in order {
        let node = plan.node(&id).expect("ordered ids are nodes");
        let block = compile_node(node, plan, registry, &symbols, holes)?;
        holes += block.holes().count();
        blocks.push(block);
    }
    Ok((SkeletonProgram { blocks }, symbols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::iir::Protocol;

    pub(crate) fn chain() -> Plan {
        Plan {
            nodes: vec![
                ResourceNode::new("web", "ec2", "eu-west-1").with_field("subnet_id", TypedValue::reference("a", "id")),
                ResourceNode::new("a", "subnet", "eu-west-1")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("cidr_block", TypedValue::str("10.0.1.0/24")),
                ResourceNode::new("main", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16")),
            ],
            edges: vec![PlanEdge::depends("web", "a"), PlanEdge::depends("a", "main")],
            ..Plan::default()
        }
    }

    #[test]
    fn blocks_follow_dependency_order() {
        let (sk, symbols) = compile_skeleton(&chain(), &fixtures::registry()).unwrap();
        let labels: Vec<_> = sk.blocks.iter().map(|b| b.labels.join(".")).collect();
        assert_eq!(labels, vec!["aws", "vpc.main", "subnet.a", "ec2.web"]);
        assert_eq!(symbols.address("web").as_deref(), Some("ec2.web"));
        let web = &sk.blocks[3];
        let subnet = web.attributes.iter().find(|a| a.name == "subnet_id").unwrap();
        assert_eq!(subnet.slot, Slot::Value(HclExpr::reference("subnet.a.id")));
        let holes: Vec<_> = sk.holes().map(|h| (h.id, h.field.as_str())).collect();
        assert_eq!(holes, vec![(0, "ami"), (1, "instance_type")]);
        assert!(web.attributes.iter().all(|a| a.name != "depends_on"));
    }

    #[test]
    fn empty_plan() {
        let (sk, symbols) = compile_skeleton(&Plan::default(), &fixtures::registry()).unwrap();
        assert!(sk.blocks.is_empty() && symbols.is_empty());
        assert_eq!(sk.print(), "");
    }

    #[test]
    fn undeclared_endpoint_and_cycles() {
        let r = fixtures::registry();
        let mut p = chain();
        p.edges.push(PlanEdge::depends("web", "ghost"));
        assert!(matches!(compile_skeleton(&p, &r), Err(SynthesisError::MalformedPlan(_))));
        let mut p = chain();
        p.edges.push(PlanEdge::depends("main", "web"));
        assert_eq!(compile_skeleton(&p, &r).unwrap_err(), SynthesisError::CyclicPlan);
    }

    #[test]
    fn connections_become_ingress_blocks() {
        let r = fixtures::registry();
        let mut p = chain();
        p.nodes.push(
            ResourceNode::new("sg", "security_group", "eu-west-1").with_field("vpc_id", TypedValue::reference("main", "id")),
        );
        p.edges.push(PlanEdge::depends("sg", "main"));
        p.edges.push(PlanEdge::connects("web", "sg", Protocol::Tcp, 443));
        let (sk, _) = compile_skeleton(&p, &r).unwrap();
        let sg = sk.blocks.iter().find(|b| b.labels.get(1).map(String::as_str) == Some("sg")).unwrap();
        assert_eq!(sg.blocks.len(), 1);
        assert_eq!(sg.blocks[0].body.get(SOURCE_ATTRIBUTE), Some(&HclExpr::reference("ec2.web.id")));
        p.edges.push(PlanEdge::connects("sg", "web", Protocol::Tcp, 80));
        assert!(matches!(compile_skeleton(&p, &r), Err(SynthesisError::InvalidConnection { .. })));
    }
}
