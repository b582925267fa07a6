use std::collections::{BTreeMap, BTreeSet};

use super::ast::{Block, BlockType, Body, HclExpr, HclProgram};
use super::HclError;
use crate::iir::{Effect, Plan, PlanEdge, Reference, ResourceNode, TypedValue};
use crate::registry::{connection, SchemaRegistry};

/// Attribute inside a nested rule block that turns it into a `Connects` edge.
pub const SOURCE_ATTRIBUTE: &str = crate::registry::CONNECTION_SOURCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMode {
    /// Unknown attributes, nested blocks and unresolvable references are errors.
    Strict,
    /// Keeps whatever the program says so that typing can report it.
    Lenient,
}

struct Lifter<'a> {
    program: &'a HclProgram,
    registry: &'a SchemaRegistry,
    mode: LiftMode,
    /// name label → kind label, for resource blocks.
    names: BTreeMap<&'a str, &'a str>,
    ids: BTreeSet<String>,
    variables: BTreeMap<&'a str, &'a Block>,
}

impl<'a> Lifter<'a> {
    fn strict(&self) -> bool {
        self.mode == LiftMode::Strict
    }

    /// Resolves `kind.name.attr...` to a node reference.
    fn resolve(&self, parts: &[String], at: &str) -> Result<Reference, HclError> {
        let unresolved = || HclError::UnresolvableReference { at: at.to_owned(), reference: parts.join(".") };
        match parts {
            [kind, name, attr @ ..] if self.names.get(name.as_str()) == Some(&kind.as_str()) => {
                Ok(Reference { target: name.clone(), attr: attr.to_vec() })
            }
            _ if self.strict() => Err(unresolved()),
            [_, name, attr @ ..] => Ok(Reference { target: name.clone(), attr: attr.to_vec() }),
            [only] => Ok(Reference { target: only.clone(), attr: Vec::new() }),
            [] => Err(unresolved()),
        }
    }

    fn value(&self, e: &HclExpr, at: &str, depth: usize) -> Result<TypedValue, HclError> {
        Ok(match e {
            HclExpr::String(s) => TypedValue::String(s.clone()),
            HclExpr::Int(i) => TypedValue::Integer(*i),
            HclExpr::Decimal(d) => TypedValue::Decimal(*d),
            HclExpr::Bool(b) => TypedValue::Bool(*b),
            HclExpr::List(items) => TypedValue::List(items.iter().map(|i| self.value(i, at, depth)).collect::<Result<_, _>>()?),
            HclExpr::Map(entries) => TypedValue::Map(
                entries.iter().map(|(k, v)| Ok((k.clone(), self.value(v, at, depth)?))).collect::<Result<_, HclError>>()?,
            ),
            HclExpr::Reference(parts) if parts.first().map(String::as_str) == Some("var") => {
                let unresolved = || HclError::UnresolvableReference { at: at.to_owned(), reference: parts.join(".") };
                let [_, name] = parts.as_slice() else { return Err(unresolved()) };
                let default = self.variables.get(name.as_str()).and_then(|v| v.body.get("default")).ok_or_else(unresolved)?;
                if depth > 8 {
                    return Err(unresolved());
                }
                self.value(default, at, depth + 1)?
            }
            HclExpr::Reference(parts) => TypedValue::Reference(self.resolve(parts, at)?),
        })
    }

    fn nested_entry(&self, body: &Body, at: &str) -> Result<TypedValue, HclError> {
        if let Some(b) = body.blocks.first() {
            return Err(HclError::Lift(format!("{at}: nested block `{}` inside a rule block", b.name)));
        }
        let mut m = BTreeMap::new();
        for a in &body.attributes {
            m.insert(a.name.clone(), self.value(&a.value, &format!("{at}.{}", a.name), 0)?);
        }
        Ok(TypedValue::Map(m))
    }

    /// `Connects` edge for a rule block with a resolvable `source`, if well-formed.
    fn as_connection(&self, entry: &TypedValue, dst: &str) -> Option<PlanEdge> {
        connection(entry, dst, &self.ids)
    }

    fn resource(&self, block: &Block, plan: &mut Plan) -> Result<(), HclError> {
        let (kind, name) = (&block.labels[0], &block.labels[1]);
        let schema = self.registry.kind(kind);
        if schema.is_none() && self.strict() {
            return Err(HclError::UnknownKind { address: block.address(), kind: kind.clone() });
        }
        let mut node = ResourceNode::new(name.clone(), kind.clone(), "");
        node.provider = schema.map(|s| s.provider.clone()).unwrap_or_default();
        let mut edges = Vec::new();
        for a in &block.body.attributes {
            let at = format!("{}.{}", block.address(), a.name);
            match a.name.as_str() {
                "region" => match &a.value {
                    HclExpr::String(r) => node.region = r.clone(),
                    _ => return Err(HclError::Lift(format!("{at}: region must be a string"))),
                },
                "effects" => {
                    let HclExpr::List(items) = &a.value else {
                        return Err(HclError::Lift(format!("{at}: effects must be a list of strings")));
                    };
                    for i in items {
                        let effect: Effect = i
                            .as_str()
                            .ok_or_else(|| HclError::Lift(format!("{at}: effects must be a list of strings")))?
                            .parse()
                            .map_err(|e| HclError::Lift(format!("{at}: {e}")))?;
                        node.effects.insert(effect);
                    }
                }
                "depends_on" => {
                    let HclExpr::List(items) = &a.value else {
                        return Err(HclError::Lift(format!("{at}: depends_on must be a list of addresses")));
                    };
                    for i in items {
                        let HclExpr::Reference(parts) = i else {
                            return Err(HclError::Lift(format!("{at}: depends_on must be a list of addresses")));
                        };
                        let r = self.resolve(parts, &at)?;
                        edges.push(PlanEdge::depends(name.clone(), r.target));
                    }
                }
                field => {
                    if self.strict() && schema.is_some_and(|s| s.field(field).is_none()) {
                        return Err(HclError::UnknownAttribute { address: block.address(), attribute: field.to_owned() });
                    }
                    let v = self.value(&a.value, &at, 0)?;
                    node.fields.insert(field.to_owned(), v);
                }
            }
        }
        let mut nested: BTreeMap<&str, Vec<TypedValue>> = BTreeMap::new();
        for b in &block.body.blocks {
            let at = format!("{}.{}", block.address(), b.name);
            let declared = schema.and_then(|s| s.field(&b.name)).is_some_and(|f| f.is_blocks());
            if self.strict() && !declared {
                return Err(HclError::UnknownAttribute { address: block.address(), attribute: b.name.clone() });
            }
            let entry = self.nested_entry(&b.body, &at)?;
            match self.as_connection(&entry, name) {
                Some(edge) => edges.push(edge),
                None => nested.entry(b.name.as_str()).or_default().push(entry),
            }
        }
        for (field, entries) in nested {
            match node.fields.get_mut(field) {
                None => {
                    node.fields.insert(field.to_owned(), TypedValue::List(entries));
                }
                Some(TypedValue::List(existing)) if existing.is_empty() => *existing = entries,
                Some(_) => {
                    return Err(HclError::Lift(format!("{}: `{field}` given both as attribute and block", block.address())))
                }
            }
        }
        if self.strict() && node.region.is_empty() {
            return Err(HclError::Lift(format!("{}: missing region", block.address())));
        }
        for v in node.fields.values() {
            for r in v.references() {
                if r.target != *name {
                    edges.push(PlanEdge::depends(name.clone(), r.target.clone()));
                }
            }
        }
        plan.nodes.push(node);
        for e in edges {
            plan.add_edge(e);
        }
        Ok(())
    }
}

/// Maps resource blocks back to I-IR nodes. Specs are not represented in HCL and come back empty.
pub fn lift_with(program: &HclProgram, registry: &SchemaRegistry, mode: LiftMode) -> Result<Plan, HclError> {
    let mut names = BTreeMap::new();
    let mut variables = BTreeMap::new();
    for b in &program.blocks {
        match b.block_type {
            BlockType::Resource => {
                if b.labels.len() != 2 {
                    return Err(HclError::Lift(format!("resource block `{}` needs two labels", b.address())));
                }
                if names.insert(b.labels[1].as_str(), b.labels[0].as_str()).is_some() {
                    return Err(HclError::DuplicateAddress(b.labels[1].clone()));
                }
            }
            BlockType::Variable => {
                variables.insert(b.labels[0].as_str(), b);
            }
            _ => {}
        }
    }
    let ids = names.keys().map(|n| n.to_string()).collect();
    let lifter = Lifter { program, registry, mode, names, ids, variables };
    let mut plan = Plan::default();
    for b in lifter.program.resources() {
        lifter.resource(b, &mut plan)?;
    }
    if mode == LiftMode::Strict {
        let ids: BTreeSet<&str> = plan.nodes.iter().map(|n| n.id.as_str()).collect();
        if let Some(bad) = ids.iter().find(|i| !crate::iir::is_valid_id(i)) {
            return Err(HclError::Lift(format!("resource name `{bad}` is not a valid node id")));
        }
    }
    Ok(plan)
}

pub fn lift(program: &HclProgram, registry: &SchemaRegistry) -> Result<Plan, HclError> {
    lift_with(program, registry, LiftMode::Strict)
}

pub fn lift_lenient(program: &HclProgram, registry: &SchemaRegistry) -> Result<Plan, HclError> {
    lift_with(program, registry, LiftMode::Lenient)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use crate::fixtures;
    use crate::iir::Protocol;

    const NET: &str = r#"
resource "vpc" "main" {
  region = "eu-west-1"
  cidr_block = "10.0.0.0/16"
}

resource "subnet" "a" {
  region = "eu-west-1"
  vpc_id = vpc.main.id
  cidr_block = var.subnet_cidr
}

variable "subnet_cidr" {
  default = "10.0.1.0/24"
}
"#;

    #[test]
    fn references_become_depends_edges() {
        let plan = lift(&parse(NET).unwrap(), &fixtures::registry()).unwrap();
        assert_eq!(plan.edges, vec![PlanEdge::depends("a", "main")]);
        let a = plan.node("a").unwrap();
        assert_eq!(a.fields["vpc_id"], TypedValue::reference("main", "id"));
        assert_eq!(a.fields["cidr_block"], TypedValue::str("10.0.1.0/24"));
        assert_eq!(a.provider, "aws");
    }

    #[test]
    fn dangling_reference() {
        let text = NET.replace("vpc.main.id", "vpc.ghost.id");
        let err = lift(&parse(&text).unwrap(), &fixtures::registry()).unwrap_err();
        assert!(matches!(err, HclError::UnresolvableReference { ref reference, .. } if reference == "vpc.ghost.id"));
        let lenient = lift_lenient(&parse(&text).unwrap(), &fixtures::registry()).unwrap();
        assert_eq!(lenient.node("a").unwrap().fields["vpc_id"], TypedValue::reference("ghost", "id"));
    }

    #[test]
    fn unknown_attribute_is_strict_error() {
        let text = NET.replace("cidr_block = \"10.0.0.0/16\"", "cidr = \"10.0.0.0/16\"");
        let p = parse(&text).unwrap();
        assert!(matches!(lift(&p, &fixtures::registry()), Err(HclError::UnknownAttribute { .. })));
        assert!(lift_lenient(&p, &fixtures::registry()).unwrap().node("main").unwrap().fields.contains_key("cidr"));
    }

    #[test]
    fn ingress_rules_become_connects_edges() {
        let text = format!(
            "{NET}\nresource \"security_group\" \"sg\" {{\n  region = \"eu-west-1\"\n  vpc_id = vpc.main.id\n  ingress {{\n    port = 443\n    protocol = \"tcp\"\n    source = subnet.a.id\n  }}\n  ingress {{\n    port = 22\n    protocol = \"tcp\"\n    cidr = \"10.0.0.0/8\"\n  }}\n}}\n"
        );
        let plan = lift(&parse(&text).unwrap(), &fixtures::registry()).unwrap();
        assert!(plan.has_edge(&PlanEdge::connects("a", "sg", Protocol::Tcp, 443)));
        assert!(!plan.has_edge(&PlanEdge::depends("sg", "a")));
        let TypedValue::List(rules) = &plan.node("sg").unwrap().fields["ingress"] else { panic!() };
        assert_eq!(rules.len(), 1);
    }

    #[test]
    fn unknown_kind() {
        let p = parse("resource \"lambda\" \"f\" { region = \"eu-west-1\" }").unwrap();
        assert!(matches!(lift(&p, &fixtures::registry()), Err(HclError::UnknownKind { .. })));
    }
}
