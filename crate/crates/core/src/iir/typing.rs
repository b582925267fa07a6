use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{IirError, Plan, PlanEdge, ResourceNode, TypedValue};
use crate::registry::{FieldDecl, SchemaRegistry, ValueDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaViolation {
    MissingRequired,
    UnknownField,
    TypeMismatch,
    ValueNotAllowed,
    ReferenceKindMismatch,
    DanglingReference,
    RegionUnavailable,
    InvalidConnection,
}

impl SchemaViolation {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaViolation::MissingRequired => "missing_required",
            SchemaViolation::UnknownField => "unknown_field",
            SchemaViolation::TypeMismatch => "type_mismatch",
            SchemaViolation::ValueNotAllowed => "value_not_allowed",
            SchemaViolation::ReferenceKindMismatch => "reference_kind_mismatch",
            SchemaViolation::DanglingReference => "dangling_reference",
            SchemaViolation::RegionUnavailable => "region_unavailable",
            SchemaViolation::InvalidConnection => "invalid_connection",
        }
    }
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One typing failure. `field` is a path (`ingress[0].port`) or a
/// pseudo-field (`region`, `edge:...`) when the failure is not about a field value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SchemaCe {
    pub violation: SchemaViolation,
    pub node: String,
    pub field: String,
    pub detail: String,
}

impl SchemaCe {
    fn new(violation: SchemaViolation, node: &str, field: &str, detail: impl Into<String>) -> Self {
        Self { violation, node: node.to_owned(), field: field.to_owned(), detail: detail.into() }
    }
}

struct Ctx<'a> {
    registry: &'a SchemaRegistry,
    kinds: BTreeMap<&'a str, &'a str>,
    out: Vec<SchemaCe>,
}

impl Ctx<'_> {
    fn check_fields(&mut self, node: &str, prefix: &str, fields: &BTreeMap<String, TypedValue>, decls: &[FieldDecl]) {
        for d in decls.iter().filter(|d| d.required) {
            if !fields.contains_key(&d.name) {
                let path = format!("{prefix}{}", d.name);
                self.out.push(SchemaCe::new(
                    SchemaViolation::MissingRequired,
                    node,
                    &path,
                    format!("required field `{}` is absent", d.name),
                ));
            }
        }
        for (name, value) in fields {
            let path = format!("{prefix}{name}");
            match decls.iter().find(|d| &d.name == name) {
                None => self.out.push(SchemaCe::new(
                    SchemaViolation::UnknownField,
                    node,
                    &path,
                    format!("field `{name}` is not declared"),
                )),
                Some(d) => self.check_value(node, &path, d, value),
            }
        }
    }

    fn check_value(&mut self, node: &str, path: &str, decl: &FieldDecl, value: &TypedValue) {
        if !decl.domain.admits_shape(value) {
            self.out.push(SchemaCe::new(
                SchemaViolation::TypeMismatch,
                node,
                path,
                format!("expected {}, found {}", decl.domain, value.type_name()),
            ));
            return;
        }
        match (&decl.domain, value) {
            (ValueDomain::Reference(expected), TypedValue::Reference(r)) => {
                let Some(kind) = self.kinds.get(r.target.as_str()).copied() else {
                    self.out.push(SchemaCe::new(SchemaViolation::DanglingReference, node, path, format!("`{r}` names no node")));
                    return;
                };
                if let Some(expected) = expected {
                    if expected != kind {
                        self.out.push(SchemaCe::new(
                            SchemaViolation::ReferenceKindMismatch,
                            node,
                            path,
                            format!("expected a reference to {expected}, `{}` is {kind}", r.target),
                        ));
                        return;
                    }
                }
                let attr_ok = match (r.attr.as_slice(), self.registry.kind(kind)) {
                    ([a], Some(schema)) => schema.has_attribute(a),
                    _ => false,
                };
                if !attr_ok {
                    self.out.push(SchemaCe::new(
                        SchemaViolation::DanglingReference,
                        node,
                        path,
                        format!("`{r}` is not an attribute of {kind}"),
                    ));
                }
            }
            (ValueDomain::Blocks(decls), TypedValue::List(entries)) => {
                for (i, e) in entries.iter().enumerate() {
                    if let TypedValue::Map(m) = e {
                        self.check_fields(node, &format!("{path}[{i}]."), m, decls);
                    }
                }
            }
            _ => {
                if !decl.is_allowed(value) {
                    let allowed: Vec<String> = decl.allowed.iter().flatten().map(|v| v.to_string()).collect();
                    self.out.push(SchemaCe::new(
                        SchemaViolation::ValueNotAllowed,
                        node,
                        path,
                        format!("{value} not in {{{}}}", allowed.join(", ")),
                    ));
                } else if !decl.within_range(value) {
                    self.out.push(SchemaCe::new(SchemaViolation::ValueNotAllowed, node, path, format!("{value} out of range")));
                }
            }
        }
    }

    fn check_node(&mut self, n: &ResourceNode) -> Result<(), IirError> {
        let schema =
            self.registry.kind(&n.kind).ok_or_else(|| IirError::UnknownKind { node: n.id.clone(), kind: n.kind.clone() })?;
        if !schema.regions.contains(&n.region) {
            self.out.push(SchemaCe::new(
                SchemaViolation::RegionUnavailable,
                &n.id,
                "region",
                format!("{} is not offered in `{}`", n.kind, n.region),
            ));
        }
        self.check_fields(&n.id, "", &n.fields, &schema.fields);
        Ok(())
    }
}

/// Typing judgment of a plan under the registry; empty iff well-typed.
pub fn validate_types(plan: &Plan, registry: &SchemaRegistry) -> Result<Vec<SchemaCe>, IirError> {
    let mut ctx = Ctx { registry, kinds: plan.nodes.iter().map(|n| (n.id.as_str(), n.kind.as_str())).collect(), out: Vec::new() };
    for n in &plan.nodes {
        ctx.check_node(n)?;
    }
    let mut seen = BTreeSet::new();
    for e in &plan.edges {
        if !seen.insert(e) {
            continue;
        }
        let label = match e {
            PlanEdge::Depends { .. } => format!("depends:{}", e.dst()),
            PlanEdge::Connects { proto, port, .. } => format!("connects:{}:{}/{port}", e.dst(), proto.as_str()),
        };
        let (src, dst) = (ctx.kinds.get(e.src()).copied(), ctx.kinds.get(e.dst()).copied());
        if src.is_none() || dst.is_none() {
            ctx.out.push(SchemaCe::new(SchemaViolation::DanglingReference, e.src(), &label, "edge endpoint names no node"));
            continue;
        }
        if let PlanEdge::Connects { .. } = e {
            let accepts =
                registry.kind(dst.unwrap_or_default()).and_then(|k| k.field("ingress")).is_some_and(FieldDecl::is_blocks);
            if !accepts || e.src() == e.dst() {
                ctx.out.push(SchemaCe::new(
                    SchemaViolation::InvalidConnection,
                    e.dst(),
                    &label,
                    format!("{} cannot admit traffic from `{}`", e.dst(), e.src()),
                ));
            }
        }
    }
    ctx.out.sort();
    Ok(ctx.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::iir::Protocol;

    fn vpc() -> ResourceNode {
        ResourceNode::new("main", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16"))
    }

    fn subnet() -> ResourceNode {
        ResourceNode::new("a", "subnet", "eu-west-1")
            .with_field("vpc_id", TypedValue::reference("main", "id"))
            .with_field("cidr_block", TypedValue::str("10.0.1.0/24"))
    }

    fn plan(nodes: Vec<ResourceNode>) -> Plan {
        Plan { nodes, ..Plan::default() }
    }

    #[test]
    fn satisfying_vpc() {
        assert_eq!(validate_types(&plan(vec![vpc()]), &fixtures::registry()).unwrap(), vec![]);
    }

    #[test]
    fn ec2_missing_ami() {
        let web = ResourceNode::new("web", "ec2", "eu-west-1")
            .with_field("instance_type", TypedValue::str("t3.micro"))
            .with_field("subnet_id", TypedValue::reference("a", "id"));
        let ces = validate_types(&plan(vec![vpc(), subnet(), web]), &fixtures::registry()).unwrap();
        assert_eq!(ces.len(), 1);
        assert_eq!(
            (ces[0].violation, ces[0].node.as_str(), ces[0].field.as_str()),
            (SchemaViolation::MissingRequired, "web", "ami")
        );
    }

    #[test]
    fn subnet_versus_subnet_id() {
        let web = ResourceNode::new("web", "ec2", "eu-west-1")
            .with_field("ami", TypedValue::str("ami-0a1b2c3d4e5f60718"))
            .with_field("instance_type", TypedValue::str("t3.micro"))
            .with_field("subnet", TypedValue::reference("a", "id"));
        let ces = validate_types(&plan(vec![vpc(), subnet(), web]), &fixtures::registry()).unwrap();
        let kinds: Vec<_> = ces.iter().map(|c| (c.violation, c.field.as_str())).collect();
        assert!(kinds.contains(&(SchemaViolation::UnknownField, "subnet")));
        assert!(kinds.contains(&(SchemaViolation::MissingRequired, "subnet_id")));
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let p = plan(vec![ResourceNode::new("x", "lambda", "eu-west-1")]);
        assert!(matches!(validate_types(&p, &fixtures::registry()), Err(IirError::UnknownKind { .. })));
    }

    #[test]
    fn value_domain_checks() {
        let r = fixtures::registry();
        let bad = ResourceNode::new("web", "ec2", "us-west-2")
            .with_field("ami", TypedValue::str("ami-0a1b2c3d4e5f60718"))
            .with_field("instance_type", TypedValue::str("t3.mega"))
            .with_field("subnet_id", TypedValue::reference("main", "id"))
            .with_field("monitoring", TypedValue::str("yes"));
        let ces = validate_types(&plan(vec![vpc(), bad]), &r).unwrap();
        let got: BTreeSet<_> = ces.iter().map(|c| (c.violation, c.field.clone())).collect();
        assert!(got.contains(&(SchemaViolation::ValueNotAllowed, "instance_type".into())));
        assert!(got.contains(&(SchemaViolation::ReferenceKindMismatch, "subnet_id".into())));
        assert!(got.contains(&(SchemaViolation::TypeMismatch, "monitoring".into())));
        assert!(got.contains(&(SchemaViolation::RegionUnavailable, "region".into())));
    }

    #[test]
    fn nested_blocks_and_connections() {
        let r = fixtures::registry();
        let sg = ResourceNode::new("web_sg", "security_group", "eu-west-1")
            .with_field("vpc_id", TypedValue::reference("main", "id"))
            .with_field(
                "ingress",
                TypedValue::List(vec![TypedValue::Map(BTreeMap::from([("port".to_owned(), TypedValue::Integer(70000))]))]),
            );
        let mut p = plan(vec![vpc(), sg]);
        p.edges.push(PlanEdge::connects("web_sg", "main", Protocol::Tcp, 443));
        let ces = validate_types(&p, &r).unwrap();
        let got: BTreeSet<_> = ces.iter().map(|c| (c.violation, c.field.clone())).collect();
        assert!(got.contains(&(SchemaViolation::MissingRequired, "ingress[0].protocol".into())));
        assert!(got.contains(&(SchemaViolation::ValueNotAllowed, "ingress[0].port".into())));
        assert!(ces.iter().any(|c| c.violation == SchemaViolation::InvalidConnection));
    }
}
