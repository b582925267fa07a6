use serde_json::json;

use super::{view, CeClass, Counterexample, Locus};
use crate::hcl::{HclError, HclProgram};
use crate::iir::{validate_types, SchemaViolation};
use crate::registry::SchemaRegistry;

/// Schema matcher: lifts the program leniently and runs the typing judgment, plus
/// program-level checks the lift surfaces (duplicate addresses, unresolvable syntax).
pub fn validate_schema(program: &HclProgram, registry: &SchemaRegistry) -> (bool, Vec<Counterexample>) {
    let mut plan = match view(program, registry) {
        Ok(p) => p,
        Err(e) => return (false, vec![lift_ce(&e)]),
    };
    let mut ces = Vec::new();
    let unknown: Vec<(String, String)> =
        plan.nodes.iter().filter(|n| registry.kind(&n.kind).is_none()).map(|n| (n.id.clone(), n.kind.clone())).collect();
    for (id, kind) in &unknown {
        ces.push(Counterexample::new(
            CeClass::Schema,
            Locus::node(id, kind, ""),
            "unknown_kind",
            format!("resource kind `{kind}` is not in the registry"),
            json!({ "kind": kind, "known": registry.kinds().map(|k| k.kind.clone()).collect::<Vec<_>>() }),
        ));
    }
    plan.nodes.retain(|n| registry.kind(&n.kind).is_some());
    let typing = validate_types(&plan, registry).expect("unknown kinds removed");
    for ce in typing {
        let kind = plan.node(&ce.node).map(|n| n.kind.as_str()).unwrap_or_default();
        let value = field_value(&plan, &ce.node, &ce.field);
        ces.push(Counterexample::new(
            CeClass::Schema,
            Locus::node(&ce.node, kind, &ce.field),
            ce.violation.as_str(),
            ce.detail.clone(),
            json!({ "violation": ce.violation, "value": value }),
        ));
    }
    ces.sort();
    (ces.is_empty(), ces)
}

fn field_value(plan: &crate::iir::Plan, node: &str, path: &str) -> serde_json::Value {
    let Some(n) = plan.node(node) else { return serde_json::Value::Null };
    let top = path.split(['[', '.']).next().unwrap_or_default();
    n.fields.get(top).map(|v| v.to_json()).unwrap_or(serde_json::Value::Null)
}

fn lift_ce(e: &HclError) -> Counterexample {
    let (code, locus) = match e {
        HclError::DuplicateAddress(name) => ("duplicate_address", Locus { node: name.clone(), ..Locus::default() }),
        HclError::UnresolvableReference { at, .. } => {
            (SchemaViolation::DanglingReference.as_str(), Locus { address: at.clone(), ..Locus::default() })
        }
        HclError::UnknownKind { address, .. } => ("unknown_kind", Locus { address: address.clone(), ..Locus::default() }),
        HclError::UnknownAttribute { address, attribute } => (
            SchemaViolation::UnknownField.as_str(),
            Locus { address: address.clone(), field: attribute.clone(), ..Locus::default() },
        ),
        HclError::Syntax { .. } => ("syntax_error", Locus::program()),
        HclError::Lift(_) => ("malformed_block", Locus::program()),
    };
    Counterexample::new(CeClass::Schema, locus, code, e.to_string(), json!({ "error": e.to_string() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hcl::parse;

    const NET: &str = r#"
resource "vpc" "main" {
  region = "eu-west-1"
  cidr_block = "10.0.0.0/16"
}

resource "subnet" "a" {
  region = "eu-west-1"
  vpc_id = vpc.main.id
  cidr_block = "10.0.1.0/24"
}
"#;

    fn check(extra: &str) -> (bool, Vec<Counterexample>) {
        validate_schema(&parse(&format!("{NET}{extra}")).unwrap(), &fixtures::registry())
    }

    #[test]
    fn valid_program_passes() {
        assert_eq!(check(""), (true, vec![]));
    }

    #[test]
    fn missing_required_ami() {
        let (ok, ces) = check(
            r#"resource "ec2" "web" {
  region = "eu-west-1"
  instance_type = "t3.micro"
  subnet_id = subnet.a.id
}"#,
        );
        assert!(!ok);
        assert_eq!(ces.len(), 1);
        assert_eq!((ces[0].code.as_str(), ces[0].locus.to_string().as_str()), ("missing_required", "ec2.web.ami"));
    }

    #[test]
    fn dangling_reference() {
        let (ok, ces) = check(
            r#"resource "ec2" "web" {
  region = "eu-west-1"
  ami = "ami-0a1b2c3d4e5f60718"
  instance_type = "t3.micro"
  subnet_id = subnet.ghost.id
}"#,
        );
        assert!(!ok);
        assert!(ces.iter().any(|c| c.code == "dangling_reference" && c.locus.node == "web"), "{ces:?}");
    }

    #[test]
    fn unknown_kind_and_duplicates() {
        let (ok, ces) = check(r#"resource "lambda" "f" { region = "eu-west-1" }"#);
        assert!(!ok);
        assert_eq!(ces[0].code, "unknown_kind");
        let (ok, ces) = check(r#"resource "vpc" "a" { region = "eu-west-1" cidr_block = "x" }"#);
        assert!(!ok);
        assert_eq!(ces[0].code, "duplicate_address");
    }
}
