use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::hcl::{Block, BlockType, Body, HclExpr, HclProgram};
use crate::iir::is_valid_id;
use crate::validators::{CeClass, Counterexample, Locus};

/// Advisory finding. `escalated` carries the schema counterexample for findings
/// that are hard errors (dangling output references).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub address: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalated: Option<Counterexample>,
}

impl Diagnostic {
    fn new(code: &str, address: String, message: String) -> Self {
        Diagnostic { code: code.into(), address, message, escalated: None }
    }
}

fn walk<'a>(e: &'a HclExpr, out: &mut Vec<&'a [String]>) {
    match e {
        HclExpr::Reference(path) => out.push(path),
        HclExpr::List(v) => v.iter().for_each(|x| walk(x, out)),
        HclExpr::Map(kv) => kv.iter().for_each(|(_, x)| walk(x, out)),
        _ => {}
    }
}

fn body_refs<'a>(b: &'a Body, out: &mut Vec<&'a [String]>) {
    for a in &b.attributes {
        walk(&a.value, out);
    }
    for n in &b.blocks {
        body_refs(&n.body, out);
    }
}

fn refs(block: &Block) -> Vec<&[String]> {
    let mut out = Vec::new();
    body_refs(&block.body, &mut out);
    out
}

fn resource_target(path: &[String]) -> Option<(&str, &str)> {
    match path {
        [kind, name, ..] if kind != "var" => Some((kind, name)),
        _ => None,
    }
}

/// Unused variables, outputs that reference nothing or something undeclared,
/// resources with no inbound or outbound references, and ids that break the
/// `[a-z][a-z0-9_]*` convention. Provider blocks are not inspected.
pub fn review_static(program: &HclProgram) -> Vec<Diagnostic> {
    let declared: BTreeSet<(&str, &str)> =
        program.resources().filter_map(|b| Some((b.resource_kind()?, b.resource_name()?))).collect();
    let mut used_vars = BTreeSet::new();
    let mut touched: BTreeSet<(&str, &str)> = BTreeSet::new();
    for b in &program.blocks {
        for path in refs(b) {
            if path.first().map(String::as_str) == Some("var") {
                if let Some(v) = path.get(1) {
                    used_vars.insert(v.as_str());
                }
            } else if let Some(t) = resource_target(path) {
                touched.insert(t);
                if let (Some(k), Some(n)) = (b.resource_kind(), b.resource_name()) {
                    touched.insert((k, n));
                }
            }
        }
    }

    let mut out = Vec::new();
    for b in &program.blocks {
        let label = b.labels.last().map(String::as_str).unwrap_or_default();
        match b.block_type {
            BlockType::Variable if !used_vars.contains(label) => {
                out.push(Diagnostic::new("unused_variable", b.address(), format!("variable `{label}` is never referenced")));
            }
            BlockType::Output => {
                let targets: Vec<(&str, &str)> = refs(b).into_iter().filter_map(resource_target).collect();
                let vars = refs(b).iter().any(|p| p.first().map(String::as_str) == Some("var"));
                if targets.is_empty() && !vars {
                    out.push(Diagnostic::new("stray_output", b.address(), format!("output `{label}` references nothing")));
                }
                for (k, n) in targets.into_iter().filter(|t| !declared.contains(t)) {
                    let mut d = Diagnostic::new(
                        "dangling_output",
                        b.address(),
                        format!("output `{label}` references undeclared resource `{k}.{n}`"),
                    );
                    d.escalated = Some(Counterexample::new(
                        CeClass::Schema,
                        Locus { node: String::new(), address: b.address(), field: "value".into() },
                        "dangling_reference",
                        d.message.clone(),
                        json!({ "reference": format!("{k}.{n}") }),
                    ));
                    out.push(d);
                }
            }
            BlockType::Resource => {
                let (Some(k), Some(n)) = (b.resource_kind(), b.resource_name()) else { continue };
                if !touched.contains(&(k, n)) {
                    out.push(Diagnostic::new(
                        "dead_resource",
                        b.address(),
                        format!("`{k}.{n}` has no inbound or outbound references and is not exported"),
                    ));
                }
            }
            _ => {}
        }
        if b.block_type != BlockType::Provider && !is_valid_id(label) {
            out.push(Diagnostic::new("naming", b.address(), format!("`{label}` is not lower snake case")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcl::parse;

    const LINKED: &str = r#"
resource "vpc" "main" {
  region = "eu-west-1"
  cidr_block = "10.0.0.0/16"
}

resource "subnet" "a" {
  region = "eu-west-1"
  vpc_id = vpc.main.id
  cidr_block = var.cidr
}

variable "cidr" {
  default = "10.0.1.0/24"
}
"#;

    #[test]
    fn fully_referenced_program_is_clean() {
        assert_eq!(review_static(&parse(LINKED).unwrap()), vec![]);
    }

    #[test]
    fn unused_variable() {
        let p = parse(&format!("{LINKED}\nvariable \"spare\" {{\n  default = 1\n}}\n")).unwrap();
        let d = review_static(&p);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].code.as_str(), d[0].address.as_str()), ("unused_variable", "var.spare"));
    }

    #[test]
    fn outputs_and_dead_resources() {
        let text = format!(
            "{LINKED}\nresource \"s3_bucket\" \"Logs\" {{\n  region = \"eu-west-1\"\n  bucket_name = \"l\"\n}}\n\
             output \"nothing\" {{\n  value = \"x\"\n}}\noutput \"ghost\" {{\n  value = ec2.web.id\n}}\n"
        );
        let d = review_static(&parse(&text).unwrap());
        let codes: Vec<&str> = d.iter().map(|d| d.code.as_str()).collect();
        assert_eq!(codes, ["dead_resource", "naming", "stray_output", "dangling_output"]);
        let ce = d[3].escalated.as_ref().unwrap();
        assert_eq!((ce.class, ce.code.as_str()), (CeClass::Schema, "dangling_reference"));
        assert!(d[..3].iter().all(|d| d.escalated.is_none()));
    }
}
