use std::collections::BTreeSet;

use super::OrchestratorError;
use crate::hcl::{lift_lenient, HclProgram};
use crate::iir::{normalize_plan, plan_equiv, Plan, PlanEdge, ResourceNode, TypedValue};
use crate::registry::SchemaRegistry;
use crate::repair::recompile;
use crate::synthesis::synthesize;

fn contract(message: impl Into<String>) -> OrchestratorError {
    OrchestratorError::ContractViolation { role: "engineer".into(), message: message.into() }
}

/// Program-only values are adopted unless they reference something the plan
/// lacks; whether they type-check is left to the validators.
fn resolvable(v: &TypedValue, plan: &Plan) -> bool {
    v.references().iter().all(|r| plan.node(&r.target).is_some())
}

/// Copies fields present only in the program into the plan. Returns whether anything changed.
fn fold(plan: &mut Plan, lifted: &Plan) -> bool {
    let mut folded = Vec::new();
    for ln in &lifted.nodes {
        let snapshot = plan.clone();
        let Some(pn) = plan.node_mut(&ln.id).filter(|pn| pn.kind == ln.kind) else { continue };
        for (f, v) in &ln.fields {
            if !pn.fields.contains_key(f) && resolvable(v, &snapshot) {
                pn.fields.insert(f.clone(), v.clone());
                folded
                    .push(v.references().iter().map(|r| PlanEdge::depends(ln.id.clone(), r.target.clone())).collect::<Vec<_>>());
            }
        }
    }
    let changed = !folded.is_empty();
    for e in folded.into_iter().flatten().filter(|e| e.src() != e.dst()) {
        plan.add_edge(e);
    }
    changed
}

/// The parts of a node the plan is authoritative for, in normalized form.
fn view(plan: &Plan, id: &str) -> Option<(ResourceNode, BTreeSet<PlanEdge>)> {
    let mut n = plan.node(id)?.clone();
    n.meta.clear();
    n.provider.clear();
    let edges = plan
        .edges
        .iter()
        .filter(|e| match e {
            PlanEdge::Depends { src, .. } => src == id,
            PlanEdge::Connects { dst, .. } => dst == id,
        })
        .cloned()
        .collect();
    Some((n, edges))
}

/// Restores `plan_equiv(lift(T), P)`. The plan decides structure; attribute values
/// present only in the program are adopted when the schema admits them. Blocks
/// whose node still diverges are recompiled, stray blocks removed, missing ones
/// added. A program that does not lift is re-synthesized whole.
pub fn repair_roundtrip(
    plan: &Plan,
    program: &HclProgram,
    registry: &SchemaRegistry,
) -> Result<(Plan, HclProgram), OrchestratorError> {
    let Ok(mut lifted) = lift_lenient(program, registry) else {
        let fresh = synthesize(plan, registry).map_err(|e| contract(e.to_string()))?;
        return finish(plan.clone(), fresh, registry);
    };
    lifted.specs = plan.specs.clone();
    if plan_equiv(&lifted, plan, registry) {
        return Ok((plan.clone(), program.clone()));
    }
    let mut plan = plan.clone();
    fold(&mut plan, &lifted);

    let mut program = program.clone();
    let want = normalize_plan(&plan, registry);
    let have = normalize_plan(&lifted, registry);
    let ids: BTreeSet<&str> = plan.nodes.iter().map(|n| n.id.as_str()).collect();
    program.blocks.retain(|b| b.resource_name().is_none_or(|n| ids.contains(n)));
    for n in &plan.nodes {
        if view(&want, &n.id) != view(&have, &n.id) {
            recompile(&plan, &mut program, &n.id, registry).map_err(|e| contract(e.to_string()))?;
        }
    }
    finish(plan, program, registry)
}

/// Recompiled blocks may carry fresh hole fills the plan has not seen; adopt them once more.
fn finish(mut plan: Plan, program: HclProgram, registry: &SchemaRegistry) -> Result<(Plan, HclProgram), OrchestratorError> {
    let mut lifted = lift_lenient(&program, registry).map_err(|e| contract(format!("recompiled program does not lift: {e}")))?;
    lifted.specs = plan.specs.clone();
    if !plan_equiv(&lifted, &plan, registry) && fold(&mut plan, &lifted) {
        lifted.specs = plan.specs.clone();
    }
    if plan_equiv(&lifted, &plan, registry) {
        Ok((plan, program))
    } else {
        Err(contract("plan and program still diverge after recompilation"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hcl::{lift, parse, print, HclExpr};
    use crate::registry::harmonize;

    fn plan() -> Plan {
        let text = r#"
resource "vpc" "main" {
  region = "eu-west-1"
  cidr_block = "10.0.0.0/16"
}

resource "subnet" "a" {
  region = "eu-west-1"
  vpc_id = vpc.main.id
  cidr_block = "10.0.1.0/24"
}

resource "ec2" "web" {
  region = "eu-west-1"
  ami = "ami-0a1b2c3d4e5f60718"
  instance_type = "t3.micro"
  subnet_id = subnet.a.id
}
"#;
        harmonize(&lift(&parse(text).unwrap(), &fixtures::registry()).unwrap(), &fixtures::registry()).unwrap()
    }

    #[test]
    fn equivalent_pair_is_unchanged() {
        let r = fixtures::registry();
        let p = plan();
        let t = synthesize(&p, &r).unwrap();
        assert_eq!(repair_roundtrip(&p, &t, &r).unwrap(), (p, t));
    }

    #[test]
    fn spurious_attribute_is_folded() {
        let r = fixtures::registry();
        let p = plan();
        let mut t = synthesize(&p, &r).unwrap();
        t.resource_mut("web").unwrap().body.set("tags", HclExpr::Map(vec![("owner".into(), HclExpr::str("ops"))]));
        let (p2, t2) = repair_roundtrip(&p, &t, &r).unwrap();
        assert_eq!(t2, t);
        assert!(p2.node("web").unwrap().fields.contains_key("tags"));
    }

    #[test]
    fn missing_block_is_recompiled() {
        let r = fixtures::registry();
        let p = plan();
        let mut t = synthesize(&p, &r).unwrap();
        let i = t.resource_index("a").unwrap();
        t.blocks.remove(i);
        let (p2, t2) = repair_roundtrip(&p, &t, &r).unwrap();
        assert!(plan_equiv(&lift(&t2, &r).unwrap(), &p2, &r));
        assert!(t2.resource_index("a").unwrap() < t2.resource_index("web").unwrap());
    }

    #[test]
    fn plan_values_win_and_program_only_fields_are_adopted() {
        let r = fixtures::registry();
        let p = plan();
        let mut t = synthesize(&p, &r).unwrap();
        t.resource_mut("web").unwrap().body.set("instance_type", HclExpr::str("t3.mega"));
        t.resource_mut("web").unwrap().body.set("color", HclExpr::str("red"));
        let (p2, t2) = repair_roundtrip(&p, &t, &r).unwrap();
        assert_eq!(p2.node("web").unwrap().fields["instance_type"], TypedValue::str("t3.micro"));
        assert_eq!(p2.node("web").unwrap().fields["color"], TypedValue::str("red"));
        assert!(plan_equiv(&lift_lenient(&t2, &r).unwrap(), &p2, &r));
    }

    #[test]
    fn unresolvable_reference_is_dropped() {
        let r = fixtures::registry();
        let p = plan();
        let mut t = synthesize(&p, &r).unwrap();
        t.resource_mut("web")
            .unwrap()
            .body
            .set("security_group_id", HclExpr::Reference(vec!["security_group".into(), "ghost".into(), "id".into()]));
        let (p2, t2) = repair_roundtrip(&p, &t, &r).unwrap();
        assert_eq!(p2, p);
        assert!(!t2.resource("web").unwrap().body.has("security_group_id"));
    }

    #[test]
    fn stray_block_is_removed() {
        let r = fixtures::registry();
        let p = plan();
        let t = synthesize(&p, &r).unwrap();
        let extra = parse(&format!(
            "{}\nresource \"s3_bucket\" \"x\" {{\n  region = \"eu-west-1\"\n  bucket_name = \"x\"\n}}\n",
            print(&t)
        ))
        .unwrap();
        let (_, t2) = repair_roundtrip(&p, &extra, &r).unwrap();
        assert!(t2.resource("x").is_none());
    }
}
