use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Plan, PlanEdge, ResourceNode, TypedValue};
use crate::digest::{canonical_json, sha256_hex, DIGEST_ALGORITHM};
use crate::registry::{FieldDecl, SchemaRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanDigest {
    pub algorithm: String,
    pub hex: String,
}

impl std::fmt::Display for PlanDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.algorithm, self.hex)
    }
}

fn expand_defaults(fields: &mut BTreeMap<String, TypedValue>, decls: &[FieldDecl]) {
    for d in decls {
        match fields.get_mut(&d.name) {
            None => {
                if let Some(v) = &d.default {
                    fields.insert(d.name.clone(), v.clone());
                }
            }
            Some(TypedValue::List(entries)) if d.is_blocks() => {
                for e in entries {
                    if let TypedValue::Map(m) = e {
                        expand_defaults(m, d.nested());
                    }
                }
            }
            Some(_) => {}
        }
    }
}

/// Canonical form: nodes by id, edges sorted and deduplicated, defaults explicit,
/// decimals without trailing zeros. Field maps are ordered by construction.
/// Kinds absent from the registry get no defaults.
pub fn normalize_plan(plan: &Plan, registry: &SchemaRegistry) -> Plan {
    let mut nodes: Vec<ResourceNode> = plan
        .nodes
        .iter()
        .map(|n| {
            let mut n = n.clone();
            if let Some(schema) = registry.kind(&n.kind) {
                expand_defaults(&mut n.fields, &schema.fields);
            }
            for v in n.fields.values_mut() {
                *v = v.normalized();
            }
            n
        })
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let edges: BTreeSet<PlanEdge> = plan.edges.iter().cloned().collect();
    let mut specs = plan.specs.clone();
    specs.budget_ceiling = specs.budget_ceiling.map(|b| b.normalize());
    Plan { nodes, edges: edges.into_iter().collect(), specs }
}

fn strip_meta(plan: &Plan) -> Plan {
    let mut p = plan.clone();
    for n in &mut p.nodes {
        n.meta.clear();
    }
    p
}

/// Canonical JSON of the normalized plan, without node metadata.
pub fn canonical_text(plan: &Plan, registry: &SchemaRegistry) -> String {
    canonical_json(&strip_meta(&normalize_plan(plan, registry)))
}

pub fn plan_digest(plan: &Plan, registry: &SchemaRegistry) -> PlanDigest {
    PlanDigest { algorithm: DIGEST_ALGORITHM.to_owned(), hex: sha256_hex(canonical_text(plan, registry).as_bytes()) }
}

// ---- structural equivalence ---------------------------------------------------------

/// Relation labels between ordered node pairs: plan edges and field references.
type Relations = BTreeMap<(usize, usize), Vec<String>>;

struct Indexed {
    plan: Plan,
    index: BTreeMap<String, usize>,
    relations: Relations,
    colors: Vec<String>,
}

fn collect_refs(value: &TypedValue, path: &str, out: &mut Vec<(String, String, String)>) {
    match value {
        TypedValue::Reference(r) => out.push((path.to_owned(), r.target.clone(), r.attr.join("."))),
        TypedValue::List(items) => {
            for (i, v) in items.iter().enumerate() {
                collect_refs(v, &format!("{path}[{i}]"), out);
            }
        }
        TypedValue::Map(m) => {
            for (k, v) in m {
                collect_refs(v, &format!("{path}.{k}"), out);
            }
        }
        _ => {}
    }
}

/// Node content with every reference target replaced by a placeholder.
fn local_signature(node: &ResourceNode) -> String {
    let anon: BTreeMap<&String, TypedValue> = node
        .fields
        .iter()
        .map(|(k, v)| (k, v.map_refs(&|r| super::Reference { target: "_".into(), attr: r.attr.clone() })))
        .collect();
    canonical_json(&(&node.kind, &node.provider, &node.region, &node.effects, anon))
}

fn index(plan: Plan) -> Indexed {
    let index: BTreeMap<String, usize> = plan.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    let mut relations: Relations = BTreeMap::new();
    for e in &plan.edges {
        let (Some(&s), Some(&d)) = (index.get(e.src()), index.get(e.dst())) else { continue };
        let label = match e {
            PlanEdge::Depends { .. } => "depends".to_owned(),
            PlanEdge::Connects { proto, port, .. } => format!("connects:{}:{port}", proto.as_str()),
        };
        relations.entry((s, d)).or_default().push(label);
    }
    for (i, n) in plan.nodes.iter().enumerate() {
        for (k, v) in &n.fields {
            let mut refs = Vec::new();
            collect_refs(v, k, &mut refs);
            for (path, target, attr) in refs {
                if let Some(&t) = index.get(&target) {
                    relations.entry((i, t)).or_default().push(format!("ref:{path}:{attr}"));
                }
            }
        }
    }
    for labels in relations.values_mut() {
        labels.sort();
    }
    let mut colors: Vec<String> = plan.nodes.iter().map(|n| sha256_hex(local_signature(n).as_bytes())).collect();
    // Colour refinement; a handful of rounds separates all but genuinely symmetric nodes.
    for _ in 0..plan.nodes.len().min(8) {
        let next: Vec<String> = (0..plan.nodes.len())
            .map(|i| {
                let mut out: Vec<(&str, &Vec<String>, &str)> = Vec::new();
                for ((s, d), labels) in &relations {
                    if *s == i {
                        out.push(("out", labels, &colors[*d]));
                    }
                    if *d == i {
                        out.push(("in", labels, &colors[*s]));
                    }
                }
                out.sort();
                sha256_hex(canonical_json(&(&colors[i], out)).as_bytes())
            })
            .collect();
        colors = next;
    }
    Indexed { plan, index, relations, colors }
}

fn consistent(a: &Indexed, b: &Indexed, map: &[Option<usize>], i: usize, j: usize) -> bool {
    let empty = Vec::new();
    let rel = |x: &Indexed, s: usize, d: usize| x.relations.get(&(s, d)).unwrap_or(&empty).clone();
    if rel(a, i, i) != rel(b, j, j) {
        return false;
    }
    map.iter().enumerate().all(|(k, m)| match m {
        Some(l) => rel(a, i, k) == rel(b, j, *l) && rel(a, k, i) == rel(b, *l, j),
        None => true,
    })
}

fn search(a: &Indexed, b: &Indexed, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>, i: usize) -> bool {
    if i == a.plan.nodes.len() {
        let rename: BTreeMap<String, String> = map
            .iter()
            .enumerate()
            .map(|(k, m)| (a.plan.nodes[k].id.clone(), b.plan.nodes[m.expect("complete")].id.clone()))
            .collect();
        let renamed = a.plan.renamed(&rename);
        let mut nodes = renamed.nodes;
        nodes.sort_by(|x, y| x.id.cmp(&y.id));
        let edges: BTreeSet<PlanEdge> = renamed.edges.into_iter().collect();
        let edges_b: BTreeSet<PlanEdge> = b.plan.edges.iter().cloned().collect();
        return nodes == b.plan.nodes && edges == edges_b;
    }
    for j in 0..b.plan.nodes.len() {
        if used[j] || a.colors[i] != b.colors[j] || !consistent(a, b, map, i, j) {
            continue;
        }
        map[i] = Some(j);
        used[j] = true;
        if search(a, b, map, used, i + 1) {
            return true;
        }
        map[i] = None;
        used[j] = false;
    }
    false
}

/// Equality of normalized forms up to a consistent renaming of node ids.
/// Node metadata (version pins) is ignored.
pub fn plan_equiv(p1: &Plan, p2: &Plan, registry: &SchemaRegistry) -> bool {
    let a = strip_meta(&normalize_plan(p1, registry));
    let b = strip_meta(&normalize_plan(p2, registry));
    if a == b {
        return true;
    }
    if a.specs != b.specs || a.nodes.len() != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    let (a, b) = (index(a), index(b));
    if a.index.len() != a.plan.nodes.len() || b.index.len() != b.plan.nodes.len() {
        return false;
    }
    let mut ca = a.colors.clone();
    let mut cb = b.colors.clone();
    ca.sort();
    cb.sort();
    if ca != cb {
        return false;
    }
    let mut map = vec![None; a.plan.nodes.len()];
    let mut used = vec![false; b.plan.nodes.len()];
    search(&a, &b, &mut map, &mut used, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::iir::{Effect, Reference};

    fn sample() -> Plan {
        Plan {
            nodes: vec![
                ResourceNode::new("web", "ec2", "eu-west-1")
                    .with_field("ami", TypedValue::str("ami-0a1b2c3d4e5f60718"))
                    .with_field("instance_type", TypedValue::str("t3.micro"))
                    .with_field("subnet_id", TypedValue::reference("a", "id")),
                ResourceNode::new("main", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16")),
                ResourceNode::new("a", "subnet", "eu-west-1")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("cidr_block", TypedValue::str("10.0.1.0/24"))
                    .with_effect(Effect::Tagged),
            ],
            edges: vec![PlanEdge::depends("web", "a"), PlanEdge::depends("a", "main")],
            ..Plan::default()
        }
    }

    #[test]
    fn normalization_is_idempotent_and_order_invariant() {
        let r = fixtures::registry();
        let p = sample();
        let n = normalize_plan(&p, &r);
        assert_eq!(normalize_plan(&n, &r), n);
        let mut shuffled = p.clone();
        shuffled.nodes.reverse();
        shuffled.edges.reverse();
        assert_eq!(canonical_text(&shuffled, &r), canonical_text(&p, &r));
    }

    #[test]
    fn defaults_are_made_explicit() {
        let r = fixtures::registry();
        let n = normalize_plan(&sample(), &r);
        assert_eq!(n.node("web").unwrap().fields["monitoring"], TypedValue::Bool(false));
        assert_eq!(n.node("a").unwrap().fields["availability_zone"], TypedValue::str("a"));
    }

    #[test]
    fn alpha_renaming_is_equivalent() {
        let r = fixtures::registry();
        let p = sample();
        let map = BTreeMap::from([("web".to_owned(), "srv".to_owned())]);
        let q = p.renamed(&map);
        assert!(q.node("srv").is_some());
        assert_eq!(q.node("srv").unwrap().fields["subnet_id"], TypedValue::Reference(Reference::new("a", "id")));
        assert!(plan_equiv(&p, &q, &r));
        assert!(plan_equiv(&q, &p, &r));
    }

    #[test]
    fn field_change_breaks_equivalence_and_digest() {
        let r = fixtures::registry();
        let p = sample();
        let mut q = p.clone();
        q.node_mut("main").unwrap().fields.insert("cidr_block".into(), TypedValue::str("10.0.0.0/17"));
        assert!(!plan_equiv(&p, &q, &r));
        assert_ne!(plan_digest(&p, &r), plan_digest(&q, &r));
        assert_eq!(plan_digest(&p, &r), plan_digest(&p.clone(), &r));
    }

    #[test]
    fn swapped_references_are_not_equivalent() {
        let r = fixtures::registry();
        let base = |x: &str, y: &str| Plan {
            nodes: vec![
                ResourceNode::new("v1", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16")),
                ResourceNode::new("v2", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.1.0.0/16")),
                ResourceNode::new("s", "subnet", "eu-west-1")
                    .with_field("vpc_id", TypedValue::reference(x, "id"))
                    .with_field("cidr_block", TypedValue::str("10.0.1.0/24")),
            ],
            edges: vec![PlanEdge::depends("s", y)],
            ..Plan::default()
        };
        assert!(plan_equiv(&base("v1", "v1"), &base("v1", "v1"), &r));
        assert!(!plan_equiv(&base("v1", "v1"), &base("v2", "v2"), &r));
    }

    #[test]
    fn meta_is_ignored() {
        let r = fixtures::registry();
        let p = sample();
        let mut q = p.clone();
        q.nodes[0].meta.insert("provider_version".into(), "5.40.0".into());
        assert!(plan_equiv(&p, &q, &r));
        assert_eq!(plan_digest(&p, &r), plan_digest(&q, &r));
    }
}
