//! Seeded generators for typed plans, used by property tests and the evaluation corpus.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rust_decimal::Decimal;

use crate::iir::{Effect, Plan, PlanEdge, Protocol, ResourceNode, TypedValue};
use crate::registry::{FieldDecl, KindSchema, SchemaRegistry, ValueDomain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanShape {
    pub max_nodes: usize,
    /// Probability of emitting each optional field.
    pub optional_rate: f64,
    pub max_extra_edges: usize,
    /// Allow strings with quotes, escapes and `${`.
    pub awkward_strings: bool,
}

impl Default for PlanShape {
    fn default() -> Self {
        Self { max_nodes: 8, optional_rate: 0.4, max_extra_edges: 3, awkward_strings: true }
    }
}

struct Builder<'a, R> {
    rng: &'a mut R,
    registry: &'a SchemaRegistry,
    shape: PlanShape,
    plan: Plan,
    counter: usize,
}

const PLAIN: &[char] = &['a', 'e', 'k', 'q', 'z', '0', '7', '-', '.', '/', '_'];
const AWKWARD: &[char] = &['"', '\\', '\n', '\t', '$', '{', '}', '#', ' ', 'ü'];

impl<R: Rng> Builder<'_, R> {
    fn string(&mut self) -> String {
        let len = self.rng.gen_range(1..10);
        (0..len)
            .map(|_| {
                if self.shape.awkward_strings && self.rng.gen_bool(0.15) {
                    *AWKWARD.choose(self.rng).expect("non-empty")
                } else {
                    *PLAIN.choose(self.rng).expect("non-empty")
                }
            })
            .collect()
    }

    fn scalar(&mut self) -> TypedValue {
        match self.rng.gen_range(0..4) {
            0 => TypedValue::String(self.string()),
            1 => TypedValue::Integer(self.rng.gen_range(-50..5000)),
            2 => TypedValue::Decimal(Decimal::new(self.rng.gen_range(-10_000..10_000), 2)),
            _ => TypedValue::Bool(self.rng.gen()),
        }
    }

    fn value(&mut self, owner: &str, decl: &FieldDecl) -> Option<TypedValue> {
        if let Some(allowed) = &decl.allowed {
            return allowed.choose(self.rng).cloned();
        }
        let lo = decl.min.unwrap_or(Decimal::from(-1000));
        let hi = decl.max.unwrap_or(lo + Decimal::from(5000));
        Some(match &decl.domain {
            ValueDomain::String => TypedValue::String(self.string()),
            ValueDomain::Int => {
                let (lo, hi) = (i64::try_from(lo.ceil()).ok()?, i64::try_from(hi.floor()).ok()?);
                TypedValue::Integer(self.rng.gen_range(lo..=hi))
            }
            ValueDomain::Decimal => {
                let steps = i64::try_from(((hi - lo) * Decimal::from(100)).floor()).ok()?;
                TypedValue::Decimal(lo + Decimal::new(self.rng.gen_range(0..=steps), 2))
            }
            ValueDomain::Bool => TypedValue::Bool(self.rng.gen()),
            ValueDomain::Map => {
                let n = self.rng.gen_range(0..4);
                let mut m = BTreeMap::new();
                for _ in 0..n {
                    let key = if self.rng.gen_bool(0.5) {
                        ["owner", "env", "team"][self.rng.gen_range(0..3)].to_owned()
                    } else {
                        self.string()
                    };
                    let v = self.scalar();
                    m.insert(key, v);
                }
                TypedValue::Map(m)
            }
            ValueDomain::List(elem) => {
                let n = self.rng.gen_range(0..4);
                let elem = FieldDecl::synthetic(elem.as_deref().cloned().unwrap_or(ValueDomain::String));
                TypedValue::List((0..n).filter_map(|_| self.value(owner, &elem)).collect())
            }
            ValueDomain::Reference(kind) => {
                let targets: Vec<String> = self
                    .plan
                    .nodes
                    .iter()
                    .filter(|n| n.id != owner && kind.as_ref().is_none_or(|k| *k == n.kind))
                    .map(|n| n.id.clone())
                    .collect();
                TypedValue::reference(targets.choose(self.rng)?.clone(), "id")
            }
            ValueDomain::Blocks(decls) => {
                let n = self.rng.gen_range(0..3);
                let mut entries = Vec::new();
                for _ in 0..n {
                    let mut m = BTreeMap::new();
                    for d in decls {
                        if d.required || self.rng.gen_bool(self.shape.optional_rate) {
                            if let Some(v) = self.value(owner, d) {
                                m.insert(d.name.clone(), v);
                            }
                        }
                    }
                    if decls.iter().all(|d| !d.required || m.contains_key(&d.name)) {
                        entries.push(TypedValue::Map(m));
                    }
                }
                TypedValue::List(entries)
            }
        })
    }

    /// Adds a node of `kind`, first adding any node its required references need.
    fn add(&mut self, schema: &KindSchema, depth: usize) -> Option<String> {
        for d in schema.required_fields() {
            if let Some(Some(k)) = d.reference_kind() {
                if !self.plan.nodes.iter().any(|n| n.kind == k) {
                    let dep = self.registry.kind(k)?;
                    if depth > 4 {
                        return None;
                    }
                    self.add(dep, depth + 1)?;
                }
            }
        }
        let id = format!("{}_{}", schema.kind, self.counter);
        self.counter += 1;
        let region = schema.regions.iter().collect::<Vec<_>>().choose(self.rng).map(|r| r.to_string())?;
        let mut node = ResourceNode::new(id.clone(), schema.kind.clone(), region);
        for d in &schema.fields {
            if d.required || self.rng.gen_bool(self.shape.optional_rate) {
                if let Some(v) = self.value(&id, d) {
                    node.fields.insert(d.name.clone(), v);
                }
            }
        }
        for e in Effect::ALL {
            if self.rng.gen_bool(0.15) {
                node.effects.insert(e);
            }
        }
        self.plan.nodes.push(node);
        Some(id)
    }
}

impl FieldDecl {
    fn synthetic(domain: ValueDomain) -> FieldDecl {
        FieldDecl { name: String::new(), domain, required: true, default: None, allowed: None, min: None, max: None }
    }
}

/// A plan over `registry` with every required field present and well-typed, references
/// pointing backwards (so Depends is acyclic), plus random extra Depends and Connects edges.
pub fn random_plan(rng: &mut impl Rng, registry: &SchemaRegistry, shape: PlanShape) -> Plan {
    let kinds: Vec<&KindSchema> = registry.kinds().collect();
    let mut b = Builder { rng, registry, shape, plan: Plan::default(), counter: 0 };
    if kinds.is_empty() {
        return b.plan;
    }
    let target = b.rng.gen_range(1..=shape.max_nodes.max(1));
    while b.plan.nodes.len() < target {
        let schema = kinds[b.rng.gen_range(0..kinds.len())];
        b.add(schema, 0);
    }
    let Builder { rng, mut plan, .. } = b;
    let ids: Vec<String> = plan.nodes.iter().map(|n| n.id.clone()).collect();
    for n in &plan.nodes.clone() {
        for r in n.fields.values().flat_map(|v| v.references()) {
            plan.add_edge(PlanEdge::depends(n.id.clone(), r.target.clone()));
        }
    }
    for _ in 0..rng.gen_range(0..=shape.max_extra_edges) {
        if ids.len() < 2 {
            break;
        }
        let (i, j) = (rng.gen_range(1..ids.len()), rng.gen_range(0..ids.len()));
        let j = j % i;
        plan.add_edge(PlanEdge::depends(ids[i].clone(), ids[j].clone()));
    }
    let sinks: Vec<&String> = ids
        .iter()
        .filter(|id| registry.kind(&plan.node(id).expect("own id").kind).is_some_and(|k| k.field("ingress").is_some()))
        .collect();
    for dst in sinks {
        for _ in 0..rng.gen_range(0..3) {
            let src = &ids[rng.gen_range(0..ids.len())];
            if src != dst {
                let proto = [Protocol::Tcp, Protocol::Udp, Protocol::Icmp][rng.gen_range(0..3)];
                let e = PlanEdge::connects(src.clone(), dst.clone(), proto, rng.gen_range(0..=65535));
                plan.add_edge(e);
            }
        }
    }
    plan
}
