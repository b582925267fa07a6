//! Native policy DSL: rules are predicates over a resource's attributes and effects.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{effective_field, view, CeClass, Counterexample, Locus, ValidatorError};
use crate::hcl::HclProgram;
use crate::iir::{ConstraintSet, Effect, ResourceNode, TypedValue};
use crate::registry::SchemaRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    FieldEquals {
        field: String,
        value: TypedValue,
    },
    FieldMemberOf {
        field: String,
        values: Vec<TypedValue>,
    },
    FieldPresent {
        field: String,
    },
    /// Some entry of `block` has `port` in `[from, to]` (and `cidr` equal, when given).
    PortRange {
        block: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        cidr: Option<String>,
        from: i64,
        to: i64,
    },
    EffectRequired {
        effect: Effect,
    },
    TagPresent {
        key: String,
    },
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

/// Repair hint carried by a rule; the repair mapper decides whether to use it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remedy {
    Set { field: String, value: TypedValue },
    MergeTag { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyRule {
    pub id: String,
    /// Counterexample code for failures.
    pub code: String,
    /// Kind selector; `*` matches every kind.
    pub kinds: Vec<String>,
    /// When set, the rule applies only where this effect is required.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obligation: Option<Effect>,
    pub severity: Severity,
    /// Message template; `{address}` is substituted.
    pub message: String,
    pub predicate: Predicate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remedy: Option<Remedy>,
}

impl PolicyRule {
    pub fn targets(&self, kind: &str) -> bool {
        self.kinds.iter().any(|k| k == "*" || k == kind)
    }

    pub fn applies_to(&self, node: &ResourceNode, constraints: &ConstraintSet) -> bool {
        self.targets(&node.kind)
            && self.obligation.is_none_or(|e| node.effects.contains(&e) || constraints.required_effects.contains(&e))
    }
}

fn predicate_from_json(v: &Value) -> Result<Predicate, ValidatorError> {
    let bad = |m: String| ValidatorError::UnknownRulePredicate(m);
    let obj = v.as_object().filter(|o| o.len() == 1).ok_or_else(|| bad(format!("predicate must be a one-key object: {v}")))?;
    let (tag, body) = obj.iter().next().expect("one key");
    let field = |name: &str| -> Result<String, ValidatorError> {
        body.get(name).and_then(Value::as_str).map(str::to_owned).ok_or_else(|| bad(format!("`{tag}` needs string `{name}`")))
    };
    let value = |x: &Value| TypedValue::from_json(x).map_err(|e| bad(format!("`{tag}`: {e}")));
    let int = |name: &str| -> Result<i64, ValidatorError> {
        body.get(name).and_then(Value::as_i64).ok_or_else(|| bad(format!("`{tag}` needs integer `{name}`")))
    };
    let list = || -> Result<Vec<Predicate>, ValidatorError> {
        body.as_array().ok_or_else(|| bad(format!("`{tag}` needs a list")))?.iter().map(predicate_from_json).collect()
    };
    Ok(match tag.as_str() {
        "field_equals" => Predicate::FieldEquals {
            field: field("field")?,
            value: value(body.get("value").ok_or_else(|| bad("`field_equals` needs `value`".into()))?)?,
        },
        "field_member_of" => Predicate::FieldMemberOf {
            field: field("field")?,
            values: body
                .get("values")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("`field_member_of` needs `values`".into()))?
                .iter()
                .map(value)
                .collect::<Result<_, _>>()?,
        },
        "field_present" => Predicate::FieldPresent { field: field("field")? },
        "port_range" => Predicate::PortRange {
            block: field("block")?,
            cidr: body.get("cidr").and_then(Value::as_str).map(str::to_owned),
            from: int("from")?,
            to: int("to")?,
        },
        "effect_required" => Predicate::EffectRequired { effect: field("effect")?.parse().map_err(bad)? },
        "tag_present" => Predicate::TagPresent { key: field("key")? },
        "all" => Predicate::All(list()?),
        "any" => Predicate::Any(list()?),
        "not" => Predicate::Not(Box::new(predicate_from_json(body)?)),
        other => return Err(bad(format!("`{other}`"))),
    })
}

#[derive(Deserialize)]
struct RawRule {
    id: String,
    code: String,
    kinds: Vec<String>,
    #[serde(default)]
    obligation: Option<Effect>,
    severity: Severity,
    message: String,
    predicate: Value,
    #[serde(default)]
    remedy: Option<Remedy>,
}

/// Parses a rule file (a JSON list of rules).
pub fn parse_rules(text: &str) -> Result<Vec<PolicyRule>, ValidatorError> {
    let raw: Vec<RawRule> = serde_json::from_str(text).map_err(|e| ValidatorError::InvalidRules(e.to_string()))?;
    let mut ids = BTreeSet::new();
    let mut rules = Vec::with_capacity(raw.len());
    for r in raw {
        if !ids.insert(r.id.clone()) {
            return Err(ValidatorError::InvalidRules(format!("duplicate rule id `{}`", r.id)));
        }
        if r.kinds.is_empty() {
            return Err(ValidatorError::InvalidRules(format!("rule `{}` selects no kinds", r.id)));
        }
        let predicate = predicate_from_json(&r.predicate)?;
        rules.push(PolicyRule {
            id: r.id,
            code: r.code,
            kinds: r.kinds,
            obligation: r.obligation,
            severity: r.severity,
            message: r.message,
            predicate,
            remedy: r.remedy,
        });
    }
    Ok(rules)
}

/// Digest of the rule set, independent of file order and layout.
pub fn rules_digest(rules: &[PolicyRule]) -> String {
    let mut sorted: Vec<&PolicyRule> = rules.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    crate::digest::canonical_digest(&sorted)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<PolicyRule>, ValidatorError> {
    let text =
        std::fs::read_to_string(path.as_ref()).map_err(|e| ValidatorError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_rules(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One rule evaluated at one resource (or one constraint check at program level).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub locus: Locus,
    pub rule_id: String,
    pub verdict: Verdict,
    pub justification: String,
}

struct Eval {
    holds: bool,
    /// What the predicate observed; for a failing rule this is the counterexample witness.
    witness: Value,
}

struct Subject<'a> {
    node: &'a ResourceNode,
    registry: &'a SchemaRegistry,
}

impl Subject<'_> {
    fn field(&self, name: &str) -> Option<&TypedValue> {
        effective_field(&self.node.fields, &self.node.kind, name, self.registry)
    }

    fn eval(&self, p: &Predicate) -> Eval {
        match p {
            Predicate::FieldEquals { field, value } => {
                let actual = self.field(field);
                Eval { holds: actual.map(TypedValue::normalized) == Some(value.normalized()), witness: observed(field, actual) }
            }
            Predicate::FieldMemberOf { field, values } => {
                let actual = self.field(field).map(TypedValue::normalized);
                let holds = actual.as_ref().is_some_and(|a| values.iter().any(|v| v.normalized() == *a));
                Eval { holds, witness: observed(field, self.field(field)) }
            }
            Predicate::FieldPresent { field } => {
                Eval { holds: self.field(field).is_some(), witness: observed(field, self.field(field)) }
            }
            Predicate::PortRange { block, cidr, from, to } => {
                let entries = match self.node.fields.get(block) {
                    Some(TypedValue::List(entries)) => entries.as_slice(),
                    _ => &[],
                };
                for (i, e) in entries.iter().enumerate() {
                    let TypedValue::Map(m) = e else { continue };
                    let port = match m.get("port") {
                        Some(TypedValue::Integer(p)) => *p,
                        _ => continue,
                    };
                    let cidr_ok = cidr.as_ref().is_none_or(|c| m.get("cidr").and_then(TypedValue::as_str) == Some(c));
                    if cidr_ok && (*from..=*to).contains(&port) {
                        let entry_cidr = m.get("cidr").and_then(TypedValue::as_str);
                        return Eval {
                            holds: true,
                            witness: json!({ "block": block, "index": i, "cidr": entry_cidr, "port": port }),
                        };
                    }
                }
                Eval { holds: false, witness: json!({ "block": block, "entries": entries.len() }) }
            }
            Predicate::EffectRequired { effect } => {
                Eval { holds: self.node.effects.contains(effect), witness: json!({ "effect": effect }) }
            }
            Predicate::TagPresent { key } => {
                let tags = self.field("tags");
                let holds = matches!(tags, Some(TypedValue::Map(m)) if m.contains_key(key));
                Eval { holds, witness: json!({ "tag": key, "present": holds }) }
            }
            Predicate::All(ps) => {
                for p in ps {
                    let e = self.eval(p);
                    if !e.holds {
                        return e;
                    }
                }
                Eval { holds: true, witness: Value::Null }
            }
            Predicate::Any(ps) => {
                let mut last = Value::Null;
                for p in ps {
                    let e = self.eval(p);
                    if e.holds {
                        return e;
                    }
                    last = e.witness;
                }
                Eval { holds: false, witness: last }
            }
            Predicate::Not(p) => {
                let e = self.eval(p);
                Eval { holds: !e.holds, witness: e.witness }
            }
        }
    }
}

fn observed(field: &str, v: Option<&TypedValue>) -> Value {
    json!({ "field": field, "value": v.map(TypedValue::to_json) })
}

/// Evaluates every applicable rule on every resource, plus the constraint set's
/// residency, availability and required-effect obligations.
pub fn eval_policies(
    program: &HclProgram,
    rules: &[PolicyRule],
    constraints: &ConstraintSet,
    registry: &SchemaRegistry,
) -> (bool, Vec<PolicyTrace>, Vec<Counterexample>) {
    let plan = match view(program, registry) {
        Ok(p) => p,
        Err(e) => {
            let ce = Counterexample::new(CeClass::Policy, Locus::program(), "unevaluable", e.to_string(), Value::Null);
            return (false, Vec::new(), vec![ce]);
        }
    };
    let mut traces = Vec::new();
    let mut ces = Vec::new();
    for node in &plan.nodes {
        let subject = Subject { node, registry };
        let address = format!("{}.{}", node.kind, node.id);
        for rule in rules.iter().filter(|r| r.applies_to(node, constraints)) {
            let e = subject.eval(&rule.predicate);
            let locus = Locus::node(&node.id, &node.kind, "");
            let message = rule.message.replace("{address}", &address);
            traces.push(PolicyTrace {
                locus: locus.clone(),
                rule_id: rule.id.clone(),
                verdict: if e.holds { Verdict::Pass } else { Verdict::Fail },
                justification: if e.holds { format!("{} holds at {address}", rule.id) } else { message.clone() },
            });
            if !e.holds {
                let mut w = Map::new();
                w.insert("rule".into(), json!(rule.id));
                w.insert("severity".into(), json!(rule.severity));
                match e.witness {
                    Value::Object(m) => w.extend(m),
                    Value::Null => {}
                    other => {
                        w.insert("observed".into(), other);
                    }
                }
                ces.push(Counterexample::new(CeClass::Policy, locus, &rule.code, message, Value::Object(w)));
            }
        }
    }
    constraint_checks(&plan, rules, constraints, registry, &mut traces, &mut ces);
    traces.sort();
    ces.sort();
    (ces.is_empty(), traces, ces)
}

pub(crate) const RESIDENCY_CHECK: &str = "constraint:residency";
pub(crate) const AVAILABILITY_CHECK: &str = "constraint:availability_zones";
pub(crate) const EFFECT_CHECK: &str = "constraint:required_effect";

fn constraint_checks(
    plan: &crate::iir::Plan,
    rules: &[PolicyRule],
    constraints: &ConstraintSet,
    registry: &SchemaRegistry,
    traces: &mut Vec<PolicyTrace>,
    ces: &mut Vec<Counterexample>,
) {
    let mut record = |locus: Locus, check: &str, code: &str, ok: bool, message: String, witness: Value| {
        traces.push(PolicyTrace {
            locus: locus.clone(),
            rule_id: check.to_owned(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            justification: message.clone(),
        });
        if !ok {
            ces.push(Counterexample::new(CeClass::Policy, locus, code, message, witness));
        }
    };
    if let Some(allowed) = &constraints.residency {
        for n in &plan.nodes {
            let ok = allowed.contains(&n.region);
            let message = format!(
                "{}.{} is in `{}`; residency allows {{{}}}",
                n.kind,
                n.id,
                n.region,
                allowed.iter().cloned().collect::<Vec<_>>().join(", ")
            );
            record(
                Locus::node(&n.id, &n.kind, "region"),
                RESIDENCY_CHECK,
                "residency",
                ok,
                message,
                json!({ "region": n.region, "allowed": allowed }),
            );
        }
    }
    if let Some(min) = constraints.availability_zones_min {
        let zones: BTreeSet<&str> = plan
            .nodes
            .iter()
            .filter(|n| n.kind == "subnet")
            .filter_map(|n| effective_field(&n.fields, &n.kind, "availability_zone", registry).and_then(TypedValue::as_str))
            .collect();
        let ok = zones.len() >= min as usize;
        let message = format!("{} availability zone(s) in use, {min} required", zones.len());
        record(
            Locus::program(),
            AVAILABILITY_CHECK,
            "availability_zones",
            ok,
            message,
            json!({ "zones": zones, "required": min }),
        );
    }
    for effect in &constraints.required_effects {
        let discharged = match effect {
            Effect::RegionPinned => constraints.residency.is_some(),
            e => rules.iter().any(|r| r.obligation == Some(*e)),
        };
        let message = if discharged {
            format!("required effect `{effect}` is discharged by the rule set")
        } else {
            format!("required effect `{effect}` has no discharging rule or constraint")
        };
        let locus = Locus { field: effect.as_str().to_owned(), ..Locus::program() };
        record(locus, EFFECT_CHECK, "undischarged_effect", discharged, message, json!({ "effect": effect }));
    }
}
