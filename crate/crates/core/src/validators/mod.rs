//! The validator family: schema, policy, cost and deploy, merged into one report.

mod cost;
mod deploy;
mod policy;
mod schema;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cost::{estimate_cost, CostSheet, LineItem, PriceCatalog, PricedKind};
pub use deploy::{
    deploy_test, ExternalToolSandbox, Fault, FaultMatch, SandboxAdapter, SandboxRun, StubSandbox, DIAGNOSTIC_PATTERNS, TF_BIN_ENV,
};
pub use policy::{
    eval_policies, load_rules, parse_rules, rules_digest, PolicyRule, PolicyTrace, Predicate, Remedy, Severity, Verdict,
};
pub use schema::validate_schema;

use crate::hcl::HclProgram;
use crate::iir::{ConstraintSet, Plan, TypedValue};
use crate::registry::SchemaRegistry;

/// Counterexample classes in routing priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeClass {
    Schema,
    Run,
    Policy,
    Cost,
}

impl CeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CeClass::Schema => "schema",
            CeClass::Run => "run",
            CeClass::Policy => "policy",
            CeClass::Cost => "cost",
        }
    }
}

impl fmt::Display for CeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a counterexample points: node id, block address and field path (any may be empty).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Locus {
    pub node: String,
    pub address: String,
    pub field: String,
}

impl Locus {
    pub fn node(node: &str, kind: &str, field: &str) -> Self {
        Self {
            node: node.to_owned(),
            address: if kind.is_empty() { node.to_owned() } else { format!("{kind}.{node}") },
            field: field.to_owned(),
        }
    }

    pub fn program() -> Self {
        Self::default()
    }
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.address.is_empty(), self.field.is_empty()) {
            (true, true) => f.write_str("<program>"),
            (true, false) => f.write_str(&self.field),
            (false, true) => f.write_str(&self.address),
            (false, false) => write!(f, "{}.{}", self.address, self.field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub class: CeClass,
    pub locus: Locus,
    pub code: String,
    pub message: String,
    pub witness: Value,
}

impl Counterexample {
    pub fn new(class: CeClass, locus: Locus, code: &str, message: impl Into<String>, witness: Value) -> Self {
        Self { class, locus, code: code.to_owned(), message: message.into(), witness }
    }

    /// Deterministic merge order: class priority, then locus, then code.
    pub fn sort_key(&self) -> (CeClass, &Locus, &str, &str) {
        (self.class, &self.locus, &self.code, &self.message)
    }
}

impl PartialOrd for Counterexample {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Counterexample {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key()).then_with(|| self.witness.to_string().cmp(&other.witness.to_string()))
    }
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} at {}: {}", self.class, self.code, self.locus, self.message)
    }
}

/// Outcome of one validator in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not run because an upstream validator failed; counts as a failure.
    Gated,
}

impl Status {
    pub fn passed(self) -> bool {
        self == Status::Pass
    }

    fn of(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub schema: Status,
    pub policy: Status,
    /// Cost validator status: `Fail` when the estimate exceeds the ceiling.
    pub cost: Status,
    pub deploy: Status,
    #[serde(with = "crate::digest::decimal_number")]
    pub v_cost: Decimal,
    pub counterexamples: Vec<Counterexample>,
    pub traces: Vec<PolicyTrace>,
    pub cost_sheet: CostSheet,
    pub deploy_log: String,
}

impl ValidatorReport {
    pub fn v_schema(&self) -> bool {
        self.schema.passed()
    }

    pub fn v_policy(&self) -> bool {
        self.policy.passed()
    }

    pub fn v_deploy(&self) -> bool {
        self.deploy.passed()
    }

    pub fn all_pass(&self) -> bool {
        self.v_schema() && self.v_policy() && self.v_deploy() && self.cost.passed()
    }

    pub fn of_class(&self, class: CeClass) -> impl Iterator<Item = &Counterexample> {
        self.counterexamples.iter().filter(move |c| c.class == class)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidatorError {
    #[error("no catalog price for sku `{sku}` in {provider}/{region} (resource {address})")]
    MissingSku { provider: String, region: String, sku: String, address: String },
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("unknown rule predicate: {0}")]
    UnknownRulePredicate(String),
    #[error("invalid rule set: {0}")]
    InvalidRules(String),
    #[error("invalid price catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid fault manifest: {0}")]
    InvalidManifest(String),
    #[error("{0}")]
    Io(String),
}

/// Everything the validators read besides the program.
#[derive(Clone, Copy)]
pub struct Toolchain<'a> {
    pub registry: &'a SchemaRegistry,
    pub rules: &'a [PolicyRule],
    pub catalog: &'a PriceCatalog,
    pub sandbox: &'a dyn SandboxAdapter,
}

/// Runs the family with gating: policy, cost and deploy need schema to pass, deploy
/// also needs policy. Gated validators report `Gated`.
pub fn run_all(program: &HclProgram, tools: &Toolchain, constraints: &ConstraintSet) -> Result<ValidatorReport, ValidatorError> {
    let (schema_ok, mut ces) = validate_schema(program, tools.registry);
    let mut report = ValidatorReport {
        schema: Status::of(schema_ok),
        policy: Status::Gated,
        cost: Status::Gated,
        deploy: Status::Gated,
        v_cost: Decimal::ZERO,
        counterexamples: Vec::new(),
        traces: Vec::new(),
        cost_sheet: CostSheet::default(),
        deploy_log: String::new(),
    };
    if schema_ok {
        let (policy_ok, traces, policy_ces) = eval_policies(program, tools.rules, constraints, tools.registry);
        report.policy = Status::of(policy_ok);
        report.traces = traces;
        ces.extend(policy_ces);
        let (estimate, sheet, cost_ces) = estimate_cost(program, tools.catalog, constraints, tools.registry)?;
        report.cost = Status::of(cost_ces.is_empty());
        report.v_cost = estimate;
        report.cost_sheet = sheet;
        ces.extend(cost_ces);
        if policy_ok {
            let run = deploy_test(program, tools.sandbox, tools.registry)?;
            report.deploy = Status::of(run.ok);
            report.deploy_log = run.log;
            ces.extend(run.counterexamples);
        }
    }
    ces.sort();
    ces.dedup();
    report.counterexamples = ces;
    Ok(report)
}

/// A lenient lift of `program` with node kinds, the view every validator works on.
pub(crate) fn view(program: &HclProgram, registry: &SchemaRegistry) -> Result<Plan, crate::hcl::HclError> {
    crate::hcl::lift_lenient(program, registry)
}

/// Declared value of `field`, falling back to the registry default.
pub(crate) fn effective_field<'a>(
    fields: &'a BTreeMap<String, TypedValue>,
    kind: &'a str,
    field: &str,
    registry: &'a SchemaRegistry,
) -> Option<&'a TypedValue> {
    fields.get(field).or_else(|| registry.kind(kind)?.field(field)?.default.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn class_priority_orders_counterexamples() {
        let ce = |class, node: &str| Counterexample::new(class, Locus::node(node, "ec2", "f"), "c", "m", json!(null));
        let mut v = [ce(CeClass::Cost, "a"), ce(CeClass::Policy, "a"), ce(CeClass::Schema, "z"), ce(CeClass::Run, "b")];
        v.sort();
        let classes: Vec<_> = v.iter().map(|c| c.class).collect();
        assert_eq!(classes, vec![CeClass::Schema, CeClass::Run, CeClass::Policy, CeClass::Cost]);
    }

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

resource "ec2" "web" {
  region = "eu-west-1"
  ami = "ami-0a1b2c3d4e5f60718"
  instance_type = "t3.small"
  subnet_id = subnet.a.id
}
"#;

    fn report(text: &str, budget: &str) -> ValidatorReport {
        use std::str::FromStr;
        let registry = crate::fixtures::registry();
        let rules = parse_rules(crate::fixtures::RULES_JSON).unwrap();
        let catalog = PriceCatalog::from_json_str(crate::fixtures::CATALOG_JSON).unwrap();
        let sandbox = StubSandbox::default();
        let tools = Toolchain { registry: &registry, rules: &rules, catalog: &catalog, sandbox: &sandbox };
        let constraints = ConstraintSet { budget_ceiling: Some(Decimal::from_str(budget).unwrap()), ..ConstraintSet::default() };
        run_all(&crate::hcl::parse(text).unwrap(), &tools, &constraints).unwrap()
    }

    #[test]
    fn valid_program_passes_everything() {
        let r = report(NET, "10");
        assert!(r.all_pass(), "{:?}", r.counterexamples);
        assert_eq!(r.v_cost, r.cost_sheet.items.iter().map(|i| i.amount).sum::<Decimal>());
        assert_eq!(r.v_cost.to_string(), "7.50");
    }

    #[test]
    fn schema_failure_gates_the_rest() {
        let r = report(&NET.replace("  ami = \"ami-0a1b2c3d4e5f60718\"\n", ""), "10");
        assert_eq!((r.schema, r.policy, r.cost, r.deploy), (Status::Fail, Status::Gated, Status::Gated, Status::Gated));
        assert!(r.of_class(CeClass::Schema).count() >= 1);
        assert!(r.traces.is_empty());
    }

    #[test]
    fn policy_and_cost_failures_are_ordered() {
        let extra = r#"
resource "security_group" "sg" {
  region = "eu-west-1"
  vpc_id = vpc.main.id
  ingress {
    protocol = "tcp"
    port = 22
    cidr = "0.0.0.0/0"
  }
}
"#;
        let r = report(&format!("{NET}{extra}"), "5");
        assert_eq!((r.schema, r.policy, r.cost, r.deploy), (Status::Pass, Status::Fail, Status::Fail, Status::Gated));
        let classes: Vec<CeClass> = r.counterexamples.iter().map(|c| c.class).collect();
        assert_eq!(classes, vec![CeClass::Policy, CeClass::Cost]);
        assert_eq!(report(&format!("{NET}{extra}"), "5"), r);
    }
}
