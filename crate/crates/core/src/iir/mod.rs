//! Typed infrastructure IR: a resource graph with fields, edges, constraints and effects.

mod graph;
mod normalize;
mod typing;
mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{check_acyclic, topological_order};
pub use normalize::{canonical_text, normalize_plan, plan_digest, plan_equiv, PlanDigest};
pub use typing::{validate_types, SchemaCe, SchemaViolation};
pub use value::{decimal_text, Reference, TypedValue};

/// Current version of the I-IR JSON format.
pub const IIR_VERSION: u32 = 1;

/// Node metadata key holding the pinned provider schema version.
pub const META_PROVIDER_VERSION: &str = "provider_version";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IirError {
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("node `{node}` has unknown kind `{kind}`")]
    UnknownKind { node: String, kind: String },
    #[error("invalid plan JSON: {0}")]
    Json(String),
    #[error("invalid constraint set: {0}")]
    InvalidConstraint(String),
}

/// Deferred obligation on a resource, discharged by validators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    EncryptAtRest,
    LeastPrivilege,
    RestrictedIngress,
    RegionPinned,
    Tagged,
    Redundant,
}

impl Effect {
    pub const ALL: [Effect; 6] = [
        Effect::EncryptAtRest,
        Effect::LeastPrivilege,
        Effect::RestrictedIngress,
        Effect::RegionPinned,
        Effect::Tagged,
        Effect::Redundant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Effect::EncryptAtRest => "encrypt_at_rest",
            Effect::LeastPrivilege => "least_privilege",
            Effect::RestrictedIngress => "restricted_ingress",
            Effect::RegionPinned => "region_pinned",
            Effect::Tagged => "tagged",
            Effect::Redundant => "redundant",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Effect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Effect::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| format!("unknown effect `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Icmp,
    Tcp,
    Udp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Icmp => "icmp",
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icmp" => Ok(Protocol::Icmp),
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

/// `Depends(src, dst)`: `src` needs `dst` to exist first.
/// `Connects(src, dst, proto, port)`: `dst` admits `proto/port` traffic from `src`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlanEdge {
    Depends { src: String, dst: String },
    Connects { src: String, dst: String, proto: Protocol, port: u16 },
}

impl PlanEdge {
    pub fn depends(src: impl Into<String>, dst: impl Into<String>) -> Self {
        PlanEdge::Depends { src: src.into(), dst: dst.into() }
    }

    pub fn connects(src: impl Into<String>, dst: impl Into<String>, proto: Protocol, port: u16) -> Self {
        PlanEdge::Connects { src: src.into(), dst: dst.into(), proto, port }
    }

    pub fn src(&self) -> &str {
        match self {
            PlanEdge::Depends { src, .. } | PlanEdge::Connects { src, .. } => src,
        }
    }

    pub fn dst(&self) -> &str {
        match self {
            PlanEdge::Depends { dst, .. } | PlanEdge::Connects { dst, .. } => dst,
        }
    }

    pub fn renamed(&self, f: impl Fn(&str) -> String) -> PlanEdge {
        match self {
            PlanEdge::Depends { src, dst } => PlanEdge::Depends { src: f(src), dst: f(dst) },
            PlanEdge::Connects { src, dst, proto, port } => {
                PlanEdge::Connects { src: f(src), dst: f(dst), proto: *proto, port: *port }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceNode {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub provider: String,
    #[serde(default)]
    pub region: String,
    #[serde(default)]
    pub fields: BTreeMap<String, TypedValue>,
    #[serde(default)]
    pub effects: BTreeSet<Effect>,
    /// Pins and other bookkeeping; ignored by equivalence and digests.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl ResourceNode {
    pub fn new(id: impl Into<String>, kind: impl Into<String>, region: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: kind.into(),
            provider: String::new(),
            region: region.into(),
            fields: BTreeMap::new(),
            effects: BTreeSet::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_field(mut self, name: &str, value: TypedValue) -> Self {
        self.fields.insert(name.to_owned(), value);
        self
    }

    pub fn with_effect(mut self, effect: Effect) -> Self {
        self.effects.insert(effect);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default, with = "crate::digest::opt_decimal_number", skip_serializing_if = "Option::is_none")]
    pub budget_ceiling: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residency: Option<BTreeSet<String>>,
    #[serde(default)]
    pub required_effects: BTreeSet<Effect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability_zones_min: Option<u32>,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), IirError> {
        if let Some(b) = self.budget_ceiling {
            if b.is_sign_negative() && !b.is_zero() {
                return Err(IirError::InvalidConstraint(format!("negative budget ceiling {b}")));
            }
        }
        if matches!(&self.residency, Some(r) if r.is_empty()) {
            return Err(IirError::InvalidConstraint("residency set is empty".into()));
        }
        Ok(())
    }

    pub fn allows_region(&self, region: &str) -> bool {
        self.residency.as_ref().is_none_or(|r| r.contains(region))
    }
}

/// A typed resource graph `⟨nodes, edges, specs⟩`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Plan {
    pub nodes: Vec<ResourceNode>,
    pub edges: Vec<PlanEdge>,
    pub specs: ConstraintSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDocument {
    version: u32,
    #[serde(default)]
    nodes: Vec<ResourceNode>,
    #[serde(default)]
    edges: Vec<PlanEdge>,
    #[serde(default)]
    specs: ConstraintSet,
}

impl Serialize for Plan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PlanDocument { version: IIR_VERSION, nodes: self.nodes.clone(), edges: self.edges.clone(), specs: self.specs.clone() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Plan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = PlanDocument::deserialize(deserializer)?;
        if doc.version != IIR_VERSION {
            return Err(serde::de::Error::custom(format!("unsupported I-IR version {} (expected {IIR_VERSION})", doc.version)));
        }
        Ok(Plan { nodes: doc.nodes, edges: doc.edges, specs: doc.specs })
    }
}

/// `[a-z][a-z0-9_]*`; ids double as HCL resource labels.
pub fn is_valid_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Plan {
    pub fn from_json_str(text: &str) -> Result<Plan, IirError> {
        serde_json::from_str(text).map_err(|e| IirError::Json(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        crate::digest::canonical_json_pretty(self)
    }

    pub fn node(&self, id: &str) -> Option<&ResourceNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut ResourceNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn has_edge(&self, edge: &PlanEdge) -> bool {
        self.edges.contains(edge)
    }

    pub fn add_edge(&mut self, edge: PlanEdge) {
        if !self.has_edge(&edge) {
            self.edges.push(edge);
        }
    }

    /// Depends targets of `id`, in edge order.
    pub fn depends_targets(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter_map(|e| match e {
                PlanEdge::Depends { src, dst } if src == id => Some(dst.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Ids unique and well-formed, edge endpoints present, no self-dependency,
    /// every embedded reference resolves.
    pub fn check_well_formed(&self) -> Result<(), IirError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !is_valid_id(&n.id) {
                return Err(IirError::MalformedPlan(format!("invalid node id `{}`", n.id)));
            }
            if !seen.insert(n.id.as_str()) {
                return Err(IirError::MalformedPlan(format!("duplicate node id `{}`", n.id)));
            }
        }
        graph::check_edges(self, &seen)?;
        for n in &self.nodes {
            for v in n.fields.values() {
                for r in v.references() {
                    if !seen.contains(r.target.as_str()) {
                        return Err(IirError::MalformedPlan(format!("node `{}` references unknown node `{}`", n.id, r.target)));
                    }
                }
            }
        }
        self.specs.validate()
    }

    /// Renames node ids everywhere (nodes, edges, references).
    pub fn renamed(&self, map: &BTreeMap<String, String>) -> Plan {
        let rename = |id: &str| map.get(id).cloned().unwrap_or_else(|| id.to_owned());
        let nodes = self
            .nodes
            .iter()
            .map(|n| ResourceNode {
                id: rename(&n.id),
                fields: n
                    .fields
                    .iter()
                    .map(|(k, v)| (k.clone(), v.map_refs(&|r| Reference { target: rename(&r.target), attr: r.attr.clone() })))
                    .collect(),
                ..n.clone()
            })
            .collect();
        let edges = self.edges.iter().map(|e| e.renamed(rename)).collect();
        Plan { nodes, edges, specs: self.specs.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_json_round_trip() {
        let text = r#"{
          "version": 1,
          "nodes": [
            {"id": "main", "kind": "vpc", "provider": "aws", "region": "eu-west-1",
             "fields": {"cidr_block": "10.0.0.0/16"}, "effects": ["tagged"]},
            {"id": "a", "kind": "subnet", "provider": "aws", "region": "eu-west-1",
             "fields": {"vpc_id": {"$ref": "main.id"}, "cidr_block": "10.0.1.0/24"}}
          ],
          "edges": [{"type": "depends", "src": "a", "dst": "main"}],
          "specs": {"budget_ceiling": 100.00, "residency": ["eu-west-1"], "required_effects": ["encrypt_at_rest"]}
        }"#;
        let plan = Plan::from_json_str(text).unwrap();
        plan.check_well_formed().unwrap();
        assert_eq!(plan.specs.budget_ceiling, Some(Decimal::new(10000, 2)));
        let again = Plan::from_json_str(&plan.to_json_pretty()).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn rejects_wrong_version_and_bad_ids() {
        assert!(Plan::from_json_str(r#"{"version": 2}"#).is_err());
        let plan = Plan { nodes: vec![ResourceNode::new("Web", "ec2", "eu-west-1")], ..Plan::default() };
        assert!(matches!(plan.check_well_formed(), Err(IirError::MalformedPlan(_))));
    }

    #[test]
    fn constraint_invariants() {
        let c = ConstraintSet { residency: Some(BTreeSet::new()), ..Default::default() };
        assert!(c.validate().is_err());
        let c = ConstraintSet { budget_ceiling: Some(Decimal::new(-1, 0)), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn effect_names_round_trip() {
        for e in Effect::ALL {
            assert_eq!(e.as_str().parse::<Effect>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{}\"", e.as_str()));
        }
    }
}
