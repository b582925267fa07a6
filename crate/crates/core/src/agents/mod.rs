//! Role contracts. Each role has a deterministic backend; architect and engineer
//! can also be served by a remote model over a JSON wire protocol.

mod architect;
mod remote;
mod reviewer;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use architect::{architect_plan, splice_motifs, Architect, DeterministicArchitect};
pub use remote::{
    RemoteArchitect, RemoteClient, RemoteConfig, RemoteProposer, LLM_API_KEY_ENV, LLM_ENDPOINT_ENV, WIRE_SCHEMA_VERSION,
};
pub use reviewer::{review_static, Diagnostic};

use crate::iir::Effect;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("unsupported intent: {0}")]
    UnsupportedIntent(String),
    #[error("contract violation by {role}: {message}")]
    ContractViolation { role: String, message: String },
    #[error("remote call timed out after {0} s")]
    Timeout(u64),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid response from {role}: {message}")]
    InvalidResponse { role: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Architect,
    Harmonizer,
    Engineer,
    Reviewer,
    SecurityProver,
    CostPlanner,
    DevOps,
    MemoryCurator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Architect => "architect",
            Role::Harmonizer => "harmonizer",
            Role::Engineer => "engineer",
            Role::Reviewer => "reviewer",
            Role::SecurityProver => "security_prover",
            Role::CostPlanner => "cost_planner",
            Role::DevOps => "devops",
            Role::MemoryCurator => "memory_curator",
        }
    }
}

/// Natural-language intent plus an optional typed request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredIntent>,
}

impl IntentSpec {
    pub fn structured(s: StructuredIntent) -> Self {
        IntentSpec { text: None, structured: Some(s) }
    }

    pub fn text(t: impl Into<String>) -> Self {
        IntentSpec { text: Some(t.into()), structured: None }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match (&self.text, &self.structured) {
            (None, None) => Err(AgentError::UnsupportedIntent("intent has neither text nor a structured request".into())),
            (Some(t), None) if t.trim().is_empty() => Err(AgentError::UnsupportedIntent("intent text is empty".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredIntent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub web: Option<WebTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub database: Option<DatabaseTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentityTier>,
    #[serde(default)]
    pub encryption: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    /// Availability zones to spread subnets over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<u32>,
}

fn one() -> u32 {
    1
}

fn tcp() -> String {
    "tcp".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebTier {
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ami: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposure: Vec<Exposure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exposure {
    pub port: u16,
    pub cidr: String,
    #[serde(default = "tcp")]
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseTier {
    pub engine: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_class: Option<String>,
    #[serde(default)]
    pub redundant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageTier {
    pub buckets: Vec<String>,
    #[serde(default)]
    pub versioning: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityTier {
    pub role_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub managed_policy: Option<String>,
}

/// How an obligation is discharged downstream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "by", content = "what", rename_all = "snake_case")]
pub enum Discharge {
    Effect(Effect),
    /// A `ConstraintSet` field.
    Constraint(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Obligation {
    pub name: String,
    pub discharge: Discharge,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanInvariants {
    pub obligations: BTreeSet<Obligation>,
}

impl PlanInvariants {
    pub fn is_empty(&self) -> bool {
        self.obligations.is_empty()
    }

    pub fn add(&mut self, name: &str, discharge: Discharge) {
        self.obligations.insert(Obligation { name: name.to_owned(), discharge });
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.obligations.iter().map(|o| o.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_validation() {
        assert!(IntentSpec::default().validate().is_err());
        assert!(IntentSpec::text("  ").validate().is_err());
        assert!(IntentSpec::text("a web app").validate().is_ok());
        assert!(IntentSpec::structured(StructuredIntent::default()).validate().is_ok());
    }

    #[test]
    fn structured_intent_json() {
        let s: StructuredIntent =
            serde_json::from_str(r#"{"region":"eu-west-1","web":{"exposure":[{"port":443,"cidr":"0.0.0.0/0"}]}}"#).unwrap();
        let web = s.web.unwrap();
        assert_eq!(web.count, 1);
        assert_eq!(web.exposure[0].protocol, "tcp");
        assert!(serde_json::from_str::<StructuredIntent>(r#"{"webtier":{}}"#).is_err());
    }
}
