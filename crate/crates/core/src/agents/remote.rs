use std::time::Duration;

use serde_json::{json, Value};

use super::architect::{splice_motifs, Architect, DeterministicArchitect};
use super::{AgentError, IntentSpec, PlanInvariants, Role};
use crate::hcl::{parse_expr, print_expr, HclExpr};
use crate::iir::{ConstraintSet, Plan};
use crate::memory::Motif;
use crate::registry::SchemaRegistry;
use crate::synthesis::{HoleRequest, Proposer, ValueSet};

pub const LLM_ENDPOINT_ENV: &str = "IACFORGE_LLM_ENDPOINT";
pub const LLM_API_KEY_ENV: &str = "IACFORGE_LLM_API_KEY";
pub const WIRE_SCHEMA_VERSION: &str = "iacforge-wire/1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/{role}`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Calls per request before giving up on the remote backend.
    pub attempts: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig { endpoint: endpoint.into(), api_key: None, timeout: Duration::from_secs(60), attempts: 3 }
    }

    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(LLM_ENDPOINT_ENV).ok().filter(|e| !e.trim().is_empty())?;
        Some(RemoteConfig { api_key: std::env::var(LLM_API_KEY_ENV).ok(), ..Self::new(endpoint) })
    }
}

/// JSON-over-HTTP client, one endpoint per role.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).http_status_as_error(false).build().into();
        RemoteClient { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One request/response exchange; the response must be a JSON object.
    pub fn call_remote(&self, role: Role, payload: &Value) -> Result<Value, AgentError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), role.as_str());
        let body = json!({ "role": role.as_str(), "schema_version": WIRE_SCHEMA_VERSION, "payload": payload });
        let mut req = self.agent.post(&url).header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| match e {
            ureq::Error::Timeout(_) => AgentError::Timeout(self.config.timeout.as_secs()),
            other => AgentError::Transport(other.to_string()),
        })?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| AgentError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(AgentError::Transport(format!("{url} answered HTTP {}", status.as_u16())));
        }
        let invalid = |message: String| AgentError::InvalidResponse { role: role.as_str().into(), message };
        let v: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("not JSON: {e}")))?;
        if !v.is_object() {
            return Err(invalid("response is not a JSON object".into()));
        }
        Ok(v)
    }

    /// Calls until `check` accepts a response, at most `attempts` times. Transport
    /// failures end the loop at once: retrying an unreachable endpoint only adds latency.
    pub fn call_checked<T>(
        &self,
        role: Role,
        payload: &Value,
        check: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, AgentError> {
        let mut last = AgentError::InvalidResponse { role: role.as_str().into(), message: "no attempts configured".into() };
        for _ in 0..self.config.attempts.max(1) {
            match self.call_remote(role, payload) {
                Ok(v) => match check(&v) {
                    Ok(t) => return Ok(t),
                    Err(message) => last = AgentError::InvalidResponse { role: role.as_str().into(), message },
                },
                Err(e @ AgentError::InvalidResponse { .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

/// Remote Φ_arch with the deterministic architect as fallback.
#[derive(Debug, Clone)]
pub struct RemoteArchitect {
    pub client: RemoteClient,
    pub fallback: DeterministicArchitect,
}

impl RemoteArchitect {
    pub fn new(client: RemoteClient) -> Self {
        RemoteArchitect { client, fallback: DeterministicArchitect }
    }
}

fn check_plan(v: &Value, constraints: &ConstraintSet, registry: &SchemaRegistry) -> Result<(Plan, PlanInvariants), String> {
    let plan: Plan = serde_json::from_value(v.get("plan").cloned().ok_or("missing `plan`")?).map_err(|e| e.to_string())?;
    plan.check_well_formed().map_err(|e| e.to_string())?;
    if let Some(n) = plan.nodes.iter().find(|n| registry.kind(&n.kind).is_none()) {
        return Err(format!("node `{}` has unknown kind `{}`", n.id, n.kind));
    }
    let s = &plan.specs;
    if !s.required_effects.is_superset(&constraints.required_effects)
        || s.residency != constraints.residency
        || s.budget_ceiling != constraints.budget_ceiling
        || s.availability_zones_min < constraints.availability_zones_min
    {
        return Err("plan constraints do not preserve the requested constraint set".into());
    }
    let invariants = match v.get("invariants") {
        Some(i) => serde_json::from_value(i.clone()).map_err(|e| format!("invariants: {e}"))?,
        None => PlanInvariants::default(),
    };
    Ok((plan, invariants))
}

impl Architect for RemoteArchitect {
    fn name(&self) -> &str {
        "remote"
    }

    fn plan(
        &mut self,
        intent: &IntentSpec,
        constraints: &ConstraintSet,
        motifs: &[&Motif],
        registry: &SchemaRegistry,
        notes: &mut Vec<String>,
    ) -> Result<(Plan, PlanInvariants), AgentError> {
        intent.validate()?;
        let payload = json!({
            "intent": intent,
            "constraints": constraints,
            "motifs": motifs.iter().map(|m| &m.fragment).collect::<Vec<_>>(),
            "registry_version": registry.registry_version,
        });
        match self.client.call_checked(Role::Architect, &payload, |v| check_plan(v, constraints, registry)) {
            Ok((mut plan, inv)) => {
                splice_motifs(&mut plan, motifs, registry);
                Ok((plan, inv))
            }
            Err(e) => {
                notes.push(format!("architect: remote backend failed ({e}); using the deterministic backend"));
                self.fallback.plan(intent, constraints, motifs, registry, notes)
            }
        }
    }
}

fn describe(set: &ValueSet) -> Value {
    match set {
        ValueSet::Finite(v) => json!({ "one_of": v.iter().map(print_expr).collect::<Vec<_>>() }),
        ValueSet::Strings => json!({ "type": "string" }),
        ValueSet::Integers { min, max } => json!({ "type": "int", "min": min, "max": max }),
        ValueSet::Decimals { min, max } => {
            json!({ "type": "number", "min": min.map(|d| d.to_string()), "max": max.map(|d| d.to_string()) })
        }
        ValueSet::Maps => json!({ "type": "map" }),
        ValueSet::Lists => json!({ "type": "list" }),
    }
}

/// Remote engineer: one call per proposal, answered as `{"value": "<hcl expression>"}`.
/// The decoder checks admissibility and forces the stub choice after repeated
/// rejections; after a transport failure no further calls are made.
#[derive(Debug, Clone)]
pub struct RemoteProposer {
    pub client: RemoteClient,
    pub notes: Vec<String>,
    unreachable: bool,
}

impl RemoteProposer {
    pub fn new(client: RemoteClient) -> Self {
        RemoteProposer { client, notes: Vec::new(), unreachable: false }
    }
}

impl Proposer for RemoteProposer {
    fn name(&self) -> &str {
        "remote"
    }

    fn propose(&mut self, req: &HoleRequest) -> Result<HclExpr, String> {
        if self.unreachable {
            return Err("remote engineer unreachable".into());
        }
        let payload = json!({
            "hole": { "node": req.hole.node, "kind": req.hole.kind, "field": req.hole.field },
            "address": req.address,
            "attempt": req.attempt,
            "admissible": describe(&req.admissible),
        });
        let result = self.client.call_remote(Role::Engineer, &payload).and_then(|v| {
            let text = v.get("value").and_then(Value::as_str).ok_or_else(|| AgentError::InvalidResponse {
                role: "engineer".into(),
                message: "missing string `value`".into(),
            })?;
            parse_expr(text).map_err(|e| AgentError::InvalidResponse { role: "engineer".into(), message: e.to_string() })
        });
        result.map_err(|e| {
            if matches!(e, AgentError::Transport(_) | AgentError::Timeout(_)) {
                self.unreachable = true;
                self.notes.push(format!("engineer: {e}; remaining holes use the deterministic stub"));
            }
            e.to_string()
        })
    }
}
