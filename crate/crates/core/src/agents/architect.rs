use std::collections::BTreeMap;

use super::{AgentError, Discharge, IntentSpec, PlanInvariants, StructuredIntent};
use crate::iir::{ConstraintSet, Effect, Plan, PlanEdge, Protocol, ResourceNode, TypedValue};
use crate::memory::Motif;
use crate::registry::SchemaRegistry;

/// Φ_arch: (intent, constraints, motifs) → (P0, invariants).
pub trait Architect {
    fn name(&self) -> &str;
    fn plan(
        &mut self,
        intent: &IntentSpec,
        constraints: &ConstraintSet,
        motifs: &[&Motif],
        registry: &SchemaRegistry,
        notes: &mut Vec<String>,
    ) -> Result<(Plan, PlanInvariants), AgentError>;
}

/// Template-table architect keyed by intent family; never guesses from free text.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicArchitect;

impl Architect for DeterministicArchitect {
    fn name(&self) -> &str {
        "deterministic"
    }

    fn plan(
        &mut self,
        intent: &IntentSpec,
        constraints: &ConstraintSet,
        motifs: &[&Motif],
        registry: &SchemaRegistry,
        notes: &mut Vec<String>,
    ) -> Result<(Plan, PlanInvariants), AgentError> {
        architect_plan_noted(intent, constraints, motifs, registry, notes)
    }
}

pub fn architect_plan(
    intent: &IntentSpec,
    constraints: &ConstraintSet,
    motifs: &[&Motif],
    registry: &SchemaRegistry,
) -> Result<(Plan, PlanInvariants), AgentError> {
    architect_plan_noted(intent, constraints, motifs, registry, &mut Vec::new())
}

fn architect_plan_noted(
    intent: &IntentSpec,
    constraints: &ConstraintSet,
    motifs: &[&Motif],
    registry: &SchemaRegistry,
    notes: &mut Vec<String>,
) -> Result<(Plan, PlanInvariants), AgentError> {
    intent.validate()?;
    let Some(s) = &intent.structured else {
        return Err(AgentError::UnsupportedIntent(
            "the deterministic architect needs a structured request; free text requires a remote backend".into(),
        ));
    };
    constraints.validate().map_err(|e| AgentError::UnsupportedIntent(e.to_string()))?;
    let (mut plan, invariants) = template(s, constraints)?;
    let filled = splice_motifs(&mut plan, motifs, registry);
    if filled > 0 {
        notes.push(format!("architect: {filled} field(s) taken from stored motifs"));
    }
    plan.check_well_formed().map_err(|e| AgentError::ContractViolation { role: "architect".into(), message: e.to_string() })?;
    Ok((plan, invariants))
}

fn db_port(engine: &str) -> u16 {
    match engine {
        "mysql" => 3306,
        _ => 5432,
    }
}

fn template(s: &StructuredIntent, constraints: &ConstraintSet) -> Result<(Plan, PlanInvariants), AgentError> {
    let mut inv = PlanInvariants::default();
    let mut specs = constraints.clone();
    if s.encryption {
        specs.required_effects.insert(Effect::EncryptAtRest);
    }
    if specs.residency.is_some() {
        specs.required_effects.insert(Effect::RegionPinned);
    }
    if let Some(z) = s.zones {
        specs.availability_zones_min = Some(specs.availability_zones_min.map_or(z, |m| m.max(z)));
    }
    for e in &specs.required_effects {
        inv.add(e.as_str(), Discharge::Effect(*e));
    }
    if specs.residency.is_some() {
        inv.add("residency", Discharge::Constraint("residency".into()));
    }
    if specs.availability_zones_min.is_some() {
        inv.add("availability", Discharge::Constraint("availability_zones_min".into()));
    }

    let mut plan = Plan { specs, ..Plan::default() };
    let needs_network = s.web.is_some() || s.database.is_some();
    let has_resources = needs_network || s.storage.is_some() || s.identity.is_some();
    if !has_resources {
        return Ok((plan, inv));
    }
    let region = match (&s.region, &plan.specs.residency) {
        (Some(r), _) => r.clone(),
        (None, Some(allowed)) => {
            allowed.iter().next().cloned().ok_or_else(|| AgentError::UnsupportedIntent("empty residency set".into()))?
        }
        (None, None) => {
            return Err(AgentError::UnsupportedIntent("no region requested and no residency to infer one from".into()))
        }
    };
    let node = |id: &str, kind: &str| ResourceNode::new(id, kind, region.clone());

    let mut subnets = Vec::new();
    if needs_network {
        plan.nodes.push(node("main", "vpc").with_field("cidr_block", TypedValue::str("10.0.0.0/16")));
        let zones = plan.specs.availability_zones_min.unwrap_or(1).clamp(1, 3) as usize;
        for (i, az) in ["a", "b", "c"].into_iter().take(zones).enumerate() {
            let id = format!("subnet_{az}");
            plan.nodes.push(
                node(&id, "subnet")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("cidr_block", TypedValue::str(format!("10.0.{}.0/24", i + 1)))
                    .with_field("availability_zone", TypedValue::str(az)),
            );
            subnets.push(id);
        }
    }

    let mut web_ids = Vec::new();
    if let Some(web) = &s.web {
        if web.count == 0 {
            return Err(AgentError::UnsupportedIntent("web tier with zero instances".into()));
        }
        if !web.exposure.is_empty() {
            let entries = web
                .exposure
                .iter()
                .map(|x| {
                    TypedValue::Map(BTreeMap::from([
                        ("cidr".to_owned(), TypedValue::str(&x.cidr)),
                        ("port".to_owned(), TypedValue::Integer(x.port.into())),
                        ("protocol".to_owned(), TypedValue::str(&x.protocol)),
                    ]))
                })
                .collect();
            plan.nodes.push(
                node("web_sg", "security_group")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("ingress", TypedValue::List(entries))
                    .with_effect(Effect::RestrictedIngress),
            );
            inv.add("exposure", Discharge::Effect(Effect::RestrictedIngress));
        }
        for i in 0..web.count as usize {
            let id = format!("web_{}", i + 1);
            let mut n = node(&id, "ec2").with_field("subnet_id", TypedValue::reference(&subnets[i % subnets.len()], "id"));
            if let Some(t) = &web.instance_type {
                n = n.with_field("instance_type", TypedValue::str(t));
            }
            if let Some(a) = &web.ami {
                n = n.with_field("ami", TypedValue::str(a));
            }
            if !web.exposure.is_empty() {
                n = n.with_field("security_group_id", TypedValue::reference("web_sg", "id"));
            }
            plan.nodes.push(n);
            web_ids.push(id);
        }
    }

    if let Some(db) = &s.database {
        let mut n = node("db", "rds")
            .with_field("engine", TypedValue::str(&db.engine))
            .with_field("subnet_id", TypedValue::reference(&subnets[0], "id"));
        if let Some(c) = &db.instance_class {
            n = n.with_field("instance_class", TypedValue::str(c));
        }
        if db.redundant {
            n = n.with_effect(Effect::Redundant);
            inv.add("redundancy", Discharge::Effect(Effect::Redundant));
        }
        if !web_ids.is_empty() {
            plan.nodes.push(node("db_sg", "security_group").with_field("vpc_id", TypedValue::reference("main", "id")));
            n = n.with_field("security_group_id", TypedValue::reference("db_sg", "id"));
            for w in &web_ids {
                plan.edges.push(PlanEdge::connects(w.clone(), "db_sg", Protocol::Tcp, db_port(&db.engine)));
            }
        }
        plan.nodes.push(n);
    }

    if let Some(st) = &s.storage {
        for (i, name) in st.buckets.iter().enumerate() {
            let mut n = node(&format!("bucket_{}", i + 1), "s3_bucket").with_field("bucket_name", TypedValue::str(name));
            if st.versioning {
                n = n.with_field("versioning", TypedValue::Bool(true));
            }
            plan.nodes.push(n);
        }
    }

    if let Some(idn) = &s.identity {
        let mut n = node("role", "iam_role").with_field("role_name", TypedValue::str(&idn.role_name));
        match &idn.managed_policy {
            Some(p) => n = n.with_field("managed_policy", TypedValue::str(p)),
            None => {
                n = n.with_effect(Effect::LeastPrivilege);
                inv.add("least_privilege", Discharge::Effect(Effect::LeastPrivilege));
            }
        }
        plan.nodes.push(n);
    }

    let encrypt = plan.specs.required_effects.contains(&Effect::EncryptAtRest);
    let tagged = s.tags.contains_key("owner");
    if tagged {
        inv.add("tagging", Discharge::Effect(Effect::Tagged));
    }
    let tags = TypedValue::Map(s.tags.iter().map(|(k, v)| (k.clone(), TypedValue::str(v))).collect());
    for n in &mut plan.nodes {
        if encrypt && matches!(n.kind.as_str(), "rds" | "s3_bucket") {
            n.effects.insert(Effect::EncryptAtRest);
        }
        if !s.tags.is_empty() {
            n.fields.insert("tags".into(), tags.clone());
        }
        if tagged {
            n.effects.insert(Effect::Tagged);
        }
    }
    let mut deps = Vec::new();
    for n in &plan.nodes {
        for r in n.fields.values().flat_map(TypedValue::references) {
            deps.push(PlanEdge::depends(n.id.clone(), r.target.clone()));
        }
    }
    for e in deps {
        plan.add_edge(e);
    }
    Ok((plan, inv))
}

/// Fills unset scalar fields from stored motifs: a motif node donates to a plan node
/// of the same kind and effect set. Motifs are taken in the given (ranked) order.
/// Returns the number of fields filled.
pub fn splice_motifs(plan: &mut Plan, motifs: &[&Motif], registry: &SchemaRegistry) -> usize {
    let mut filled = 0;
    for n in &mut plan.nodes {
        let Some(schema) = registry.kind(&n.kind) else { continue };
        for m in motifs {
            let Some(donor) = m.fragment.nodes.iter().find(|d| d.kind == n.kind && d.effects == n.effects) else { continue };
            for (name, v) in &donor.fields {
                let admissible = schema.field(name).is_some_and(|d| {
                    !d.is_blocks()
                        && d.reference_kind().is_none()
                        && d.domain.admits_shape(v)
                        && d.is_allowed(v)
                        && d.within_range(v)
                });
                if admissible && v.references().is_empty() && !n.fields.contains_key(name) {
                    n.fields.insert(name.clone(), v.clone());
                    filled += 1;
                }
            }
        }
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DatabaseTier, WebTier};
    use crate::fixtures;

    fn web_db() -> StructuredIntent {
        StructuredIntent {
            region: Some("eu-west-1".into()),
            web: Some(WebTier { count: 1, instance_type: None, ami: None, exposure: vec![] }),
            database: Some(DatabaseTier { engine: "postgres".into(), instance_class: None, redundant: false }),
            encryption: true,
            ..StructuredIntent::default()
        }
    }

    #[test]
    fn web_and_database_template() {
        let r = fixtures::registry();
        let (plan, inv) = architect_plan(&IntentSpec::structured(web_db()), &ConstraintSet::default(), &[], &r).unwrap();
        let kinds: Vec<&str> = plan.nodes.iter().map(|n| n.kind.as_str()).collect();
        for k in ["vpc", "subnet", "ec2", "rds"] {
            assert!(kinds.contains(&k), "{k} missing from {kinds:?}");
        }
        assert!(plan.has_edge(&PlanEdge::depends("subnet_a", "main")));
        assert!(plan.has_edge(&PlanEdge::depends("web_1", "subnet_a")));
        assert!(plan.has_edge(&PlanEdge::depends("db", "subnet_a")));
        assert!(plan.node("db").unwrap().effects.contains(&Effect::EncryptAtRest));
        assert!(plan.specs.required_effects.contains(&Effect::EncryptAtRest));
        assert!(inv.names().contains("encrypt_at_rest"));
        assert!(crate::registry::harmonize(&plan, &r).is_ok());
    }

    #[test]
    fn empty_and_free_text() {
        let r = fixtures::registry();
        let (plan, inv) =
            architect_plan(&IntentSpec::structured(StructuredIntent::default()), &ConstraintSet::default(), &[], &r).unwrap();
        assert_eq!(plan, Plan::default());
        assert!(inv.is_empty());
        assert!(matches!(
            architect_plan(&IntentSpec::text("a three tier app"), &ConstraintSet::default(), &[], &r),
            Err(AgentError::UnsupportedIntent(_))
        ));
    }

    #[test]
    fn residency_implies_region_pinning() {
        let r = fixtures::registry();
        let c = ConstraintSet { residency: Some(["eu-central-1".to_owned()].into()), ..ConstraintSet::default() };
        let mut s = web_db();
        s.region = None;
        let (plan, inv) = architect_plan(&IntentSpec::structured(s), &c, &[], &r).unwrap();
        assert!(plan.nodes.iter().all(|n| n.region == "eu-central-1"));
        assert!(plan.specs.required_effects.contains(&Effect::RegionPinned));
        assert!(inv.names().contains("residency"));
    }

    #[test]
    fn zones_spread_subnets() {
        let r = fixtures::registry();
        let mut s = web_db();
        s.zones = Some(2);
        s.web.as_mut().unwrap().count = 3;
        let (plan, _) = architect_plan(&IntentSpec::structured(s), &ConstraintSet::default(), &[], &r).unwrap();
        assert_eq!(plan.specs.availability_zones_min, Some(2));
        assert!(plan.node("subnet_b").is_some() && plan.node("subnet_c").is_none());
        assert_eq!(plan.node("web_2").unwrap().fields["subnet_id"], TypedValue::reference("subnet_b", "id"));
        assert!(plan.has_edge(&PlanEdge::connects("web_3", "db_sg", Protocol::Tcp, 5432)));
    }
}
