//! Proof-carrying bundles: build from a finished run's blackboard, verify offline.

use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{review_static, Diagnostic};
use crate::digest::{canonical_digest, canonical_json_pretty, sha256_hex};
use crate::hcl::{lift_lenient, parse, print, HclProgram};
use crate::iir::{plan_digest, plan_equiv, ConstraintSet, Effect, Plan};
use crate::orchestrator::{ArtifactKind, Blackboard, RepairStep, ToolchainDigests};
use crate::registry::SchemaRegistry;
use crate::validators::{
    estimate_cost, eval_policies, validate_schema, CostSheet, Counterexample, PolicyRule, PolicyTrace, PriceCatalog, Verdict,
};

pub const BUNDLE_VERSION: &str = "iacforge-bundle/1";
pub const DIGEST_ALGORITHM: &str = "sha256";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROGRAM_FILE: &str = "program.tf";

/// Section name → file name.
pub const SECTIONS: [(&str, &str); 7] = [
    ("policy_traces", "policy_traces.json"),
    ("cost_sheet", "cost_sheet.json"),
    ("static_validation", "static_validation.json"),
    ("roundtrip", "roundtrip.json"),
    ("repair_path", "repair_path.json"),
    ("deploy_log", "deploy_log.txt"),
    ("confirmations", "confirmations.json"),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("incomplete blackboard: no `{0}` artifact")]
    IncompleteBlackboard(String),
    #[error("malformed blackboard artifact `{label}`: {message}")]
    MalformedArtifact { label: String, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionRef {
    pub file: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub bundle_version: String,
    pub digest_algorithm: String,
    pub toolchain: ToolchainDigests,
    pub program: SectionRef,
    pub constraints: ConstraintSet,
    pub sections: BTreeMap<String, SectionRef>,
    /// Digest of this manifest with this field empty.
    pub manifest_digest: String,
}

impl Manifest {
    pub fn computed_digest(&self) -> String {
        let mut m = self.clone();
        m.manifest_digest.clear();
        canonical_digest(&m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format!("{}\n", canonical_json_pretty(self)).into_bytes()
    }
}

/// Manifest plus file contents keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceBundle {
    pub manifest: Manifest,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl EvidenceBundle {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvidenceError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| EvidenceError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        std::fs::write(dir.join(MANIFEST_FILE), self.manifest.to_bytes()).map_err(io)
    }
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    format!("{}\n", canonical_json_pretty(v)).into_bytes()
}

// ---- section payloads, shared by the orchestrator (recording) and the verifier -------

pub fn policy_section(passed: bool, traces: &[PolicyTrace]) -> Value {
    json!({ "passed": passed, "traces": traces })
}

pub fn cost_section(sheet: &CostSheet, ceiling: Option<Decimal>) -> Value {
    json!({ "ceiling": ceiling.map(|c| c.to_string()), "sheet": sheet })
}

pub fn static_section(schema_passed: bool, schema_ces: &[Counterexample], diagnostics: &[Diagnostic]) -> Value {
    json!({ "schema": { "passed": schema_passed, "counterexamples": schema_ces }, "diagnostics": diagnostics })
}

/// Residency, availability, redundancy and encryption verdicts pulled out of the traces.
pub fn confirmations(traces: &[PolicyTrace], rules: &[PolicyRule]) -> Value {
    let topic = |t: &PolicyTrace| -> Option<&'static str> {
        match t.rule_id.as_str() {
            "constraint:residency" => Some("residency"),
            "constraint:availability_zones" => Some("availability"),
            id => match rules.iter().find(|r| r.id == id)?.obligation? {
                Effect::Redundant => Some("redundancy"),
                Effect::EncryptAtRest => Some("encryption"),
                _ => None,
            },
        }
    };
    let items: Vec<Value> = traces
        .iter()
        .filter_map(|t| {
            let topic = topic(t)?;
            Some(json!({ "topic": topic, "rule_id": t.rule_id, "locus": t.locus.to_string(), "verdict": t.verdict }))
        })
        .collect();
    Value::Array(items)
}

/// Lifts the program back (under the plan's constraints) and records whether it is
/// equivalent to the plan it was compiled from.
pub fn roundtrip_record(plan: &Plan, program: &HclProgram, registry: &SchemaRegistry, guard_applied: bool) -> Value {
    let lifted = lift_lenient(program, registry).ok().map(|mut p| {
        p.specs = plan.specs.clone();
        p
    });
    json!({
        "plan_digest": plan_digest(plan, registry).hex,
        "lifted_digest": lifted.as_ref().map(|p| plan_digest(p, registry).hex),
        "program_digest": sha256_hex(print(program).as_bytes()),
        "equivalent": lifted.as_ref().is_some_and(|p| plan_equiv(p, plan, registry)),
        "guard_applied": guard_applied,
    })
}

fn latest_payload<'a>(bb: &'a Blackboard, kind: ArtifactKind, label: &str) -> Result<&'a Value, EvidenceError> {
    bb.latest(kind, label).map(|e| &e.payload).ok_or_else(|| EvidenceError::IncompleteBlackboard(label.to_owned()))
}

/// Assembles Π from the blackboard of a run that reached `done`.
pub fn build_bundle(bb: &Blackboard, program: &HclProgram) -> Result<EvidenceBundle, EvidenceError> {
    let plan = latest_payload(bb, ArtifactKind::Plan, "plan")?;
    let constraints: ConstraintSet = serde_json::from_value(plan.get("specs").cloned().unwrap_or(Value::Null))
        .map_err(|e| EvidenceError::MalformedArtifact { label: "plan".into(), message: e.to_string() })?;
    let deploy = latest_payload(bb, ArtifactKind::Log, "deploy_log")?;
    let deploy_text = deploy
        .get("log")
        .and_then(Value::as_str)
        .ok_or_else(|| EvidenceError::MalformedArtifact { label: "deploy_log".into(), message: "missing `log` text".into() })?;
    let path: Vec<&Value> = bb.of(ArtifactKind::Edit, "committed").map(|e| &e.payload).collect();

    let mut files = BTreeMap::new();
    let program_text = print(program);
    files.insert(PROGRAM_FILE.to_owned(), program_text.clone().into_bytes());
    for (name, file) in SECTIONS {
        let bytes = match name {
            "repair_path" => pretty(&path),
            "deploy_log" => deploy_text.as_bytes().to_vec(),
            _ => pretty(latest_payload(bb, ArtifactKind::Trace, name)?),
        };
        files.insert(file.to_owned(), bytes);
    }
    let sections = SECTIONS
        .iter()
        .map(|(name, file)| ((*name).to_owned(), SectionRef { file: (*file).to_owned(), digest: sha256_hex(&files[*file]) }))
        .collect();
    let mut manifest = Manifest {
        bundle_version: BUNDLE_VERSION.into(),
        digest_algorithm: DIGEST_ALGORITHM.into(),
        toolchain: bb.toolchain().clone(),
        program: SectionRef { file: PROGRAM_FILE.into(), digest: sha256_hex(program_text.as_bytes()) },
        constraints,
        sections,
        manifest_digest: String::new(),
    };
    manifest.manifest_digest = manifest.computed_digest();
    Ok(EvidenceBundle { manifest, files })
}

// ---- verification ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn has(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }
}

struct Audit {
    findings: Vec<Finding>,
}

impl Audit {
    fn flag(&mut self, code: &str, subject: &str, detail: impl Into<String>) {
        self.findings.push(Finding { code: code.into(), subject: subject.into(), detail: detail.into() });
    }

    fn report(self) -> VerifyReport {
        let verdict = if self.findings.is_empty() { Verdict::Pass } else { Verdict::Fail };
        VerifyReport { verdict, findings: self.findings }
    }
}

fn read(dir: &Path, file: &str, audit: &mut Audit) -> Option<Vec<u8>> {
    match std::fs::read(dir.join(file)) {
        Ok(b) => Some(b),
        Err(e) => {
            audit.flag("section_missing", file, e.to_string());
            None
        }
    }
}

fn json_section(bytes: &Option<Vec<u8>>, file: &str, audit: &mut Audit) -> Option<Value> {
    match serde_json::from_slice(bytes.as_deref()?) {
        Ok(v) => Some(v),
        Err(e) => {
            audit.flag("section_unreadable", file, e.to_string());
            None
        }
    }
}

/// Checks digests, re-runs the schema, policy and cost validators on the program and
/// compares them with the bundled sections, and checks that J never increased along
/// the repair path. The deploy log is checked by digest only. Needs no network.
pub fn verify_bundle(
    bundle_dir: impl AsRef<Path>,
    program_path: Option<&Path>,
    registry: &SchemaRegistry,
    rules: &[PolicyRule],
    catalog: &PriceCatalog,
) -> VerifyReport {
    let dir = bundle_dir.as_ref();
    let mut audit = Audit { findings: Vec::new() };
    let Some(raw) = read(dir, MANIFEST_FILE, &mut audit) else { return audit.report() };
    let manifest: Manifest = match serde_json::from_slice(&raw) {
        Ok(m) => m,
        Err(e) => {
            audit.flag("manifest_unreadable", MANIFEST_FILE, e.to_string());
            return audit.report();
        }
    };
    if manifest.to_bytes() != raw {
        audit.flag("manifest_noncanonical", MANIFEST_FILE, "manifest bytes differ from its canonical serialization");
    }
    if manifest.computed_digest() != manifest.manifest_digest {
        audit.flag("manifest_digest_mismatch", MANIFEST_FILE, "self-digest does not match the manifest contents");
    }
    if manifest.bundle_version != BUNDLE_VERSION || manifest.digest_algorithm != DIGEST_ALGORITHM {
        audit.flag("unsupported_version", MANIFEST_FILE, format!("{} / {}", manifest.bundle_version, manifest.digest_algorithm));
    }
    let live = ToolchainDigests::compute(registry, rules, catalog, None);
    let t = &manifest.toolchain;
    for (name, bundled, current) in [
        ("registry", &t.registry, &live.registry),
        ("catalog", &t.catalog, &live.catalog),
        ("rules", &t.rules, &live.rules),
        ("mapping_table", &t.mapping_table, &live.mapping_table),
    ] {
        if bundled != current {
            audit.flag("toolchain_mismatch", name, format!("bundle {bundled}, verifier {current}"));
        }
    }

    let mut bytes: BTreeMap<&str, Option<Vec<u8>>> = BTreeMap::new();
    for (name, file) in SECTIONS {
        let Some(r) = manifest.sections.get(name) else {
            audit.flag("section_missing", name, "not listed in the manifest");
            bytes.insert(name, None);
            continue;
        };
        if r.file != file {
            audit.flag("section_missing", name, format!("listed as `{}`", r.file));
        }
        let b = read(dir, file, &mut audit);
        if let Some(b) = &b {
            if sha256_hex(b) != r.digest {
                audit.flag("section_digest_mismatch", name, "content does not match the manifest digest");
            }
        }
        bytes.insert(name, b);
    }

    let bundled_program = read(dir, PROGRAM_FILE, &mut audit);
    if let Some(b) = &bundled_program {
        if sha256_hex(b) != manifest.program.digest {
            audit.flag("program_digest_mismatch", PROGRAM_FILE, "bundled program does not match the manifest digest");
        }
    }
    let program_bytes = match program_path {
        Some(p) => match std::fs::read(p) {
            Ok(b) => {
                if sha256_hex(&b) != manifest.program.digest {
                    audit.flag("program_digest_mismatch", &p.display().to_string(), "program does not match the manifest digest");
                }
                Some(b)
            }
            Err(e) => {
                audit.flag("section_missing", &p.display().to_string(), e.to_string());
                None
            }
        },
        None => bundled_program,
    };
    let program = program_bytes.and_then(|b| {
        match String::from_utf8(b).map_err(|e| e.to_string()).and_then(|t| parse(&t).map_err(|e| e.to_string())) {
            Ok(p) => Some(p),
            Err(e) => {
                audit.flag("program_unparseable", PROGRAM_FILE, e);
                None
            }
        }
    });

    if let Some(program) = &program {
        let c = &manifest.constraints;
        let (schema_ok, schema_ces) = validate_schema(program, registry);
        let expect = static_section(schema_ok, &schema_ces, &review_static(program));
        if json_section(&bytes["static_validation"], "static_validation", &mut audit).is_some_and(|v| v != expect) {
            audit.flag("schema_divergence", "static_validation", "re-validation disagrees with the bundled record");
        }
        if !schema_ok {
            audit.flag("schema_failure", "static_validation", "the program does not pass schema validation");
        }
        let (policy_ok, traces, _) = eval_policies(program, rules, c, registry);
        if json_section(&bytes["policy_traces"], "policy_traces", &mut audit)
            .is_some_and(|v| v != policy_section(policy_ok, &traces))
        {
            audit.flag("trace_divergence", "policy_traces", "re-evaluated policy traces differ from the bundled traces");
        }
        if !policy_ok {
            audit.flag("policy_failure", "policy_traces", "the program violates the rule set");
        }
        if json_section(&bytes["confirmations"], "confirmations", &mut audit).is_some_and(|v| v != confirmations(&traces, rules))
        {
            audit.flag("confirmation_divergence", "confirmations", "confirmations differ from the re-evaluated traces");
        }
        match estimate_cost(program, catalog, c, registry) {
            Ok((_, sheet, cost_ces)) => {
                if json_section(&bytes["cost_sheet"], "cost_sheet", &mut audit)
                    .is_some_and(|v| v != cost_section(&sheet, c.budget_ceiling))
                {
                    audit.flag("cost_divergence", "cost_sheet", "re-estimated cost sheet differs from the bundled sheet");
                }
                if !cost_ces.is_empty() {
                    audit.flag("cost_failure", "cost_sheet", "the estimate exceeds the budget ceiling");
                }
            }
            Err(e) => audit.flag("cost_divergence", "cost_sheet", e.to_string()),
        }
        if let Some(rt) = json_section(&bytes["roundtrip"], "roundtrip", &mut audit) {
            let lifted = lift_lenient(program, registry).ok().map(|mut p| {
                p.specs = c.clone();
                plan_digest(&p, registry).hex
            });
            let consistent = rt.get("equivalent") == Some(&Value::Bool(true))
                && rt.get("lifted_digest").and_then(Value::as_str) == lifted.as_deref()
                && rt.get("program_digest").and_then(Value::as_str) == Some(manifest.program.digest.as_str());
            if !consistent {
                audit.flag("roundtrip_divergence", "roundtrip", "the round-trip record does not hold for this program");
            }
        }
    }

    if let Some(path) = json_section(&bytes["repair_path"], "repair_path", &mut audit) {
        match serde_json::from_value::<Vec<RepairStep>>(path) {
            Ok(steps) => {
                let mut last: Option<Decimal> = None;
                for s in &steps {
                    if s.post_j > s.pre_j || last.is_some_and(|l| s.pre_j > l) {
                        audit.flag("j_increase", "repair_path", format!("iteration {} raises J", s.iteration));
                    }
                    last = Some(s.post_j);
                }
                if last.is_some_and(|l| !l.is_zero()) {
                    audit.flag("final_j_nonzero", "repair_path", "the repair path does not end at J = 0");
                }
            }
            Err(e) => audit.flag("section_unreadable", "repair_path", e.to_string()),
        }
    }
    audit.report()
}
