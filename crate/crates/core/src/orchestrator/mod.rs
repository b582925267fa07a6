//! Blackboard, finite-state controller and the top-level synthesize–validate–repair loop.

mod blackboard;
mod roundtrip;

use std::fmt;
use std::path::PathBuf;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use blackboard::{ArtifactKind, Blackboard, BlackboardEntry, ToolchainDigests};
pub use roundtrip::repair_roundtrip;

use crate::agents::{
    review_static, AgentError, Architect, DeterministicArchitect, Diagnostic, IntentSpec, PlanInvariants, RemoteArchitect,
    RemoteClient, RemoteConfig, RemoteProposer,
};
use crate::evidence::{
    build_bundle, confirmations, cost_section, policy_section, roundtrip_record, static_section, EvidenceBundle, EvidenceError,
};
use crate::hcl::{lift_lenient, parse, parse_expr, print, HclProgram};
use crate::iir::{ConstraintSet, Effect, Plan, TypedValue};
use crate::memory::{MotifQuery, MotifStore};
use crate::registry::harmonize;
use crate::repair::{
    apply_edit, candidate_edits, error_to_edit, routing_score, Edit, RepairContext, RepairError, RoutingWeights,
};
use crate::synthesis::{compile_skeleton, decode, DeterministicStub, Proposer, RandomizedStub};
use crate::validators::{run_all, CeClass, Counterexample, Status, Toolchain, ValidatorError, ValidatorReport};

/// Default attempt budget K.
pub const DEFAULT_BUDGET_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Plan,
    Harmonize,
    Compile,
    Review,
    Prove,
    Price,
    Deploy,
    Repair,
    Done,
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("states serialize");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

use FsmState as S;

/// Every legal transition. Validator failures route to `repair`; `repair` goes back
/// to `compile` after a plan edit, to `review` after a code edit, and to `done`
/// when no edit can be committed.
pub const TRANSITIONS: [(FsmState, FsmState); 14] = [
    (S::Plan, S::Harmonize),
    (S::Harmonize, S::Compile),
    (S::Compile, S::Review),
    (S::Review, S::Prove),
    (S::Prove, S::Price),
    (S::Price, S::Deploy),
    (S::Deploy, S::Done),
    (S::Review, S::Repair),
    (S::Prove, S::Repair),
    (S::Price, S::Repair),
    (S::Deploy, S::Repair),
    (S::Repair, S::Compile),
    (S::Repair, S::Review),
    (S::Repair, S::Done),
];

pub fn transition_allowed(from: FsmState, to: FsmState) -> bool {
    TRANSITIONS.contains(&(from, to))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation by {role}: {message}")]
    ContractViolation { role: String, message: String },
    #[error("illegal transition {from} → {to}")]
    IllegalTransition { from: FsmState, to: FsmState },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Validator(#[from] ValidatorError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// One committed repair iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairStep {
    pub iteration: usize,
    pub edit: Value,
    pub rendered: String,
    pub ce: Counterexample,
    #[serde(with = "crate::digest::decimal_number")]
    pub pre_j: Decimal,
    #[serde(with = "crate::digest::decimal_number")]
    pub post_j: Decimal,
}

#[derive(Debug, Clone, Default)]
pub enum ArchitectBackend {
    #[default]
    Deterministic,
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, Default)]
pub enum EngineerBackend {
    #[default]
    Stub,
    Randomized {
        seed: u64,
        error_rate: f64,
    },
    Remote(RemoteConfig),
}

/// Seeded faults applied to the architect's plan before harmonization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanFault {
    SetField { node: String, field: String, value: TypedValue },
    DropField { node: String, field: String },
    SetRegion { node: String, region: String },
    RemoveEffect { node: String, effect: Effect },
}

/// Seeded faults applied to the first decoded program, before the round-trip guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProgramFault {
    DropAttribute {
        block: String,
        field: String,
    },
    /// `value` is HCL expression text.
    SetAttribute {
        block: String,
        field: String,
        value: String,
    },
    RenameAttribute {
        block: String,
        old: String,
        new: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan: Vec<PlanFault>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub program: Vec<ProgramFault>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub budget_k: usize,
    /// `None` derives weights from the constraint set.
    pub weights: Option<RoutingWeights>,
    /// Where `run.jsonl`, per-iteration artifacts and `bundle/` go.
    pub run_dir: Option<PathBuf>,
    pub architect: ArchitectBackend,
    pub engineer: EngineerBackend,
    pub faults: FaultConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget_k: DEFAULT_BUDGET_K,
            weights: None,
            run_dir: None,
            architect: ArchitectBackend::default(),
            engineer: EngineerBackend::default(),
            faults: FaultConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessRun {
    pub plan: Plan,
    pub program: HclProgram,
    pub bundle: EvidenceBundle,
    pub report: ValidatorReport,
    pub repair_path: Vec<RepairStep>,
    /// J at every review.
    pub trajectory: Vec<Decimal>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsatisfiedRun {
    pub reason: String,
    pub remaining: Vec<Counterexample>,
    pub repair_path: Vec<RepairStep>,
    pub last_program: Option<HclProgram>,
    pub plan: Plan,
    pub trajectory: Vec<Decimal>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Success(Box<SuccessRun>),
    UnsatisfiedCore(Box<UnsatisfiedRun>),
}

impl RunOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RunOutcome::Success(_))
    }

    pub fn repair_path(&self) -> &[RepairStep] {
        match self {
            RunOutcome::Success(s) => &s.repair_path,
            RunOutcome::UnsatisfiedCore(u) => &u.repair_path,
        }
    }

    pub fn trajectory(&self) -> &[Decimal] {
        match self {
            RunOutcome::Success(s) => &s.trajectory,
            RunOutcome::UnsatisfiedCore(u) => &u.trajectory,
        }
    }

    pub fn iterations(&self) -> usize {
        self.repair_path().len()
    }

    pub fn program(&self) -> Option<&HclProgram> {
        match self {
            RunOutcome::Success(s) => Some(&s.program),
            RunOutcome::UnsatisfiedCore(u) => u.last_program.as_ref(),
        }
    }

    pub fn notes(&self) -> &[String] {
        match self {
            RunOutcome::Success(s) => &s.notes,
            RunOutcome::UnsatisfiedCore(u) => &u.notes,
        }
    }
}

/// a_k: everything the controller policy looks at.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub state: FsmState,
    pub intent: IntentSpec,
    pub constraints: ConstraintSet,
    pub plan: Plan,
    pub invariants: PlanInvariants,
    pub program: Option<HclProgram>,
    pub report: Option<ValidatorReport>,
    pub diagnostics: Vec<Diagnostic>,
    pub j: Option<Decimal>,
    pub k: usize,
    pub budget_k: usize,
    pub weights: Option<RoutingWeights>,
    pub repair_path: Vec<RepairStep>,
    pub trajectory: Vec<Decimal>,
    pub notes: Vec<String>,
    pub outcome: Option<RunOutcome>,
    program_faults_pending: bool,
}

impl ControllerState {
    pub fn new(intent: IntentSpec, constraints: ConstraintSet, budget_k: usize) -> Self {
        ControllerState {
            state: FsmState::Plan,
            intent,
            constraints,
            plan: Plan::default(),
            invariants: PlanInvariants::default(),
            program: None,
            report: None,
            diagnostics: Vec::new(),
            j: None,
            k: 0,
            budget_k,
            weights: None,
            repair_path: Vec::new(),
            trajectory: Vec::new(),
            notes: Vec::new(),
            outcome: None,
            program_faults_pending: true,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    fn unsatisfied(&mut self, reason: String) {
        self.outcome = Some(RunOutcome::UnsatisfiedCore(Box::new(UnsatisfiedRun {
            reason,
            remaining: self.report.as_ref().map(|r| r.counterexamples.clone()).unwrap_or_default(),
            repair_path: self.repair_path.clone(),
            last_program: self.program.clone(),
            plan: self.plan.clone(),
            trajectory: self.trajectory.clone(),
            notes: self.notes.clone(),
        })));
    }
}

fn config_err(e: impl fmt::Display) -> OrchestratorError {
    OrchestratorError::Config(e.to_string())
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("artifacts serialize")
}

fn apply_plan_faults(plan: &mut Plan, faults: &[PlanFault]) -> Result<(), OrchestratorError> {
    for f in faults {
        let id = match f {
            PlanFault::SetField { node, .. }
            | PlanFault::DropField { node, .. }
            | PlanFault::SetRegion { node, .. }
            | PlanFault::RemoveEffect { node, .. } => node,
        };
        let n = plan.node_mut(id).ok_or_else(|| config_err(format!("plan fault names unknown node `{id}`")))?;
        match f {
            PlanFault::SetField { field, value, .. } => {
                n.fields.insert(field.clone(), value.clone());
            }
            PlanFault::DropField { field, .. } => {
                n.fields.remove(field);
            }
            PlanFault::SetRegion { region, .. } => n.region = region.clone(),
            PlanFault::RemoveEffect { effect, .. } => {
                n.effects.remove(effect);
            }
        }
    }
    Ok(())
}

fn apply_program_faults(program: &mut HclProgram, faults: &[ProgramFault]) -> Result<(), OrchestratorError> {
    for f in faults {
        let name = match f {
            ProgramFault::DropAttribute { block, .. }
            | ProgramFault::SetAttribute { block, .. }
            | ProgramFault::RenameAttribute { block, .. } => block,
        };
        let b = program.resource_mut(name).ok_or_else(|| config_err(format!("program fault names unknown block `{name}`")))?;
        match f {
            ProgramFault::DropAttribute { field, .. } => {
                b.body.remove(field);
            }
            ProgramFault::SetAttribute { field, value, .. } => b.body.set(field, parse_expr(value).map_err(config_err)?),
            ProgramFault::RenameAttribute { old, new, .. } => {
                b.body.rename(old, new);
            }
        }
    }
    Ok(())
}

/// Runs the pipeline over one toolchain and configuration.
pub struct Orchestrator<'a> {
    tools: Toolchain<'a>,
    config: RunConfig,
    motifs: Option<&'a MotifStore>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(tools: Toolchain<'a>, config: RunConfig) -> Self {
        Orchestrator { tools, config, motifs: None }
    }

    pub fn with_motifs(mut self, store: &'a MotifStore) -> Self {
        self.motifs = Some(store);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn toolchain_digests(&self) -> ToolchainDigests {
        ToolchainDigests::compute(self.tools.registry, self.tools.rules, self.tools.catalog, Some(self.tools.sandbox))
    }

    /// A fresh blackboard, file-backed when a run directory is configured.
    pub fn blackboard(&self) -> Result<Blackboard, OrchestratorError> {
        match &self.config.run_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", dir.display())))?;
                Blackboard::create(dir.join("run.jsonl"), self.toolchain_digests())
            }
            None => Ok(Blackboard::in_memory(self.toolchain_digests())),
        }
    }

    pub fn run(&self, intent: &IntentSpec, constraints: &ConstraintSet) -> Result<RunOutcome, OrchestratorError> {
        let mut bb = self.blackboard()?;
        self.run_on(intent, constraints, &mut bb)
    }

    pub fn run_on(
        &self,
        intent: &IntentSpec,
        constraints: &ConstraintSet,
        bb: &mut Blackboard,
    ) -> Result<RunOutcome, OrchestratorError> {
        constraints.validate().map_err(config_err)?;
        let mut st = ControllerState::new(intent.clone(), constraints.clone(), self.config.budget_k);
        // Eight pipeline states plus, per repair iteration, at most repair → compile → five checks.
        let bound = 9 + 7 * (self.config.budget_k + 1);
        for _ in 0..bound {
            if st.is_terminal() {
                break;
            }
            st = self.step(st, bb)?;
        }
        st.outcome.ok_or_else(|| OrchestratorError::ContractViolation {
            role: "controller".into(),
            message: format!("no terminal state within {bound} steps"),
        })
    }

    fn goto(&self, st: &mut ControllerState, to: FsmState, bb: &mut Blackboard) -> Result<(), OrchestratorError> {
        if !transition_allowed(st.state, to) {
            return Err(OrchestratorError::IllegalTransition { from: st.state, to });
        }
        bb.append(st.state, ArtifactKind::Log, "transition", json!([st.state, to]))?;
        st.state = to;
        Ok(())
    }

    fn note(&self, st: &mut ControllerState, bb: &mut Blackboard, notes: Vec<String>) -> Result<(), OrchestratorError> {
        for n in notes {
            bb.append(st.state, ArtifactKind::Log, "note", json!(n))?;
            st.notes.push(n);
        }
        Ok(())
    }

    fn record_pair(&self, st: &ControllerState, bb: &mut Blackboard, guard_applied: bool) -> Result<(), OrchestratorError> {
        let program = st.program.as_ref().expect("a program exists once compiled");
        bb.append(st.state, ArtifactKind::Plan, "plan", to_value(&st.plan))?;
        bb.append(st.state, ArtifactKind::Program, "program", json!({ "text": print(program) }))?;
        bb.append(
            st.state,
            ArtifactKind::Trace,
            "roundtrip",
            roundtrip_record(&st.plan, program, self.tools.registry, guard_applied),
        )?;
        Ok(())
    }

    /// Validators plus static review; escalated review findings fail the schema class.
    fn evaluate(
        &self,
        program: &HclProgram,
        specs: &ConstraintSet,
    ) -> Result<(ValidatorReport, Vec<Diagnostic>), OrchestratorError> {
        let mut report = run_all(program, &self.tools, specs)?;
        let diagnostics = review_static(program);
        let escalated: Vec<Counterexample> = diagnostics.iter().filter_map(|d| d.escalated.clone()).collect();
        if !escalated.is_empty() {
            report.schema = Status::Fail;
            report.policy = Status::Gated;
            report.cost = Status::Gated;
            report.deploy = Status::Gated;
            report.counterexamples.retain(|c| c.class == CeClass::Schema);
            report.counterexamples.extend(escalated);
            report.counterexamples.sort();
            report.counterexamples.dedup();
        }
        Ok((report, diagnostics))
    }

    fn weights(&self, st: &ControllerState) -> RoutingWeights {
        st.weights.unwrap_or_else(|| RoutingWeights::for_constraints(&st.plan.specs))
    }

    fn iteration_dir(&self, k: usize) -> Option<PathBuf> {
        self.config.run_dir.as_ref().map(|d| d.join(format!("iter-{k:02}")))
    }

    /// f(a_k, u_k): executes the current state's contract and advances.
    pub fn step(&self, mut st: ControllerState, bb: &mut Blackboard) -> Result<ControllerState, OrchestratorError> {
        let registry = self.tools.registry;
        match st.state {
            S::Plan => {
                let mut notes = Vec::new();
                let mut architect: Box<dyn Architect> = match &self.config.architect {
                    ArchitectBackend::Deterministic => Box::new(DeterministicArchitect),
                    ArchitectBackend::Remote(c) => Box::new(RemoteArchitect::new(RemoteClient::new(c.clone()))),
                };
                let planned = architect.plan(&st.intent, &st.constraints, &[], registry, &mut notes).and_then(|draft| {
                    let Some(store) = self.motifs else { return Ok(draft) };
                    let hits = store.retrieve_motifs(&MotifQuery::from_plan(&draft.0), registry);
                    if hits.is_empty() {
                        return Ok(draft);
                    }
                    notes.push(format!("memory: {} motif(s) retrieved", hits.len()));
                    architect.plan(&st.intent, &st.constraints, &hits, registry, &mut notes)
                });
                self.note(&mut st, bb, notes)?;
                match planned {
                    Ok((mut plan, invariants)) => {
                        apply_plan_faults(&mut plan, &self.config.faults.plan)?;
                        bb.append(S::Plan, ArtifactKind::Plan, "draft", json!({ "plan": plan, "invariants": invariants }))?;
                        st.plan = plan;
                        st.invariants = invariants;
                        self.goto(&mut st, S::Harmonize, bb)?;
                    }
                    Err(AgentError::UnsupportedIntent(m)) => {
                        st.unsatisfied(format!("unsupported intent: {m}"));
                        st.state = S::Done;
                    }
                    Err(e) => {
                        return Err(OrchestratorError::ContractViolation { role: "architect".into(), message: e.to_string() })
                    }
                }
            }
            S::Harmonize => match harmonize(&st.plan, registry) {
                Ok(p) => {
                    st.plan = p;
                    bb.append(S::Harmonize, ArtifactKind::Plan, "plan", to_value(&st.plan))?;
                    st.weights = Some(self.config.weights.unwrap_or_else(|| RoutingWeights::for_constraints(&st.plan.specs)));
                    self.goto(&mut st, S::Compile, bb)?;
                }
                Err(e) => {
                    st.unsatisfied(format!("harmonization failed: {e}"));
                    st.state = S::Done;
                }
            },
            S::Compile => {
                let program = match st.program.take() {
                    Some(p) => p,
                    None => {
                        let (skeleton, symbols) = compile_skeleton(&st.plan, registry).map_err(|e| {
                            OrchestratorError::ContractViolation { role: "compiler".into(), message: e.to_string() }
                        })?;
                        let mut remote = None;
                        let mut proposer: Box<dyn Proposer> = match &self.config.engineer {
                            EngineerBackend::Stub => Box::new(DeterministicStub),
                            EngineerBackend::Randomized { seed, error_rate } => {
                                Box::new(RandomizedStub::new(*seed).with_error_rate(*error_rate))
                            }
                            EngineerBackend::Remote(c) => {
                                remote = Some(c.clone());
                                Box::new(RemoteProposer::new(RemoteClient::new(c.clone())))
                            }
                        };
                        let out = decode(&skeleton, &symbols, registry, proposer.as_mut()).map_err(|e| {
                            OrchestratorError::ContractViolation { role: "engineer".into(), message: e.to_string() }
                        })?;
                        let mut notes = out.notes;
                        if remote.is_some() {
                            notes.insert(0, format!("engineer: remote backend `{}`", proposer.name()));
                        }
                        self.note(&mut st, bb, notes)?;
                        let mut program = out.program;
                        if st.program_faults_pending {
                            apply_program_faults(&mut program, &self.config.faults.program)?;
                            st.program_faults_pending = false;
                        }
                        program
                    }
                };
                let (plan, program2) = repair_roundtrip(&st.plan, &program, registry)?;
                let guard_applied = plan != st.plan || program2 != program;
                st.plan = plan;
                st.program = Some(program2);
                self.record_pair(&st, bb, guard_applied)?;
                self.goto(&mut st, S::Review, bb)?;
            }
            S::Review => {
                let program = st.program.clone().expect("compiled");
                let (report, diagnostics) = self.evaluate(&program, &st.plan.specs)?;
                let j = routing_score(&report, &st.plan.specs, &self.weights(&st));
                bb.append(S::Review, ArtifactKind::Report, "report", json!({ "report": report, "j": j.to_string() }))?;
                let schema_ces: Vec<Counterexample> = report.of_class(CeClass::Schema).cloned().collect();
                bb.append(
                    S::Review,
                    ArtifactKind::Trace,
                    "static_validation",
                    static_section(report.v_schema(), &schema_ces, &diagnostics),
                )?;
                if let Some(dir) = self.iteration_dir(st.k) {
                    let io = |e: std::io::Error| OrchestratorError::Io(format!("{}: {e}", dir.display()));
                    std::fs::create_dir_all(&dir).map_err(io)?;
                    std::fs::write(dir.join("candidate.tf"), print(&program)).map_err(io)?;
                    std::fs::write(dir.join("report.json"), crate::digest::canonical_json_pretty(&report)).map_err(io)?;
                }
                st.trajectory.push(j);
                st.j = Some(j);
                let pass = report.v_schema();
                st.report = Some(report);
                st.diagnostics = diagnostics;
                self.goto(&mut st, if pass { S::Prove } else { S::Repair }, bb)?;
            }
            S::Prove => {
                let report = st.report.as_ref().expect("reviewed");
                bb.append(S::Prove, ArtifactKind::Trace, "policy_traces", policy_section(report.v_policy(), &report.traces))?;
                bb.append(S::Prove, ArtifactKind::Trace, "confirmations", confirmations(&report.traces, self.tools.rules))?;
                let pass = report.v_policy();
                self.goto(&mut st, if pass { S::Price } else { S::Repair }, bb)?;
            }
            S::Price => {
                let report = st.report.as_ref().expect("reviewed");
                bb.append(
                    S::Price,
                    ArtifactKind::Trace,
                    "cost_sheet",
                    cost_section(&report.cost_sheet, st.plan.specs.budget_ceiling),
                )?;
                let pass = report.cost.passed();
                self.goto(&mut st, if pass { S::Deploy } else { S::Repair }, bb)?;
            }
            S::Deploy => {
                let report = st.report.as_ref().expect("reviewed");
                bb.append(S::Deploy, ArtifactKind::Log, "deploy_log", json!({ "log": report.deploy_log }))?;
                let pass = report.v_deploy();
                self.goto(&mut st, if pass { S::Done } else { S::Repair }, bb)?;
            }
            S::Repair => self.repair(&mut st, bb)?,
            S::Done => {
                if st.outcome.is_none() {
                    let report = st.report.clone().expect("reviewed");
                    if st.j != Some(Decimal::ZERO) || !report.all_pass() {
                        return Err(OrchestratorError::ContractViolation {
                            role: "controller".into(),
                            message: "reached done without J = 0".into(),
                        });
                    }
                    let program = st.program.clone().expect("compiled");
                    let bundle = build_bundle(bb, &program)?;
                    if let Some(dir) = &self.config.run_dir {
                        bundle.write(dir.join("bundle"))?;
                    }
                    bb.append(S::Done, ArtifactKind::Bundle, "bundle", to_value(&bundle.manifest))?;
                    st.outcome = Some(RunOutcome::Success(Box::new(SuccessRun {
                        plan: st.plan.clone(),
                        program,
                        bundle,
                        report,
                        repair_path: st.repair_path.clone(),
                        trajectory: st.trajectory.clone(),
                        notes: st.notes.clone(),
                    })));
                }
            }
        }
        Ok(st)
    }

    /// π at the repair state: try ≺-ordered candidate edits, commit the first that
    /// does not raise J, log and revert the others.
    fn repair(&self, st: &mut ControllerState, bb: &mut Blackboard) -> Result<(), OrchestratorError> {
        let registry = self.tools.registry;
        let report = st.report.clone().expect("reviewed");
        let j = st.j.expect("scored");
        let program = st.program.clone().expect("compiled");
        if st.k >= st.budget_k {
            let reason = format!("attempt budget K = {} exhausted with J = {j}", st.budget_k);
            st.unsatisfied(reason);
            return self.goto(st, S::Done, bb);
        }
        let specs = st.plan.specs.clone();
        let ctx = RepairContext { registry, rules: self.tools.rules, catalog: self.tools.catalog, constraints: &specs };
        let candidates = candidate_edits(&report.counterexamples, &st.plan, &program, &ctx);
        if candidates.is_empty() {
            let reason = match error_to_edit(&report.counterexamples, &st.plan, &program, &ctx) {
                Err(RepairError::NoApplicableEdit { code, locus }) => format!("no applicable edit for `{code}` at {locus}"),
                Err(e) => e.to_string(),
                Ok(e) => format!("no candidate edits (mapper proposed {e})"),
            };
            st.unsatisfied(reason);
            return self.goto(st, S::Done, bb);
        }
        let weights = self.weights(st);
        for c in candidates {
            let rendered = c.edit.to_string();
            let attempt = self.try_edit(&st.plan, &program, &c.edit, &weights);
            let (plan, next, post_j) = match attempt {
                Ok(t) if t.2 <= j => t,
                Ok((_, _, post_j)) => {
                    bb.append(
                        S::Repair,
                        ArtifactKind::Edit,
                        "reverted",
                        json!({
                            "iteration": st.k + 1, "rendered": rendered, "pre_j": j.to_string(), "post_j": post_j.to_string(),
                            "reason": "J increased",
                        }),
                    )?;
                    continue;
                }
                Err(reason) => {
                    bb.append(
                        S::Repair,
                        ArtifactKind::Edit,
                        "reverted",
                        json!({
                            "iteration": st.k + 1, "rendered": rendered, "pre_j": j.to_string(), "reason": reason,
                        }),
                    )?;
                    continue;
                }
            };
            st.k += 1;
            let step = RepairStep { iteration: st.k, edit: to_value(&c.edit), rendered, ce: c.ce, pre_j: j, post_j };
            bb.append(S::Repair, ArtifactKind::Edit, "committed", to_value(&step))?;
            st.repair_path.push(step);
            st.plan = plan;
            st.program = Some(next);
            st.report = None;
            self.record_pair(st, bb, c.edit.is_structural())?;
            let to = if c.edit.is_structural() { S::Compile } else { S::Review };
            return self.goto(st, to, bb);
        }
        st.unsatisfied(format!("every candidate edit failed or raised J above {j}"));
        self.goto(st, S::Done, bb)
    }

    /// One standalone repair round over a plan/program pair: the first ≺-ordered
    /// candidate that does not raise J. `Ok(None)` when nothing applies.
    /// The plan is re-lifted from the program first (keeping its constraints), as
    /// the loop maintains `plan ≡ lift(program)` and the mapping reads both.
    pub fn repair_once(
        &self,
        plan: &Plan,
        program: &HclProgram,
    ) -> Result<Option<(RepairStep, Plan, HclProgram)>, OrchestratorError> {
        let synced = lift_lenient(program, self.tools.registry).map(|mut p| {
            p.specs = plan.specs.clone();
            p
        });
        let plan = synced.as_ref().unwrap_or(plan);
        let (report, _) = self.evaluate(program, &plan.specs)?;
        let weights = self.config.weights.unwrap_or_else(|| RoutingWeights::for_constraints(&plan.specs));
        let j = routing_score(&report, &plan.specs, &weights);
        if report.all_pass() {
            return Ok(None);
        }
        let ctx = RepairContext {
            registry: self.tools.registry,
            rules: self.tools.rules,
            catalog: self.tools.catalog,
            constraints: &plan.specs,
        };
        for c in candidate_edits(&report.counterexamples, plan, program, &ctx) {
            if let Ok((p, t, post_j)) = self.try_edit(plan, program, &c.edit, &weights) {
                if post_j <= j {
                    let step = RepairStep {
                        iteration: 1,
                        edit: to_value(&c.edit),
                        rendered: c.edit.to_string(),
                        ce: c.ce,
                        pre_j: j,
                        post_j,
                    };
                    return Ok(Some((step, p, t)));
                }
            }
        }
        Ok(None)
    }

    /// Apply, normalize (print and re-parse), re-establish the round trip for plan
    /// edits, and score. Errors are reasons to skip the candidate.
    fn try_edit(
        &self,
        plan: &Plan,
        program: &HclProgram,
        edit: &Edit,
        weights: &RoutingWeights,
    ) -> Result<(Plan, HclProgram, Decimal), String> {
        let registry = self.tools.registry;
        let (p, t) = apply_edit(plan, program, edit, registry).map_err(|e| e.to_string())?;
        let t = parse(&print(&t)).map_err(|e| format!("edited program does not re-parse: {e}"))?;
        let (p, t) = if edit.is_structural() { repair_roundtrip(&p, &t, registry).map_err(|e| e.to_string())? } else { (p, t) };
        let (report, _) = self.evaluate(&t, &p.specs).map_err(|e| e.to_string())?;
        Ok((p.clone(), t, routing_score(&report, &p.specs, weights)))
    }
}

#[cfg(test)]
mod tests {
    use std::str::FromStr;

    use super::*;
    use crate::agents::{DatabaseTier, StructuredIntent, WebTier};
    use crate::fixtures;
    use crate::validators::{parse_rules, PriceCatalog, StubSandbox};

    pub(crate) struct Kit {
        pub registry: crate::registry::SchemaRegistry,
        pub rules: Vec<crate::validators::PolicyRule>,
        pub catalog: PriceCatalog,
        pub sandbox: StubSandbox,
    }

    impl Kit {
        pub fn new() -> Self {
            Kit {
                registry: fixtures::registry(),
                rules: parse_rules(fixtures::RULES_JSON).unwrap(),
                catalog: PriceCatalog::from_json_str(fixtures::CATALOG_JSON).unwrap(),
                sandbox: StubSandbox::new(Vec::new()),
            }
        }

        pub fn tools(&self) -> Toolchain<'_> {
            Toolchain { registry: &self.registry, rules: &self.rules, catalog: &self.catalog, sandbox: &self.sandbox }
        }
    }

    fn intent() -> IntentSpec {
        IntentSpec::structured(StructuredIntent {
            region: Some("eu-west-1".into()),
            web: Some(WebTier { count: 1, instance_type: Some("t3.micro".into()), ami: None, exposure: vec![] }),
            database: Some(DatabaseTier { engine: "postgres".into(), instance_class: None, redundant: true }),
            encryption: true,
            ..StructuredIntent::default()
        })
    }

    #[test]
    fn transition_table_is_closed() {
        for (a, b) in TRANSITIONS {
            assert_ne!(a, S::Done, "done is terminal");
            assert_ne!(b, S::Plan, "plan is initial");
        }
        assert!(!transition_allowed(S::Plan, S::Compile));
    }

    #[test]
    fn zero_fault_run_walks_the_happy_path() {
        let kit = Kit::new();
        let orch = Orchestrator::new(kit.tools(), RunConfig::default());
        let mut bb = orch.blackboard().unwrap();
        let out = orch.run_on(&intent(), &ConstraintSet::default(), &mut bb).unwrap();
        assert!(out.is_success(), "{out:?}");
        assert_eq!(out.iterations(), 0);
        let path: Vec<FsmState> = bb.transitions().into_iter().map(|(_, b)| b).collect();
        assert_eq!(path, [S::Harmonize, S::Compile, S::Review, S::Prove, S::Price, S::Deploy, S::Done]);
        bb.verify().unwrap();
    }

    #[test]
    fn missing_required_takes_one_repair() {
        let kit = Kit::new();
        let config = RunConfig {
            faults: FaultConfig {
                program: vec![ProgramFault::DropAttribute { block: "web_1".into(), field: "ami".into() }],
                ..FaultConfig::default()
            },
            ..RunConfig::default()
        };
        let orch = Orchestrator::new(kit.tools(), config);
        let mut bb = orch.blackboard().unwrap();
        let out = orch.run_on(&intent(), &ConstraintSet::default(), &mut bb).unwrap();
        assert!(out.is_success(), "{out:?}");
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.repair_path()[0].ce.code, "missing_required");
        assert_eq!(bb.transitions().iter().filter(|(_, b)| *b == S::Repair).count(), 1);
        assert!(bb.transitions().iter().all(|(a, b)| transition_allowed(*a, *b)));
    }

    #[test]
    fn zero_budget_with_a_fault_is_unsatisfied() {
        let kit = Kit::new();
        let config = RunConfig {
            budget_k: 0,
            faults: FaultConfig {
                program: vec![ProgramFault::DropAttribute { block: "web_1".into(), field: "ami".into() }],
                ..FaultConfig::default()
            },
            ..RunConfig::default()
        };
        let out = Orchestrator::new(kit.tools(), config).run(&intent(), &ConstraintSet::default()).unwrap();
        let RunOutcome::UnsatisfiedCore(u) = out else { panic!("expected unsatisfied") };
        assert!(u.reason.contains("budget"));
        assert_eq!(u.remaining[0].code, "missing_required");
    }

    #[test]
    fn unmapped_fault_names_the_counterexample() {
        let mut kit = Kit::new();
        kit.sandbox = StubSandbox::from_json_str(
            r#"[{"match":{"kind":"rds","field":"engine"},"code":"quota_exceeded","message":"engine quota exhausted"}]"#,
        )
        .unwrap();
        let out = Orchestrator::new(kit.tools(), RunConfig::default()).run(&intent(), &ConstraintSet::default()).unwrap();
        let RunOutcome::UnsatisfiedCore(u) = out else { panic!("expected unsatisfied") };
        assert!(u.reason.contains("quota_exceeded"), "{}", u.reason);
    }

    #[test]
    fn budget_overrun_is_repaired_monotonically() {
        let kit = Kit::new();
        let mut i = intent();
        i.structured.as_mut().unwrap().web.as_mut().unwrap().instance_type = Some("t3.small".into());
        let c = ConstraintSet { budget_ceiling: Some(Decimal::from_str("20").unwrap()), ..ConstraintSet::default() };
        let out = Orchestrator::new(kit.tools(), RunConfig::default()).run(&i, &c).unwrap();
        assert!(out.is_success(), "{out:?}");
        for s in out.repair_path() {
            assert!(s.post_j <= s.pre_j);
        }
        assert_eq!(out.trajectory().last(), Some(&Decimal::ZERO));
    }

    #[test]
    fn run_directory_layout() {
        let kit = Kit::new();
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            run_dir: Some(dir.path().to_path_buf()),
            faults: FaultConfig {
                program: vec![ProgramFault::DropAttribute { block: "web_1".into(), field: "ami".into() }],
                ..FaultConfig::default()
            },
            ..RunConfig::default()
        };
        assert!(Orchestrator::new(kit.tools(), config).run(&intent(), &ConstraintSet::default()).unwrap().is_success());
        for f in ["run.jsonl", "iter-00/candidate.tf", "iter-00/report.json", "iter-01/candidate.tf", "bundle/manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        Blackboard::load(dir.path().join("run.jsonl")).unwrap().verify().unwrap();
    }
}
