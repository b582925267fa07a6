//! Desk-scale evaluation: task corpora, success rate and BLEU.
//!
//! Tokenization for BLEU: maximal runs of `[A-Za-z0-9_]` are one token, every
//! other non-whitespace character is a token on its own, whitespace separates.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{DatabaseTier, Exposure, IdentityTier, IntentSpec, StorageTier, StructuredIntent, WebTier};
use crate::hcl::{parse, print};
use crate::iir::{ConstraintSet, Effect};
use crate::orchestrator::{EngineerBackend, FaultConfig, Orchestrator, PlanFault, ProgramFault, RunConfig, RunOutcome};
use crate::registry::SchemaRegistry;
use crate::validators::{
    run_all, ExternalToolSandbox, Fault, FaultMatch, PolicyRule, PriceCatalog, SandboxAdapter, StubSandbox, Toolchain,
};

const MAX_N: usize = 4;

pub fn tokenize(text: &str) -> Vec<&str> {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let re = TOKEN.get_or_init(|| Regex::new(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]").expect("static pattern"));
    re.find_iter(text).map(|m| m.as_str()).collect()
}

/// Clipped n-gram matches and candidate n-gram totals for one pair.
fn pair_stats(candidate: &[&str], reference: &[&str]) -> ([usize; MAX_N], [usize; MAX_N]) {
    let mut matches = [0; MAX_N];
    let mut totals = [0; MAX_N];
    for n in 1..=MAX_N {
        let mut refs: HashMap<&[&str], usize> = HashMap::new();
        for w in reference.windows(n) {
            *refs.entry(w).or_default() += 1;
        }
        let mut cands: HashMap<&[&str], usize> = HashMap::new();
        for w in candidate.windows(n) {
            *cands.entry(w).or_default() += 1;
        }
        matches[n - 1] = cands.iter().map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0))).sum();
        totals[n - 1] = candidate.len().saturating_sub(n - 1);
    }
    (matches, totals)
}

/// Corpus BLEU in [0, 100]: N = 4, uniform weights, brevity penalty over summed
/// lengths, no smoothing (any zero n-gram precision gives 0).
pub fn corpus_bleu<C: AsRef<str>, R: AsRef<str>>(pairs: &[(C, R)]) -> f64 {
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, reference) in pairs {
        let ct = tokenize(cand.as_ref());
        let rt = tokenize(reference.as_ref());
        let (m, t) = pair_stats(&ct, &rt);
        for n in 0..MAX_N {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        c += ct.len();
        r += rt.len();
    }
    if c == 0 || matches.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..MAX_N).map(|n| (matches[n] as f64 / totals[n] as f64).ln()).sum::<f64>() / MAX_N as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * log_p.exp()
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    corpus_bleu(&[(candidate, reference)])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutcome {
    #[default]
    Success,
    Unsatisfied,
}

/// One evaluation item: an intent, its constraints and how the harness checks it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskCase {
    pub id: String,
    pub intent: IntentSpec,
    #[serde(default)]
    pub constraints: ConstraintSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Fault manifest for the stub sandbox.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sandbox_faults: Vec<Fault>,
    /// Seeded plan/program faults injected into the run.
    #[serde(default, skip_serializing_if = "is_default")]
    pub faults: FaultConfig,
    #[serde(default)]
    pub expected: ExpectedOutcome,
}

fn is_default(f: &FaultConfig) -> bool {
    *f == FaultConfig::default()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Corpus { path: String, message: String },
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("task `{id}`: {message}")]
    Task { id: String, message: String },
}

impl TaskCase {
    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |message: String| EvalError::Task { id: self.id.clone(), message };
        if self.id.is_empty() {
            return Err(err("empty id".into()));
        }
        self.intent.validate().map_err(|e| err(e.to_string()))?;
        self.constraints.validate().map_err(|e| err(e.to_string()))?;
        if let Some(r) = &self.reference {
            parse(r).map_err(|e| err(format!("reference does not parse: {e}")))?;
        }
        Ok(())
    }
}

/// Loads every `*.json` task in `dir`, sorted by id.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<TaskCase>, EvalError> {
    let dir = dir.as_ref();
    let corpus_err = |path: &Path, message: String| EvalError::Corpus { path: path.display().to_string(), message };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| corpus_err(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut tasks = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| corpus_err(&p, e.to_string()))?;
        let task: TaskCase = serde_json::from_str(&text).map_err(|e| corpus_err(&p, e.to_string()))?;
        task.validate()?;
        tasks.push(task);
    }
    check_unique(&mut tasks)?;
    Ok(tasks)
}

fn check_unique(tasks: &mut [TaskCase]) -> Result<(), EvalError> {
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    match tasks.windows(2).find(|w| w[0].id == w[1].id) {
        Some(w) => Err(EvalError::DuplicateId(w[0].id.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SandboxChoice {
    #[default]
    Stub,
    External,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub budget_k: usize,
    /// `None` uses the deterministic proposer; otherwise a seeded randomized one per task.
    pub seed: Option<u64>,
    pub sandbox: SandboxChoice,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { budget_k: crate::orchestrator::DEFAULT_BUDGET_K, seed: None, sandbox: SandboxChoice::Stub, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub id: String,
    pub expected: ExpectedOutcome,
    /// `success` or `unsatisfied`.
    pub outcome: String,
    /// t_i.
    pub success: bool,
    pub iterations: usize,
    pub trajectory: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    pub total: usize,
    pub successes: usize,
    /// 100 · Σ t_i / M, two decimals.
    pub success_pct: Decimal,
    /// Corpus BLEU over tasks that carry a reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    /// Committed repair iterations → number of successful tasks.
    pub iteration_histogram: BTreeMap<usize, usize>,
    /// Tasks whose J trajectory ever rose.
    pub non_monotone: Vec<String>,
    pub mean_initial_j: Decimal,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        crate::digest::canonical_json_pretty(self)
    }

    /// Fraction of tasks that succeeded within `k` iterations.
    pub fn success_within(&self, k: usize) -> usize {
        self.tasks.iter().filter(|t| t.success && t.iterations <= k).count()
    }
}

/// Shared, task-independent tools.
pub struct EvalTools<'a> {
    pub registry: &'a SchemaRegistry,
    pub rules: &'a [PolicyRule],
    pub catalog: &'a PriceCatalog,
}

fn task_seed(seed: u64, id: &str) -> u64 {
    id.bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn run_task(task: &TaskCase, tools: &EvalTools, config: &EvalConfig) -> (TaskResult, Option<String>) {
    let stub = StubSandbox::new(task.sandbox_faults.clone());
    let external = ExternalToolSandbox::from_env();
    let sandbox: &dyn SandboxAdapter = match config.sandbox {
        SandboxChoice::Stub => &stub,
        SandboxChoice::External => &external,
    };
    let toolchain = Toolchain { registry: tools.registry, rules: tools.rules, catalog: tools.catalog, sandbox };
    let run = RunConfig {
        budget_k: config.budget_k,
        engineer: match config.seed {
            None => EngineerBackend::Stub,
            Some(s) => EngineerBackend::Randomized { seed: task_seed(s, &task.id), error_rate: 0.0 },
        },
        faults: task.faults.clone(),
        ..RunConfig::default()
    };
    let outcome = Orchestrator::new(toolchain, run).run(&task.intent, &task.constraints);
    let mut result = TaskResult {
        id: task.id.clone(),
        expected: task.expected,
        outcome: "unsatisfied".into(),
        success: false,
        iterations: 0,
        trajectory: Vec::new(),
        reason: None,
        bleu: None,
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            result.reason = Some(e.to_string());
            return (result, None);
        }
    };
    result.iterations = outcome.iterations();
    result.trajectory = outcome.trajectory().iter().map(Decimal::to_string).collect();
    let text = outcome.program().map(print);
    match &outcome {
        RunOutcome::Success(s) => {
            result.outcome = "success".into();
            // t_i: re-check the delivered program against the task's own validators.
            result.success = match run_all(&s.program, &toolchain, &s.plan.specs) {
                Ok(r) => r.all_pass(),
                Err(e) => {
                    result.reason = Some(e.to_string());
                    false
                }
            };
        }
        RunOutcome::UnsatisfiedCore(u) => result.reason = Some(u.reason.clone()),
    }
    if let Some(reference) = &task.reference {
        let cand = if result.success { text.clone().unwrap_or_default() } else { String::new() };
        result.bleu = Some(bleu(&cand, reference));
        return (result, Some(cand));
    }
    (result, None)
}

pub fn run_tasks(tasks: &[TaskCase], tools: &EvalTools, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let mut tasks = tasks.to_vec();
    check_unique(&mut tasks)?;
    let jobs = config.jobs.max(1);
    let chunk = tasks.len().div_ceil(jobs).max(1);
    let results: Vec<(TaskResult, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = tasks
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|t| run_task(t, tools, config)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });

    let total = results.len();
    let successes = results.iter().filter(|(r, _)| r.success).count();
    let mut success_pct =
        if total == 0 { Decimal::ZERO } else { (Decimal::from(100 * successes) / Decimal::from(total)).round_dp(2) };
    success_pct.rescale(2);
    let pairs: Vec<(String, String)> =
        results.iter().zip(&tasks).filter_map(|((_, cand), t)| Some((cand.clone()?, t.reference.clone()?))).collect();
    let mut iteration_histogram = BTreeMap::new();
    for (r, _) in results.iter().filter(|(r, _)| r.success) {
        *iteration_histogram.entry(r.iterations).or_default() += 1;
    }
    let non_monotone = results
        .iter()
        .filter(|(r, _)| {
            let js: Vec<Decimal> = r.trajectory.iter().filter_map(|j| j.parse().ok()).collect();
            js.windows(2).any(|w| w[1] > w[0])
        })
        .map(|(r, _)| r.id.clone())
        .collect();
    let initial: Vec<Decimal> = results.iter().filter_map(|(r, _)| r.trajectory.first()?.parse().ok()).collect();
    let mean_initial_j = if initial.is_empty() {
        Decimal::ZERO
    } else {
        (initial.iter().sum::<Decimal>() / Decimal::from(initial.len())).round_dp(4)
    };
    Ok(EvalReport {
        tasks: results.into_iter().map(|(r, _)| r).collect(),
        total,
        successes,
        success_pct,
        bleu: (!pairs.is_empty()).then(|| corpus_bleu(&pairs)),
        iteration_histogram,
        non_monotone,
        mean_initial_j,
    })
}

pub fn run_eval(dir: impl AsRef<Path>, tools: &EvalTools, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    run_tasks(&load_corpus(dir)?, tools, config)
}

/// Fault families of the seeded single-fault corpus; each maps to a counterexample
/// code the repair mapping handles.
const FAMILIES: [&str; 12] = [
    "missing_required",
    "unknown_field",
    "value_not_allowed",
    "encrypt_at_rest",
    "redundancy",
    "residency",
    "budget_exceeded",
    "unsupported_sku",
    "az_unavailable",
    "restricted_ingress",
    "least_privilege",
    "tagging",
];

pub const CORPUS_SEED: u64 = 2025;

/// The seeded 50-task single-fault corpus.
pub fn single_fault_corpus(seed: u64, size: usize) -> Vec<TaskCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|i| single_fault_task(&mut rng, i, FAMILIES[i % FAMILIES.len()])).collect()
}

fn single_fault_task(rng: &mut ChaCha8Rng, i: usize, family: &str) -> TaskCase {
    let region = *["eu-west-1", "eu-central-1", "us-east-1"].choose(rng).expect("non-empty");
    let mut intent = StructuredIntent {
        region: Some(region.into()),
        web: Some(WebTier { count: rng.gen_range(1..=2), instance_type: Some("t3.micro".into()), ami: None, exposure: vec![] }),
        tags: BTreeMap::from([("owner".to_owned(), ["web", "platform", "data"].choose(rng).expect("non-empty").to_string())]),
        ..StructuredIntent::default()
    };
    if rng.gen_bool(0.5) {
        intent.database = Some(DatabaseTier {
            engine: ["postgres", "mysql"].choose(rng).expect("non-empty").to_string(),
            instance_class: None,
            redundant: false,
        });
    }
    let mut constraints = ConstraintSet::default();
    let mut faults = FaultConfig::default();
    let mut sandbox_faults = Vec::new();
    let web = "web_1".to_owned();
    match family {
        "missing_required" => faults.program.push(ProgramFault::DropAttribute { block: web, field: "ami".into() }),
        "unknown_field" => {
            let new = ["amii", "am", "ami_"].choose(rng).expect("non-empty").to_string();
            faults.program.push(ProgramFault::RenameAttribute { block: web, old: "ami".into(), new });
        }
        "value_not_allowed" => {
            let value = ["\"ami-0000000000000000\"", "\"ami-latest\"", "\"\""].choose(rng).expect("non-empty").to_string();
            faults.program.push(ProgramFault::SetAttribute { block: web, field: "ami".into(), value });
        }
        "encrypt_at_rest" => {
            intent.encryption = true;
            intent.storage = Some(StorageTier { buckets: vec![format!("assets-{i}")], versioning: rng.gen_bool(0.5) });
            faults.plan.push(PlanFault::RemoveEffect { node: "bucket_1".into(), effect: Effect::EncryptAtRest });
        }
        "redundancy" => {
            intent.database = Some(DatabaseTier { engine: "postgres".into(), instance_class: None, redundant: true });
            constraints.required_effects.insert(Effect::Redundant);
            faults.plan.push(PlanFault::RemoveEffect { node: "db".into(), effect: Effect::Redundant });
        }
        "residency" => {
            let other = if region == "us-east-1" { "eu-west-1" } else { "us-east-1" };
            constraints.residency = Some([region.to_owned()].into());
            faults.plan.push(PlanFault::SetRegion { node: web, region: other.into() });
        }
        "budget_exceeded" => {
            if let Some(w) = intent.web.as_mut() {
                w.instance_type = Some("t3.small".into());
            }
            // Affordable only after every web instance is downgraded once.
            let count = intent.web.as_ref().map_or(1, |w| w.count);
            let db = if intent.database.is_some() { Decimal::new(1360, 2) } else { Decimal::ZERO };
            constraints.budget_ceiling = Some(Decimal::new(420, 2) * Decimal::from(count) + db);
        }
        "unsupported_sku" => {
            if let Some(w) = intent.web.as_mut() {
                w.instance_type = Some("t3.small".into());
            }
            sandbox_faults.push(Fault {
                selector: FaultMatch { kind: Some("ec2".into()), field: "instance_type".into(), value: Some("t3.small".into()) },
                code: "unsupported_sku".into(),
                message: format!("t3.small is not offered in {region}"),
            });
        }
        "az_unavailable" => {
            intent.zones = Some(2);
            sandbox_faults.push(Fault {
                selector: FaultMatch { kind: Some("subnet".into()), field: "availability_zone".into(), value: Some("b".into()) },
                code: "az_unavailable".into(),
                message: "zone b is at capacity".into(),
            });
        }
        "restricted_ingress" => {
            if let Some(w) = intent.web.as_mut() {
                w.exposure = vec![
                    Exposure { port: 443, cidr: "0.0.0.0/0".into(), protocol: "tcp".into() },
                    Exposure {
                        port: *[22u16, 3389].choose(rng).expect("non-empty"),
                        cidr: "0.0.0.0/0".into(),
                        protocol: "tcp".into(),
                    },
                ];
            }
        }
        "least_privilege" => {
            intent.identity =
                Some(IdentityTier { role_name: format!("svc-{i}"), managed_policy: Some("AdministratorAccess".into()) });
        }
        "tagging" => {
            constraints.required_effects.insert(Effect::Tagged);
            faults.plan.push(PlanFault::DropField { node: web, field: "tags".into() });
        }
        other => unreachable!("unknown fault family {other}"),
    }
    TaskCase {
        id: format!("sf-{i:03}-{family}"),
        intent: IntentSpec::structured(intent),
        constraints,
        reference: None,
        sandbox_faults,
        faults,
        expected: ExpectedOutcome::Success,
    }
}

/// Writes tasks as pretty canonical JSON, one file per id.
pub fn write_corpus(dir: impl AsRef<Path>, tasks: &[TaskCase]) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for t in tasks {
        std::fs::write(dir.join(format!("{}.json", t.id)), crate::digest::canonical_json_pretty(t) + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::validators::parse_rules;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("a = vpc.main.id\n\"x-1\""), ["a", "=", "vpc", ".", "main", ".", "id", "\"", "x", "-", "1", "\""]);
    }

    #[test]
    fn bleu_edges() {
        let t = "resource \"vpc\" \"main\" { cidr_block = \"10.0.0.0/16\" }";
        assert_eq!(bleu(t, t), 100.0);
        assert_eq!(bleu("", t), 0.0);
        assert_eq!(bleu("a b c", "d e f"), 0.0);
        // Fewer than four tokens: no 4-grams, so no smoothing means 0.
        assert_eq!(bleu("a b c", "a b c"), 0.0);
        let short = bleu("resource \"vpc\" \"main\" {", t);
        assert!(short > 0.0 && short < 100.0);
    }

    #[test]
    fn success_arithmetic() {
        let registry = fixtures::registry();
        let rules = parse_rules(fixtures::RULES_JSON).unwrap();
        let catalog = PriceCatalog::from_json_str(fixtures::CATALOG_JSON).unwrap();
        let tools = EvalTools { registry: &registry, rules: &rules, catalog: &catalog };
        let mut tasks: Vec<TaskCase> = single_fault_corpus(7, 4);
        for t in &mut tasks {
            t.faults = FaultConfig::default();
            t.sandbox_faults.clear();
        }
        tasks[3].sandbox_faults.push(Fault {
            selector: FaultMatch { kind: None, field: "region".into(), value: None },
            code: "quota_exceeded".into(),
            message: "account quota exhausted".into(),
        });
        tasks[3].expected = ExpectedOutcome::Unsatisfied;
        let report = run_tasks(&tasks, &tools, &EvalConfig::default()).unwrap();
        assert_eq!(report.success_pct, Decimal::new(7500, 2));
        let first3 = run_tasks(&tasks[..3], &tools, &EvalConfig { jobs: 3, ..EvalConfig::default() }).unwrap();
        assert_eq!(first3.success_pct, Decimal::new(10000, 2));
        assert_eq!(first3.iteration_histogram, BTreeMap::from([(0, 3)]));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut tasks = single_fault_corpus(1, 2);
        tasks[1].id = tasks[0].id.clone();
        assert!(matches!(check_unique(&mut tasks), Err(EvalError::DuplicateId(_))));
    }
}
