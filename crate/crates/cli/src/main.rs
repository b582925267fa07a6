use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use iacforge::agents::review_static;
use iacforge::digest::canonical_json_pretty;
use iacforge::eval::{load_corpus, run_tasks, EvalConfig, EvalTools, ExpectedOutcome, SandboxChoice, TaskCase};
use iacforge::evidence::verify_bundle;
use iacforge::fixtures;
use iacforge::hcl::{parse, print};
use iacforge::iir::{ConstraintSet, Plan};
use iacforge::orchestrator::{EngineerBackend, Orchestrator, RunConfig, RunOutcome};
use iacforge::registry::SchemaRegistry;
use iacforge::repair::routing_score;
use iacforge::repair::RoutingWeights;
use iacforge::validators::{
    load_rules, parse_rules, run_all, ExternalToolSandbox, PolicyRule, PriceCatalog, SandboxAdapter, StubSandbox, Toolchain,
};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "iacforge", version, about = "Synthesize, validate and repair Terraform-subset programs from typed plans")]
struct Cli {
    /// Provider schema registry (JSON). Defaults to the bundled fixture.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Policy rule set (JSON). Defaults to the bundled fixture.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Price catalog (JSON). Defaults to the bundled fixture.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = SandboxKind::Stub)]
    sandbox: SandboxKind,
    /// Fault manifest for the stub sandbox; tasks may also carry their own.
    #[arg(long, global = true)]
    sandbox_faults: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = iacforge::orchestrator::DEFAULT_BUDGET_K)]
    budget_k: usize,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seeds the randomized engineer stub; without it the deterministic stub is used.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SandboxKind {
    Stub,
    External,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline on a task file and write the evidence bundle.
    Synth { task: PathBuf },
    /// Validate a program and print the report.
    Validate {
        program: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// Apply one repair round to a program/plan pair.
    Repair {
        program: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Verify an evidence bundle offline.
    BundleVerify {
        bundle: PathBuf,
        /// Program to check against the manifest digest; defaults to the bundled copy.
        #[arg(long)]
        program: Option<PathBuf>,
    },
    /// Evaluate a task corpus directory.
    Eval {
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a program canonically.
    Fmt {
        program: PathBuf,
        /// Rewrite the file in place.
        #[arg(long)]
        write: bool,
        /// Exit 1 when the file is not canonical.
        #[arg(long, conflicts_with = "write")]
        check: bool,
    },
    /// Load and validate a schema registry.
    RegistryCheck { path: Option<PathBuf> },
}

/// A failure that maps to an exit status.
struct Exit(u8, String);

fn config(msg: impl std::fmt::Display) -> Exit {
    Exit(EXIT_CONFIG, msg.to_string())
}

fn read(path: &Path) -> Result<String, Exit> {
    std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Exit> {
    serde_json::from_str(&read(path)?).map_err(|e| config(format!("{}: {e}", path.display())))
}

struct Tools {
    registry: SchemaRegistry,
    rules: Vec<PolicyRule>,
    catalog: PriceCatalog,
    stub: StubSandbox,
    external: ExternalToolSandbox,
    sandbox: SandboxKind,
}

impl Tools {
    fn load(cli: &Cli) -> Result<Self, Exit> {
        let registry = match &cli.registry {
            Some(p) => SchemaRegistry::load(p).map_err(config)?,
            None => fixtures::registry(),
        };
        let rules = match &cli.rules {
            Some(p) => load_rules(p).map_err(config)?,
            None => parse_rules(fixtures::RULES_JSON).map_err(config)?,
        };
        let catalog = match &cli.catalog {
            Some(p) => PriceCatalog::load(p).map_err(config)?,
            None => PriceCatalog::from_json_str(fixtures::CATALOG_JSON).map_err(config)?,
        };
        let stub = match &cli.sandbox_faults {
            Some(p) => StubSandbox::load(p).map_err(config)?,
            None => StubSandbox::default(),
        };
        Ok(Tools { registry, rules, catalog, stub, external: ExternalToolSandbox::from_env(), sandbox: cli.sandbox })
    }

    fn sandbox(&self) -> &dyn SandboxAdapter {
        match self.sandbox {
            SandboxKind::Stub => &self.stub,
            SandboxKind::External => &self.external,
        }
    }

    fn toolchain(&self) -> Toolchain<'_> {
        Toolchain { registry: &self.registry, rules: &self.rules, catalog: &self.catalog, sandbox: self.sandbox() }
    }
}

fn engineer(seed: Option<u64>) -> EngineerBackend {
    match seed {
        Some(seed) => EngineerBackend::Randomized { seed, error_rate: 0.0 },
        None => EngineerBackend::Stub,
    }
}

/// Writes to stdout, tolerating a closed pipe.
fn out(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn emit(value: &impl serde::Serialize) {
    out(&(canonical_json_pretty(value) + "\n"));
}

fn synth(cli: &Cli, tools: &mut Tools, task: &Path) -> Result<u8, Exit> {
    let task: TaskCase = read_json(task)?;
    task.validate().map_err(config)?;
    if !task.sandbox_faults.is_empty() {
        tools.stub.faults.extend(task.sandbox_faults.iter().cloned());
    }
    let run_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("iacforge-out")).join(&task.id);
    let run = RunConfig {
        budget_k: cli.budget_k,
        run_dir: Some(run_dir.clone()),
        engineer: engineer(cli.seed),
        faults: task.faults.clone(),
        ..RunConfig::default()
    };
    let outcome = Orchestrator::new(tools.toolchain(), run)
        .run(&task.intent, &task.constraints)
        .map_err(|e| Exit(EXIT_FAIL, e.to_string()))?;
    let trajectory: Vec<String> = outcome.trajectory().iter().map(ToString::to_string).collect();
    let steps: Vec<&str> = outcome.repair_path().iter().map(|s| s.rendered.as_str()).collect();
    match &outcome {
        RunOutcome::Success(s) => {
            let io = |e: std::io::Error| config(format!("{}: {e}", run_dir.display()));
            std::fs::write(run_dir.join("program.tf"), print(&s.program)).map_err(io)?;
            std::fs::write(run_dir.join("plan.json"), canonical_json_pretty(&s.plan)).map_err(io)?;
            emit(&json!({
                "task": task.id,
                "outcome": "success",
                "iterations": outcome.iterations(),
                "repair_path": steps,
                "trajectory": trajectory,
                "program": run_dir.join("program.tf"),
                "plan": run_dir.join("plan.json"),
                "bundle": run_dir.join("bundle"),
                "manifest_digest": s.bundle.manifest.manifest_digest,
                "notes": s.notes,
            }));
            Ok(EXIT_OK)
        }
        RunOutcome::UnsatisfiedCore(u) => {
            emit(&json!({
                "task": task.id,
                "outcome": "unsatisfied",
                "reason": u.reason,
                "remaining": u.remaining,
                "iterations": outcome.iterations(),
                "repair_path": steps,
                "trajectory": trajectory,
                "notes": u.notes,
            }));
            Ok(EXIT_FAIL)
        }
    }
}

fn validate(tools: &Tools, program: &Path, constraints: Option<&Path>) -> Result<u8, Exit> {
    let text = read(program)?;
    let constraints: ConstraintSet = match constraints {
        Some(p) => read_json(p)?,
        None => ConstraintSet::default(),
    };
    constraints.validate().map_err(config)?;
    let program = match parse(&text) {
        Ok(p) => p,
        Err(e) => {
            emit(&json!({ "parsed": false, "error": e.to_string() }));
            return Ok(EXIT_FAIL);
        }
    };
    let report = run_all(&program, &tools.toolchain(), &constraints).map_err(config)?;
    let diagnostics = review_static(&program);
    let j = routing_score(&report, &constraints, &RoutingWeights::for_constraints(&constraints));
    let escalated = diagnostics.iter().any(|d| d.escalated.is_some());
    emit(&json!({ "parsed": true, "report": report, "diagnostics": diagnostics, "j": j.to_string() }));
    Ok(if report.all_pass() && !escalated { EXIT_OK } else { EXIT_FAIL })
}

fn repair(cli: &Cli, tools: &Tools, program: &Path, plan: &Path) -> Result<u8, Exit> {
    let text = read(program)?;
    let plan = Plan::from_json_str(&read(plan)?).map_err(config)?;
    let parsed = parse(&text).map_err(|e| Exit(EXIT_FAIL, format!("{}: {e}", program.display())))?;
    let run = RunConfig { budget_k: cli.budget_k, engineer: engineer(cli.seed), ..RunConfig::default() };
    let orch = Orchestrator::new(tools.toolchain(), run);
    match orch.repair_once(&plan, &parsed).map_err(|e| Exit(EXIT_FAIL, e.to_string()))? {
        Some((step, new_plan, new_program)) => {
            let printed = print(&new_program);
            if let Some(dir) = &cli.out_dir {
                let io = |e: std::io::Error| config(format!("{}: {e}", dir.display()));
                std::fs::create_dir_all(dir).map_err(io)?;
                std::fs::write(dir.join("program.tf"), &printed).map_err(io)?;
                std::fs::write(dir.join("plan.json"), canonical_json_pretty(&new_plan)).map_err(io)?;
            }
            emit(&json!({ "repaired": true, "step": step, "program": printed }));
            Ok(EXIT_OK)
        }
        None => {
            let report = run_all(&parsed, &tools.toolchain(), &plan.specs).map_err(config)?;
            let pass = report.all_pass();
            emit(&json!({ "repaired": false, "already_passing": pass, "counterexamples": report.counterexamples }));
            Ok(if pass { EXIT_OK } else { EXIT_FAIL })
        }
    }
}

fn eval(cli: &Cli, tools: &Tools, corpus: &Path, jobs: usize) -> Result<u8, Exit> {
    let tasks = load_corpus(corpus).map_err(config)?;
    let eval_tools = EvalTools { registry: &tools.registry, rules: &tools.rules, catalog: &tools.catalog };
    let sandbox = match tools.sandbox {
        SandboxKind::Stub => SandboxChoice::Stub,
        SandboxKind::External => SandboxChoice::External,
    };
    let cfg = EvalConfig { budget_k: cli.budget_k, seed: cli.seed, sandbox, jobs };
    let report = run_tasks(&tasks, &eval_tools, &cfg).map_err(config)?;
    let text = report.to_json();
    if let Some(dir) = &cli.out_dir {
        let io = |e: std::io::Error| config(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("eval_report.json"), format!("{text}\n")).map_err(io)?;
    }
    out(&(text + "\n"));
    let as_expected = report.tasks.iter().all(|t| t.success == (t.expected == ExpectedOutcome::Success));
    Ok(if as_expected { EXIT_OK } else { EXIT_FAIL })
}

fn fmt(program: &Path, write: bool, check: bool) -> Result<u8, Exit> {
    let text = read(program)?;
    let parsed = parse(&text).map_err(|e| Exit(EXIT_FAIL, format!("{}: {e}", program.display())))?;
    let out = print(&parsed);
    if check {
        return Ok(if out == text { EXIT_OK } else { EXIT_FAIL });
    }
    if write {
        if out != text {
            std::fs::write(program, &out).map_err(|e| config(format!("{}: {e}", program.display())))?;
        }
    } else {
        self::out(&out);
    }
    Ok(EXIT_OK)
}

fn registry_check(cli: &Cli, path: Option<&Path>) -> Result<u8, Exit> {
    let path = path.or(cli.registry.as_deref());
    let registry = match path {
        Some(p) => {
            let text = read(p)?;
            match SchemaRegistry::from_json_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    emit(&json!({ "valid": false, "error": e.to_string() }));
                    return Ok(EXIT_FAIL);
                }
            }
        }
        None => fixtures::registry(),
    };
    emit(&json!({
        "valid": true,
        "registry_version": registry.registry_version,
        "compatible_versions": registry.compatible_versions,
        "digest": registry.digest(),
        "kinds": registry.kinds().map(|k| format!("{}/{}@{}", k.provider, k.kind, k.version)).collect::<Vec<_>>(),
    }));
    Ok(EXIT_OK)
}

fn run(cli: &Cli) -> Result<u8, Exit> {
    if let Command::RegistryCheck { path } = &cli.command {
        return registry_check(cli, path.as_deref());
    }
    let mut tools = Tools::load(cli)?;
    match &cli.command {
        Command::Synth { task } => synth(cli, &mut tools, task),
        Command::Validate { program, constraints } => validate(&tools, program, constraints.as_deref()),
        Command::Repair { program, plan } => repair(cli, &tools, program, plan),
        Command::BundleVerify { bundle, program } => {
            let report = verify_bundle(bundle, program.as_deref(), &tools.registry, &tools.rules, &tools.catalog);
            emit(&report);
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Eval { corpus, jobs } => eval(cli, &tools, corpus, *jobs),
        Command::Fmt { program, write, check } => fmt(program, *write, *check),
        Command::RegistryCheck { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, msg)) => {
            eprintln!("iacforge: {msg}");
            ExitCode::from(code)
        }
    }
}
