use std::path::{Path, PathBuf};
use std::process::Command;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{effective_field, view, CeClass, Counterexample, Locus, ValidatorError};
use crate::digest::{canonical_digest, sha256_hex};
use crate::hcl::{print, HclProgram};
use crate::registry::SchemaRegistry;

/// Environment variable naming the external plan/apply binary.
pub const TF_BIN_ENV: &str = "IACFORGE_TF_BIN";

const EXCERPT_LIMIT: usize = 2000;

/// Diagnostic table for external tool output: first matching pattern wins per line.
/// Capture group 1, when present, is the offending value.
pub const DIAGNOSTIC_PATTERNS: &[(&str, &str)] = &[
    ("unsupported_sku", r#"(?i)(?:invalid|unsupported) (?:instance type|instance class|sku)[^"\n]*"?([A-Za-z0-9_.\-]+)?"#),
    (
        "region_unavailable",
        r#"(?i)(?:region|availability zone)\s+"?([a-z0-9\-]+)"?\s+(?:is )?(?:not (?:available|supported|enabled)|unavailable)"#,
    ),
    ("unsupported_argument", r#"An argument named "([^"]+)" is not expected here"#),
    ("missing_argument", r#"The argument "([^"]+)" is required"#),
    ("dangling_reference", r#"Reference to undeclared resource"#),
    ("provider_error", r#"^(?:│\s*)?Error: (.+)$"#),
];

/// One run of a sandbox: verdict, raw log and run-class counterexamples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxRun {
    pub ok: bool,
    pub log: String,
    pub counterexamples: Vec<Counterexample>,
}

pub trait SandboxAdapter {
    fn name(&self) -> &str;

    /// Content digest of the adapter configuration (e.g. its fault manifest).
    fn config_digest(&self) -> String;

    fn run(&self, program_text: &str, registry: &SchemaRegistry) -> Result<SandboxRun, ValidatorError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultMatch {
    /// Resource kind, or `*` / absent for any kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Field name; `region` selects the node's region.
    pub field: String,
    /// Exact value to match; absent matches any present value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    #[serde(rename = "match")]
    pub selector: FaultMatch,
    pub code: String,
    pub message: String,
}

/// Deterministic sandbox: a deploy fails exactly where a manifest fault matches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StubSandbox {
    pub faults: Vec<Fault>,
}

impl StubSandbox {
    pub fn new(faults: Vec<Fault>) -> Self {
        Self { faults }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ValidatorError> {
        let faults: Vec<Fault> = serde_json::from_str(text).map_err(|e| ValidatorError::InvalidManifest(e.to_string()))?;
        if let Some(f) = faults.iter().find(|f| f.code.is_empty() || f.selector.field.is_empty()) {
            return Err(ValidatorError::InvalidManifest(format!("fault `{}` needs a code and a field", f.message)));
        }
        Ok(Self { faults })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ValidatorError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ValidatorError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }
}

impl SandboxAdapter for StubSandbox {
    fn name(&self) -> &str {
        "stub"
    }

    fn config_digest(&self) -> String {
        canonical_digest(&self.faults)
    }

    fn run(&self, program_text: &str, registry: &SchemaRegistry) -> Result<SandboxRun, ValidatorError> {
        let mut log = format!("stub sandbox: program sha256 {}\n", sha256_hex(program_text.as_bytes()));
        let plan = crate::hcl::parse(program_text)
            .map_err(|e| e.to_string())
            .and_then(|p| view(&p, registry).map_err(|e| e.to_string()));
        let plan = match plan {
            Ok(p) => p,
            Err(e) => {
                log.push_str(&format!("init: error: {e}\n"));
                let ce = Counterexample::new(
                    CeClass::Run,
                    Locus::program(),
                    "init_failed",
                    e.clone(),
                    json!({ "code": "init_failed", "log": e }),
                );
                return Ok(SandboxRun { ok: false, log, counterexamples: vec![ce] });
            }
        };
        log.push_str("init: ok\n");
        let mut ces = Vec::new();
        for n in &plan.nodes {
            for f in &self.faults {
                let sel = &f.selector;
                if sel.kind.as_deref().is_some_and(|k| k != "*" && k != n.kind) {
                    continue;
                }
                let observed = if sel.field == "region" {
                    Some(Value::String(n.region.clone()))
                } else {
                    effective_field(&n.fields, &n.kind, &sel.field, registry).map(|v| v.to_json())
                };
                let Some(observed) = observed else { continue };
                if sel.value.as_ref().is_some_and(|v| *v != observed) {
                    continue;
                }
                let line = format!("plan: error [{}] {}.{}: {}", f.code, n.kind, n.id, f.message);
                log.push_str(&line);
                log.push('\n');
                ces.push(Counterexample::new(
                    CeClass::Run,
                    Locus::node(&n.id, &n.kind, &sel.field),
                    &f.code,
                    f.message.clone(),
                    json!({ "code": f.code, "value": observed, "log": line }),
                ));
            }
        }
        ces.sort();
        ces.dedup();
        log.push_str(if ces.is_empty() { "plan: ok\n" } else { "plan: failed\n" });
        Ok(SandboxRun { ok: ces.is_empty(), log, counterexamples: ces })
    }
}

/// Runs `<bin> init` and `<bin> plan` against the printed program in a fresh workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalToolSandbox {
    pub binary: Option<PathBuf>,
}

impl ExternalToolSandbox {
    pub fn new(binary: Option<PathBuf>) -> Self {
        Self { binary }
    }

    /// Binary from `IACFORGE_TF_BIN`, if set and non-empty.
    pub fn from_env() -> Self {
        Self { binary: std::env::var_os(TF_BIN_ENV).filter(|v| !v.is_empty()).map(PathBuf::from) }
    }
}

impl SandboxAdapter for ExternalToolSandbox {
    fn name(&self) -> &str {
        "external"
    }

    fn config_digest(&self) -> String {
        sha256_hex(self.binary.as_ref().map(|b| b.display().to_string()).unwrap_or_default().as_bytes())
    }

    fn run(&self, program_text: &str, _registry: &SchemaRegistry) -> Result<SandboxRun, ValidatorError> {
        let bin = self.binary.as_ref().ok_or_else(|| ValidatorError::SandboxUnavailable(format!("{TF_BIN_ENV} is not set")))?;
        let dir = tempfile::tempdir().map_err(|e| ValidatorError::Io(e.to_string()))?;
        std::fs::write(dir.path().join("main.tf"), program_text).map_err(|e| ValidatorError::Io(e.to_string()))?;
        let mut log = String::new();
        for args in [&["init", "-input=false", "-no-color"][..], &["plan", "-input=false", "-no-color"][..]] {
            let out = Command::new(bin)
                .args(args)
                .current_dir(dir.path())
                .output()
                .map_err(|e| ValidatorError::SandboxUnavailable(format!("{}: {e}", bin.display())))?;
            log.push_str(&String::from_utf8_lossy(&out.stdout));
            log.push_str(&String::from_utf8_lossy(&out.stderr));
            if !out.status.success() {
                let mut ces = parse_diagnostics(&log);
                if ces.is_empty() {
                    let code = format!("{}_failed", args[0]);
                    ces.push(Counterexample::new(
                        CeClass::Run,
                        Locus::program(),
                        &code,
                        format!("`{}` exited with {}", args[0], out.status),
                        json!({ "code": code, "log": excerpt(&log) }),
                    ));
                }
                return Ok(SandboxRun { ok: false, log, counterexamples: ces });
            }
        }
        Ok(SandboxRun { ok: true, log, counterexamples: Vec::new() })
    }
}

fn excerpt(log: &str) -> String {
    match log.char_indices().nth(EXCERPT_LIMIT) {
        Some((i, _)) => format!("{}…", &log[..i]),
        None => log.to_owned(),
    }
}

/// Classifies tool output with the diagnostic table. The locus comes from the nearest
/// following `with <kind>.<name>` line, as printed by the tool.
pub(crate) fn parse_diagnostics(log: &str) -> Vec<Counterexample> {
    let table: Vec<(&str, Regex)> =
        DIAGNOSTIC_PATTERNS.iter().map(|(c, p)| (*c, Regex::new(&format!("(?m){p}")).expect("static pattern"))).collect();
    let with = Regex::new(r"with ([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)").expect("static pattern");
    let lines: Vec<&str> = log.lines().collect();
    let mut ces = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let Some((code, caps)) = table.iter().find_map(|(c, re)| re.captures(line).map(|cap| (*c, cap))) else { continue };
        let locus = lines[i..lines.len().min(i + 6)]
            .iter()
            .find_map(|l| with.captures(l))
            .map(|c| Locus::node(&c[2], &c[1], ""))
            .unwrap_or_default();
        let value = caps.get(1).map(|m| m.as_str().to_owned());
        ces.push(Counterexample::new(
            CeClass::Run,
            locus,
            code,
            line.trim().to_owned(),
            json!({ "code": code, "value": value, "log": excerpt(line.trim()) }),
        ));
    }
    ces.sort();
    ces.dedup();
    ces
}

/// Prints the program into the sandbox and collects its verdict.
pub fn deploy_test(
    program: &HclProgram,
    sandbox: &dyn SandboxAdapter,
    registry: &SchemaRegistry,
) -> Result<SandboxRun, ValidatorError> {
    sandbox.run(&print(program), registry)
}
