use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FsmState, OrchestratorError};
use crate::digest::canonical_digest;
use crate::registry::SchemaRegistry;
use crate::repair::{mapping_table_digest, MAPPING_TABLE_VERSION};
use crate::validators::{rules_digest, PolicyRule, PriceCatalog, SandboxAdapter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Plan,
    Program,
    Report,
    Edit,
    Trace,
    Log,
    Bundle,
}

/// Versions and content digests of everything that can change a verdict.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainDigests {
    pub registry: String,
    pub registry_version: String,
    pub catalog: String,
    pub catalog_version: String,
    pub rules: String,
    pub mapping_table: String,
    pub mapping_version: String,
    pub sandbox: String,
}

impl ToolchainDigests {
    pub fn compute(
        registry: &SchemaRegistry,
        rules: &[PolicyRule],
        catalog: &PriceCatalog,
        sandbox: Option<&dyn SandboxAdapter>,
    ) -> Self {
        ToolchainDigests {
            registry: registry.digest().to_owned(),
            registry_version: registry.registry_version.clone(),
            catalog: catalog.digest().to_owned(),
            catalog_version: catalog.catalog_version.clone(),
            rules: rules_digest(rules),
            mapping_table: mapping_table_digest(),
            mapping_version: MAPPING_TABLE_VERSION.to_owned(),
            sandbox: sandbox.map(|s| format!("{}:{}", s.name(), s.config_digest())).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlackboardEntry {
    pub seq: u64,
    pub state: FsmState,
    pub kind: ArtifactKind,
    /// Distinguishes artifacts of one kind, e.g. `policy_traces` vs `roundtrip`.
    pub label: String,
    /// Canonical digest of `payload`.
    pub digest: String,
    pub toolchain: ToolchainDigests,
    pub timestamp: String,
    pub payload: Value,
}

/// Append-only, digest-stamped artifact log, mirrored to `run.jsonl` when a path is set.
#[derive(Debug)]
pub struct Blackboard {
    toolchain: ToolchainDigests,
    entries: Vec<BlackboardEntry>,
    sink: Option<(PathBuf, File)>,
}

impl Blackboard {
    pub fn in_memory(toolchain: ToolchainDigests) -> Self {
        Blackboard { toolchain, entries: Vec::new(), sink: None }
    }

    /// Creates (truncating) the JSON-lines file at `path`.
    pub fn create(path: impl AsRef<Path>, toolchain: ToolchainDigests) -> Result<Self, OrchestratorError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        Ok(Blackboard { toolchain, entries: Vec::new(), sink: Some((path, file)) })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: BlackboardEntry =
                serde_json::from_str(line).map_err(|e| OrchestratorError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        let toolchain = entries.first().map(|e| e.toolchain.clone()).unwrap_or_default();
        Ok(Blackboard { toolchain, entries, sink: None })
    }

    pub fn toolchain(&self) -> &ToolchainDigests {
        &self.toolchain
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn append(&mut self, state: FsmState, kind: ArtifactKind, label: &str, payload: Value) -> Result<u64, OrchestratorError> {
        let seq = self.entries.last().map_or(0, |e| e.seq + 1);
        let entry = BlackboardEntry {
            seq,
            state,
            kind,
            label: label.to_owned(),
            digest: canonical_digest(&payload),
            toolchain: self.toolchain.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            payload,
        };
        if let Some((path, file)) = &mut self.sink {
            let line = serde_json::to_string(&entry).expect("entries serialize");
            writeln!(file, "{line}").map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        }
        self.entries.push(entry);
        Ok(seq)
    }

    pub fn entries(&self) -> &[BlackboardEntry] {
        &self.entries
    }

    pub fn of<'a>(&'a self, kind: ArtifactKind, label: &'a str) -> impl DoubleEndedIterator<Item = &'a BlackboardEntry> + 'a {
        self.entries.iter().filter(move |e| e.kind == kind && e.label == label)
    }

    pub fn latest(&self, kind: ArtifactKind, label: &str) -> Option<&BlackboardEntry> {
        self.entries.iter().rev().find(|e| e.kind == kind && e.label == label)
    }

    /// Sequence numbers strictly increase and every digest matches its payload.
    pub fn verify(&self) -> Result<(), String> {
        for w in self.entries.windows(2) {
            if w[1].seq <= w[0].seq {
                return Err(format!("sequence {} follows {}", w[1].seq, w[0].seq));
            }
        }
        match self.entries.iter().find(|e| canonical_digest(&e.payload) != e.digest) {
            Some(e) => Err(format!("entry {} has a stale digest", e.seq)),
            None => Ok(()),
        }
    }

    /// Recorded FSM transitions, in order.
    pub fn transitions(&self) -> Vec<(FsmState, FsmState)> {
        self.of(ArtifactKind::Log, "transition")
            .filter_map(|e| serde_json::from_value::<(FsmState, FsmState)>(e.payload.clone()).ok())
            .collect()
    }
}
