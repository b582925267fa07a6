//! Motif store: verified, provider-versioned plan fragments retrieved by symbolic signature.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{canonical_json_pretty, sha256_hex};
use crate::iir::{canonical_text, validate_types, Effect, Plan, PlanEdge, TypedValue, META_PROVIDER_VERSION};
use crate::orchestrator::RunOutcome;
use crate::registry::SchemaRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("only successful runs may be stored")]
    NotASuccess,
    #[error("fragment is not closed: `{from}` depends on unselected `{to}`")]
    FragmentNotClosed { from: String, to: String },
    #[error("selected node `{0}` is not in the plan")]
    UnknownNode(String),
    #[error("fragment is empty")]
    EmptyFragment,
    #[error("fragment fails type validation: {0}")]
    InvalidFragment(String),
    #[error("motif store {path}: {message}")]
    Store { path: String, message: String },
}

/// Shape of one edge, in terms of endpoint kinds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeShape {
    pub edge: String,
    pub src_kind: String,
    pub dst_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeShape {
    pub kind: String,
    pub effects: BTreeSet<Effect>,
}

/// Canonical multiset of node shapes plus edge shapes; both vectors are sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub nodes: Vec<NodeShape>,
    pub edges: Vec<EdgeShape>,
}

impl Signature {
    pub fn of(plan: &Plan) -> Signature {
        let kind_of: BTreeMap<&str, &str> = plan.nodes.iter().map(|n| (n.id.as_str(), n.kind.as_str())).collect();
        let mut nodes: Vec<NodeShape> =
            plan.nodes.iter().map(|n| NodeShape { kind: n.kind.clone(), effects: n.effects.clone() }).collect();
        let mut edges: Vec<EdgeShape> = plan
            .edges
            .iter()
            .filter_map(|e| {
                let edge = match e {
                    PlanEdge::Depends { .. } => "depends",
                    PlanEdge::Connects { .. } => "connects",
                };
                Some(EdgeShape {
                    edge: edge.into(),
                    src_kind: (*kind_of.get(e.src())?).to_owned(),
                    dst_kind: (*kind_of.get(e.dst())?).to_owned(),
                })
            })
            .collect();
        nodes.sort();
        edges.sort();
        Signature { nodes, edges }
    }

    pub fn key(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("signature serializes").as_bytes())
    }
}

/// What retrieval matches against. Effects on query nodes are upper bounds: a motif
/// node matches a query node of the same kind whose effect set contains its own.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifQuery {
    pub nodes: Vec<NodeShape>,
    /// `None` leaves edge shapes unconstrained.
    pub edges: Option<Vec<EdgeShape>>,
}

impl MotifQuery {
    pub fn kinds(kinds: &[&str]) -> MotifQuery {
        MotifQuery {
            nodes: kinds.iter().map(|k| NodeShape { kind: (*k).to_owned(), effects: Effect::ALL.into() }).collect(),
            edges: None,
        }
    }

    pub fn from_plan(plan: &Plan) -> MotifQuery {
        let sig = Signature::of(plan);
        MotifQuery { nodes: sig.nodes, edges: Some(sig.edges) }
    }

    /// Size of the match when `sig` is a sub-multiset of the query.
    fn overlap(&self, sig: &Signature) -> Option<usize> {
        let mut free: Vec<Option<&NodeShape>> = self.nodes.iter().map(Some).collect();
        // Motif nodes with the most effects pick first so that a looser match
        // cannot steal the only query node able to host a stricter one.
        let mut wanted: Vec<&NodeShape> = sig.nodes.iter().collect();
        wanted.sort_by(|a, b| b.effects.len().cmp(&a.effects.len()).then_with(|| a.cmp(b)));
        for w in wanted {
            let slot = free
                .iter_mut()
                .filter(|q| q.is_some_and(|q| q.kind == w.kind && w.effects.is_subset(&q.effects)))
                .min_by_key(|q| q.map(|q| q.effects.len()))?;
            *slot = None;
        }
        if let Some(edges) = &self.edges {
            let mut pool: BTreeMap<&EdgeShape, usize> = BTreeMap::new();
            for e in edges {
                *pool.entry(e).or_default() += 1;
            }
            for e in &sig.edges {
                let n = pool.get_mut(e).filter(|n| **n > 0)?;
                *n -= 1;
            }
        }
        Some(sig.nodes.len() + sig.edges.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub id: String,
    pub fragment: Plan,
    pub registry_version: String,
    /// Pinned provider schema version per kind.
    pub provider_versions: BTreeMap<String, String>,
    pub effects: BTreeSet<Effect>,
    /// Constraint families the source run satisfied.
    pub constraint_tags: BTreeSet<String>,
    /// Digest of the evidence manifest of the source run.
    pub provenance: String,
    pub signature: Signature,
    /// Insertion order; larger is more recent.
    pub seq: u64,
}

impl Motif {
    pub fn signature_is_consistent(&self) -> bool {
        Signature::of(&self.fragment) == self.signature
    }
}

/// Ids of the plan nodes to lift into a motif.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FragmentSelector {
    All,
    Nodes(BTreeSet<String>),
}

impl FragmentSelector {
    pub fn nodes<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        FragmentSelector::Nodes(ids.into_iter().map(Into::into).collect())
    }
}

/// Append-only motif collection persisted as one JSON file.
#[derive(Debug, Clone, Default)]
pub struct MotifStore {
    path: Option<PathBuf>,
    motifs: Vec<Motif>,
    index: BTreeMap<String, Vec<usize>>,
}

impl MotifStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the store at `path`; a missing file is an empty store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| MemoryError::Store { path: path.display().to_string(), message };
        let motifs: Vec<Motif> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| err(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(err(e.to_string())),
        };
        let mut store = MotifStore { path: Some(path), ..Self::default() };
        for m in motifs {
            store.insert(m);
        }
        Ok(store)
    }

    fn insert(&mut self, m: Motif) {
        self.index.entry(m.signature.key()).or_default().push(self.motifs.len());
        self.motifs.push(m);
    }

    fn save(&self) -> Result<(), MemoryError> {
        let Some(path) = &self.path else { return Ok(()) };
        std::fs::write(path, canonical_json_pretty(&self.motifs))
            .map_err(|e| MemoryError::Store { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.motifs
    }

    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Motif> {
        self.motifs.iter().find(|m| m.id == id)
    }

    /// Cuts the selected sub-graph out of a successful run's plan and stores it.
    pub fn store_motif(
        &mut self,
        outcome: &RunOutcome,
        selector: &FragmentSelector,
        registry: &SchemaRegistry,
    ) -> Result<String, MemoryError> {
        let RunOutcome::Success(run) = outcome else { return Err(MemoryError::NotASuccess) };
        let fragment = cut_fragment(&run.plan, selector)?;
        let errors = validate_types(&fragment, registry).map_err(|e| MemoryError::InvalidFragment(e.to_string()))?;
        if let Some(e) = errors.first() {
            return Err(MemoryError::InvalidFragment(format!("{}.{}: {}", e.node, e.field, e.detail)));
        }
        let id = sha256_hex(format!("{}\n{}", registry.registry_version, canonical_text(&fragment, registry)).as_bytes());
        if self.motifs.iter().any(|m| m.id == id) {
            return Ok(id);
        }
        let provider_versions = fragment
            .nodes
            .iter()
            .filter_map(|n| n.meta.get(META_PROVIDER_VERSION).map(|v| (n.kind.clone(), v.clone())))
            .collect();
        let effects = fragment.nodes.iter().flat_map(|n| n.effects.iter().copied()).collect();
        let specs = &run.plan.specs;
        let mut constraint_tags: BTreeSet<String> = specs.required_effects.iter().map(|e| e.as_str().to_owned()).collect();
        if specs.residency.is_some() {
            constraint_tags.insert("residency".into());
        }
        if specs.budget_ceiling.is_some() {
            constraint_tags.insert("budget".into());
        }
        if specs.availability_zones_min.is_some() {
            constraint_tags.insert("availability_zones".into());
        }
        let motif = Motif {
            id: id.clone(),
            signature: Signature::of(&fragment),
            fragment,
            registry_version: registry.registry_version.clone(),
            provider_versions,
            effects,
            constraint_tags,
            provenance: run.bundle.manifest.manifest_digest.clone(),
            seq: self.motifs.iter().map(|m| m.seq + 1).max().unwrap_or(0),
        };
        self.insert(motif);
        self.save()?;
        Ok(id)
    }

    /// Motifs whose signature is contained in the query and whose registry version
    /// the active registry accepts, best overlap first, then most recent.
    pub fn retrieve_motifs(&self, query: &MotifQuery, registry: &SchemaRegistry) -> Vec<&Motif> {
        let mut hits: Vec<(usize, &Motif)> = self
            .index
            .values()
            .flatten()
            .map(|&i| &self.motifs[i])
            .filter(|m| registry.is_compatible_version(&m.registry_version))
            .filter_map(|m| query.overlap(&m.signature).map(|o| (o, m)))
            .collect();
        hits.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| b.1.seq.cmp(&a.1.seq)));
        hits.into_iter().map(|(_, m)| m).collect()
    }
}

fn cut_fragment(plan: &Plan, selector: &FragmentSelector) -> Result<Plan, MemoryError> {
    let selected: BTreeSet<String> = match selector {
        FragmentSelector::All => plan.nodes.iter().map(|n| n.id.clone()).collect(),
        FragmentSelector::Nodes(ids) => {
            if let Some(missing) = ids.iter().find(|id| plan.node(id).is_none()) {
                return Err(MemoryError::UnknownNode(missing.clone()));
            }
            ids.clone()
        }
    };
    if selected.is_empty() {
        return Err(MemoryError::EmptyFragment);
    }
    let mut fragment = Plan::default();
    for n in plan.nodes.iter().filter(|n| selected.contains(&n.id)) {
        for r in n.fields.values().flat_map(TypedValue::references) {
            if r.target != n.id && !selected.contains(&r.target) {
                return Err(MemoryError::FragmentNotClosed { from: n.id.clone(), to: r.target.clone() });
            }
        }
        fragment.nodes.push(n.clone());
    }
    for e in &plan.edges {
        match (selected.contains(e.src()), selected.contains(e.dst()), e) {
            (true, true, _) => fragment.edges.push(e.clone()),
            (true, false, PlanEdge::Depends { src, dst }) => {
                return Err(MemoryError::FragmentNotClosed { from: src.clone(), to: dst.clone() })
            }
            _ => {}
        }
    }
    Ok(fragment)
}
