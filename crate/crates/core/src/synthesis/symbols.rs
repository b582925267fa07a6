use std::collections::BTreeMap;

use crate::hcl::{HclExpr, HclProgram};
use crate::iir::{Plan, Reference};

/// Node id ↔ HCL address. Resource names are the node ids, so the map is injective.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    kinds: BTreeMap<String, String>,
}

impl SymbolTable {
    pub fn from_plan(plan: &Plan) -> Self {
        Self { kinds: plan.nodes.iter().map(|n| (n.id.clone(), n.kind.clone())).collect() }
    }

    pub fn from_program(program: &HclProgram) -> Self {
        Self {
            kinds: program
                .resources()
                .filter_map(|b| Some((b.resource_name()?.to_owned(), b.resource_kind()?.to_owned())))
                .collect(),
        }
    }

    pub fn insert(&mut self, id: &str, kind: &str) {
        self.kinds.insert(id.to_owned(), kind.to_owned());
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind_of(&self, id: &str) -> Option<&str> {
        self.kinds.get(id).map(String::as_str)
    }

    /// `kind.id`
    pub fn address(&self, id: &str) -> Option<String> {
        self.kind_of(id).map(|k| format!("{k}.{id}"))
    }

    pub fn reference_expr(&self, r: &Reference) -> Option<HclExpr> {
        let kind = self.kind_of(&r.target)?;
        let mut parts = vec![kind.to_owned(), r.target.clone()];
        parts.extend(r.attr.iter().cloned());
        Some(HclExpr::Reference(parts))
    }

    /// Ids of the given kind (any kind when `None`), ascending.
    pub fn ids_of_kind<'a>(&'a self, kind: Option<&'a str>) -> impl Iterator<Item = &'a str> + 'a {
        self.kinds.iter().filter(move |(_, k)| kind.is_none_or(|want| want == k.as_str())).map(|(id, _)| id.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.kinds.iter().map(|(i, k)| (i.as_str(), k.as_str()))
    }
}
