//! The bundled test registry, rule set and price catalog.

use crate::registry::SchemaRegistry;

pub const REGISTRY_JSON: &str = include_str!("../fixtures/registry.json");
pub const RULES_JSON: &str = include_str!("../fixtures/rules.json");
pub const CATALOG_JSON: &str = include_str!("../fixtures/catalog.json");

pub fn registry() -> SchemaRegistry {
    SchemaRegistry::from_json_str(REGISTRY_JSON).expect("bundled registry is valid")
}
