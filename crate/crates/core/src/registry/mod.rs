//! Provider schemas: kinds, field declarations, regional availability.

mod harmonize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::iir::{Effect, TypedValue};

pub(crate) use harmonize::connection;
pub use harmonize::harmonize;

/// Attribute names a resource block reserves for itself; no schema field may use them.
/// Rule-entry attribute naming the peer of a connection.
pub const CONNECTION_SOURCE: &str = "source";

pub const RESERVED_ATTRIBUTES: [&str; 3] = ["region", "effects", "depends_on"];

/// Attributes every resource exposes for references besides its declared fields.
pub const COMPUTED_ATTRIBUTES: [&str; 2] = ["arn", "id"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("cannot read registry: {0}")]
    Io(String),
    #[error("registry parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate kind `{kind}` for provider `{provider}`")]
    DuplicateKind { provider: String, kind: String },
    #[error("invalid registry: {0}")]
    Invalid(String),
    #[error("node `{node}` has unknown kind `{kind}`")]
    UnknownKind { node: String, kind: String },
    #[error("kind `{kind}` is not available in region `{region}` (node `{node}`)")]
    RegionUnavailable { node: String, kind: String, region: String },
    #[error("node `{node}` is pinned to schema {pinned} but the registry provides {available}")]
    VersionConflict { node: String, pinned: String, available: String },
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueDomain {
    String,
    Int,
    Bool,
    Decimal,
    Map,
    /// Element domain, when constrained.
    List(Option<Box<ValueDomain>>),
    /// Target kind, `None` for any kind.
    Reference(Option<String>),
    /// Repeated nested blocks, each a map checked against these declarations.
    Blocks(Vec<FieldDecl>),
}

impl ValueDomain {
    fn parse(text: &str, nested: Option<Vec<FieldDecl>>) -> Result<Self, String> {
        let text = text.trim();
        Ok(match text {
            "string" => ValueDomain::String,
            "int" => ValueDomain::Int,
            "bool" => ValueDomain::Bool,
            "decimal" => ValueDomain::Decimal,
            "map" => ValueDomain::Map,
            "list" => ValueDomain::List(None),
            "blocks" => ValueDomain::Blocks(nested.ok_or("`blocks` field needs nested `fields`")?),
            _ => {
                if let Some(inner) = text.strip_prefix("list(").and_then(|t| t.strip_suffix(')')) {
                    ValueDomain::List(Some(Box::new(ValueDomain::parse(inner, None)?)))
                } else if let Some(kind) = text.strip_prefix("ref(").and_then(|t| t.strip_suffix(')')) {
                    if kind == "*" {
                        ValueDomain::Reference(None)
                    } else if kind.is_empty() {
                        return Err("empty reference kind".into());
                    } else {
                        ValueDomain::Reference(Some(kind.to_owned()))
                    }
                } else {
                    return Err(format!("unknown field type `{text}`"));
                }
            }
        })
    }

    /// Shallow shape check (no allowed-set, range or reference-target checks).
    pub fn admits_shape(&self, value: &TypedValue) -> bool {
        match (self, value) {
            (ValueDomain::String, TypedValue::String(_))
            | (ValueDomain::Int, TypedValue::Integer(_))
            | (ValueDomain::Bool, TypedValue::Bool(_))
            | (ValueDomain::Decimal, TypedValue::Decimal(_) | TypedValue::Integer(_))
            | (ValueDomain::Map, TypedValue::Map(_))
            | (ValueDomain::Reference(_), TypedValue::Reference(_)) => true,
            (ValueDomain::List(elem), TypedValue::List(items)) => match elem {
                Some(d) => items.iter().all(|i| d.admits_shape(i)),
                None => true,
            },
            (ValueDomain::Blocks(_), TypedValue::List(items)) => items.iter().all(|i| matches!(i, TypedValue::Map(_))),
            _ => false,
        }
    }
}

impl fmt::Display for ValueDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueDomain::String => f.write_str("string"),
            ValueDomain::Int => f.write_str("int"),
            ValueDomain::Bool => f.write_str("bool"),
            ValueDomain::Decimal => f.write_str("decimal"),
            ValueDomain::Map => f.write_str("map"),
            ValueDomain::List(None) => f.write_str("list"),
            ValueDomain::List(Some(d)) => write!(f, "list({d})"),
            ValueDomain::Reference(None) => f.write_str("ref(*)"),
            ValueDomain::Reference(Some(k)) => write!(f, "ref({k})"),
            ValueDomain::Blocks(_) => f.write_str("blocks"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub domain: ValueDomain,
    pub required: bool,
    pub default: Option<TypedValue>,
    pub allowed: Option<Vec<TypedValue>>,
    pub min: Option<Decimal>,
    pub max: Option<Decimal>,
}

impl FieldDecl {
    pub fn nested(&self) -> &[FieldDecl] {
        match &self.domain {
            ValueDomain::Blocks(decls) => decls,
            _ => &[],
        }
    }

    pub fn is_blocks(&self) -> bool {
        matches!(self.domain, ValueDomain::Blocks(_))
    }

    pub fn reference_kind(&self) -> Option<Option<&str>> {
        match &self.domain {
            ValueDomain::Reference(k) => Some(k.as_deref()),
            _ => None,
        }
    }

    pub fn within_range(&self, value: &TypedValue) -> bool {
        let n = match value {
            TypedValue::Integer(i) => Decimal::from(*i),
            TypedValue::Decimal(d) => *d,
            _ => return true,
        };
        self.min.is_none_or(|m| n >= m) && self.max.is_none_or(|m| n <= m)
    }

    pub fn is_allowed(&self, value: &TypedValue) -> bool {
        self.allowed.as_ref().is_none_or(|a| a.contains(value))
    }
}

/// How a kind realizes an effect as a concrete attribute value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectRealization {
    pub field: String,
    pub value: TypedValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KindSchema {
    pub provider: String,
    pub kind: String,
    pub version: String,
    pub regions: BTreeSet<String>,
    pub fields: Vec<FieldDecl>,
    pub effects: BTreeMap<Effect, EffectRealization>,
}

impl KindSchema {
    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn required_fields(&self) -> impl Iterator<Item = &FieldDecl> {
        self.fields.iter().filter(|f| f.required)
    }

    /// Declared fields, required ones first, each group in declaration order.
    pub fn emission_order(&self) -> Vec<&FieldDecl> {
        let mut out: Vec<&FieldDecl> = self.fields.iter().filter(|f| f.required && !f.is_blocks()).collect();
        out.extend(self.fields.iter().filter(|f| !f.required && !f.is_blocks()));
        out
    }

    pub fn block_fields(&self) -> impl Iterator<Item = &FieldDecl> {
        self.fields.iter().filter(|f| f.is_blocks())
    }

    /// Whether `attr` may follow a reference to a resource of this kind.
    pub fn has_attribute(&self, attr: &str) -> bool {
        COMPUTED_ATTRIBUTES.contains(&attr) || self.field(attr).is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaRegistry {
    pub registry_version: String,
    pub compatible_versions: Vec<String>,
    kinds: BTreeMap<(String, String), KindSchema>,
    digest: String,
}

// ---- JSON format -------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegistry {
    #[serde(default)]
    registry_version: String,
    #[serde(default)]
    compatible_versions: Vec<String>,
    kinds: Vec<RawKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKind {
    provider: String,
    kind: String,
    version: String,
    regions: Vec<String>,
    fields: Vec<RawField>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    effects: BTreeMap<Effect, RawRealization>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allowed: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fields: Option<Vec<RawField>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRealization {
    field: String,
    value: Value,
}

fn convert_field(raw: &RawField, owner: &str) -> Result<FieldDecl, RegistryError> {
    let invalid = |msg: String| RegistryError::Invalid(format!("{owner}.{}: {msg}", raw.name));
    let nested = match &raw.fields {
        Some(fs) => Some(convert_fields(fs, &format!("{owner}.{}", raw.name))?),
        None => None,
    };
    let domain = ValueDomain::parse(&raw.ty, nested).map_err(invalid)?;
    let value = |v: &Value| TypedValue::from_json(v).map_err(invalid);
    let default = raw.default.as_ref().map(value).transpose()?;
    let allowed = raw.allowed.as_ref().map(|vs| vs.iter().map(value).collect::<Result<Vec<_>, _>>()).transpose()?;
    let bound = |v: &Option<Value>| v.as_ref().map(|v| crate::digest::decimal_number::parse(v).map_err(invalid)).transpose();
    let decl = FieldDecl {
        name: raw.name.clone(),
        domain,
        required: raw.required,
        default,
        allowed,
        min: bound(&raw.min)?,
        max: bound(&raw.max)?,
    };
    if decl.required && decl.default.is_some() {
        return Err(invalid("required fields cannot declare a default".into()));
    }
    if matches!(&decl.allowed, Some(a) if a.is_empty()) {
        return Err(invalid("allowed set is empty".into()));
    }
    if let Some(d) = &decl.default {
        if !decl.domain.admits_shape(d) || !decl.is_allowed(d) || !decl.within_range(d) {
            return Err(invalid(format!("default {d} does not satisfy the declaration")));
        }
    }
    Ok(decl)
}

fn convert_fields(raw: &[RawField], owner: &str) -> Result<Vec<FieldDecl>, RegistryError> {
    let mut names = BTreeSet::new();
    raw.iter()
        .map(|f| {
            if !names.insert(f.name.as_str()) {
                return Err(RegistryError::Invalid(format!("{owner}: duplicate field `{}`", f.name)));
            }
            convert_field(f, owner)
        })
        .collect()
}

impl SchemaRegistry {
    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let raw: RawRegistry = serde_json::from_str(text).map_err(|e| RegistryError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut kinds = BTreeMap::new();
        for k in &raw.kinds {
            let key = (k.provider.clone(), k.kind.clone());
            if kinds.contains_key(&key) {
                return Err(RegistryError::DuplicateKind { provider: k.provider.clone(), kind: k.kind.clone() });
            }
            if !crate::iir::is_valid_id(&k.kind) {
                return Err(RegistryError::Invalid(format!("kind name `{}` is not an identifier", k.kind)));
            }
            if k.regions.is_empty() {
                return Err(RegistryError::Invalid(format!("kind `{}` lists no regions", k.kind)));
            }
            let fields = convert_fields(&k.fields, &k.kind)?;
            if let Some(f) = fields.iter().find(|f| RESERVED_ATTRIBUTES.contains(&f.name.as_str())) {
                return Err(RegistryError::Invalid(format!("kind `{}` declares reserved attribute `{}`", k.kind, f.name)));
            }
            let mut effects = BTreeMap::new();
            for (effect, r) in &k.effects {
                let decl = fields.iter().find(|f| f.name == r.field).ok_or_else(|| {
                    RegistryError::Invalid(format!("kind `{}`: effect {effect} realizes unknown field `{}`", k.kind, r.field))
                })?;
                let value = TypedValue::from_json(&r.value).map_err(RegistryError::Invalid)?;
                if !decl.domain.admits_shape(&value) || !decl.is_allowed(&value) {
                    return Err(RegistryError::Invalid(format!(
                        "kind `{}`: effect {effect} value {value} is not admissible for `{}`",
                        k.kind, r.field
                    )));
                }
                effects.insert(*effect, EffectRealization { field: r.field.clone(), value });
            }
            kinds.insert(
                key,
                KindSchema {
                    provider: k.provider.clone(),
                    kind: k.kind.clone(),
                    version: k.version.clone(),
                    regions: k.regions.iter().cloned().collect(),
                    fields,
                    effects,
                },
            );
        }
        // Kind names must resolve without a provider (resource labels carry only the kind).
        let mut by_name = BTreeSet::new();
        for (_, kind) in kinds.keys() {
            if !by_name.insert(kind.clone()) {
                return Err(RegistryError::Invalid(format!("kind `{kind}` is declared by several providers")));
            }
        }
        let mut sorted = raw.kinds.clone();
        sorted.sort_by(|a, b| (&a.provider, &a.kind).cmp(&(&b.provider, &b.kind)));
        let digest = crate::digest::canonical_digest(&RawRegistry {
            registry_version: raw.registry_version.clone(),
            compatible_versions: raw.compatible_versions.clone(),
            kinds: sorted,
        });
        Ok(SchemaRegistry { registry_version: raw.registry_version, compatible_versions: raw.compatible_versions, kinds, digest })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> impl Iterator<Item = &KindSchema> {
        self.kinds.values()
    }

    pub fn kind_for(&self, provider: &str, kind: &str) -> Option<&KindSchema> {
        self.kinds.get(&(provider.to_owned(), kind.to_owned()))
    }

    /// Looks a kind up by name alone.
    pub fn kind(&self, kind: &str) -> Option<&KindSchema> {
        self.kinds.values().find(|k| k.kind == kind)
    }

    pub fn providers(&self) -> BTreeSet<&str> {
        self.kinds.values().map(|k| k.provider.as_str()).collect()
    }

    /// Versions whose motifs and pins this registry accepts.
    pub fn is_compatible_version(&self, version: &str) -> bool {
        version == self.registry_version || self.compatible_versions.iter().any(|v| v == version)
    }
}

/// Reads a registry file.
pub fn load_registry(path: impl AsRef<Path>) -> Result<SchemaRegistry, RegistryError> {
    SchemaRegistry::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_registry_has_seven_kinds() {
        let r = crate::fixtures::registry();
        assert_eq!(r.len(), 7);
        let names: Vec<_> = r.kinds().map(|k| k.kind.as_str()).collect();
        for k in ["vpc", "subnet", "ec2", "rds", "s3_bucket", "security_group", "iam_role"] {
            assert!(names.contains(&k), "{k}");
        }
    }

    #[test]
    fn empty_registry() {
        let r = SchemaRegistry::from_json_str(r#"{"kinds": []}"#).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn duplicate_kind_rejected() {
        let k = r#"{"provider":"aws","kind":"ec2","version":"1","regions":["r"],"fields":[]}"#;
        let err = SchemaRegistry::from_json_str(&format!(r#"{{"kinds":[{k},{k}]}}"#)).unwrap_err();
        assert_eq!(err, RegistryError::DuplicateKind { provider: "aws".into(), kind: "ec2".into() });
    }

    #[test]
    fn parse_error_has_position() {
        let err = SchemaRegistry::from_json_str("{\n  \"kinds\": [,]\n}").unwrap_err();
        assert!(matches!(err, RegistryError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn required_with_default_rejected() {
        let text = r#"{"kinds":[{"provider":"p","kind":"k","version":"1","regions":["r"],
            "fields":[{"name":"f","type":"int","required":true,"default":1}]}]}"#;
        assert!(matches!(SchemaRegistry::from_json_str(text), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn reserved_attribute_rejected() {
        let text = r#"{"kinds":[{"provider":"p","kind":"k","version":"1","regions":["r"],
            "fields":[{"name":"region","type":"string"}]}]}"#;
        assert!(matches!(SchemaRegistry::from_json_str(text), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn digest_is_deterministic() {
        let a = crate::fixtures::registry();
        let b = SchemaRegistry::from_json_str(crate::fixtures::REGISTRY_JSON).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn type_strings_parse() {
        assert_eq!(ValueDomain::parse("list(string)", None).unwrap().to_string(), "list(string)");
        assert_eq!(ValueDomain::parse("ref(*)", None).unwrap(), ValueDomain::Reference(None));
        assert!(ValueDomain::parse("tuple", None).is_err());
    }
}
