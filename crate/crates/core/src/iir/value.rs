use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Field value carried by a resource node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypedValue {
    String(String),
    Integer(i64),
    Bool(bool),
    Decimal(Decimal),
    List(Vec<TypedValue>),
    Map(BTreeMap<String, TypedValue>),
    Reference(Reference),
}

/// Reference to another node's attribute: `<target>.<attr>...`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reference {
    pub target: String,
    pub attr: Vec<String>,
}

impl Reference {
    pub fn new(target: impl Into<String>, attr: &str) -> Self {
        Self { target: target.into(), attr: attr.split('.').filter(|s| !s.is_empty()).map(str::to_owned).collect() }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.target)?;
        for a in &self.attr {
            write!(f, ".{a}")?;
        }
        Ok(())
    }
}

impl FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('.');
        let target = parts.next().filter(|t| !t.is_empty()).ok_or("empty reference")?;
        let attr: Vec<String> = parts.map(str::to_owned).collect();
        if attr.iter().any(String::is_empty) {
            return Err(format!("malformed reference `{s}`"));
        }
        Ok(Self { target: target.to_owned(), attr })
    }
}

/// Renders a decimal so that it always reads back as a decimal (never as an integer).
pub fn decimal_text(d: &Decimal) -> String {
    let s = d.to_string();
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

impl TypedValue {
    pub fn str(s: impl Into<String>) -> Self {
        TypedValue::String(s.into())
    }

    pub fn reference(target: impl Into<String>, attr: &str) -> Self {
        TypedValue::Reference(Reference::new(target, attr))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            TypedValue::String(s) => Some(s),
            _ => None,
        }
    }

    /// Short name of the value's shape, used in diagnostics.
    pub fn type_name(&self) -> &'static str {
        match self {
            TypedValue::String(_) => "string",
            TypedValue::Integer(_) => "int",
            TypedValue::Bool(_) => "bool",
            TypedValue::Decimal(_) => "decimal",
            TypedValue::List(_) => "list",
            TypedValue::Map(_) => "map",
            TypedValue::Reference(_) => "reference",
        }
    }

    /// All references contained in the value, depth first.
    pub fn references(&self) -> Vec<&Reference> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a Reference>) {
        match self {
            TypedValue::Reference(r) => out.push(r),
            TypedValue::List(items) => items.iter().for_each(|i| i.collect_refs(out)),
            TypedValue::Map(m) => m.values().for_each(|v| v.collect_refs(out)),
            _ => {}
        }
    }

    pub fn map_refs(&self, f: &impl Fn(&Reference) -> Reference) -> TypedValue {
        match self {
            TypedValue::Reference(r) => TypedValue::Reference(f(r)),
            TypedValue::List(items) => TypedValue::List(items.iter().map(|i| i.map_refs(f)).collect()),
            TypedValue::Map(m) => TypedValue::Map(m.iter().map(|(k, v)| (k.clone(), v.map_refs(f))).collect()),
            other => other.clone(),
        }
    }

    /// Strips trailing decimal zeros recursively; integral decimals become integers,
    /// since both print and parse as the same numeral.
    pub fn normalized(&self) -> TypedValue {
        match self {
            TypedValue::Decimal(d) => {
                let d = d.normalize();
                match i64::try_from(d) {
                    Ok(i) if d.scale() == 0 => TypedValue::Integer(i),
                    _ => TypedValue::Decimal(d),
                }
            }
            TypedValue::List(items) => TypedValue::List(items.iter().map(Self::normalized).collect()),
            TypedValue::Map(m) => TypedValue::Map(m.iter().map(|(k, v)| (k.clone(), v.normalized())).collect()),
            other => other.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            TypedValue::String(s) => Value::String(s.clone()),
            TypedValue::Integer(i) => Value::from(*i),
            TypedValue::Bool(b) => Value::Bool(*b),
            TypedValue::Decimal(d) => {
                Value::Number(serde_json::Number::from_str(&decimal_text(d)).expect("decimal renders as number"))
            }
            TypedValue::List(items) => Value::Array(items.iter().map(Self::to_json).collect()),
            TypedValue::Map(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            TypedValue::Reference(r) => {
                let mut obj = serde_json::Map::new();
                obj.insert("$ref".into(), Value::String(r.to_string()));
                Value::Object(obj)
            }
        }
    }

    pub fn from_json(value: &Value) -> Result<TypedValue, String> {
        Ok(match value {
            Value::String(s) => TypedValue::String(s.clone()),
            Value::Bool(b) => TypedValue::Bool(*b),
            Value::Number(n) => {
                let text = n.to_string();
                if text.contains(['.', 'e', 'E']) {
                    TypedValue::Decimal(crate::digest::decimal_number::parse_text(&text)?)
                } else {
                    TypedValue::Integer(text.parse().map_err(|_| format!("integer out of range: {text}"))?)
                }
            }
            Value::Array(items) => TypedValue::List(items.iter().map(Self::from_json).collect::<Result<_, _>>()?),
            Value::Object(obj) => {
                if let Some(r) = obj.get("$ref") {
                    if obj.len() != 1 {
                        return Err("`$ref` object must have exactly one key".into());
                    }
                    let text = r.as_str().ok_or("`$ref` must be a string")?;
                    let reference: Reference = text.parse()?;
                    TypedValue::Reference(reference)
                } else {
                    TypedValue::Map(obj.iter().map(|(k, v)| Ok((k.clone(), Self::from_json(v)?))).collect::<Result<_, String>>()?)
                }
            }
            Value::Null => return Err("null is not a field value".into()),
        })
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypedValue::String(s) => write!(f, "{s:?}"),
            TypedValue::Integer(i) => write!(f, "{i}"),
            TypedValue::Bool(b) => write!(f, "{b}"),
            TypedValue::Decimal(d) => f.write_str(&decimal_text(d)),
            TypedValue::Reference(r) => write!(f, "{r}"),
            other => f.write_str(&other.to_json().to_string()),
        }
    }
}

impl Serialize for TypedValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TypedValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        TypedValue::from_json(&value).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_distinguishes_integers_and_decimals() {
        let v: TypedValue = serde_json::from_str("[3, 3.0, 7.50]").unwrap();
        let TypedValue::List(items) = v else { panic!() };
        assert_eq!(items[0], TypedValue::Integer(3));
        assert!(matches!(items[1], TypedValue::Decimal(_)));
        assert_eq!(serde_json::to_string(&items[2]).unwrap(), "7.50");
        assert_eq!(items[1].normalized(), TypedValue::Integer(3));
        assert_eq!(serde_json::to_string(&items[2].normalized()).unwrap(), "7.5");
    }

    #[test]
    fn reference_encoding() {
        let v: TypedValue = serde_json::from_str(r#"{"$ref": "web.id"}"#).unwrap();
        assert_eq!(v, TypedValue::reference("web", "id"));
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"$ref":"web.id"}"#);
        assert!(serde_json::from_str::<TypedValue>(r#"{"$ref": "web..id"}"#).is_err());
    }
}
