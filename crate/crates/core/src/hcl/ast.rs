use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockType {
    Resource,
    Variable,
    Output,
    Module,
    Provider,
}

impl BlockType {
    pub const ALL: [BlockType; 5] =
        [BlockType::Resource, BlockType::Variable, BlockType::Output, BlockType::Module, BlockType::Provider];

    pub fn keyword(self) -> &'static str {
        match self {
            BlockType::Resource => "resource",
            BlockType::Variable => "variable",
            BlockType::Output => "output",
            BlockType::Module => "module",
            BlockType::Provider => "provider",
        }
    }

    pub fn label_count(self) -> usize {
        match self {
            BlockType::Resource => 2,
            _ => 1,
        }
    }
}

impl FromStr for BlockType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BlockType::ALL.into_iter().find(|b| b.keyword() == s).ok_or_else(|| format!("unknown block type `{s}`"))
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HclExpr {
    String(String),
    Int(i64),
    Decimal(Decimal),
    Bool(bool),
    List(Vec<HclExpr>),
    Map(Vec<(String, HclExpr)>),
    /// Dotted address: `kind.name.attr` or `var.name`.
    Reference(Vec<String>),
}

impl HclExpr {
    pub fn str(s: impl Into<String>) -> Self {
        HclExpr::String(s.into())
    }

    pub fn reference(path: &str) -> Self {
        HclExpr::Reference(path.split('.').map(str::to_owned).collect())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            HclExpr::String(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub value: HclExpr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedBlock {
    pub name: String,
    pub body: Body,
}

/// Attributes keep source order; nested blocks follow all attributes when printed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Body {
    pub attributes: Vec<Attribute>,
    pub blocks: Vec<NestedBlock>,
}

impl Body {
    pub fn get(&self, name: &str) -> Option<&HclExpr> {
        self.attributes.iter().find(|a| a.name == name).map(|a| &a.value)
    }

    pub fn has(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Replaces in place, or appends when absent.
    pub fn set(&mut self, name: &str, value: HclExpr) {
        match self.attributes.iter_mut().find(|a| a.name == name) {
            Some(a) => a.value = value,
            None => self.attributes.push(Attribute { name: name.to_owned(), value }),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<HclExpr> {
        let i = self.attributes.iter().position(|a| a.name == name)?;
        Some(self.attributes.remove(i).value)
    }

    pub fn rename(&mut self, old: &str, new: &str) -> bool {
        match self.attributes.iter_mut().find(|a| a.name == old) {
            Some(a) => {
                a.name = new.to_owned();
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub block_type: BlockType,
    pub labels: Vec<String>,
    pub body: Body,
}

impl Block {
    pub fn resource(kind: &str, name: &str) -> Self {
        Block { block_type: BlockType::Resource, labels: vec![kind.to_owned(), name.to_owned()], body: Body::default() }
    }

    /// `kind.name` for resources, `var.name` for variables, `<type>.<label>` otherwise.
    pub fn address(&self) -> String {
        match self.block_type {
            BlockType::Resource => self.labels.join("."),
            BlockType::Variable => format!("var.{}", self.labels.join(".")),
            other => format!("{}.{}", other.keyword(), self.labels.join(".")),
        }
    }

    pub fn is_resource(&self) -> bool {
        self.block_type == BlockType::Resource
    }

    pub fn resource_kind(&self) -> Option<&str> {
        self.is_resource().then(|| self.labels.first().map(String::as_str)).flatten()
    }

    pub fn resource_name(&self) -> Option<&str> {
        self.is_resource().then(|| self.labels.get(1).map(String::as_str)).flatten()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HclProgram {
    pub blocks: Vec<Block>,
}

impl HclProgram {
    pub fn resources(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.is_resource())
    }

    /// Resource block whose name label is `name` (names double as node ids).
    pub fn resource(&self, name: &str) -> Option<&Block> {
        self.resources().find(|b| b.resource_name() == Some(name))
    }

    pub fn resource_mut(&mut self, name: &str) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.resource_name() == Some(name))
    }

    pub fn resource_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.resource_name() == Some(name))
    }
}
