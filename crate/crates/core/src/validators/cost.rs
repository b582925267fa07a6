use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{effective_field, view, CeClass, Counterexample, Locus, ValidatorError};
use crate::digest::canonical_digest;
use crate::hcl::HclProgram;
use crate::iir::{ConstraintSet, TypedValue};
use crate::registry::SchemaRegistry;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PricedKind {
    pub provider: String,
    pub kind: String,
    /// Field whose value is the catalog sku.
    pub sku_field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PriceEntry {
    provider: String,
    region: String,
    sku: String,
    #[serde(with = "crate::digest::decimal_number")]
    unit_price: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CatalogFile {
    catalog_version: String,
    currency: String,
    priced_kinds: Vec<PricedKind>,
    prices: Vec<PriceEntry>,
}

/// Pinned monthly unit prices keyed by (provider, region, sku).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceCatalog {
    pub catalog_version: String,
    pub currency: String,
    pub priced_kinds: Vec<PricedKind>,
    prices: BTreeMap<(String, String, String), Decimal>,
    digest: String,
}

impl PriceCatalog {
    pub fn from_json_str(text: &str) -> Result<Self, ValidatorError> {
        let file: CatalogFile = serde_json::from_str(text).map_err(|e| ValidatorError::InvalidCatalog(e.to_string()))?;
        let mut prices = BTreeMap::new();
        for p in &file.prices {
            if p.unit_price.is_sign_negative() && !p.unit_price.is_zero() {
                return Err(ValidatorError::InvalidCatalog(format!("negative price for {}/{}/{}", p.provider, p.region, p.sku)));
            }
            let key = (p.provider.clone(), p.region.clone(), p.sku.clone());
            if prices.insert(key, p.unit_price).is_some() {
                return Err(ValidatorError::InvalidCatalog(format!("duplicate price for {}/{}/{}", p.provider, p.region, p.sku)));
            }
        }
        let mut canonical = file.clone();
        canonical.priced_kinds.sort();
        canonical.prices.sort_by(|a, b| (&a.provider, &a.region, &a.sku).cmp(&(&b.provider, &b.region, &b.sku)));
        let digest = canonical_digest(&canonical);
        Ok(Self {
            catalog_version: file.catalog_version,
            currency: file.currency,
            priced_kinds: file.priced_kinds,
            prices,
            digest,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ValidatorError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ValidatorError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    /// Digest of the canonical (sorted) catalog; independent of file layout.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn price(&self, provider: &str, region: &str, sku: &str) -> Option<Decimal> {
        self.prices.get(&(provider.to_owned(), region.to_owned(), sku.to_owned())).copied()
    }

    pub fn priced_kind(&self, provider: &str, kind: &str) -> Option<&PricedKind> {
        self.priced_kinds.iter().find(|p| p.provider == provider && p.kind == kind)
    }

    /// Skus priced in `(provider, region)`, ascending by price then name.
    pub fn skus_by_price(&self, provider: &str, region: &str) -> Vec<(String, Decimal)> {
        let mut v: Vec<(String, Decimal)> = self
            .prices
            .iter()
            .filter(|((p, r, _), _)| p == provider && r == region)
            .map(|((_, _, s), price)| (s.clone(), *price))
            .collect();
        v.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineItem {
    pub node: String,
    pub address: String,
    pub kind: String,
    pub region: String,
    pub sku: String,
    pub quantity: u32,
    #[serde(with = "crate::digest::decimal_number")]
    pub unit_price: Decimal,
    #[serde(with = "crate::digest::decimal_number")]
    pub amount: Decimal,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSheet {
    pub catalog_version: String,
    pub currency: String,
    pub items: Vec<LineItem>,
    #[serde(with = "crate::digest::decimal_number")]
    pub total: Decimal,
}

/// Monthly estimate: one line item per priced resource, summed exactly. A ceiling
/// overrun yields one cost counterexample; a catalog gap is an error.
pub fn estimate_cost(
    program: &HclProgram,
    catalog: &PriceCatalog,
    constraints: &ConstraintSet,
    registry: &SchemaRegistry,
) -> Result<(Decimal, CostSheet, Vec<Counterexample>), ValidatorError> {
    let plan = view(program, registry).map_err(|e| ValidatorError::InvalidCatalog(format!("program cannot be priced: {e}")))?;
    let mut items = Vec::new();
    for n in &plan.nodes {
        let provider = registry.kind(&n.kind).map(|k| k.provider.as_str()).unwrap_or(n.provider.as_str());
        let Some(pk) = catalog.priced_kind(provider, &n.kind) else { continue };
        let address = format!("{}.{}", n.kind, n.id);
        let sku = effective_field(&n.fields, &n.kind, &pk.sku_field, registry).and_then(TypedValue::as_str).unwrap_or_default();
        let unit_price = catalog.price(provider, &n.region, sku).ok_or_else(|| ValidatorError::MissingSku {
            provider: provider.to_owned(),
            region: n.region.clone(),
            sku: sku.to_owned(),
            address: address.clone(),
        })?;
        items.push(LineItem {
            node: n.id.clone(),
            address,
            kind: n.kind.clone(),
            region: n.region.clone(),
            sku: sku.to_owned(),
            quantity: 1,
            unit_price,
            amount: unit_price,
        });
    }
    items.sort_by(|a, b| a.address.cmp(&b.address));
    let total: Decimal = items.iter().map(|i| i.amount).sum();
    let sheet = CostSheet { catalog_version: catalog.catalog_version.clone(), currency: catalog.currency.clone(), items, total };
    let mut ces = Vec::new();
    if let Some(ceiling) = constraints.budget_ceiling {
        if total > ceiling {
            let mut top: Vec<&LineItem> = sheet.items.iter().collect();
            top.sort_by(|a, b| b.amount.cmp(&a.amount).then_with(|| a.address.cmp(&b.address)));
            top.truncate(3);
            ces.push(Counterexample::new(
                CeClass::Cost,
                Locus { field: "budget".into(), ..Locus::program() },
                "budget_exceeded",
                format!("estimate {total} {} exceeds ceiling {ceiling}", sheet.currency),
                json!({
                    "estimate": total.to_string(),
                    "ceiling": ceiling.to_string(),
                    "overrun": (total - ceiling).to_string(),
                    "top": top,
                }),
            ));
        }
    }
    Ok((total, sheet, ces))
}
