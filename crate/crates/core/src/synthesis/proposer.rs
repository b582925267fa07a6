use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

use super::automata::Acceptor;
use super::skeleton::Hole;
use super::symbols::SymbolTable;
use crate::hcl::{print_expr, HclExpr};
use crate::iir::TypedValue;
use crate::registry::{ValueDomain, COMPUTED_ATTRIBUTES};

/// Values a hole may take, as offered to a proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueSet {
    Finite(Vec<HclExpr>),
    Strings,
    Integers { min: Option<i64>, max: Option<i64> },
    Decimals { min: Option<Decimal>, max: Option<Decimal> },
    Maps,
    Lists,
}

impl ValueSet {
    /// The value-level view of a token acceptor. References offer `kind.id.id` for
    /// every admissible target other than `owner`.
    pub fn from_acceptor(acc: &Acceptor, hole: &Hole, symbols: &SymbolTable) -> ValueSet {
        match acc {
            Acceptor::Str(Some(values)) => {
                let mut v: Vec<HclExpr> = values.iter().map(|s| HclExpr::String(s.clone())).collect();
                sort_by_text(&mut v);
                ValueSet::Finite(v)
            }
            Acceptor::Str(None) => ValueSet::Strings,
            Acceptor::Int { min, max } => ValueSet::Integers { min: *min, max: *max },
            Acceptor::Number => ValueSet::Decimals { min: hole.decl.min, max: hole.decl.max },
            Acceptor::Bool => ValueSet::Finite(vec![HclExpr::Bool(false), HclExpr::Bool(true)]),
            Acceptor::Ref { kind, .. } => {
                let mut v: Vec<HclExpr> = symbols
                    .entries()
                    .filter(|(id, k)| *id != hole.node && kind.as_deref().is_none_or(|w| w == *k))
                    .map(|(id, k)| HclExpr::Reference(vec![k.to_owned(), id.to_owned(), COMPUTED_ATTRIBUTES[1].to_owned()]))
                    .collect();
                sort_by_text(&mut v);
                ValueSet::Finite(v)
            }
            Acceptor::Free { .. } => match hole.decl.domain {
                ValueDomain::Map => ValueSet::Maps,
                _ => ValueSet::Lists,
            },
        }
    }

    pub fn contains(&self, v: &HclExpr) -> bool {
        match (self, v) {
            (ValueSet::Finite(vs), v) => vs.contains(v),
            (ValueSet::Strings, HclExpr::String(_)) => true,
            (ValueSet::Integers { min, max }, HclExpr::Int(i)) => min.is_none_or(|m| *i >= m) && max.is_none_or(|m| *i <= m),
            (ValueSet::Decimals { min, max }, HclExpr::Int(_) | HclExpr::Decimal(_)) => {
                let d = match v {
                    HclExpr::Int(i) => Decimal::from(*i),
                    HclExpr::Decimal(d) => *d,
                    _ => unreachable!(),
                };
                min.is_none_or(|m| d >= m) && max.is_none_or(|m| d <= m)
            }
            (ValueSet::Maps, HclExpr::Map(_)) | (ValueSet::Lists, HclExpr::List(_)) => true,
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ValueSet::Finite(v) if v.is_empty())
    }
}

fn sort_by_text(v: &mut [HclExpr]) {
    v.sort_by_cached_key(print_expr);
}

/// What a proposer is asked to fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleRequest {
    pub hole: Hole,
    pub admissible: ValueSet,
    /// `kind.name` of the owning resource.
    pub address: String,
    /// 0-based attempt number for this hole.
    pub attempt: usize,
}

/// Chooses one value per hole. Admissibility is enforced by the decoder, not trusted.
pub trait Proposer {
    fn name(&self) -> &str;
    fn propose(&mut self, request: &HoleRequest) -> Result<HclExpr, String>;
}

/// Lexicographically smallest admissible value; numbers take the declared default, else the minimum.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicStub;

impl DeterministicStub {
    pub fn choose(hole: &Hole, set: &ValueSet) -> Option<HclExpr> {
        let default = hole.decl.default.as_ref();
        Some(match set {
            ValueSet::Finite(v) => v.iter().min_by_key(|e| print_expr(e))?.clone(),
            ValueSet::Strings => HclExpr::String(default.and_then(|d| d.as_str()).unwrap_or_default().to_owned()),
            ValueSet::Integers { min, max } => {
                let d = default
                    .and_then(|d| match d {
                        TypedValue::Integer(i) => Some(*i),
                        _ => None,
                    })
                    .filter(|d| set.contains(&HclExpr::Int(*d)));
                HclExpr::Int(d.or(*min).unwrap_or_else(|| max.map_or(0, |m| m.min(0))))
            }
            ValueSet::Decimals { min, max } => {
                let d = default
                    .and_then(|d| match d {
                        TypedValue::Decimal(d) => Some(*d),
                        TypedValue::Integer(i) => Some(Decimal::from(*i)),
                        _ => None,
                    })
                    .filter(|d| set.contains(&HclExpr::Decimal(*d)));
                let v = d.or(*min).unwrap_or_else(|| max.map_or(Decimal::ZERO, |m| m.min(Decimal::ZERO)));
                number_expr(v)
            }
            ValueSet::Maps => HclExpr::Map(Vec::new()),
            ValueSet::Lists => HclExpr::List(Vec::new()),
        })
    }
}

/// Whole decimals print without a fraction and lex back as integers.
fn number_expr(d: Decimal) -> HclExpr {
    let d = d.normalize();
    if d.scale() == 0 {
        if let Ok(i) = i64::try_from(d) {
            return HclExpr::Int(i);
        }
    }
    HclExpr::Decimal(d)
}

impl Proposer for DeterministicStub {
    fn name(&self) -> &str {
        "deterministic-stub"
    }

    fn propose(&mut self, request: &HoleRequest) -> Result<HclExpr, String> {
        Self::choose(&request.hole, &request.admissible).ok_or_else(|| "empty admissible set".to_owned())
    }
}

/// Seeded random proposer for fuzzing; with probability `error_rate` it returns an
/// inadmissible value to exercise the decoder's retry path.
#[derive(Debug, Clone)]
pub struct RandomizedStub {
    rng: ChaCha8Rng,
    pub error_rate: f64,
}

const STRING_ALPHABET: &[char] =
    &['a', 'b', 'z', '0', '9', '-', '_', '.', '/', ' ', '"', '\\', '\n', '\t', '$', '{', '}', '#', 'é'];

impl RandomizedStub {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), error_rate: 0.0 }
    }

    pub fn with_error_rate(mut self, rate: f64) -> Self {
        self.error_rate = rate;
        self
    }

    fn string(&mut self) -> String {
        let len = self.rng.gen_range(0..8);
        (0..len).map(|_| STRING_ALPHABET[self.rng.gen_range(0..STRING_ALPHABET.len())]).collect()
    }

    fn key(&mut self) -> String {
        match self.rng.gen_range(0..4) {
            0 => ["true", "false", "a-b", "1x"][self.rng.gen_range(0..4)].to_owned(),
            1 => self.string(),
            _ => format!("k{}", self.rng.gen_range(0..100)),
        }
    }

    fn scalar(&mut self) -> HclExpr {
        match self.rng.gen_range(0..4) {
            0 => HclExpr::String(self.string()),
            1 => HclExpr::Int(self.rng.gen_range(-1000..1000)),
            2 => number_expr(Decimal::new(self.rng.gen_range(-100_000..100_000), self.rng.gen_range(0..4))),
            _ => HclExpr::Bool(self.rng.gen()),
        }
    }

    fn admissible(&mut self, set: &ValueSet) -> Option<HclExpr> {
        Some(match set {
            ValueSet::Finite(v) if v.is_empty() => return None,
            ValueSet::Finite(v) => v[self.rng.gen_range(0..v.len())].clone(),
            ValueSet::Strings => HclExpr::String(self.string()),
            ValueSet::Integers { min, max } => {
                let lo = min.unwrap_or(-1_000_000);
                let hi = max.unwrap_or(1_000_000).max(lo);
                HclExpr::Int(self.rng.gen_range(lo..=hi))
            }
            ValueSet::Decimals { min, max } => {
                let lo = min.unwrap_or(Decimal::from(-10_000));
                let hi = max.unwrap_or(Decimal::from(10_000)).max(lo);
                let steps = ((hi - lo) * Decimal::from(100)).trunc();
                let steps = i64::try_from(steps).unwrap_or(i64::MAX).max(0);
                number_expr(lo + Decimal::new(self.rng.gen_range(0..=steps), 2))
            }
            ValueSet::Maps => {
                let n = self.rng.gen_range(0..4);
                let mut entries: Vec<(String, HclExpr)> = Vec::new();
                for _ in 0..n {
                    let k = self.key();
                    if entries.iter().all(|(e, _)| *e != k) {
                        let v = self.scalar();
                        entries.push((k, v));
                    }
                }
                HclExpr::Map(entries)
            }
            ValueSet::Lists => {
                let n = self.rng.gen_range(0..4);
                HclExpr::List((0..n).map(|_| self.scalar()).collect())
            }
        })
    }

    fn inadmissible(&mut self, set: &ValueSet) -> HclExpr {
        match set {
            ValueSet::Strings | ValueSet::Maps | ValueSet::Lists => HclExpr::Int(self.rng.gen()),
            ValueSet::Integers { max, .. } => match max {
                Some(m) if *m < i64::MAX => HclExpr::Int(m + 1),
                _ => HclExpr::String("not-a-number".into()),
            },
            _ => HclExpr::String(format!("invalid-{}", self.string())),
        }
    }
}

impl Proposer for RandomizedStub {
    fn name(&self) -> &str {
        "randomized-stub"
    }

    fn propose(&mut self, request: &HoleRequest) -> Result<HclExpr, String> {
        if self.rng.gen_bool(self.error_rate.clamp(0.0, 1.0)) {
            return Ok(self.inadmissible(&request.admissible));
        }
        self.admissible(&request.admissible).ok_or_else(|| "empty admissible set".to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::FieldDecl;

    fn hole(domain: ValueDomain) -> Hole {
        Hole {
            id: 0,
            node: "web".into(),
            kind: "ec2".into(),
            field: "f".into(),
            decl: FieldDecl { name: "f".into(), domain, required: true, default: None, allowed: None, min: None, max: None },
        }
    }

    #[test]
    fn stub_picks_smallest() {
        let set = ValueSet::Finite(vec![HclExpr::str("t3.small"), HclExpr::str("t3.micro")]);
        assert_eq!(DeterministicStub::choose(&hole(ValueDomain::String), &set), Some(HclExpr::str("t3.micro")));
        let ints = ValueSet::Integers { min: Some(1), max: Some(5) };
        assert_eq!(DeterministicStub::choose(&hole(ValueDomain::Int), &ints), Some(HclExpr::Int(1)));
        let neg = ValueSet::Integers { min: None, max: Some(-3) };
        assert_eq!(DeterministicStub::choose(&hole(ValueDomain::Int), &neg), Some(HclExpr::Int(-3)));
        assert_eq!(DeterministicStub::choose(&hole(ValueDomain::String), &ValueSet::Finite(vec![])), None);
    }

    #[test]
    fn random_values_are_admissible_without_errors() {
        let mut r = RandomizedStub::new(7);
        let sets = [
            ValueSet::Strings,
            ValueSet::Integers { min: Some(0), max: Some(65535) },
            ValueSet::Decimals { min: Some(Decimal::ONE), max: Some(Decimal::TEN) },
            ValueSet::Maps,
            ValueSet::Lists,
            ValueSet::Finite(vec![HclExpr::Bool(true)]),
        ];
        for _ in 0..200 {
            for s in &sets {
                let v = r.admissible(s).unwrap();
                assert!(s.contains(&v), "{v:?} ∉ {s:?}");
                assert!(!s.contains(&r.inadmissible(s)));
            }
        }
    }
}
