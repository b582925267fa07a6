use std::str::FromStr;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde_json::{json, Map, Value};

use iacforge::digest::{canonical_digest, canonical_json};
use iacforge::eval::{bleu, corpus_bleu, tokenize};
use iacforge::fixtures;
use iacforge::gen::{random_plan, PlanShape};
use iacforge::hcl::{lift, parse, print};
use iacforge::iir::{plan_digest, plan_equiv, ConstraintSet};
use iacforge::registry::harmonize;
use iacforge::repair::{routing_score, RoutingWeights};
use iacforge::synthesis::synthesize;
use iacforge::validators::{CostSheet, Status, ValidatorReport};

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i32>().prop_map(Value::from),
        "[a-z\"\\\\ ]{0,6}".prop_map(Value::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z]{1,4}", inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn reversed_keys(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut out = Map::new();
            for (k, x) in m.iter().rev() {
                out.insert(k.clone(), reversed_keys(x));
            }
            Value::Object(out)
        }
        Value::Array(xs) => Value::Array(xs.iter().map(reversed_keys).collect()),
        other => other.clone(),
    }
}

fn status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Pass), Just(Status::Fail), Just(Status::Gated)]
}

fn report(schema: Status, policy: Status, deploy: Status, v_cost: Decimal) -> ValidatorReport {
    ValidatorReport {
        schema,
        policy,
        cost: Status::Pass,
        deploy,
        v_cost,
        counterexamples: Vec::new(),
        traces: Vec::new(),
        cost_sheet: CostSheet::default(),
        deploy_log: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_json_ignores_key_order(v in json_value()) {
        prop_assert_eq!(canonical_json(&v), canonical_json(&reversed_keys(&v)));
        prop_assert_eq!(canonical_digest(&v), canonical_digest(&reversed_keys(&v)));
        let back: Value = serde_json::from_str(&canonical_json(&v)).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn synthesized_programs_print_parse_and_lift_back(seed in any::<u64>()) {
        let r = fixtures::registry();
        let p = random_plan(&mut ChaCha8Rng::seed_from_u64(seed), &r, PlanShape::default());
        let h = harmonize(&p, &r).unwrap();
        let program = synthesize(&h, &r).unwrap();
        let text = print(&program);
        prop_assert_eq!(&parse(&text).unwrap(), &program);
        prop_assert_eq!(print(&parse(&text).unwrap()), text);
        prop_assert!(plan_equiv(&lift(&program, &r).unwrap(), &h, &r));
    }

    #[test]
    fn harmonize_is_idempotent(seed in any::<u64>()) {
        let r = fixtures::registry();
        let p = random_plan(&mut ChaCha8Rng::seed_from_u64(seed), &r, PlanShape::default());
        let once = harmonize(&p, &r).unwrap();
        let twice = harmonize(&once, &r).unwrap();
        prop_assert_eq!(plan_digest(&once, &r), plan_digest(&twice, &r));
    }

    #[test]
    fn bleu_is_bounded(c in "[a-z{}=. \n]{0,40}", r in "[a-z{}=. \n]{0,40}") {
        let b = bleu(&c, &r);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        if tokenize(&r).len() >= 4 {
            prop_assert_eq!(bleu(&r, &r), 100.0);
        }
        prop_assert_eq!(corpus_bleu(&[(c.as_str(), r.as_str())]), b);
    }

    #[test]
    fn routing_score_never_rewards_failure(
        s in status(), p in status(), d in status(),
        cents in 0i64..10_000, ceiling in prop::option::of(0i64..5_000),
    ) {
        let c = ConstraintSet { budget_ceiling: ceiling.map(|b| Decimal::new(b, 2)), ..ConstraintSet::default() };
        let w = RoutingWeights::for_constraints(&c);
        let j = routing_score(&report(s, p, d, Decimal::new(cents, 2)), &c, &w);
        prop_assert!(j >= Decimal::ZERO);
        prop_assert_eq!(j.is_zero(), s.passed() && p.passed() && d.passed() && ceiling.is_none_or(|b| cents <= b));
        // Failing one more validator or spending more never lowers J.
        let worse = routing_score(&report(Status::Fail, p, d, Decimal::new(cents + 1, 2)), &c, &w);
        prop_assert!(worse >= j);
        let zero = Decimal::from_str("0").unwrap();
        prop_assert_eq!(routing_score(&report(Status::Pass, Status::Pass, Status::Pass, zero), &c, &w), zero);
    }
}

#[test]
fn canonical_form_is_fixed() {
    assert_eq!(canonical_json(&json!({"b": 1, "a": [true, null]})), r#"{"a":[true,null],"b":1}"#);
}
