//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Every check compares the library against an oracle written here, not against itself.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde_json::{json, Value};

use iacforge::eval::{bleu, corpus_bleu, load_corpus, TaskCase};
use iacforge::evidence::verify_bundle;
use iacforge::fixtures;
use iacforge::gen::{random_plan, PlanShape};
use iacforge::hcl::{lift, parse, print, recognize};
use iacforge::iir::{check_acyclic, plan_equiv, topological_order, ConstraintSet, Effect, Plan, PlanEdge, ResourceNode};
use iacforge::orchestrator::{EngineerBackend, Orchestrator, RunConfig, RunOutcome};
use iacforge::registry::{harmonize, SchemaRegistry};
use iacforge::repair::{routing_score, RoutingWeights};
use iacforge::synthesis::{compile_skeleton, decode, decode_with, DecodeOptions, DeterministicStub, RandomizedStub};
use iacforge::validators::{
    estimate_cost, eval_policies, parse_rules, run_all, CostSheet, PolicyRule, PriceCatalog, Status, StubSandbox, Toolchain,
    ValidatorReport, Verdict,
};

type Outcome = Result<String, String>;
type Check = fn(&Kit) -> Outcome;

struct Kit {
    registry: SchemaRegistry,
    rules: Vec<PolicyRule>,
    catalog: PriceCatalog,
}

impl Kit {
    fn new() -> Self {
        Kit {
            registry: fixtures::registry(),
            rules: parse_rules(fixtures::RULES_JSON).expect("fixture rules"),
            catalog: PriceCatalog::from_json_str(fixtures::CATALOG_JSON).expect("fixture catalog"),
        }
    }

    fn run(&self, task: &TaskCase, config: RunConfig) -> Result<(RunOutcome, bool), String> {
        let sandbox = StubSandbox { faults: task.sandbox_faults.clone() };
        let tools = Toolchain { registry: &self.registry, rules: &self.rules, catalog: &self.catalog, sandbox: &sandbox };
        let config = RunConfig { faults: task.faults.clone(), ..config };
        let out =
            Orchestrator::new(tools, config).run(&task.intent, &task.constraints).map_err(|e| format!("{}: {e}", task.id))?;
        let delivered = match &out {
            RunOutcome::Success(s) => run_all(&s.program, &tools, &s.plan.specs).map_err(|e| e.to_string())?.all_pass(),
            RunOutcome::UnsatisfiedCore(_) => false,
        };
        Ok((out, delivered))
    }
}

fn corpus_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name)
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    if took > limit {
        return Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------------

fn round_trip(kit: &Kit) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for i in 0..200 {
        let p = random_plan(&mut rng, &kit.registry, PlanShape::default());
        let h = harmonize(&p, &kit.registry).map_err(|e| format!("plan {i}: harmonize: {e}"))?;
        let (skeleton, symbols) = compile_skeleton(&h, &kit.registry).map_err(|e| format!("plan {i}: compile: {e}"))?;
        let program = decode(&skeleton, &symbols, &kit.registry, &mut DeterministicStub)
            .map_err(|e| format!("plan {i}: decode: {e}"))?
            .program;
        let lifted = lift(&program, &kit.registry).map_err(|e| format!("plan {i}: lift: {e}"))?;
        if !plan_equiv(&lifted, &h, &kit.registry) {
            return Err(format!("plan {i}: lifted plan differs from harmonized plan"));
        }
    }
    within(Duration::from_secs(60), started)?;
    Ok("200/200 plans round-trip".into())
}

/// Required fields that become holes when dropped from a harmonized plan.
const HOLE_FIELDS: &[&str] = &["ami", "instance_type", "cidr_block", "engine", "bucket_name", "role_name", "subnet_id", "vpc_id"];

fn decoder_validity(kit: &Kit) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let (mut steps, mut outside, mut programs, mut holes) = (0usize, 0usize, 0usize, 0usize);
    while steps < 10_000 {
        let p = random_plan(&mut rng, &kit.registry, PlanShape::default());
        let mut h = harmonize(&p, &kit.registry).map_err(|e| e.to_string())?;
        for n in &mut h.nodes {
            for f in HOLE_FIELDS {
                if rng.gen_bool(0.5) {
                    n.fields.remove(*f);
                }
            }
        }
        let (skeleton, symbols) = compile_skeleton(&h, &kit.registry).map_err(|e| format!("compile: {e}"))?;
        holes += skeleton.hole_count();
        let mut proposer = RandomizedStub::new(rng.gen()).with_error_rate(0.3);
        let mut observe = |ev: &iacforge::synthesis::DecodeEvent| {
            steps += 1;
            if !ev.admissible.iter().any(|d| d.matches(ev.token)) {
                outside += 1;
            }
        };
        let out = decode_with(&skeleton, &symbols, &kit.registry, &mut proposer, DecodeOptions::default(), &mut observe)
            .map_err(|e| format!("decode: {e}"))?;
        let text = print(&out.program);
        recognize(&text).map_err(|e| format!("grammar rejects decoded program: {e}\n{text}"))?;
        if parse(&text).map_err(|e| format!("decoded program does not re-parse: {e}\n{text}"))? != out.program {
            return Err(format!("re-parsed program differs\n{text}"));
        }
        programs += 1;
    }
    if outside > 0 {
        return Err(format!("{outside} of {steps} tokens outside the admissible set"));
    }
    within(Duration::from_secs(120), started)?;
    Ok(format!("{steps} steps over {programs} programs ({holes} holes), 0 inadmissible, all re-parse"))
}

fn j_monotonicity(kit: &Kit) -> Outcome {
    let started = Instant::now();
    let tasks = load_corpus(corpus_dir("single_fault")).map_err(|e| e.to_string())?;
    if tasks.len() != 50 {
        return Err(format!("corpus has {} tasks, expected 50", tasks.len()));
    }
    let (mut within_k, mut within_3, mut committed) = (0, 0, 0);
    for t in &tasks {
        let (out, delivered) = kit.run(t, RunConfig { budget_k: 8, ..RunConfig::default() })?;
        for s in out.repair_path() {
            committed += 1;
            if s.post_j > s.pre_j {
                return Err(format!("{}: iteration {} raised J {} -> {}", t.id, s.iteration, s.pre_j, s.post_j));
            }
        }
        if let Some(w) = out.trajectory().windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("{}: trajectory rises {} -> {}", t.id, w[0], w[1]));
        }
        if delivered {
            within_k += 1;
            if out.iterations() <= 3 {
                within_3 += 1;
            }
        }
    }
    let n = tasks.len();
    if within_k * 100 < 95 * n || within_3 * 100 < 90 * n {
        return Err(format!("success within K=8: {within_k}/{n}, within 3: {within_3}/{n}"));
    }
    within(Duration::from_secs(300), started)?;
    Ok(format!("{committed} committed iterations non-increasing; success {within_k}/{n} within 8, {within_3}/{n} within 3"))
}

fn d(s: &str) -> Decimal {
    Decimal::from_str(s).expect("literal")
}

fn report(schema: Status, policy: Status, deploy: Status, v_cost: &str) -> ValidatorReport {
    ValidatorReport {
        schema,
        policy,
        cost: Status::Pass,
        deploy,
        v_cost: d(v_cost),
        counterexamples: Vec::new(),
        traces: Vec::new(),
        cost_sheet: CostSheet::default(),
        deploy_log: String::new(),
    }
}

fn routing(_: &Kit) -> Outcome {
    use Status::{Fail, Gated, Pass};
    let ceiling = |b: Option<&str>| ConstraintSet { budget_ceiling: b.map(d), ..ConstraintSet::default() };
    let custom = RoutingWeights::new(d("2"), d("0.5"), d("3"), d("1.5")).map_err(|e| e.to_string())?;
    // (report, ceiling, explicit weights, expected J worked out by hand)
    let cases: Vec<(ValidatorReport, Option<&str>, Option<RoutingWeights>, &str)> = vec![
        (report(Pass, Pass, Pass, "0"), None, None, "0"),
        (report(Fail, Gated, Gated, "0"), None, None, "3"),
        (report(Pass, Fail, Pass, "0"), None, None, "1"),
        (report(Pass, Pass, Fail, "99"), None, None, "1"),
        (report(Pass, Pass, Pass, "15.00"), Some("10"), None, "0.5"),
        (report(Pass, Pass, Pass, "7.50"), Some("10"), None, "0"),
        (report(Pass, Pass, Pass, "10.00"), Some("10.00"), None, "0"),
        (report(Pass, Fail, Pass, "12.40"), Some("4"), None, "3.1"),
        (report(Fail, Pass, Pass, "5.00"), Some("0"), None, "6"),
        (report(Fail, Fail, Fail, "20"), Some("8"), None, "4.5"),
        (report(Fail, Pass, Fail, "11"), Some("10"), Some(custom), "6.5"),
        (report(Pass, Gated, Pass, "9.99"), Some("10"), Some(custom), "0.5"),
    ];
    for (i, (r, b, w, expected)) in cases.iter().enumerate() {
        let c = ceiling(*b);
        let w = w.unwrap_or_else(|| RoutingWeights::for_constraints(&c));
        let j = routing_score(r, &c, &w);
        if j != d(expected) {
            return Err(format!("case {}: J = {j}, expected {expected}", i + 1));
        }
    }
    if RoutingWeights::new(d("-1"), d("1"), d("1"), d("1")).is_ok() || RoutingWeights::new(d("0"), d("0"), d("0"), d("0")).is_ok()
    {
        return Err("invalid weights accepted".into());
    }
    Ok(format!("{} cases exact", cases.len()))
}

// ---- policy oracle ------------------------------------------------------------------

/// A resource as the generator built it; the oracle reads this, the engine reads the HCL.
struct Res {
    kind: &'static str,
    name: String,
    attrs: BTreeMap<String, Value>,
    effects: Vec<&'static str>,
    ingress: Vec<(Value, Option<&'static str>)>,
}

fn hcl_value(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let inner: Vec<String> = m.iter().map(|(k, v)| format!("{k} = {}", hcl_value(v))).collect();
            format!("{{ {} }}", inner.join(", "))
        }
        other => other.to_string(),
    }
}

fn render(resources: &[Res]) -> String {
    let mut out = String::new();
    for r in resources {
        out += &format!("resource \"{}\" \"{}\" {{\n  region = \"eu-west-1\"\n", r.kind, r.name);
        for (k, v) in &r.attrs {
            out += &format!("  {k} = {}\n", hcl_value(v));
        }
        if !r.effects.is_empty() {
            let list: Vec<String> = r.effects.iter().map(|e| format!("\"{e}\"")).collect();
            out += &format!("  effects = [{}]\n", list.join(", "));
        }
        for (port, cidr) in &r.ingress {
            out += &format!("  ingress {{\n    protocol = \"tcp\"\n    port = {port}\n");
            if let Some(c) = cidr {
                out += &format!("    cidr = \"{c}\"\n");
            }
            out += "  }\n";
        }
        out += "}\n\n";
    }
    out
}

fn random_resource(rng: &mut ChaCha8Rng, i: usize) -> Res {
    const KINDS: &[&str] = &["s3_bucket", "rds", "security_group", "iam_role", "ec2", "vpc", "subnet"];
    let kind = *KINDS.choose(rng).expect("kinds");
    let mut attrs = BTreeMap::new();
    let mut maybe = |rng: &mut ChaCha8Rng, field: &str, pool: &[Value]| {
        if rng.gen_bool(0.7) {
            attrs.insert(field.to_owned(), pool.choose(rng).expect("pool").clone());
        }
    };
    match kind {
        "s3_bucket" => maybe(rng, "encryption", &[json!("aes256"), json!("kms"), json!("none"), json!("AES256")]),
        "rds" => {
            maybe(rng, "storage_encrypted", &[json!(true), json!(false), json!("true")]);
            maybe(rng, "multi_az", &[json!(true), json!(false)]);
        }
        "iam_role" => {
            maybe(rng, "managed_policy", &[json!("AdministratorAccess"), json!("ReadOnlyAccess"), json!("PowerUserAccess")])
        }
        _ => {}
    }
    maybe(rng, "tags", &[json!({}), json!({"owner": "ops"}), json!({"team": "web"}), json!({"owner": "a", "team": "b"})]);
    let mut ingress = Vec::new();
    if kind == "security_group" {
        for _ in 0..rng.gen_range(0..4) {
            let port = *[21, 22, 23, 80, 443, 3389, 3390].choose(rng).expect("ports");
            let port = if rng.gen_bool(0.1) { json!(port.to_string()) } else { json!(port) };
            let cidr = *[Some("0.0.0.0/0"), Some("10.0.0.0/8"), None].choose(rng).expect("cidrs");
            ingress.push((port, cidr));
        }
    }
    let effects = ["encrypt_at_rest", "tagged", "redundant"].into_iter().filter(|_| rng.gen_bool(0.3)).collect();
    Res { kind, name: format!("r{i}"), attrs, effects, ingress }
}

struct Oracle<'a> {
    registry: &'a Value,
}

impl Oracle<'_> {
    fn field(&self, r: &Res, name: &str) -> Option<Value> {
        if let Some(v) = r.attrs.get(name) {
            return Some(v.clone());
        }
        let kind = self.registry["kinds"].as_array()?.iter().find(|k| k["kind"] == r.kind)?;
        kind["fields"].as_array()?.iter().find(|f| f["name"] == name)?.get("default").cloned()
    }

    fn holds(&self, r: &Res, p: &Value) -> bool {
        let (tag, body) = p.as_object().and_then(|o| o.iter().next()).expect("one-key predicate");
        let field = || self.field(r, body["field"].as_str().expect("field name"));
        match tag.as_str() {
            "field_equals" => field().is_some_and(|v| v == body["value"]),
            "field_member_of" => field().is_some_and(|v| body["values"].as_array().expect("values").contains(&v)),
            "field_present" => field().is_some(),
            "effect_required" => r.effects.iter().any(|e| body["effect"] == *e),
            "tag_present" => field_tags(self, r).is_some_and(|t| t.contains_key(body["key"].as_str().expect("key"))),
            "port_range" => {
                assert_eq!(body["block"], "ingress");
                let (from, to) = (body["from"].as_i64().expect("from"), body["to"].as_i64().expect("to"));
                r.ingress.iter().any(|(port, cidr)| {
                    let in_range = port.as_i64().is_some_and(|p| from <= p && p <= to);
                    let cidr_ok = body.get("cidr").and_then(Value::as_str).is_none_or(|c| *cidr == Some(c));
                    in_range && cidr_ok
                })
            }
            "all" => body.as_array().expect("list").iter().all(|q| self.holds(r, q)),
            "any" => body.as_array().expect("list").iter().any(|q| self.holds(r, q)),
            "not" => !self.holds(r, body),
            other => panic!("oracle does not know predicate `{other}`"),
        }
    }

    /// (resource, rule id) -> passes, for every rule that applies.
    fn verdicts(&self, rules: &Value, resources: &[Res], required: &[&str]) -> BTreeMap<(String, String), bool> {
        let mut out = BTreeMap::new();
        for r in resources {
            for rule in rules.as_array().expect("rule list") {
                let kinds = rule["kinds"].as_array().expect("kinds");
                let targeted = kinds.iter().any(|k| k == "*" || *k == r.kind);
                let obliged = match rule.get("obligation").and_then(Value::as_str) {
                    None => true,
                    Some(o) => r.effects.contains(&o) || required.contains(&o),
                };
                if targeted && obliged {
                    out.insert((r.name.clone(), rule["id"].as_str().expect("id").to_owned()), self.holds(r, &rule["predicate"]));
                }
            }
        }
        out
    }
}

fn field_tags(o: &Oracle, r: &Res) -> Option<serde_json::Map<String, Value>> {
    o.field(r, "tags").and_then(|v| v.as_object().cloned())
}

fn policy_oracle(kit: &Kit) -> Outcome {
    let raw_rules: Value = serde_json::from_str(fixtures::RULES_JSON).map_err(|e| e.to_string())?;
    let raw_registry: Value = serde_json::from_str(fixtures::REGISTRY_JSON).map_err(|e| e.to_string())?;
    let oracle = Oracle { registry: &raw_registry };
    let rule_ids: BTreeSet<&str> = kit.rules.iter().map(|r| r.id.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let (mut cases, mut traces, mut failing) = (0, 0, 0);
    for case in 0..400 {
        let resources: Vec<Res> = (0..rng.gen_range(1..=6)).map(|i| random_resource(&mut rng, i)).collect();
        let required: Vec<&str> = ["encrypt_at_rest", "tagged", "redundant"].into_iter().filter(|_| rng.gen_bool(0.2)).collect();
        let constraints = ConstraintSet {
            required_effects: required.iter().map(|e| Effect::from_str(e).expect("effect")).collect(),
            ..ConstraintSet::default()
        };
        let text = render(&resources);
        let program = parse(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        let (_, got, _) = eval_policies(&program, &kit.rules, &constraints, &kit.registry);
        let got: BTreeMap<(String, String), bool> = got
            .iter()
            .filter(|t| rule_ids.contains(t.rule_id.as_str()))
            .map(|t| ((t.locus.node.clone(), t.rule_id.clone()), t.verdict == Verdict::Pass))
            .collect();
        let expected = oracle.verdicts(&raw_rules, &resources, &required);
        if got != expected {
            return Err(format!("case {case}: engine {got:?}\noracle {expected:?}\n{text}"));
        }
        cases += 1;
        traces += expected.len();
        failing += expected.values().filter(|ok| !**ok).count();
    }
    Ok(format!("{cases} programs, {traces} rule verdicts ({failing} failing) agree"))
}

// ---- cost -----------------------------------------------------------------------------

const NET: &str = "resource \"vpc\" \"main\" {\n  region = \"eu-west-1\"\n  cidr_block = \"10.0.0.0/16\"\n}\n";

fn ec2(name: &str, region: &str, sku: &str) -> String {
    format!("resource \"ec2\" \"{name}\" {{\n  region = \"{region}\"\n  ami = \"ami-0a1b2c3d4e5f60718\"\n  instance_type = \"{sku}\"\n}}\n")
}

fn rds(name: &str, region: &str, class: Option<&str>) -> String {
    let class = class.map(|c| format!("  instance_class = \"{c}\"\n")).unwrap_or_default();
    format!("resource \"rds\" \"{name}\" {{\n  region = \"{region}\"\n  engine = \"mysql\"\n{class}}}\n")
}

fn cost(kit: &Kit) -> Outcome {
    let budget = ConstraintSet { budget_ceiling: Some(d("10")), ..ConstraintSet::default() };
    let price = |text: &str| -> Result<(Decimal, CostSheet, Vec<_>), String> {
        let program = parse(text).map_err(|e| e.to_string())?;
        let first = estimate_cost(&program, &kit.catalog, &budget, &kit.registry).map_err(|e| e.to_string())?;
        let again = estimate_cost(&program, &kit.catalog, &budget, &kit.registry).map_err(|e| e.to_string())?;
        if first != again {
            return Err("estimate is not deterministic".into());
        }
        if first.1.items.iter().map(|i| i.amount).sum::<Decimal>() != first.0 || first.1.total != first.0 {
            return Err(format!("estimate {} is not the line-item sum", first.0));
        }
        Ok(first)
    };
    let (one, _, ces) = price(&format!("{NET}{}", ec2("w1", "eu-west-1", "t3.small")))?;
    if one.to_string() != "7.50" || !ces.is_empty() {
        return Err(format!("one t3.small: {one}, {} counterexamples", ces.len()));
    }
    let (two, _, ces) = price(&format!("{NET}{}{}", ec2("w1", "eu-west-1", "t3.small"), ec2("w2", "eu-west-1", "t3.small")))?;
    if two.to_string() != "15.00" || ces.len() != 1 || ces[0].witness["overrun"] != json!("5.00") {
        return Err(format!("two t3.small: {two}, counterexamples {ces:?}"));
    }

    // Random mixes against prices read straight from the catalog file.
    let raw: Value = serde_json::from_str(fixtures::CATALOG_JSON).map_err(|e| e.to_string())?;
    let table: HashMap<(String, String), Decimal> = raw["prices"]
        .as_array()
        .expect("prices")
        .iter()
        .map(|p| {
            ((p["region"].as_str().unwrap().to_owned(), p["sku"].as_str().unwrap().to_owned()), d(&p["unit_price"].to_string()))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    for case in 0..100 {
        let (mut text, mut expected) = (NET.to_owned(), Decimal::ZERO);
        for i in 0..rng.gen_range(0..6) {
            let region = *["eu-west-1", "us-east-1", "eu-central-1"].choose(&mut rng).unwrap();
            if rng.gen_bool(0.6) {
                let sku = *["t3.micro", "t3.small"].choose(&mut rng).unwrap();
                text += &ec2(&format!("w{i}"), region, sku);
                expected += table[&(region.to_owned(), sku.to_owned())];
            } else {
                let class = *[None, Some("db.t3.micro"), Some("db.t3.small")].choose(&mut rng).unwrap();
                text += &rds(&format!("db{i}"), region, class);
                expected += table[&(region.to_owned(), class.unwrap_or("db.t3.micro").to_owned())];
            }
        }
        let (total, _, ces) = price(&text)?;
        if total != expected || (total > d("10")) != (ces.len() == 1) {
            return Err(format!("case {case}: estimate {total}, oracle {expected}"));
        }
    }
    Ok("7.50 / 15.00 / overrun 5.00 exact; 100 random mixes match the catalog".into())
}

// ---- acyclicity -----------------------------------------------------------------------

fn has_cycle(n: usize, edges: &[(usize, usize)]) -> bool {
    // Depth-first search with three colours.
    fn visit(u: usize, adj: &[Vec<usize>], colour: &mut [u8]) -> bool {
        colour[u] = 1;
        for &v in &adj[u] {
            if colour[v] == 1 || (colour[v] == 0 && visit(v, adj, colour)) {
                return true;
            }
        }
        colour[u] = 2;
        false
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    let mut colour = vec![0u8; n];
    (0..n).any(|u| colour[u] == 0 && visit(u, &adj, &mut colour))
}

fn graph_plan(n: usize) -> Plan {
    Plan { nodes: (0..n).map(|i| ResourceNode::new(format!("n{i}"), "vpc", "eu-west-1")).collect(), ..Plan::default() }
}

fn agrees(plan: &mut Plan, edges: &[(usize, usize)]) -> Result<(), String> {
    plan.edges = edges.iter().map(|&(a, b)| PlanEdge::depends(format!("n{a}"), format!("n{b}"))).collect();
    let cyclic = has_cycle(plan.nodes.len(), edges);
    let acyclic = check_acyclic(plan).map_err(|e| e.to_string())?;
    if acyclic == cyclic {
        return Err(format!("edges {edges:?}: library says acyclic={acyclic}"));
    }
    match topological_order(plan) {
        Ok(order) if !cyclic => {
            let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            // Depends(a, b): b is created before a.
            if order.len() != plan.nodes.len()
                || edges.iter().any(|&(a, b)| pos[format!("n{b}").as_str()] > pos[format!("n{a}").as_str()])
            {
                return Err(format!("edges {edges:?}: order {order:?} violates an edge"));
            }
            Ok(())
        }
        Err(_) if cyclic => Ok(()),
        other => Err(format!("edges {edges:?}: topological_order gave {other:?}")),
    }
}

fn acyclicity(_: &Kit) -> Outcome {
    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let mut plan = graph_plan(5);
    let mut edges = Vec::with_capacity(pairs.len());
    let mut cyclic = 0u32;
    for mask in 0u32..(1 << pairs.len()) {
        edges.clear();
        edges.extend(pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| *p));
        agrees(&mut plan, &edges)?;
        cyclic += u32::from(has_cycle(5, &edges));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let mut plan = graph_plan(12);
    let mut random_cyclic = 0;
    for _ in 0..1000 {
        let density = rng.gen_range(0.02..0.25);
        let edges: Vec<(usize, usize)> =
            (0..12).flat_map(|a| (0..12).map(move |b| (a, b))).filter(|(a, b)| a != b && rng.gen_bool(density)).collect();
        agrees(&mut plan, &edges)?;
        random_cyclic += usize::from(has_cycle(12, &edges));
    }
    Ok(format!("{} 5-node subsets ({cyclic} cyclic), 1000 12-node graphs ({random_cyclic} cyclic)", 1u32 << pairs.len()))
}

// ---- bundle tampering -------------------------------------------------------------------

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        std::fs::copy(e.path(), to.join(e.file_name()))?;
    }
    Ok(())
}

fn tamper(kit: &Kit) -> Outcome {
    let tasks = load_corpus(corpus_dir("single_fault")).map_err(|e| e.to_string())?;
    let task = tasks.iter().find(|t| t.id.contains("budget_exceeded")).ok_or("no budget task in corpus")?;
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_dir = work.path().join("run");
    let (out, _) = kit.run(task, RunConfig { run_dir: Some(run_dir.clone()), ..RunConfig::default() })?;
    if !out.is_success() || out.repair_path().is_empty() {
        return Err("reference run did not succeed after a repair".into());
    }
    let bundle = run_dir.join("bundle");
    let clean = verify_bundle(&bundle, None, &kit.registry, &kit.rules, &kit.catalog);
    if !clean.passed() {
        return Err(format!("untampered bundle fails: {:?}", clean.findings));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&bundle).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    files.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let mut missed = Vec::new();
    for m in 0..50 {
        let file = &files[m % files.len()];
        let name = file.file_name().unwrap().to_owned();
        let copy = work.path().join(format!("t{m}"));
        copy_dir(&bundle, &copy).map_err(|e| e.to_string())?;
        let mut bytes = std::fs::read(copy.join(&name)).map_err(|e| e.to_string())?;
        let at = rng.gen_range(0..bytes.len());
        let replacement = loop {
            let b: u8 = rng.gen_range(0x20..0x7f);
            if b != bytes[at] {
                break b;
            }
        };
        bytes[at] = replacement;
        std::fs::write(copy.join(&name), &bytes).map_err(|e| e.to_string())?;
        if verify_bundle(&copy, None, &kit.registry, &kit.rules, &kit.catalog).passed() {
            missed.push(format!("{}@{at}", name.to_string_lossy()));
        }
    }
    if !missed.is_empty() {
        return Err(format!("undetected mutations: {missed:?}"));
    }
    Ok(format!("50/50 mutations detected across {} files, verifier takes only local inputs", files.len()))
}

// ---- BLEU ------------------------------------------------------------------------------

/// Character-scanning tokenizer: word characters group, other non-space characters stand alone.
fn scan_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn reference_bleu(pairs: &[(String, String)]) -> f64 {
    let (mut clipped, mut possible) = ([0u64; 4], [0u64; 4]);
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (c, r) in pairs {
        let (c, r) = (scan_tokens(c), scan_tokens(r));
        hyp_len += c.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=4 {
            let grams = |t: &[String]| -> BTreeMap<String, u64> {
                let mut m = BTreeMap::new();
                for i in 0..t.len().saturating_sub(n - 1) {
                    *m.entry(t[i..i + n].join("\u{1f}")).or_insert(0) += 1;
                }
                m
            };
            let (cg, rg) = (grams(&c), grams(&r));
            clipped[n - 1] += cg.iter().map(|(g, k)| (*k).min(*rg.get(g).unwrap_or(&0))).sum::<u64>();
            possible[n - 1] += cg.values().sum::<u64>();
        }
    }
    if hyp_len == 0 || clipped.contains(&0) {
        return 0.0;
    }
    let geo = clipped.iter().zip(&possible).map(|(m, t)| *m as f64 / *t as f64).product::<f64>().powf(0.25);
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    100.0 * bp * geo
}

fn bleu_oracle(_: &Kit) -> Outcome {
    const WORDS: &[&str] =
        &["resource", "\"ec2\"", "{", "}", "=", "region", "\"eu-west-1\"", "vpc.main.id", "tags", "[1, 2]", "ami_x", "port"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    let mut pairs = Vec::new();
    for _ in 0..100 {
        let reference: Vec<&str> = (0..rng.gen_range(4..30)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let mut candidate = reference.clone();
        for _ in 0..rng.gen_range(0..4) {
            let i = rng.gen_range(0..candidate.len());
            match rng.gen_range(0..3) {
                0 => candidate[i] = WORDS.choose(&mut rng).unwrap(),
                1 if candidate.len() > 1 => {
                    candidate.remove(i);
                }
                _ => candidate.insert(i, WORDS.choose(&mut rng).unwrap()),
            }
        }
        pairs.push((candidate.join(if rng.gen_bool(0.5) { " " } else { "\n  " }), reference.join(" ")));
    }
    let (ours, theirs) = (corpus_bleu(&pairs), reference_bleu(&pairs));
    if (ours - theirs).abs() > 1e-9 {
        return Err(format!("corpus BLEU {ours} vs oracle {theirs}"));
    }
    let mut worst: f64 = 0.0;
    for p in &pairs {
        worst = worst.max((bleu(&p.0, &p.1) - reference_bleu(std::slice::from_ref(p))).abs());
    }
    if worst > 1e-9 {
        return Err(format!("sentence BLEU differs by {worst}"));
    }
    let same = "resource \"ec2\" \"web\" { ami = \"ami-0a1b2c3d4e5f60718\" }";
    if bleu(same, same) != 100.0 {
        return Err(format!("identical strings give {}", bleu(same, same)));
    }
    Ok(format!("corpus BLEU {ours:.6} matches; max per-pair gap {worst:.1e}; identical = 100.00"))
}

// ---- determinism ----------------------------------------------------------------------

fn determinism(kit: &Kit) -> Outcome {
    let tasks = load_corpus(corpus_dir("single_fault")).map_err(|e| e.to_string())?;
    let picked: Vec<&TaskCase> = ["budget_exceeded", "az_unavailable", "unknown_field"]
        .iter()
        .filter_map(|f| tasks.iter().find(|t| t.id.ends_with(f)))
        .collect();
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engines = [EngineerBackend::Stub, EngineerBackend::Randomized { seed: 7, error_rate: 0.0 }];
    let mut compared = 0;
    for t in &picked {
        for (e, engineer) in engines.iter().enumerate() {
            let mut outputs = Vec::new();
            for attempt in 0..2 {
                let dir = work.path().join(format!("{}-{e}-{attempt}", t.id));
                let config = RunConfig { run_dir: Some(dir.clone()), engineer: engineer.clone(), ..RunConfig::default() };
                let (out, _) = kit.run(t, config)?;
                if !out.is_success() {
                    return Err(format!("{}: run did not succeed", t.id));
                }
                let read = |f: &str| std::fs::read(dir.join("bundle").join(f)).map_err(|err| format!("{f}: {err}"));
                outputs.push((read("program.tf")?, read("manifest.json")?));
            }
            if outputs[0] != outputs[1] {
                return Err(format!("{} (engineer {e}): outputs differ between runs", t.id));
            }
            compared += 1;
        }
    }
    if compared < 6 {
        return Err(format!("only {compared} task/engineer combinations compared"));
    }
    Ok(format!("{compared} task/engineer pairs byte-identical (program and manifest)"))
}

fn main() -> ExitCode {
    let kit = Kit::new();
    let checks: [(&str, Check); 10] = [
        ("round-trip law", round_trip),
        ("decoder validity", decoder_validity),
        ("J monotonicity", j_monotonicity),
        ("routing score", routing),
        ("policy oracle", policy_oracle),
        ("cost", cost),
        ("acyclicity oracle", acyclicity),
        ("bundle tamper detection", tamper),
        ("BLEU oracle", bleu_oracle),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let outcome = check(&kit);
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} [{secs:.2}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
