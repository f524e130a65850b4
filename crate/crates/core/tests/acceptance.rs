//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use iot_hub::analytics::planted::{activity_dataset, location_dataset};
use iot_hub::analytics::{train, Algorithm, AnalyticsManager, Analyzer, LabeledInstance};
use iot_hub::bus::{Broker, FaultConfig, Qos, Topic, TopicFilter};
use iot_hub::hub::{
    bundled_documents, Hub, KillSwitch, OutcomeStatus, ResolutionPath, ScenarioConfig, ScenarioReport, ScriptedRequest,
};
use iot_hub::interop::{read_csv, CacheStatus, InteropServices, QueryLog, ViolationReason};
use iot_hub::knowledge::{infer, InferenceRule};
use iot_hub::semantic::{Graph, GraphStore, Triple, Variable};
use iot_hub::services::{FnService, Microservice, MicroserviceTemplate, Repository, ServiceError, ServiceState};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn query_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let cases = 250;
    let (mut rows, mut nonempty) = (0, 0);
    for case in 0..cases {
        let data = gen_store(&mut r, 50);
        let q = if case % 2 == 0 { gen_query(&mut r, 4) } else { gen_query_from(&mut r, &data, 4) };
        let got = load(&data).evaluate(&q).map_err(|e| format!("case {case}: {e}"))?;
        let got_rows: Vec<Vec<_>> = got.rows().to_vec();
        check(got_rows.windows(2).all(|w| w[0] < w[1]), || format!("case {case}: rows not sorted and distinct"))?;
        let want = brute_force_query(&data, &q);
        let got_set: BTreeSet<_> = got_rows.into_iter().collect();
        check(got_set == want, || format!("case {case}: {} rows, oracle {} for {q:?}", got_set.len(), want.len()))?;
        rows += want.len();
        nonempty += usize::from(!want.is_empty());
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{cases} cases ({nonempty} non-empty), {rows} rows, {:.2?}", start.elapsed()))
}

fn graph_of(ts: &BTreeSet<Triple>) -> Graph {
    let mut g = Graph::default();
    for t in ts {
        g.insert(t.clone());
    }
    g
}

fn inference_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let programs = 150;
    let mut derived = 0;
    for case in 0..programs {
        let facts = gen_facts(&mut r, 200);
        let rules = gen_program(&mut r, 5);
        let got = infer(&graph_of(&facts), &rules).map_err(|e| format!("program {case}: {e}"))?;
        let got: BTreeSet<Triple> = got.derived.into_iter().collect();
        let want = naive_infer(&facts, &rules);
        check(got == want, || format!("program {case}: {} derived, naive {}", got.len(), want.len()))?;
        derived += want.len();
    }
    let edge = |a: &str, b: &str| Triple::new(iri(&format!("urn:n:{a}")), iri("urn:p:next"), iri(&format!("urn:n:{b}")));
    let chain: BTreeSet<Triple> = [edge("a", "b"), edge("b", "c"), edge("c", "d")].into();
    let rule = InferenceRule::from_json(&json!({
        "id": "transitive",
        "body": {"where": [["?x", "urn:p:next", "?y"], ["?y", "urn:p:next", "?z"]]},
        "head": [["?x", "urn:p:next", "?z"]],
    }))
    .map_err(|e| e.to_string())?;
    let got: BTreeSet<Triple> = infer(&graph_of(&chain), &[rule]).map_err(|e| e.to_string())?.derived.into_iter().collect();
    let want: BTreeSet<Triple> = [edge("a", "c"), edge("a", "d"), edge("b", "d")].into();
    check(got == want, || format!("chain derived {got:?}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("{programs} programs, {derived} derived facts, chain exact, {:.2?}", start.elapsed()))
}

fn interop_pipeline() -> Outcome {
    let fixture = include_str!("../config/fixtures/medical-devices.csv");
    let interop = InteropServices::new(Arc::new(GraphStore::new()), bundled_documents());
    let records = read_csv("devices", "device_id", fixture).map_err(|e| e.to_string())?;
    let translated = interop.translate("medical-devices", &records).map_err(|e| e.to_string())?;
    let annotated = interop.annotate("hub", &translated).map_err(|e| e.to_string())?;
    let aligned = interop.align("medical", &annotated).map_err(|e| e.to_string())?;
    let with = interop.validate("hub", &aligned).map_err(|e| e.to_string())?;
    check(with.valid && with.violations.is_empty(), || format!("aligned description invalid: {:?}", with.violations))?;
    let without = interop.validate("hub", &annotated).map_err(|e| e.to_string())?;
    let unknown = without.violations.iter().filter(|v| v.reason == ViolationReason::UnknownPredicate).count();
    check(!without.valid && unknown >= 1, || format!("unaligned: valid={} violations={:?}", without.valid, without.violations))?;
    Ok(format!(
        "{} rows, {} triples valid after alignment; without it {} violations ({unknown} unknown predicate)",
        records.len(),
        aligned.len(),
        without.violations.len()
    ))
}

fn cache_signature() -> Outcome {
    let mut r = rng(4);
    let (mut hit_pairs, mut miss_pairs, mut wrong) = (0, 0, Vec::new());
    let mut case = 0;
    while hit_pairs < 120 || miss_pairs < 120 {
        case += 1;
        let store = load(&gen_store(&mut r, 20));
        let q = gen_query(&mut r, 4);
        let mut order: Vec<usize> = (0..q.patterns().len()).collect();
        order.shuffle(&mut r);
        let tag = r.gen_range(0..1000);
        let rename = move |v: &Variable| Variable::new(&format!("r{tag}_{}", v.name())).unwrap();
        let mut variants = vec![rename_and_permute(&q, &rename, &order)];
        variants.extend(change_constant(&q, &mut r));
        for v in variants {
            let expect_hit = canonical_text(&q) == canonical_text(&v);
            let log = QueryLog::new();
            let first = log.process(&store, &q).map_err(|e| e.to_string())?;
            check(first.status == CacheStatus::MissGenerated, || format!("case {case}: empty log hit"))?;
            let second = log.process(&store, &v).map_err(|e| e.to_string())?;
            let hit = second.status == CacheStatus::Hit;
            if expect_hit {
                hit_pairs += 1;
            } else {
                miss_pairs += 1;
            }
            if hit != expect_hit {
                wrong.push(format!("case {case}: expected hit={expect_hit}: {q:?} vs {v:?}"));
            }
        }
    }
    check(wrong.is_empty(), || format!("{} misclassified, first {}", wrong.len(), wrong[0]))?;
    Ok(format!("{hit_pairs} equivalent pairs hit, {miss_pairs} constant-changed pairs missed, 0 misclassified"))
}

fn majority_accuracy(train: &[LabeledInstance], test: &[LabeledInstance]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in train {
        *counts.entry(&i.label).or_default() += 1;
    }
    let top = counts.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))).map(|(l, _)| *l).unwrap();
    test.iter().filter(|i| i.label == top).count() as f64 / test.len() as f64
}

fn ml_baselines() -> Outcome {
    let start = Instant::now();
    let manager = AnalyticsManager::bundled();
    let mut lines = Vec::new();
    for (analyzer, data) in [(Analyzer::Location, location_dataset(42, 500)), (Analyzer::Activity, activity_dataset(42, 500))] {
        let cut = data.len() * 4 / 5;
        let (train_set, test_set) = data.split_at(cut);
        let base = majority_accuracy(train_set, test_set);
        for algorithm in [Algorithm::NaiveBayes, Algorithm::Knn] {
            let mut cfg = manager.config(analyzer).map_err(|e| e.to_string())?.clone();
            cfg.algorithm = algorithm;
            let model = train(train_set, &cfg).map_err(|e| e.to_string())?;
            let mut correct = 0;
            for i in test_set {
                if model.predict(&i.features).map_err(|e| e.to_string())?.label == i.label {
                    correct += 1;
                }
            }
            let acc = correct as f64 / test_set.len() as f64;
            lines.push(format!("{analyzer}/{}={acc:.2} vs {base:.2}", algorithm.name()));
            check(acc >= base + 0.10, || format!("{analyzer} {}: {acc:.3} vs majority {base:.3}", algorithm.name()))?;
        }
    }
    within(start, Duration::from_secs(20))?;
    Ok(format!("{} ({} train / {} test), {:.2?}", lines.join(", "), 400, 100, start.elapsed()))
}

fn bus_at_least_once() -> Outcome {
    let broker = Broker::new(FaultConfig { seed: 42, ack_drop: 0.5, delivery_drop: 0.0 });
    let subscribers = ["s0", "s1"];
    let filter = TopicFilter::new("t/#").map_err(|e| e.to_string())?;
    for s in subscribers {
        broker.connect(s).map_err(|e| e.to_string())?;
        broker.subscribe(s, &filter, Qos::AtLeastOnce).map_err(|e| e.to_string())?;
    }
    let publishers = ["p0", "p1", "p2"];
    let topics: Vec<Topic> = (0..4).map(|i| Topic::new(&format!("t/{i}")).unwrap()).collect();
    let mut r = rng(6);
    let total = 1000;
    for n in 0..total {
        let p = publishers[r.gen_range(0..publishers.len())];
        let t = &topics[r.gen_range(0..topics.len())];
        broker.publish(p, t, format!("{n}").into_bytes(), Qos::AtLeastOnce).map_err(|e| e.to_string())?;
    }
    // (subscriber, message) -> copies; first-delivery order per (subscriber, publisher, topic).
    let mut copies: HashMap<(&str, u64), u32> = HashMap::new();
    let mut firsts: BTreeMap<(&str, String, String), Vec<u64>> = BTreeMap::new();
    loop {
        let mut got = 0;
        for s in subscribers {
            for d in broker.poll(s).map_err(|e| e.to_string())? {
                got += 1;
                let n: u64 = d.message.payload_text().parse().map_err(|_| "bad payload".to_owned())?;
                let c = copies.entry((s, n)).or_default();
                *c += 1;
                if *c == 1 {
                    firsts.entry((s, d.message.publisher.clone(), d.message.topic.to_string())).or_default().push(n);
                }
                broker.ack(s, d.delivery_id).map_err(|e| e.to_string())?;
            }
        }
        if got == 0 && broker.is_idle() {
            break;
        }
        check(broker.now() < 60_000, || "bus did not settle".into())?;
        broker.advance(100);
    }
    let lost = subscribers.iter().flat_map(|s| (0..total).map(move |n| (*s, n))).filter(|k| !copies.contains_key(k)).count();
    let worst = copies.values().copied().max().unwrap_or(0);
    let fifo = firsts.values().all(|v| v.windows(2).all(|w| w[0] < w[1]));
    let stats = broker.stats();
    check(lost == 0, || format!("{lost} losses"))?;
    check(worst <= 11, || format!("a message arrived {worst} times"))?;
    check(fifo, || "first deliveries out of order".into())?;
    check(broker.now() < 10_000, || format!("{} ms simulated", broker.now()))?;
    Ok(format!(
        "0 lost, max {} duplicates, FIFO held, {} acks dropped, {} ms simulated",
        worst - 1,
        stats.acks_dropped,
        broker.now()
    ))
}

fn default_report() -> Result<ScenarioReport, String> {
    Hub::boot(ScenarioConfig::bundled()).and_then(|h| h.run()).map_err(|e| e.to_string())
}

fn resolution_paths(report: &ScenarioReport) -> Outcome {
    let p = report.paths;
    check(p.single_domain > 0 && p.mashup_generated > 0 && p.mashup_cache_hit > 0, || format!("paths {p:?}"))?;
    let repeated: Vec<_> = report.outcomes.iter().filter(|o| o.capability == "analytics.activity-health").collect();
    check(repeated.len() == 5, || format!("{} repeated requests", repeated.len()))?;
    let path = |o: &&iot_hub::hub::RequestOutcome| o.resolution.as_ref().map(|r| r.path);
    let generated = repeated.iter().filter(|o| path(o) == Some(ResolutionPath::MashupGenerated)).count();
    let hits: Vec<_> = repeated.iter().filter(|o| path(o) == Some(ResolutionPath::MashupCacheHit)).collect();
    check(generated == 1 && hits.len() == 4, || format!("{generated} generated, {} hits", hits.len()))?;
    let pipeline_calls = |o: &iot_hub::hub::RequestOutcome, k: &str| o.pipeline.get(k).copied().unwrap_or(0);
    for o in &hits {
        check(pipeline_calls(o, "translate") == 0 && pipeline_calls(o, "align") == 0, || {
            format!("hit {} ran the pipeline: {:?}", o.request_id, o.pipeline)
        })?;
    }
    Ok(format!(
        "single {} / generated {} / hit {}; repeated k=5: 1 generated, 4 hits, 0 translate/align on hits",
        p.single_domain, p.mashup_generated, p.mashup_cache_hit
    ))
}

fn fault_recovery(report: &ScenarioReport) -> Outcome {
    let fault = report.faults.first().ok_or("no fault recorded")?;
    let replacement = fault.replacement.clone().ok_or_else(|| format!("no replacement: {fault:?}"))?;
    check(report.requests.failed == 0, || format!("{} failed requests", report.requests.failed))?;
    let later = report
        .outcomes
        .iter()
        .find(|o| o.tick > fault.tick && o.capability == "analytics.activity")
        .ok_or("no activity request after the kill")?;
    check(later.dispatched.values().any(|i| *i == replacement), || format!("served by {:?}", later.dispatched))?;

    let mut cfg = ScenarioConfig::quiet(42, 2100);
    cfg.faults.kill = Some(KillSwitch { at_tick: 2000, kind: "reason.activity".into(), remove_template: true });
    cfg.requests.push(ScriptedRequest {
        at_tick: 2050,
        capability: "analytics.activity".into(),
        user: 0,
        repeat: 1,
        every: 10,
        params: Default::default(),
    });
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let out = Hub::boot(cfg).map_err(|e| e.to_string()).and_then(|hub| {
            let report = hub.run().map_err(|e| e.to_string())?;
            Ok((report, hub.services().resolve("reason.activity")))
        });
        let _ = tx.send(out);
    });
    let (report, resolved) = rx.recv_timeout(Duration::from_secs(120)).map_err(|_| "no-template run hung".to_owned())??;
    let o = report.outcomes.iter().find(|o| o.tick == 2050).ok_or("request after kill missing")?;
    let err = o.error.clone().unwrap_or_default();
    check(o.status == OutcomeStatus::Failed && err.contains("reason.activity"), || format!("outcome {o:?}"))?;
    check(matches!(resolved, Err(ServiceError::UnresolvableKind(_))), || format!("resolve gave {resolved:?}"))?;
    Ok(format!(
        "killed {} -> {replacement}, 0 failed; without template: \"{err}\"",
        fault.killed.as_deref().unwrap_or("?")
    ))
}

fn deterministic_cli() -> Outcome {
    let run = || -> Result<Vec<u8>, String> {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_hub"))
            .args(["run", "--seed", "42"])
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        Ok(out.stdout)
    };
    let (a, b) = (run()?, run()?);
    check(!a.is_empty() && a == b, || "reports differ".into())?;
    Ok(format!("two runs, {} identical bytes", a.len()))
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Halt(usize),
    Resume(usize),
    Kill(usize),
    Overload(usize),
    Calm(usize),
    Monitor,
    Resolve,
}

const KIND: &str = "reason.probe";

fn alphabet() -> Vec<Event> {
    let mut out = Vec::new();
    for slot in 0..2 {
        out.extend([Event::Halt(slot), Event::Resume(slot), Event::Kill(slot), Event::Overload(slot), Event::Calm(slot)]);
    }
    out.extend([Event::Monitor, Event::Resolve]);
    out
}

fn legal(from: ServiceState, to: ServiceState) -> bool {
    use ServiceState::*;
    matches!(
        (from, to),
        (Registered, Running) | (Running, Halted) | (Halted, Running) | (Registered | Running | Halted, Failed)
    )
}

fn fresh_repository() -> Repository {
    let repo = Repository::new().with_halt_depth(4);
    let template: MicroserviceTemplate =
        serde_json::from_value(json!({"templateId": "probe", "kind": KIND})).expect("template parses");
    repo.add_template(
        template,
        Arc::new(|_: &BTreeMap<String, Value>| {
            Arc::new(FnService(|_: &BTreeMap<String, Value>| Ok(Value::Null))) as Arc<dyn Microservice>
        }),
    );
    for _ in 0..2 {
        repo.instantiate(KIND, &BTreeMap::new()).expect("template instantiates");
    }
    repo
}

/// Observable state: every instance with its state and load, by id.
fn state_of(repo: &Repository) -> Vec<(String, ServiceState, u32)> {
    let mut v: Vec<_> = repo.descriptors().into_iter().map(|d| (d.id, d.state, d.load_queue_depth)).collect();
    v.sort();
    v
}

fn apply(repo: &Repository, e: Event) {
    let live: Vec<String> =
        state_of(repo).into_iter().filter(|(_, s, _)| *s != ServiceState::Failed).map(|(id, _, _)| id).collect();
    let target = |slot: usize| live.get(slot).cloned();
    match e {
        Event::Halt(s) => {
            target(s).map(|id| repo.set_lifecycle(&id, ServiceState::Halted));
        }
        Event::Resume(s) => {
            target(s).map(|id| repo.set_lifecycle(&id, ServiceState::Running));
        }
        Event::Kill(s) => {
            target(s).map(|id| repo.kill(&id));
        }
        Event::Overload(s) => {
            target(s).map(|id| repo.set_load(&id, 10));
        }
        Event::Calm(s) => {
            target(s).map(|id| repo.set_load(&id, 0));
        }
        Event::Monitor => {
            repo.monitor_tick();
        }
        Event::Resolve => {
            let _ = repo.resolve(KIND);
        }
    }
}

/// Checks one step: each logged transition is legal and starts from the
/// state the instance was in, replaying the log reproduces the new state,
/// and some instance of the kind is still running.
fn check_step(
    before: &[(String, ServiceState, u32)],
    log: &[(String, ServiceState, ServiceState)],
    after: &[(String, ServiceState, u32)],
) -> Result<(), String> {
    let mut states: BTreeMap<&str, ServiceState> = before.iter().map(|(id, s, _)| (id.as_str(), *s)).collect();
    for (id, from, to) in log {
        check(legal(*from, *to), || format!("illegal {id}: {from:?} -> {to:?}"))?;
        let current = states.get(id.as_str()).copied().unwrap_or(ServiceState::Registered);
        check(current == *from, || format!("{id} logged from {from:?} but was {current:?}"))?;
        states.insert(id, *to);
    }
    for (id, s, _) in after {
        let replayed = states.get(id.as_str()).copied().unwrap_or(ServiceState::Registered);
        check(replayed == *s, || format!("{id} is {s:?} but the log says {replayed:?}"))?;
    }
    let running = after.iter().filter(|(_, s, _)| *s == ServiceState::Running).count();
    check(running >= 1, || "no running instance left".into())
}

fn transition_traces() -> Outcome {
    let start = Instant::now();
    let events = alphabet();
    let depth = 6;
    let initial = state_of(&fresh_repository());
    check(initial.iter().filter(|(_, s, _)| *s == ServiceState::Running).count() == 2, || format!("{initial:?}"))?;
    // Breadth-first over distinct observable states; the registry's next
    // move depends only on that state, so one representative trace per
    // state at each depth covers every trace.
    let mut frontier: VecDeque<Vec<Event>> = VecDeque::from([Vec::new()]);
    let mut seen: BTreeSet<Vec<(String, ServiceState, u32)>> = BTreeSet::from([initial]);
    let mut steps = 0u64;
    for _ in 0..depth {
        let mut next = VecDeque::new();
        for trace in frontier {
            for &e in &events {
                let repo = fresh_repository();
                for &p in &trace {
                    apply(&repo, p);
                }
                let before = state_of(&repo);
                let logged = repo.transitions().len();
                apply(&repo, e);
                let after = state_of(&repo);
                check_step(&before, &repo.transitions()[logged..], &after)
                    .map_err(|m| format!("{m} after {:?}", [trace.as_slice(), &[e]].concat()))?;
                steps += 1;
                if seen.insert(after) {
                    let mut t = trace.clone();
                    t.push(e);
                    next.push_back(t);
                }
            }
        }
        frontier = next;
    }
    let traces = (events.len() as u64).pow(depth as u32);
    Ok(format!(
        "{traces} traces of {depth} over {} events, {} distinct states, {steps} steps checked, {:.2?}",
        events.len(),
        seen.len(),
        start.elapsed()
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, out: Outcome| {
        match &out {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    };
    report(1, "query oracle", query_oracle());
    report(2, "inference oracle", inference_oracle());
    report(3, "interop pipeline", interop_pipeline());
    report(4, "cache signature", cache_signature());
    report(5, "ml baselines", ml_baselines());
    report(6, "bus at-least-once", bus_at_least_once());
    match default_report() {
        Ok(r) => {
            report(7, "resolution paths", resolution_paths(&r));
            report(8, "fault recovery", fault_recovery(&r));
        }
        Err(e) => {
            report(7, "resolution paths", Err(e.clone()));
            report(8, "fault recovery", Err(e));
        }
    }
    report(9, "deterministic cli", deterministic_cli());
    report(10, "transition traces", transition_traces());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
