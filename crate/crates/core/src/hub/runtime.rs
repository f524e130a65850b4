use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analytics::planted::{activity_dataset, location_dataset, physio_dataset};
use crate::analytics::{activity_features, location_features, Analyzer, AnalyticsManager};
use crate::bus::{Broker, BusStats, Delivery, FaultConfig, Qos, Topic, TopicFilter, RETRY_INTERVAL_MS};
use crate::interop::{Documents, InteropServices, QueryOutcome};
use crate::knowledge::{ReasonerKind, Reasoners, TimeWindow};
use crate::object::{ActionOutcome, ActionSink, DomainId, ObjectRepository, UserModel, VirtualObject};
use crate::semantic::{GraphStore, Iri, Literal, Query};
use crate::services::{
    evaluate_request, orchestrate, parse_document, parse_duration_ms, AccessPolicy, CompositionFlow, FlowStatus,
    FnService, Microservice, MicroserviceDescriptor, MicroserviceTemplate, Repository, RequestLog, ServiceFactory,
    ServiceRequest,
};

use super::config::{KillSwitch, ScenarioConfig};
use super::domain::{decode_observations, DomainServer, IngestStats, SourceFormat};
use super::sim::{tick_time, user_iri, zone_iri, Simulator, Truth, TICK_MS};
use super::HubError;

pub const CENTRAL_SCOPE: &str = "central";
const HUB_CONTEXT: &str = "hub";

const HUB_ONTOLOGY: &str = include_str!("../../config/interop/hub.json");
const MEDICAL_MAPPING_DOC: &str = include_str!("../../config/interop/medical-devices.json");
const MEDICAL_ALIGNMENT_DOC: &str = include_str!("../../config/interop/medical.json");
const TEMPLATES: &str = include_str!("../../config/services/templates.json");
const FLOWS: &str = include_str!("../../config/services/flows.json");
const POLICY: &str = include_str!("../../config/services/policy.json");
const CAPABILITIES: &str = include_str!("../../config/services/capabilities.json");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Accuracy {
    pub made: u64,
    pub correct: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceStats {
    pub runs: u64,
    pub derived: u64,
    pub concluded: u64,
    pub errors: u64,
}

/// Shared state behind the microservices: domain servers, the central
/// repository, the interop services and the analytics server.
pub struct HubCore {
    pub domains: BTreeMap<DomainId, DomainServer>,
    pub central: Arc<ObjectRepository>,
    pub central_reasoners: Reasoners,
    pub interop: InteropServices,
    pub analytics: AnalyticsManager,
    truth: Mutex<BTreeMap<Iri, Truth>>,
    activity_log: Mutex<BTreeMap<Iri, Vec<(i64, String)>>>,
    accuracy: Mutex<BTreeMap<String, Accuracy>>,
    inference: Mutex<BTreeMap<String, InferenceStats>>,
    central_stats: Mutex<IngestStats>,
}

fn input_str<'a>(inputs: &'a BTreeMap<String, Value>, name: &str) -> Result<&'a str, String> {
    inputs.get(name).and_then(Value::as_str).ok_or_else(|| format!("input {name} must be a string"))
}

fn input_user(inputs: &BTreeMap<String, Value>) -> Result<Iri, String> {
    Iri::new(input_str(inputs, "user")?).map_err(|e| e.to_string())
}

fn input_at(inputs: &BTreeMap<String, Value>) -> Result<i64, String> {
    inputs.get("at").and_then(Value::as_i64).ok_or_else(|| "input at must be an integer".into())
}

fn input_window(inputs: &BTreeMap<String, Value>, at: i64) -> Result<TimeWindow, String> {
    let text = input_str(inputs, "window")?;
    let ms = parse_duration_ms(text).ok_or_else(|| format!("bad window {text:?}"))?;
    Ok(TimeWindow::ending_at(at, (ms / TICK_MS).max(1)))
}

fn numbers(readings: Vec<(i64, Literal)>) -> Vec<(i64, f64)> {
    readings.into_iter().filter_map(|(t, v)| v.as_f64().map(|x| (t, x))).collect()
}

impl HubCore {
    /// What `user` is actually doing right now, per the simulators.
    pub fn truth(&self, user: &Iri) -> Option<Truth> {
        self.truth.lock().get(user).cloned()
    }

    fn scope(&self, name: &str) -> Result<(&ObjectRepository, &Reasoners), String> {
        if name == CENTRAL_SCOPE {
            return Ok((&self.central, &self.central_reasoners));
        }
        let id = name.strip_prefix("domain:").ok_or_else(|| format!("unknown scope {name:?}"))?;
        self.domains
            .iter()
            .find(|(d, _)| d.as_str() == id)
            .map(|(_, s)| (s.repo.as_ref(), &s.reasoners))
            .ok_or_else(|| format!("unknown scope {name:?}"))
    }

    /// Retained readings of `property` from `user`'s objects, oldest first.
    fn readings(repo: &ObjectRepository, user: &Iri, property: &str) -> Vec<(i64, Literal)> {
        let mut out: Vec<(i64, Literal)> = repo
            .vos_owned_by(user)
            .iter()
            .filter(|vo| vo.observed_property.as_str() == property)
            .flat_map(|vo| repo.recent_observations(&vo.id))
            .collect();
        out.sort_by_key(|(t, _)| *t);
        out
    }

    fn score(&self, analyzer: Analyzer, user: &Iri, label: &str) {
        let truth = self.truth.lock().get(user).map(|t| match analyzer {
            Analyzer::Location => t.zone.clone(),
            Analyzer::Activity => t.activity.clone(),
            Analyzer::Physio => t.status.clone(),
        });
        if let Some(truth) = truth {
            let mut acc = self.accuracy.lock();
            let a = acc.entry(analyzer.name().to_owned()).or_default();
            a.made += 1;
            a.correct += u64::from(truth == label);
        }
    }

    /// Runs one microservice kind.
    pub fn call(&self, kind: &str, inputs: &BTreeMap<String, Value>) -> Result<Value, String> {
        match kind.split_once('.') {
            Some(("reason", k)) => self.reason(ReasonerKind::parse(k).ok_or(format!("no reasoner {k}"))?, inputs),
            Some(("analyze", k)) => self.analyze(Analyzer::parse(k).ok_or(format!("no analyzer {k}"))?, inputs),
            Some(("compose", "context")) => Ok(compose(inputs)),
            _ => Err(format!("no implementation for {kind}")),
        }
    }

    fn reason(&self, kind: ReasonerKind, inputs: &BTreeMap<String, Value>) -> Result<Value, String> {
        let user = input_user(inputs)?;
        let at = input_at(inputs)?;
        let window = input_window(inputs, at)?;
        let (_, reasoners) = self.scope(input_str(inputs, "scope")?)?;
        let result = reasoners.run(kind, &user, window);
        let mut stats = self.inference.lock();
        let s = stats.entry(kind.name().to_owned()).or_default();
        s.runs += 1;
        let derived = match result {
            Ok(d) => d,
            Err(e) => {
                s.errors += 1;
                return Err(e.to_string());
            }
        };
        s.derived += derived.len() as u64;
        let predicate = kind.conclusion();
        let conclusion = derived
            .iter()
            .find(|t| t.subject == user && t.predicate == predicate)
            .and_then(|t| t.object.as_iri())
            .map(|c| c.local_name().to_owned());
        if let Some(c) = &conclusion {
            s.concluded += 1;
            if kind == ReasonerKind::Activity {
                self.activity_log.lock().entry(user.clone()).or_default().push((at, c.clone()));
            }
        }
        Ok(json!({"reasoner": kind.name(), "conclusion": conclusion, "derived": derived.len()}))
    }

    fn analyze(&self, analyzer: Analyzer, inputs: &BTreeMap<String, Value>) -> Result<Value, String> {
        let user = input_user(inputs)?;
        let at = input_at(inputs)?;
        let (repo, _) = self.scope(input_str(inputs, "scope")?)?;
        let out = match analyzer {
            Analyzer::Location => {
                let zones: Vec<(i64, String)> = Self::readings(repo, &user, crate::semantic::vocab::ZONE_PROXIMITY)
                    .into_iter()
                    .filter_map(|(t, v)| Iri::new(v.lexical()).ok().map(|z| (t, z.local_name().to_owned())))
                    .collect();
                let p = self.analytics.predict(analyzer, &location_features(&zones, at)).map_err(|e| e.to_string())?;
                self.score(analyzer, &user, &p.label);
                serde_json::to_value(p)
            }
            Analyzer::Activity => {
                let motion = numbers(Self::readings(repo, &user, crate::semantic::vocab::MOTION));
                let history = self.activity_log.lock().get(&user).cloned().unwrap_or_default();
                let p = self
                    .analytics
                    .predict(analyzer, &activity_features(&history, &motion, at))
                    .map_err(|e| e.to_string())?;
                self.score(analyzer, &user, &p.label);
                serde_json::to_value(p)
            }
            Analyzer::Physio => {
                let hr = numbers(Self::readings(repo, &user, crate::semantic::vocab::HEART_RATE));
                let sys = numbers(Self::readings(repo, &user, crate::semantic::vocab::SYSTOLIC));
                let activity = inputs.get("activity").and_then(|a| a.get("conclusion")).and_then(Value::as_str);
                let a = self.analytics.analyze_physio(&hr, &sys, activity, at).map_err(|e| e.to_string())?;
                self.score(analyzer, &user, &a.prediction.label);
                serde_json::to_value(a)
            }
        };
        out.map_err(|e| e.to_string())
    }

    fn on_delivery(&self, domain: Option<&DomainId>, d: &Delivery) {
        let Some(source) = d.message.topic.segments().get(1).and_then(|s| DomainId::new(s).ok()) else {
            return;
        };
        let decoded = decode_observations(&source, &d.message.payload);
        match domain {
            Some(id) => {
                if let Some(server) = self.domains.get(id) {
                    match decoded {
                        Ok(obs) => server.receive(&obs),
                        Err(e) => log::warn!("{id}: {e}"),
                    }
                }
            }
            None => {
                let Ok(obs) = decoded else { return };
                let mut stats = self.central_stats.lock();
                for o in obs.iter().filter(|o| self.central.vo(&o.source).is_some()) {
                    stats.record(&self.central.ingest(o));
                }
            }
        }
    }
}

/// Each input's conclusion or label, keyed by input name.
fn compose(inputs: &BTreeMap<String, Value>) -> Value {
    let summary: serde_json::Map<String, Value> = inputs
        .iter()
        .map(|(k, v)| {
            let s = v
                .get("conclusion")
                .or_else(|| v.get("label"))
                .or_else(|| v.get("prediction").and_then(|p| p.get("label")))
                .cloned()
                .unwrap_or(Value::Null);
            let mut entry = json!({"value": s});
            if let Some(r) = v.get("recommendation") {
                entry["recommendation"] = r.clone();
            }
            (k.clone(), entry)
        })
        .collect();
    Value::Object(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionPath {
    SingleDomain,
    MashupCacheHit,
    MashupGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resolution {
    pub path: ResolutionPath,
    /// `central` or `domain:<id>`.
    pub scope: String,
    pub domains: Vec<DomainId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Mashup {
    pub signature: String,
    pub capability: String,
    pub classes: BTreeSet<Iri>,
    pub domains: BTreeSet<DomainId>,
    pub object_ids: BTreeSet<Iri>,
    pub materialized_graph: Iri,
    pub created_at: i64,
    pub hits: u64,
}

/// Canonical hash of the capability, its class requirements and the
/// domains that hold them. The user is not part of it.
pub fn mashup_signature(capability: &str, classes: &BTreeSet<Iri>, domains: &BTreeSet<DomainId>) -> String {
    let key = json!([
        capability,
        classes.iter().map(Iri::as_str).collect::<Vec<_>>(),
        domains.iter().map(DomainId::as_str).collect::<Vec<_>>(),
    ]);
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Completed,
    Failed,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestOutcome {
    pub request_id: String,
    pub capability: String,
    pub user: String,
    pub tick: u64,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    /// Step id → output.
    #[serde(default)]
    pub answer: BTreeMap<String, Value>,
    /// Step id → instance that served it.
    #[serde(default)]
    pub dispatched: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Interop service calls made while serving the request.
    #[serde(default)]
    pub pipeline: BTreeMap<String, u64>,
}

impl RequestOutcome {
    fn new(r: &ServiceRequest, tick: u64, status: OutcomeStatus) -> Self {
        RequestOutcome {
            request_id: r.request_id.clone(),
            capability: r.capability.clone(),
            user: r.user_id.to_string(),
            tick,
            status,
            resolution: None,
            answer: BTreeMap::new(),
            dispatched: BTreeMap::new(),
            error: None,
            pipeline: BTreeMap::new(),
        }
    }

    /// The final analytic answer: the last step's output.
    pub fn final_answer(&self) -> Option<&Value> {
        self.answer.get("compose").or_else(|| self.answer.iter().find(|(k, _)| k.starts_with("analyze")).map(|(_, v)| v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultEvent {
    pub tick: u64,
    pub kind: String,
    pub template_removed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub killed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathCounts {
    pub single_domain: u64,
    pub mashup_generated: u64,
    pub mashup_cache_hit: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestCounts {
    pub submitted: u64,
    pub completed: u64,
    pub failed: u64,
    pub denied: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceSummary {
    pub instances: Vec<MicroserviceDescriptor>,
    pub transitions: u64,
    pub reinstantiations: u64,
    pub monitor_actions: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleStats {
    pub evaluations: u64,
    pub firings: u64,
    pub failed_actions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub seed: u64,
    pub duration_ticks: u64,
    pub ticks_run: u64,
    pub users_per_domain: usize,
    pub requests: RequestCounts,
    pub paths: PathCounts,
    /// Cache hits over all mashup resolutions; 0 when there were none.
    pub cache_hit_ratio: f64,
    pub mashups: Vec<Mashup>,
    pub rules: BTreeMap<String, RuleStats>,
    pub inference: BTreeMap<String, InferenceStats>,
    pub predictions: BTreeMap<String, Accuracy>,
    pub models: BTreeMap<String, String>,
    pub bus: BusStats,
    pub ingestion: BTreeMap<String, IngestStats>,
    pub pipeline: BTreeMap<String, u64>,
    pub services: ServiceSummary,
    pub faults: Vec<FaultEvent>,
    pub outcomes: Vec<RequestOutcome>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

struct BusSink<'a>(&'a Broker);

impl ActionSink for BusSink<'_> {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), String> {
        let topic = Topic::new(topic).map_err(|e| e.to_string())?;
        self.0.publish("cvo", &topic, payload.to_vec(), Qos::AtMostOnce).map(|_| ()).map_err(|e| e.to_string())
    }

    fn invoke(&self, kind: &str, _params: &BTreeMap<String, String>) -> Result<String, String> {
        Err(format!("composite objects may not invoke {kind}"))
    }
}

#[derive(Default)]
struct Tally {
    rules: BTreeMap<String, RuleStats>,
    faults: Vec<FaultEvent>,
    outcomes: Vec<RequestOutcome>,
    reinstantiations: u64,
    monitor_actions: u64,
}

/// The central processing hub and everything it drives.
pub struct Hub {
    cfg: ScenarioConfig,
    core: Arc<HubCore>,
    broker: Arc<Broker>,
    services: Repository,
    policy: AccessPolicy,
    flows: BTreeMap<String, CompositionFlow>,
    requirements: BTreeMap<String, BTreeSet<Iri>>,
    log: Mutex<RequestLog>,
    mashups: Mutex<BTreeMap<String, Mashup>>,
    sim: Mutex<Simulator>,
    tick: AtomicU64,
    now: AtomicI64,
    next_request: AtomicU64,
    tally: Mutex<Tally>,
}

pub fn bundled_documents() -> Documents {
    let mut docs = Documents::default();
    for (stem, text) in [("hub", HUB_ONTOLOGY), ("medical-devices", MEDICAL_MAPPING_DOC), ("medical", MEDICAL_ALIGNMENT_DOC)] {
        docs.add(stem, text).expect("bundled interop documents are valid");
    }
    docs
}

fn user_models(cfg: &ScenarioConfig) -> Result<Vec<UserModel>, HubError> {
    (0..cfg.users_per_domain)
        .map(|i| {
            let spec = cfg.user_spec(i);
            let user_id = user_iri(i);
            Ok(UserModel {
                profile_graph: Iri::new(format!("{user_id}/profile"))?,
                user_id,
                preferences: spec.preferences,
                access_level: spec.access_level,
            })
        })
        .collect()
}

fn factory(core: Arc<HubCore>, kind: String) -> ServiceFactory {
    Arc::new(move |_params: &BTreeMap<String, Value>| {
        let core = core.clone();
        let kind = kind.clone();
        Arc::new(FnService(move |inputs: &BTreeMap<String, Value>| core.call(&kind, inputs))) as Arc<dyn Microservice>
    })
}

impl Hub {
    /// Boots the broker, the three domain servers, the central hub and the
    /// analytics server, and trains the analyzers on planted data.
    pub fn boot(cfg: ScenarioConfig) -> Result<Hub, HubError> {
        cfg.validate()?;
        let docs = bundled_documents();
        let users = user_models(&cfg)?;
        let zones: Vec<Iri> = crate::analytics::planted::ZONES.iter().map(|z| zone_iri(z)).collect();

        let mut domains = BTreeMap::new();
        for id in DomainId::defaults() {
            let server = DomainServer::build(id.clone(), &users, &docs).map_err(|e| HubError::abort(id.as_str(), e))?;
            if id.as_str() == DomainId::SMART_HOME {
                server.add_routine_cvos(users.len())?;
            }
            if id.as_str() == DomainId::SMART_OFFICE {
                zones.iter().for_each(|z| server.reasoners.declare_zone(z));
            }
            domains.insert(id, server);
        }

        let store = Arc::new(GraphStore::new());
        let central = Arc::new(ObjectRepository::new(store.clone()));
        for u in &users {
            store.create_graph(&u.profile_graph);
            central.register_user(u.clone())?;
        }
        let central_reasoners = Reasoners::bundled(central.clone())?;
        zones.iter().for_each(|z| central_reasoners.declare_zone(z));
        let interop = InteropServices::new(store, docs);

        let analytics = AnalyticsManager::bundled();
        let n = cfg.training_instances;
        for (analyzer, data) in [
            (Analyzer::Location, location_dataset(cfg.seed, n)),
            (Analyzer::Activity, activity_dataset(cfg.seed, n)),
            (Analyzer::Physio, physio_dataset(cfg.seed, n)),
        ] {
            analytics.train(analyzer, &data).map_err(|e| HubError::abort("analytics", e))?;
        }

        let core = Arc::new(HubCore {
            domains,
            central,
            central_reasoners,
            interop,
            analytics,
            truth: Mutex::new(BTreeMap::new()),
            activity_log: Mutex::new(BTreeMap::new()),
            accuracy: Mutex::new(BTreeMap::new()),
            inference: Mutex::new(BTreeMap::new()),
            central_stats: Mutex::new(IngestStats::default()),
        });

        let broker = Arc::new(Broker::new(FaultConfig {
            seed: cfg.seed,
            ack_drop: cfg.faults.ack_drop,
            delivery_drop: cfg.faults.delivery_drop,
        }));
        let subscribers: Vec<(String, String, Option<DomainId>)> = core
            .domains
            .keys()
            .map(|d| (format!("domain/{d}"), format!("obs/{d}/#"), Some(d.clone())))
            .chain([("hub/central".to_owned(), "obs/#".to_owned(), None)])
            .collect();
        for (client, filter, domain) in subscribers {
            let c = core.clone();
            broker.connect_handler(&client, Arc::new(move |d: &Delivery| c.on_delivery(domain.as_ref(), d)))?;
            broker.subscribe(&client, &TopicFilter::new(&filter)?, Qos::AtLeastOnce)?;
        }

        let services = Repository::new();
        let templates: Vec<MicroserviceTemplate> = parse_document("templates", TEMPLATES)?;
        for t in templates {
            let kind = t.kind.clone();
            services.add_template(t, factory(core.clone(), kind.clone()));
            services.instantiate(&kind, &BTreeMap::new())?;
        }
        let policy: AccessPolicy = parse_document("policy", POLICY)?;
        let flows: Vec<CompositionFlow> = parse_document("flows", FLOWS)?;
        for f in &flows {
            f.validate()?;
        }
        let flows = flows.into_iter().map(|f| (f.capability.clone(), f)).collect();
        let requirements: BTreeMap<String, BTreeSet<Iri>> = parse_document("capabilities", CAPABILITIES)?;

        let sim = Mutex::new(Simulator::new(&cfg));
        Ok(Hub {
            cfg,
            core,
            broker,
            services,
            policy,
            flows,
            requirements,
            log: Mutex::new(RequestLog::default()),
            mashups: Mutex::new(BTreeMap::new()),
            sim,
            tick: AtomicU64::new(0),
            now: AtomicI64::new(tick_time(0)),
            next_request: AtomicU64::new(1),
            tally: Mutex::new(Tally::default()),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn core(&self) -> &Arc<HubCore> {
        &self.core
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn services(&self) -> &Repository {
        &self.services
    }

    pub fn flows(&self) -> &BTreeMap<String, CompositionFlow> {
        &self.flows
    }

    pub fn requirements(&self, capability: &str) -> Option<&BTreeSet<Iri>> {
        self.requirements.get(capability)
    }

    /// Ticks run so far.
    pub fn ticks(&self) -> u64 {
        self.tick.load(Ordering::SeqCst)
    }

    /// Simulated time in ms.
    pub fn now(&self) -> i64 {
        self.now.load(Ordering::SeqCst)
    }

    pub fn mashups(&self) -> Vec<Mashup> {
        self.mashups.lock().values().cloned().collect()
    }

    pub fn outcomes(&self) -> Vec<RequestOutcome> {
        self.tally.lock().outcomes.clone()
    }

    pub fn faults(&self) -> Vec<FaultEvent> {
        self.tally.lock().faults.clone()
    }

    /// Runs the remaining ticks of the scenario and reports.
    pub fn run(&self) -> Result<ScenarioReport, HubError> {
        while self.ticks() < self.cfg.duration_ticks {
            self.step()?;
        }
        self.broker.settle(10 * TICK_MS as u64);
        Ok(self.report())
    }

    pub fn run_until(&self, tick: u64) -> Result<(), HubError> {
        while self.ticks() < tick {
            self.step()?;
        }
        Ok(())
    }

    /// One simulated minute: emissions over the bus, composite rules,
    /// service monitoring, injected faults, then scripted requests.
    pub fn step(&self) -> Result<(), HubError> {
        let tick = self.ticks();
        let t = tick_time(tick);
        self.now.store(t, Ordering::SeqCst);
        let emissions = {
            let mut sim = self.sim.lock();
            let out = sim.step(tick);
            let mut truth = self.core.truth.lock();
            for u in 0..self.cfg.users_per_domain {
                if let Some(tr) = sim.truth(u) {
                    truth.insert(user_iri(u), tr.clone());
                }
            }
            out
        };
        let inbound = emissions.into_iter().map(|e| (format!("sim/{}", e.domain), e.topic, e.payload)).collect();
        self.finish_tick(tick, inbound)
    }

    /// Advances one tick on observations that arrived from elsewhere, such
    /// as simulators publishing over a TCP bus, in place of the built-in
    /// simulators. Predictions go unscored since no truth is known.
    pub fn step_external(&self, inbound: Vec<(Topic, Vec<u8>)>) -> Result<(), HubError> {
        let tick = self.ticks();
        self.now.store(tick_time(tick), Ordering::SeqCst);
        let inbound = inbound.into_iter().map(|(topic, payload)| ("remote".to_owned(), topic, payload)).collect();
        self.finish_tick(tick, inbound)
    }

    fn finish_tick(&self, tick: u64, inbound: Vec<(String, Topic, Vec<u8>)>) -> Result<(), HubError> {
        for (publisher, topic, payload) in inbound {
            self.broker.publish(&publisher, &topic, payload, Qos::AtLeastOnce).map_err(|e| HubError::abort("bus", e))?;
        }
        let mut spent = 0;
        while !self.broker.is_idle() && spent + RETRY_INTERVAL_MS < TICK_MS as u64 {
            self.broker.advance(RETRY_INTERVAL_MS);
            spent += RETRY_INTERVAL_MS;
        }
        self.broker.advance(TICK_MS as u64 - spent);

        if self.cfg.cvo_every > 0 && tick % self.cfg.cvo_every == 0 {
            self.evaluate_cvos()?;
        }
        let changes = self.services.monitor_tick();
        self.tally.lock().monitor_actions += changes.len() as u64;
        if let Some(kill) = self.cfg.faults.kill.clone().filter(|k| k.at_tick == tick) {
            self.inject_kill(&kill);
        }
        for r in self.cfg.requests_at(tick) {
            let req = ServiceRequest {
                request_id: self.next_request_id(),
                user_id: user_iri(r.user),
                capability: r.capability.clone(),
                params: r.params.clone(),
                domains_hint: BTreeSet::new(),
            };
            if let Err(e) = self.submit(&req, false) {
                let mut o = RequestOutcome::new(&req, tick, OutcomeStatus::Failed);
                o.error = Some(e.to_string());
                self.tally.lock().outcomes.push(o);
            }
        }
        self.tick.store(tick + 1, Ordering::SeqCst);
        Ok(())
    }

    pub fn next_request_id(&self) -> String {
        format!("req-{:04}", self.next_request.fetch_add(1, Ordering::SeqCst))
    }

    fn evaluate_cvos(&self) -> Result<(), HubError> {
        let sink = BusSink(&self.broker);
        let mut tally = self.tally.lock();
        for (id, server) in &self.core.domains {
            for cvo in server.repo.cvos() {
                let fired = server.repo.evaluate_cvo_rules(&cvo.id, &sink)?;
                let s = tally.rules.entry(id.to_string()).or_default();
                s.evaluations += 1;
                s.firings += fired.len() as u64;
                s.failed_actions += fired.iter().filter(|f| matches!(f.outcome, ActionOutcome::Failed { .. })).count() as u64;
            }
        }
        Ok(())
    }

    /// Kills the first running instance of a kind, optionally withdrawing
    /// its template first.
    pub fn inject_kill(&self, k: &KillSwitch) -> FaultEvent {
        let mut ev = FaultEvent {
            tick: self.ticks(),
            kind: k.kind.clone(),
            template_removed: false,
            killed: None,
            replacement: None,
            error: None,
        };
        if k.remove_template {
            ev.template_removed = self.services.remove_template(&k.kind).is_some();
        }
        match self.services.discover(&k.kind).first() {
            None => ev.error = Some(format!("no running instance of {}", k.kind)),
            Some(victim) => {
                ev.killed = Some(victim.id.clone());
                match self.services.kill(&victim.id) {
                    Ok(replacement) => ev.replacement = replacement.map(|d| d.id),
                    Err(e) => ev.error = Some(e.to_string()),
                }
            }
        }
        let mut tally = self.tally.lock();
        tally.reinstantiations += u64::from(ev.replacement.is_some());
        tally.faults.push(ev.clone());
        ev
    }

    /// Admission, resolution and flow execution for one request. Requests
    /// that cannot be admitted at all are errors; everything after
    /// admission is reported in the outcome.
    pub fn submit(&self, req: &ServiceRequest, force_mashup: bool) -> Result<RequestOutcome, HubError> {
        let user = self.core.central.user(&req.user_id).ok_or_else(|| HubError::UnknownUser(req.user_id.clone()))?;
        let decision = evaluate_request(req, &user, &self.policy, &self.flows, &mut self.log.lock())?;
        let tick = self.ticks();
        if !decision.approved {
            let mut o = RequestOutcome::new(req, tick, OutcomeStatus::Denied);
            o.error = Some(decision.reason);
            self.tally.lock().outcomes.push(o.clone());
            return Ok(o);
        }
        let before = self.core.interop.counters();
        let mut o = RequestOutcome::new(req, tick, OutcomeStatus::Completed);
        match self.resolve(&req.user_id, &req.capability, force_mashup) {
            Err(e) => {
                o.status = OutcomeStatus::Failed;
                o.error = Some(e.to_string());
            }
            Ok(plan) => {
                let mut inputs = decision.params.clone();
                inputs.insert("user".into(), json!(req.user_id.as_str()));
                inputs.insert("at".into(), json!(self.now()));
                inputs.insert("scope".into(), json!(plan.scope));
                o.resolution = Some(plan);
                match orchestrate(&self.flows[&req.capability], &inputs, &self.services) {
                    Err(e) => {
                        o.status = OutcomeStatus::Failed;
                        o.error = Some(e.to_string());
                    }
                    Ok(r) => {
                        if let FlowStatus::Failed { step } = &r.status {
                            o.status = OutcomeStatus::Failed;
                            o.error = Some(format!("step {step}: {}", r.step_errors.get(step).cloned().unwrap_or_default()));
                        }
                        o.answer = r.step_outputs;
                        o.dispatched = r.dispatched;
                    }
                }
            }
        }
        let after = self.core.interop.counters();
        o.pipeline = after.iter().map(|(k, v)| (k.to_string(), v - before.get(k).copied().unwrap_or(0))).collect();
        self.tally.lock().outcomes.push(o.clone());
        Ok(o)
    }

    pub fn resolve(&self, user: &Iri, capability: &str, force_mashup: bool) -> Result<Resolution, HubError> {
        let classes = self
            .requirements
            .get(capability)
            .ok_or_else(|| crate::services::ServiceError::UnknownCapability(capability.to_owned()))?;
        self.resolve_classes(user, capability, classes, force_mashup)
    }

    /// Single domain when one domain holds every required class for the
    /// user; otherwise the cached mashup for the signature, generating it
    /// through the interop pipeline on first use.
    pub fn resolve_classes(
        &self,
        user: &Iri,
        capability: &str,
        classes: &BTreeSet<Iri>,
        force_mashup: bool,
    ) -> Result<Resolution, HubError> {
        if !force_mashup {
            let single = self
                .core
                .domains
                .iter()
                .find(|(_, d)| classes.iter().all(|c| !d.objects_of(c, Some(user)).is_empty()));
            if let Some((id, _)) = single {
                return Ok(Resolution {
                    path: ResolutionPath::SingleDomain,
                    scope: format!("domain:{id}"),
                    domains: vec![id.clone()],
                    signature: None,
                });
            }
        }
        let mut domains = BTreeSet::new();
        for c in classes {
            let holders: Vec<&DomainId> =
                self.core.domains.iter().filter(|(_, d)| !d.objects_of(c, None).is_empty()).map(|(id, _)| id).collect();
            if holders.is_empty() {
                return Err(HubError::UnsatisfiableRequirement(c.clone()));
            }
            domains.extend(holders.into_iter().cloned());
        }
        let signature = mashup_signature(capability, classes, &domains);
        let mut mashups = self.mashups.lock();
        let path = if let Some(m) = mashups.get_mut(&signature) {
            m.hits += 1;
            ResolutionPath::MashupCacheHit
        } else {
            let m = self.generate(&signature, capability, classes, &domains)?;
            mashups.insert(signature.clone(), m);
            ResolutionPath::MashupGenerated
        };
        Ok(Resolution {
            path,
            scope: CENTRAL_SCOPE.into(),
            domains: domains.into_iter().collect(),
            signature: Some(signature),
        })
    }

    /// Lifts every object of the required classes from each domain into a
    /// fresh central graph, registers the objects centrally and backfills
    /// their retained observations.
    fn generate(
        &self,
        signature: &str,
        capability: &str,
        classes: &BTreeSet<Iri>,
        domains: &BTreeSet<DomainId>,
    ) -> Result<Mashup, HubError> {
        let core = &self.core;
        let graph = Iri::new(format!("urn:hub:graph:mashup:{}", &signature[..16]))?;
        let mut object_ids = BTreeSet::new();
        for id in domains {
            let server = &core.domains[id];
            let ids: BTreeSet<Iri> = classes.iter().flat_map(|c| server.objects_of(c, None)).collect();
            if ids.is_empty() {
                continue;
            }
            let native = match (server.format, &server.mapping) {
                (SourceFormat::RelationalCsv, Some(mapping)) => {
                    core.interop.translate(mapping, &server.export_records(&ids))?
                }
                _ => server.export_descriptions(&ids),
            };
            let lifted = core.interop.lift(&native, HUB_CONTEXT, server.alignment.as_deref(), &graph)?;
            if !lifted.report.valid {
                return Err(HubError::InvalidLift { domain: id.to_string(), violations: lifted.report.violations.len() });
            }
            for vo_id in ids {
                if core.central.vo(&vo_id).is_none() {
                    let vo = server.repo.vo(&vo_id).ok_or_else(|| HubError::abort(id.as_str(), "object vanished"))?;
                    core.central.register_vo(VirtualObject { description_graph: graph.clone(), ..vo })?;
                    let mut stats = core.central_stats.lock();
                    for o in server.repo.recent(&vo_id) {
                        stats.record(&core.central.ingest(&o));
                    }
                }
                object_ids.insert(vo_id);
            }
        }
        Ok(Mashup {
            signature: signature.to_owned(),
            capability: capability.to_owned(),
            classes: classes.clone(),
            domains: domains.clone(),
            object_ids,
            materialized_graph: graph,
            created_at: self.now(),
            hits: 0,
        })
    }

    /// Runs a query over the central store through the query log, or over a
    /// domain's own store.
    pub fn query(&self, q: &Query, domain: Option<&DomainId>) -> Result<QueryOutcome, HubError> {
        match domain {
            None => Ok(self.core.interop.query(q)?),
            Some(d) => {
                let server = self.core.domains.get(d).ok_or_else(|| HubError::Config(format!("no domain {d}")))?;
                let bindings = server.repo.store().evaluate(q)?;
                Ok(QueryOutcome {
                    signature: crate::interop::signature(q),
                    bindings,
                    status: crate::interop::CacheStatus::MissGenerated,
                })
            }
        }
    }

    /// Every registered object: each domain's, then the central ones.
    pub fn objects(&self) -> Vec<(String, VirtualObject)> {
        let mut out: Vec<(String, VirtualObject)> = self
            .core
            .domains
            .iter()
            .flat_map(|(id, s)| s.repo.vos().into_iter().map(move |v| (format!("domain:{id}"), v)))
            .collect();
        out.extend(self.core.central.vos().into_iter().map(|v| (CENTRAL_SCOPE.to_owned(), v)));
        out
    }

    pub fn report(&self) -> ScenarioReport {
        let tally = self.tally.lock();
        let mut requests = RequestCounts::default();
        let mut paths = PathCounts::default();
        for o in &tally.outcomes {
            requests.submitted += 1;
            match o.status {
                OutcomeStatus::Completed => requests.completed += 1,
                OutcomeStatus::Failed => requests.failed += 1,
                OutcomeStatus::Denied => requests.denied += 1,
            }
            match o.resolution.as_ref().map(|r| r.path) {
                Some(ResolutionPath::SingleDomain) => paths.single_domain += 1,
                Some(ResolutionPath::MashupGenerated) => paths.mashup_generated += 1,
                Some(ResolutionPath::MashupCacheHit) => paths.mashup_cache_hit += 1,
                None => {}
            }
        }
        let mashup_total = paths.mashup_generated + paths.mashup_cache_hit;
        let cache_hit_ratio =
            if mashup_total == 0 { 0.0 } else { paths.mashup_cache_hit as f64 / mashup_total as f64 };
        let mut ingestion: BTreeMap<String, IngestStats> =
            self.core.domains.iter().map(|(id, s)| (id.to_string(), s.stats())).collect();
        ingestion.insert(CENTRAL_SCOPE.into(), *self.core.central_stats.lock());
        let models = self
            .core
            .analytics
            .configs()
            .iter()
            .map(|(a, c)| (a.name().to_owned(), c.algorithm.name().to_owned()))
            .collect();
        let mut instances = self.services.descriptors();
        instances.sort_by(|a, b| a.id.cmp(&b.id));
        ScenarioReport {
            seed: self.cfg.seed,
            duration_ticks: self.cfg.duration_ticks,
            ticks_run: self.ticks(),
            users_per_domain: self.cfg.users_per_domain,
            requests,
            paths,
            cache_hit_ratio,
            mashups: self.mashups(),
            rules: tally.rules.clone(),
            inference: self.core.inference.lock().clone(),
            predictions: self.core.accuracy.lock().clone(),
            models,
            bus: self.broker.stats(),
            ingestion,
            pipeline: self.core.interop.counters().into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
            services: ServiceSummary {
                instances,
                transitions: self.services.transitions().len() as u64,
                reinstantiations: tally.reinstantiations,
                monitor_actions: tally.monitor_actions,
            },
            faults: tally.faults.clone(),
            outcomes: tally.outcomes.clone(),
        }
    }
}

/// Boots a hub for `cfg`, runs it to completion and reports.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<ScenarioReport, HubError> {
    Hub::boot(cfg)?.run()
}
