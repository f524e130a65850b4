use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::semantic::{vocab, GraphStore, Iri, Literal, Term, Triple, TriplePattern, Variable};

use super::rule::{instantiate, render_template};
use super::{
    observation_iri, CompositeVo, DomainId, ObjectError, Observation, RuleAction, UserModel,
    VirtualObject,
};

/// Observations kept per object in its data graph; older ones move to the
/// history log.
pub const DEFAULT_RETENTION: usize = 100;

/// Side-effect targets for rule actions.
pub trait ActionSink: Sync {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), String>;
    fn invoke(&self, kind: &str, params: &BTreeMap<String, String>) -> Result<String, String>;
}

/// A sink with nothing attached: every publish and invoke fails.
pub struct NoSink;

impl ActionSink for NoSink {
    fn publish(&self, _topic: &str, _payload: &[u8]) -> Result<(), String> {
        Err("no message bus attached".into())
    }

    fn invoke(&self, kind: &str, _params: &BTreeMap<String, String>) -> Result<String, String> {
        Err(format!("no service runtime attached for {kind}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum ActionOutcome {
    Asserted { new_triples: usize },
    Published { topic: String },
    Invoked { kind: String, result: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FiredRule {
    pub rule_id: String,
    /// Variable name → N-Triples rendering of the bound term.
    pub bindings: BTreeMap<String, String>,
    pub outcome: ActionOutcome,
}

/// One retired observation, as written to the per-domain history log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub domain: String,
    pub source: String,
    pub sequence: u64,
    pub timestamp: i64,
    pub value: String,
    pub datatype: String,
}

struct Retained {
    sequence: u64,
    timestamp: i64,
    value: Literal,
    triples: [Triple; 2],
}

#[derive(Default)]
struct SourceState {
    last_sequence: Option<u64>,
    last_timestamp: i64,
    window: VecDeque<Retained>,
}

/// Registry of virtual objects, composite objects and users over a shared
/// graph store.
pub struct ObjectRepository {
    store: Arc<GraphStore>,
    vos: RwLock<BTreeMap<Iri, VirtualObject>>,
    cvos: RwLock<BTreeMap<Iri, CompositeVo>>,
    users: RwLock<BTreeMap<Iri, UserModel>>,
    sources: RwLock<HashMap<Iri, Arc<Mutex<SourceState>>>>,
    retention: usize,
    history_dir: Option<PathBuf>,
    history_counts: Mutex<BTreeMap<String, u64>>,
}

impl ObjectRepository {
    pub fn new(store: Arc<GraphStore>) -> Self {
        ObjectRepository {
            store,
            vos: RwLock::default(),
            cvos: RwLock::default(),
            users: RwLock::default(),
            sources: RwLock::default(),
            retention: DEFAULT_RETENTION,
            history_dir: None,
            history_counts: Mutex::default(),
        }
    }

    pub fn with_retention(mut self, retention: usize) -> Self {
        self.retention = retention.max(1);
        self
    }

    /// Append retired observations to `<dir>/<domain>.jsonl`.
    pub fn with_history_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.history_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> &Arc<GraphStore> {
        &self.store
    }

    fn is_registered(&self, id: &Iri) -> bool {
        self.vos.read().contains_key(id) || self.cvos.read().contains_key(id)
    }

    fn has_type_triple(&self, graph: &Iri, id: &Iri) -> bool {
        let pattern = TriplePattern::new(
            id.clone(),
            vocab::rdf_type(),
            Variable::new("class").expect("static name"),
        )
        .expect("IRI subject and predicate");
        !self.store.match_pattern(std::slice::from_ref(graph), &pattern).is_empty()
    }

    /// Registers an object whose description graph already holds its type
    /// triple.
    pub fn register_vo(&self, vo: VirtualObject) -> Result<Iri, ObjectError> {
        if self.is_registered(&vo.id) {
            return Err(ObjectError::DuplicateId(vo.id));
        }
        if !self.has_type_triple(&vo.description_graph, &vo.id) {
            return Err(ObjectError::MissingDescription { id: vo.id, graph: vo.description_graph });
        }
        let mut vos = self.vos.write();
        if vos.contains_key(&vo.id) {
            return Err(ObjectError::DuplicateId(vo.id));
        }
        self.store.create_graph(&vo.data_graph());
        self.sources.write().entry(vo.id.clone()).or_default();
        let id = vo.id.clone();
        vos.insert(id.clone(), vo);
        Ok(id)
    }

    /// Writes the standard description (typed as `class`) and registers.
    pub fn register_described(&self, vo: VirtualObject, class: &Iri) -> Result<Iri, ObjectError> {
        if self.is_registered(&vo.id) {
            return Err(ObjectError::DuplicateId(vo.id));
        }
        self.store.insert_all(&vo.description_graph, vo.describe(class));
        self.register_vo(vo)
    }

    pub fn vo(&self, id: &Iri) -> Option<VirtualObject> {
        self.vos.read().get(id).cloned()
    }

    /// All registered objects, ordered by id.
    pub fn vos(&self) -> Vec<VirtualObject> {
        self.vos.read().values().cloned().collect()
    }

    pub fn vos_in(&self, domain: &DomainId) -> Vec<VirtualObject> {
        self.vos.read().values().filter(|v| &v.domain == domain).cloned().collect()
    }

    pub fn vos_owned_by(&self, user: &Iri) -> Vec<VirtualObject> {
        self.vos.read().values().filter(|v| v.owner.as_ref() == Some(user)).cloned().collect()
    }

    /// Classes of an object, read from its description graph.
    pub fn classes_of(&self, id: &Iri) -> Vec<Iri> {
        let Some(graph) = self.vo(id).map(|v| v.description_graph) else {
            return Vec::new();
        };
        let generic = vocab::iri(vocab::VIRTUAL_OBJECT);
        self.store
            .triples(&graph)
            .into_iter()
            .filter(|t| &t.subject == id && t.predicate.as_str() == vocab::RDF_TYPE)
            .filter_map(|t| t.object.as_iri().cloned())
            .filter(|c| c != &generic)
            .collect()
    }

    /// Materializes one observation as two triples in the source's data
    /// graph: `(obs, observedProperty, value)` and `(obs, timestamp, ms)`.
    pub fn ingest(&self, obs: &Observation) -> Result<usize, ObjectError> {
        let vo = self.vo(&obs.source).ok_or_else(|| ObjectError::UnknownSource(obs.source.clone()))?;
        let state = self
            .sources
            .read()
            .get(&obs.source)
            .cloned()
            .ok_or_else(|| ObjectError::UnknownSource(obs.source.clone()))?;
        let mut state = state.lock();
        if let Some(last) = state.last_sequence {
            if obs.sequence <= last {
                return Err(ObjectError::StaleSequence { object: obs.source.clone(), last, got: obs.sequence });
            }
            if obs.timestamp < state.last_timestamp {
                return Err(ObjectError::TimestampRegression {
                    object: obs.source.clone(),
                    last: state.last_timestamp,
                    got: obs.timestamp,
                });
            }
        }
        let subject = observation_iri(&obs.source, obs.sequence);
        let triples = [
            Triple::new(subject.clone(), vo.observed_property.clone(), obs.value.clone()),
            Triple::new(subject, vocab::iri(vocab::TIMESTAMP), Literal::integer(obs.timestamp)),
        ];
        let graph = vo.data_graph();
        let added = self.store.insert_all(&graph, triples.iter().cloned());
        state.last_sequence = Some(obs.sequence);
        state.last_timestamp = obs.timestamp;
        state.window.push_back(Retained {
            sequence: obs.sequence,
            timestamp: obs.timestamp,
            value: obs.value.clone(),
            triples,
        });
        let mut retired = Vec::new();
        while state.window.len() > self.retention {
            let old = state.window.pop_front().expect("len checked");
            self.store.replace(&graph, &old.triples, &[]);
            retired.push(old);
        }
        drop(state);
        if !retired.is_empty() {
            self.retire(&vo, retired)?;
        }
        Ok(added)
    }

    fn retire(&self, vo: &VirtualObject, old: Vec<Retained>) -> Result<(), ObjectError> {
        let domain = vo.domain.as_str().to_owned();
        *self.history_counts.lock().entry(domain.clone()).or_default() += old.len() as u64;
        let Some(dir) = &self.history_dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        let mut file = OpenOptions::new().create(true).append(true).open(dir.join(format!("{domain}.jsonl")))?;
        for r in old {
            let rec = HistoryRecord {
                domain: domain.clone(),
                source: vo.id.to_string(),
                sequence: r.sequence,
                timestamp: r.timestamp,
                value: r.value.lexical().to_owned(),
                datatype: r.value.datatype().short_name().to_owned(),
            };
            let line = serde_json::to_string(&rec).expect("history records serialize");
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    /// Number of observations retired to the history log, per domain.
    pub fn history_counts(&self) -> BTreeMap<String, u64> {
        self.history_counts.lock().clone()
    }

    /// Highest sequence accepted from `source`.
    pub fn max_sequence(&self, source: &Iri) -> Option<u64> {
        self.sources.read().get(source).and_then(|s| s.lock().last_sequence)
    }

    /// Observations currently held in the data graph, oldest first, as
    /// (timestamp, value) pairs.
    pub fn recent_observations(&self, source: &Iri) -> Vec<(i64, Literal)> {
        self.sources
            .read()
            .get(source)
            .map(|s| s.lock().window.iter().map(|r| (r.timestamp, r.value.clone())).collect())
            .unwrap_or_default()
    }

    /// Like [`Self::recent_observations`] with sequence numbers.
    pub fn recent(&self, source: &Iri) -> Vec<Observation> {
        self.sources
            .read()
            .get(source)
            .map(|s| {
                s.lock()
                    .window
                    .iter()
                    .map(|r| Observation {
                        source: source.clone(),
                        timestamp: r.timestamp,
                        value: r.value.clone(),
                        sequence: r.sequence,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn register_cvo(&self, cvo: CompositeVo) -> Result<Iri, ObjectError> {
        if cvo.members.is_empty() {
            return Err(ObjectError::EmptyMembers(cvo.id));
        }
        if self.is_registered(&cvo.id) {
            return Err(ObjectError::DuplicateId(cvo.id));
        }
        {
            let vos = self.vos.read();
            if let Some(m) = cvo.members.iter().find(|m| !vos.contains_key(*m)) {
                return Err(ObjectError::UnknownMember(m.clone()));
            }
        }
        let mut desc = vec![Triple::new(cvo.id.clone(), vocab::rdf_type(), vocab::iri(vocab::COMPOSITE_OBJECT))];
        desc.extend(cvo.members.iter().map(|m| Triple::new(cvo.id.clone(), vocab::iri(vocab::MEMBER), m.clone())));
        self.store.insert_all(&cvo.description_graph, desc);
        let id = cvo.id.clone();
        self.cvos.write().insert(id.clone(), cvo);
        Ok(id)
    }

    pub fn cvo(&self, id: &Iri) -> Option<CompositeVo> {
        self.cvos.read().get(id).cloned()
    }

    pub fn cvos(&self) -> Vec<CompositeVo> {
        self.cvos.read().values().cloned().collect()
    }

    /// Runs every rule of the composite over a snapshot of its members' data
    /// graphs. Actions execute once per distinct binding; a failing action
    /// is recorded and the remaining rules still run.
    pub fn evaluate_cvo_rules(&self, id: &Iri, sink: &dyn ActionSink) -> Result<Vec<FiredRule>, ObjectError> {
        let cvo = self.cvo(id).ok_or_else(|| ObjectError::UnknownObject(id.clone()))?;
        let scope: Vec<Iri> = {
            let vos = self.vos.read();
            cvo.members.iter().filter_map(|m| vos.get(m)).map(VirtualObject::data_graph).collect()
        };
        let snapshot = self.store.snapshot(&scope);
        let mut fired = Vec::new();
        for rule in &cvo.rules {
            let rows = rule
                .condition
                .as_query(Vec::new())
                .and_then(|q| q.evaluate_on(&snapshot));
            let rows = match rows {
                Ok(rows) => rows,
                Err(e) => {
                    fired.push(FiredRule {
                        rule_id: rule.id.clone(),
                        bindings: BTreeMap::new(),
                        outcome: ActionOutcome::Failed { reason: e.to_string() },
                    });
                    continue;
                }
            };
            for row in rows.rows() {
                let binding: BTreeMap<Variable, Term> =
                    rows.variables().iter().cloned().zip(row.iter().cloned()).collect();
                let outcome = self.run_action(&cvo, &rule.action, &binding, sink);
                fired.push(FiredRule {
                    rule_id: rule.id.clone(),
                    bindings: binding.iter().map(|(k, v)| (k.name().to_owned(), v.to_string())).collect(),
                    outcome,
                });
            }
        }
        Ok(fired)
    }

    fn run_action(
        &self,
        cvo: &CompositeVo,
        action: &RuleAction,
        binding: &BTreeMap<Variable, Term>,
        sink: &dyn ActionSink,
    ) -> ActionOutcome {
        match action {
            RuleAction::AssertTriples(templates) => {
                let triples: Vec<Triple> = templates.iter().filter_map(|t| instantiate(t, binding)).collect();
                ActionOutcome::Asserted { new_triples: self.store.insert_all(&cvo.description_graph, triples) }
            }
            RuleAction::PublishMessage { topic, payload } => {
                let topic = render_template(topic, binding);
                let payload = render_template(payload, binding);
                match sink.publish(&topic, payload.as_bytes()) {
                    Ok(()) => ActionOutcome::Published { topic },
                    Err(reason) => ActionOutcome::Failed { reason },
                }
            }
            RuleAction::InvokeService { kind, params } => {
                let kind = render_template(kind, binding);
                let params = params.iter().map(|(k, v)| (k.clone(), render_template(v, binding))).collect();
                match sink.invoke(&kind, &params) {
                    Ok(result) => ActionOutcome::Invoked { kind, result },
                    Err(reason) => ActionOutcome::Failed { reason },
                }
            }
        }
    }

    /// Registers a user; the profile graph must already exist.
    pub fn register_user(&self, user: UserModel) -> Result<Iri, ObjectError> {
        if user.access_level > 3 {
            return Err(ObjectError::InvalidAccessLevel(user.access_level));
        }
        if !self.store.has_graph(&user.profile_graph) {
            return Err(ObjectError::MissingProfile(user.profile_graph));
        }
        let mut users = self.users.write();
        if users.contains_key(&user.user_id) {
            return Err(ObjectError::DuplicateId(user.user_id));
        }
        let id = user.user_id.clone();
        users.insert(id.clone(), user);
        Ok(id)
    }

    pub fn user(&self, id: &Iri) -> Option<UserModel> {
        self.users.read().get(id).cloned()
    }

    pub fn users(&self) -> Vec<UserModel> {
        self.users.read().values().cloned().collect()
    }
}
