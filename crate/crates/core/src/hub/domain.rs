use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::interop::{align, read_csv, translate_relational, Documents, RelationalRecord};
use crate::knowledge::Reasoners;
use crate::object::{CompositeVo, DomainId, ObjectError, ObjectRepository, Observation, Rule, UserModel, VirtualObject, VoKind};
use crate::semantic::{vocab, GraphStore, Iri, Literal, Term, Triple};

use super::sim::{device_kinds, medical_devices_csv, vo_iri};
use super::HubError;

pub const MEDICAL_MAPPING: &str = "medical-devices";
pub const MEDICAL_ALIGNMENT: &str = "medical";

/// How a domain ships its data, and so which interop path it takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    RelationalCsv,
    JsonObservations,
}

impl SourceFormat {
    pub fn of(domain: &DomainId) -> Self {
        if domain.as_str() == DomainId::MEDICAL_FACILITY {
            SourceFormat::RelationalCsv
        } else {
            SourceFormat::JsonObservations
        }
    }
}

/// Parses one bus payload into observations.
pub fn decode_observations(domain: &DomainId, payload: &[u8]) -> Result<Vec<Observation>, HubError> {
    let bad = |e: &dyn std::fmt::Display| HubError::Payload(format!("{domain}: {e}"));
    match SourceFormat::of(domain) {
        SourceFormat::JsonObservations => {
            serde_json::from_slice::<Observation>(payload).map(|o| vec![o]).map_err(|e| bad(&e))
        }
        SourceFormat::RelationalCsv => {
            let mut r = csv::Reader::from_reader(payload);
            let mut out = Vec::new();
            for row in r.deserialize::<(String, u64, i64, f64)>() {
                let (device, sequence, timestamp, value) = row.map_err(|e| bad(&e))?;
                out.push(Observation { source: vo_iri(domain, &device), timestamp, value: Literal::decimal(value), sequence });
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestStats {
    pub received: u64,
    pub ingested: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

impl IngestStats {
    pub(crate) fn record(&mut self, r: &Result<usize, ObjectError>) {
        self.received += 1;
        match r {
            Ok(_) => self.ingested += 1,
            Err(ObjectError::StaleSequence { .. }) => self.duplicates += 1,
            Err(_) => self.rejected += 1,
        }
    }
}

/// One application server: its own store, object repository and reasoners.
pub struct DomainServer {
    pub id: DomainId,
    pub format: SourceFormat,
    pub repo: Arc<ObjectRepository>,
    pub reasoners: Reasoners,
    pub description_graph: Iri,
    pub mapping: Option<String>,
    pub alignment: Option<String>,
    /// Object → class in the hub vocabulary.
    catalog: BTreeMap<Iri, Iri>,
    /// The device table, for relational domains.
    records: Vec<RelationalRecord>,
    stats: Mutex<IngestStats>,
}

impl DomainServer {
    pub fn build(id: DomainId, users: &[UserModel], docs: &Documents) -> Result<Self, HubError> {
        let store = Arc::new(GraphStore::new());
        let repo = Arc::new(ObjectRepository::new(store.clone()));
        let reasoners = Reasoners::bundled(repo.clone())?;
        let format = SourceFormat::of(&id);
        let description_graph = Iri::new(format!("urn:hub:graph:{id}:descriptions"))?;
        store.create_graph(&description_graph);
        for u in users {
            store.create_graph(&u.profile_graph);
            repo.register_user(u.clone())?;
        }
        let mut server = DomainServer {
            id,
            format,
            repo,
            reasoners,
            description_graph,
            mapping: None,
            alignment: None,
            catalog: BTreeMap::new(),
            records: Vec::new(),
            stats: Mutex::new(IngestStats::default()),
        };
        match format {
            SourceFormat::JsonObservations => server.register_described(users)?,
            SourceFormat::RelationalCsv => server.register_relational(users.len(), docs)?,
        }
        Ok(server)
    }

    fn vo(&self, device: &str, kind: &super::sim::DeviceKind, owner: Iri) -> VirtualObject {
        VirtualObject {
            id: vo_iri(&self.id, device),
            domain: self.id.clone(),
            kind: VoKind::Sensor,
            description_graph: self.description_graph.clone(),
            observed_property: vocab::iri(kind.property),
            unit: kind.unit.to_owned(),
            owner: Some(owner),
        }
    }

    fn register_described(&mut self, users: &[UserModel]) -> Result<(), HubError> {
        for (index, user) in users.iter().enumerate() {
            for kind in device_kinds(&self.id) {
                let class = vocab::iri(kind.class);
                let id = self.repo.register_described(self.vo(&kind.device_id(index), kind, user.user_id.clone()), &class)?;
                self.catalog.insert(id, class);
            }
        }
        Ok(())
    }

    /// Device descriptions arrive as table rows in the facility's own
    /// vocabulary; the hub class is known through the alignment.
    fn register_relational(&mut self, users: usize, docs: &Documents) -> Result<(), HubError> {
        let mapping = docs
            .mappings
            .get(MEDICAL_MAPPING)
            .ok_or_else(|| HubError::Config(format!("missing mapping {MEDICAL_MAPPING}")))?;
        let alignment = docs
            .alignments
            .get(MEDICAL_ALIGNMENT)
            .ok_or_else(|| HubError::Config(format!("missing alignment {MEDICAL_ALIGNMENT}")))?;
        self.records = read_csv(&mapping.table, "device_id", &medical_devices_csv(users))?;
        let local = translate_relational(&self.records, mapping)?;
        self.repo.store().insert_all(&self.description_graph, local.iter().cloned());
        let ty = vocab::rdf_type();
        for t in align(&local, alignment).iter().filter(|t| t.predicate == ty) {
            if let Term::Iri(c) = &t.object {
                self.catalog.insert(t.subject.clone(), c.clone());
            }
        }
        for (index, kind) in (0..users).flat_map(|u| device_kinds(&self.id).iter().map(move |k| (u, k))) {
            let vo = self.vo(&kind.device_id(index), kind, super::sim::user_iri(index));
            self.repo.register_vo(vo)?;
        }
        self.mapping = Some(MEDICAL_MAPPING.into());
        self.alignment = Some(MEDICAL_ALIGNMENT.into());
        Ok(())
    }

    /// One composite per user over the home's motion and light sensors,
    /// publishing an event for every vigorous motion reading retained.
    pub fn add_routine_cvos(&self, users: usize) -> Result<Vec<Iri>, HubError> {
        let mut out = Vec::new();
        for u in 0..users {
            let members: BTreeSet<Iri> =
                ["motion", "luminosity"].iter().map(|p| vo_iri(&self.id, &format!("{p}-u{u}"))).collect();
            let rule = Rule::from_json(&json!({
                "id": "vigorous-motion",
                "where": [["?o", vocab::MOTION, "?m"], ["?o", vocab::TIMESTAMP, "?t"]],
                "filters": [{"var": "?m", "op": ">=", "value": 25}],
                "action": {"type": "publish", "topic": format!("cvo/routine-u{u}/events"), "payload": "?m at ?t"},
            }))?;
            let cvo = CompositeVo {
                id: Iri::new(format!("urn:hub:cvo:{}:routine-u{u}", self.id))?,
                members,
                rules: vec![rule],
                description_graph: Iri::new(format!("urn:hub:graph:{}:cvo:routine-u{u}", self.id))?,
            };
            out.push(self.repo.register_cvo(cvo)?);
        }
        Ok(out)
    }

    pub fn receive(&self, observations: &[Observation]) {
        let mut stats = self.stats.lock();
        for o in observations {
            stats.record(&self.repo.ingest(o));
        }
    }

    pub fn stats(&self) -> IngestStats {
        *self.stats.lock()
    }

    /// Hub-vocabulary class of each registered object.
    pub fn catalog(&self) -> &BTreeMap<Iri, Iri> {
        &self.catalog
    }

    pub fn classes(&self) -> BTreeSet<&Iri> {
        self.catalog.values().collect()
    }

    /// Objects of `class`, optionally only those serving `owner`.
    pub fn objects_of(&self, class: &Iri, owner: Option<&Iri>) -> Vec<Iri> {
        self.catalog
            .iter()
            .filter(|(_, c)| *c == class)
            .filter(|(id, _)| match owner {
                None => true,
                Some(o) => self.repo.vo(id).and_then(|v| v.owner).as_ref() == Some(o),
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Native description triples of `objects`, as the domain would export
    /// them.
    pub fn export_descriptions(&self, objects: &BTreeSet<Iri>) -> Vec<Triple> {
        self.repo
            .store()
            .triples(&self.description_graph)
            .into_iter()
            .filter(|t| objects.contains(&t.subject))
            .collect()
    }

    /// Device-table rows for `objects`, for relational domains.
    pub fn export_records(&self, objects: &BTreeSet<Iri>) -> Vec<RelationalRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.columns
                    .get(&r.primary_key)
                    .is_some_and(|pk| objects.contains(&vo_iri(&self.id, &pk.render())))
            })
            .cloned()
            .collect()
    }
}
