//! Virtual objects (digital twins of devices), composite virtual objects
//! with condition→action rules, user models, and the repository that binds
//! device observations to semantic graphs.

mod repository;
mod rule;

pub use repository::{
    ActionOutcome, ActionSink, FiredRule, HistoryRecord, NoSink, ObjectRepository, DEFAULT_RETENTION,
};
pub use rule::{render_template, Condition, Rule, RuleAction};
pub(crate) use rule::{check_templates, instantiate};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantic::{vocab, Iri, Literal, SemanticError, Triple};

#[derive(Debug, Error)]
pub enum ObjectError {
    #[error("object {0} is already registered")]
    DuplicateId(Iri),
    #[error("description graph {graph} lacks a type triple for {id}")]
    MissingDescription { id: Iri, graph: Iri },
    #[error("observation from unregistered source {0}")]
    UnknownSource(Iri),
    #[error("stale sequence {got} from {object}; last accepted {last}")]
    StaleSequence { object: Iri, last: u64, got: u64 },
    #[error("timestamp {got} from {object} precedes last accepted {last}")]
    TimestampRegression { object: Iri, last: i64, got: i64 },
    #[error("unknown object {0}")]
    UnknownObject(Iri),
    #[error("composite object {0} has no members")]
    EmptyMembers(Iri),
    #[error("composite member {0} is not a registered virtual object")]
    UnknownMember(Iri),
    #[error("rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("access level {0} outside 0..=3")]
    InvalidAccessLevel(u8),
    #[error("profile graph {0} does not exist")]
    MissingProfile(Iri),
    #[error("invalid domain id {0:?}")]
    InvalidDomain(String),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("history log: {0}")]
    Io(#[from] std::io::Error),
}

/// An application domain such as `smart-home`. Lowercase, digits and dashes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainId(String);

impl DomainId {
    pub const SMART_HOME: &'static str = "smart-home";
    pub const MEDICAL_FACILITY: &'static str = "medical-facility";
    pub const SMART_OFFICE: &'static str = "smart-office";

    pub fn new(s: &str) -> Result<Self, ObjectError> {
        let ok = !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if ok {
            Ok(DomainId(s.to_owned()))
        } else {
            Err(ObjectError::InvalidDomain(s.to_owned()))
        }
    }

    pub fn smart_home() -> Self {
        DomainId(Self::SMART_HOME.into())
    }

    pub fn medical_facility() -> Self {
        DomainId(Self::MEDICAL_FACILITY.into())
    }

    pub fn smart_office() -> Self {
        DomainId(Self::SMART_OFFICE.into())
    }

    /// The three bundled domains.
    pub fn defaults() -> [DomainId; 3] {
        [Self::smart_home(), Self::medical_facility(), Self::smart_office()]
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for DomainId {
    type Error = ObjectError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        DomainId::new(&s)
    }
}

impl From<DomainId> for String {
    fn from(d: DomainId) -> String {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoKind {
    Sensor,
    Actuator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VirtualObject {
    pub id: Iri,
    pub domain: DomainId,
    pub kind: VoKind,
    pub description_graph: Iri,
    pub observed_property: Iri,
    pub unit: String,
    /// The user the device serves, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<Iri>,
}

impl VirtualObject {
    /// Graph holding this object's recent observation triples.
    pub fn data_graph(&self) -> Iri {
        data_graph_of(&self.id)
    }

    /// Standard description triples: the given class plus the object's
    /// metadata.
    pub fn describe(&self, class: &Iri) -> Vec<Triple> {
        let id = &self.id;
        let mut out = vec![
            Triple::new(id.clone(), vocab::rdf_type(), class.clone()),
            Triple::new(id.clone(), vocab::rdf_type(), vocab::iri(vocab::VIRTUAL_OBJECT)),
            Triple::new(id.clone(), vocab::iri(vocab::OBSERVED_PROPERTY), self.observed_property.clone()),
            Triple::new(id.clone(), vocab::iri(vocab::UNIT), Literal::string(&self.unit)),
            Triple::new(id.clone(), vocab::iri(vocab::DOMAIN), Literal::string(self.domain.as_str())),
        ];
        if let Some(owner) = &self.owner {
            out.push(Triple::new(id.clone(), vocab::iri(vocab::OWNER), owner.clone()));
        }
        out
    }
}

pub fn data_graph_of(vo: &Iri) -> Iri {
    Iri::new(format!("{vo}/data")).expect("suffixing a valid IRI keeps it valid")
}

/// Subject IRI of one observation.
pub fn observation_iri(vo: &Iri, sequence: u64) -> Iri {
    Iri::new(format!("{vo}/obs/{sequence}")).expect("suffixing a valid IRI keeps it valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub source: Iri,
    /// Milliseconds since the epoch.
    pub timestamp: i64,
    #[serde(with = "literal_json")]
    pub value: Literal,
    pub sequence: u64,
}

pub(crate) mod literal_json {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::semantic::{Literal, Term};

    pub fn serialize<S: Serializer>(l: &Literal, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&crate::semantic::term_to_json(&Term::Literal(l.clone())), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Literal, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match crate::semantic::term_from_json(&v).map_err(serde::de::Error::custom)? {
            Term::Literal(l) => Ok(l),
            Term::Iri(i) => Err(serde::de::Error::custom(format!("expected a literal, got {i}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompositeVo {
    pub id: Iri,
    pub members: BTreeSet<Iri>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    pub description_graph: Iri,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserModel {
    pub user_id: Iri,
    pub profile_graph: Iri,
    #[serde(default)]
    pub preferences: BTreeMap<String, String>,
    pub access_level: u8,
}
