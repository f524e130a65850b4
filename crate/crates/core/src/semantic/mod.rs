//! RDF-style data model: IRIs, typed literals, triples grouped into named
//! graphs, single-pattern matching and basic-graph-pattern queries with
//! comparison filters.
//!
//! There are no blank nodes and no store-level inference. Query results are
//! sorted so that identical inputs always serialize identically.

mod ntriples;
mod query;
mod store;
mod term;

pub use ntriples::{parse_ntriples, parse_term, to_ntriples};
pub use query::{
    term_from_json, term_to_json, BindingSet, CompareOp, Filter, PatternTerm, Query, QueryDoc,
    TripleSource, TriplePattern,
};
pub use store::{Graph, GraphStore, Snapshot};
pub(crate) use query::join;
pub use term::{Datatype, Iri, Literal, Term, Triple, Variable};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("malformed IRI {0:?}")]
    MalformedIri(String),
    #[error("unknown literal datatype {0:?}")]
    UnknownDatatype(String),
    #[error("lexical form {lexical:?} is not a valid {datatype:?}")]
    InvalidLexical { lexical: String, datatype: Datatype },
    #[error("invalid variable name {0:?}")]
    InvalidVariable(String),
    #[error("variable {0} is not bound by any pattern")]
    UnboundVariable(String),
    #[error("cannot compare {left} with {right}")]
    TypeMismatch { left: String, right: String },
    #[error("literal in {0} position")]
    LiteralPosition(&'static str),
    #[error("unknown comparison operator {0:?}")]
    UnknownOperator(String),
    #[error("N-Triples line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid query document: {0}")]
    QueryDocument(String),
}

/// Well-known IRIs shared by every module.
pub mod vocab {
    pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    pub const HUB: &str = "urn:hub:";

    pub const TIMESTAMP: &str = "urn:hub:timestamp";
    pub const CONFORMS_TO: &str = "urn:hub:conformsTo";
    pub const OBSERVED_PROPERTY: &str = "urn:hub:observedProperty";
    pub const UNIT: &str = "urn:hub:unit";
    pub const OWNER: &str = "urn:hub:owner";
    pub const DOMAIN: &str = "urn:hub:domain";
    pub const KIND: &str = "urn:hub:kind";
    pub const MEMBER: &str = "urn:hub:member";
    pub const VIRTUAL_OBJECT: &str = "urn:hub:VirtualObject";
    pub const COMPOSITE_OBJECT: &str = "urn:hub:CompositeVirtualObject";
    pub const USER: &str = "urn:hub:User";
    pub const ZONE: &str = "urn:hub:Zone";

    pub const MOTION: &str = "urn:hub:motion";
    pub const LUMINOSITY: &str = "urn:hub:luminosity";
    pub const TEMPERATURE: &str = "urn:hub:temperature";
    pub const APPLIANCE_POWER: &str = "urn:hub:appliancePower";
    pub const ZONE_PROXIMITY: &str = "urn:hub:zoneProximity";
    pub const HEART_RATE: &str = "urn:hub:heartRate";
    pub const SYSTOLIC: &str = "urn:hub:systolic";
    pub const DIASTOLIC: &str = "urn:hub:diastolic";

    pub const CURRENT_ACTIVITY: &str = "urn:hub:currentActivity";
    pub const IN_ZONE: &str = "urn:hub:inZone";
    pub const PHYSIO_STATUS: &str = "urn:hub:physioStatus";

    use super::Iri;

    /// Panics if `s` is not a valid IRI; only for compile-time constants.
    pub fn iri(s: &str) -> Iri {
        Iri::new(s).expect("vocabulary constant is a valid IRI")
    }

    pub fn rdf_type() -> Iri {
        iri(RDF_TYPE)
    }
}
