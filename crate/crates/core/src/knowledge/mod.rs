//! Knowledge-driven analytics: a forward-chaining rule engine and the
//! activity, location and physio reasoning services built on it, plus query
//! generation from service requirements.

mod engine;
mod reasoners;

pub use engine::{infer, infer_fixpoint, parse_rules, InferenceResult, InferenceRule, RuleProgram};
pub use reasoners::{
    activity_facts, check_exclusive, location_facts, physio_facts, ReasonerKind, Reasoners, TimeWindow, KB_GRAPH,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interop::OntologyContext;
use crate::semantic::{vocab, CompareOp, Filter, Iri, Query, SemanticError, Term, TriplePattern, Variable};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("rule file: {0}")]
    Parse(String),
    #[error("output graph {0} is also an input graph")]
    OutputIsInput(Iri),
    #[error("input graph {0} does not exist")]
    MissingGraph(Iri),
    #[error("no fixpoint after {iterations} rounds (limit {limit})")]
    NonTermination { iterations: usize, limit: usize },
    #[error("rules of {program} overlap on fixture {fixture}")]
    OverlappingRules { program: String, fixture: String },
    #[error("several activities derived for {user}: {values:?}")]
    AmbiguousActivity { user: Iri, values: Vec<String> },
    #[error("several zones derived for {user}: {values:?}")]
    AmbiguousZone { user: Iri, values: Vec<String> },
    #[error("several physio statuses derived for {user}: {values:?}")]
    AmbiguousStatus { user: Iri, values: Vec<String> },
    #[error("unknown user {0}")]
    UnknownUser(Iri),
    #[error("concept {0} is not defined by any loaded ontology")]
    UnknownConcept(Iri),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Constraint {
    pub property: Iri,
    pub op: String,
    #[serde(with = "term_json")]
    pub value: Term,
}

mod term_json {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::semantic::{term_from_json, term_to_json, Term};

    pub fn serialize<S: Serializer>(t: &Term, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&term_to_json(t), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Term, D::Error> {
        term_from_json(&serde_json::Value::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceRequirement {
    pub subject_class: Iri,
    #[serde(default)]
    pub properties: Vec<Iri>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

/// `?s` is typed with the subject class; property `i` binds `?v{i}`.
/// Constraints filter the variable of their property, which must be one of
/// the requested properties.
pub fn generate_query(req: &ServiceRequirement, contexts: &[&OntologyContext]) -> Result<Query, RuleError> {
    if !contexts.iter().any(|c| c.classes.contains(&req.subject_class)) {
        return Err(RuleError::UnknownConcept(req.subject_class.clone()));
    }
    for p in &req.properties {
        if !contexts.iter().any(|c| c.predicates.contains_key(p)) {
            return Err(RuleError::UnknownConcept(p.clone()));
        }
    }
    let subject = Variable::new("s")?;
    let var = |i: usize| Variable::new(&format!("v{i}"));
    let mut select = vec![subject.clone()];
    let mut patterns = vec![TriplePattern::new(
        subject.clone(),
        vocab::rdf_type(),
        req.subject_class.clone(),
    )?];
    for (i, p) in req.properties.iter().enumerate() {
        let v = var(i)?;
        select.push(v.clone());
        patterns.push(TriplePattern::new(subject.clone(), p.clone(), v)?);
    }
    let mut filters = Vec::new();
    for c in &req.constraints {
        let i = req
            .properties
            .iter()
            .position(|p| p == &c.property)
            .ok_or_else(|| RuleError::UnknownConcept(c.property.clone()))?;
        filters.push(Filter::new(var(i)?, CompareOp::parse(&c.op)?, c.value.clone()));
    }
    Ok(Query::new(select, patterns, filters, Vec::new())?)
}
