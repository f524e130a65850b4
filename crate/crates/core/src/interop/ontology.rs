use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::semantic::{vocab, Datatype, Iri, Term, Triple};

use super::InteropError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RangeKind {
    Class(Iri),
    Datatype(Datatype),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredicateDef {
    pub domain: Iri,
    pub range: RangeKind,
    /// Observation-valued: one current value per subject, newest wins.
    #[serde(default)]
    pub functional: bool,
}

/// The classes and predicates one ontology admits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OntologyContext {
    pub name: String,
    pub classes: BTreeSet<Iri>,
    #[serde(default)]
    pub subclass_of: BTreeMap<Iri, BTreeSet<Iri>>,
    pub predicates: BTreeMap<Iri, PredicateDef>,
}

impl OntologyContext {
    pub fn check(&self) -> Result<(), InteropError> {
        let bad = |reason: String| InteropError::InvalidDocument { name: self.name.clone(), reason };
        Iri::new(format!("urn:hub:ontology:{}", self.name)).map_err(|e| bad(e.to_string()))?;
        for (p, def) in &self.predicates {
            if !self.classes.contains(&def.domain) {
                return Err(bad(format!("domain {} of {p} is not a declared class", def.domain)));
            }
        }
        for (c, supers) in &self.subclass_of {
            if let Some(x) = std::iter::once(c).chain(supers).find(|x| !self.classes.contains(x)) {
                return Err(bad(format!("subclass axiom mentions undeclared class {x}")));
            }
        }
        Ok(())
    }

    /// IRI attached to conforming subjects by `annotate`.
    pub fn iri(&self) -> Iri {
        Iri::new(format!("urn:hub:ontology:{}", self.name)).expect("checked at load")
    }

    /// `class` and all its declared superclasses.
    pub fn superclasses(&self, class: &Iri) -> BTreeSet<Iri> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![class.clone()];
        while let Some(c) = stack.pop() {
            if seen.insert(c.clone()) {
                if let Some(sup) = self.subclass_of.get(&c) {
                    stack.extend(sup.iter().cloned());
                }
            }
        }
        seen
    }

    pub fn is_subclass(&self, sub: &Iri, sup: &Iri) -> bool {
        self.superclasses(sub).contains(sup)
    }

    pub fn functional_predicates(&self) -> impl Iterator<Item = &Iri> {
        self.predicates.iter().filter(|(_, d)| d.functional).map(|(p, _)| p)
    }
}

fn types_by_subject(triples: &[Triple]) -> BTreeMap<&Iri, BTreeSet<&Iri>> {
    let ty = vocab::rdf_type();
    let mut out: BTreeMap<&Iri, BTreeSet<&Iri>> = BTreeMap::new();
    for t in triples.iter().filter(|t| t.predicate == ty) {
        if let Term::Iri(c) = &t.object {
            out.entry(&t.subject).or_default().insert(c);
        }
    }
    out
}

/// Input triples followed by one `conformsTo` link per subject typed with a
/// class of `ctx`, in subject order. Links already present are not repeated.
pub fn annotate(triples: &[Triple], ctx: &OntologyContext) -> Vec<Triple> {
    let conforms = vocab::iri(vocab::CONFORMS_TO);
    let target = Term::Iri(ctx.iri());
    let mut out = triples.to_vec();
    for (s, classes) in types_by_subject(triples) {
        if classes.iter().any(|c| ctx.classes.contains(*c)) {
            let link = Triple::new(s.clone(), conforms.clone(), target.clone());
            if !triples.contains(&link) {
                out.push(link);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationReason {
    UnknownClass,
    UnknownPredicate,
    DomainMismatch,
    RangeMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(with = "triple_text")]
    pub triple: Triple,
    pub reason: ViolationReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport { valid: violations.is_empty(), violations }
    }
}

pub(crate) mod triple_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::semantic::{parse_ntriples, Triple};

    pub fn serialize<S: Serializer>(t: &Triple, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(t)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Triple, D::Error> {
        let text = String::deserialize(d)?;
        let mut ts = parse_ntriples(&text).map_err(serde::de::Error::custom)?;
        match (ts.pop(), ts.is_empty()) {
            (Some(t), true) => Ok(t),
            _ => Err(serde::de::Error::custom("expected exactly one triple")),
        }
    }
}

/// Checks every triple against `ctx`. Untyped subjects and objects are not
/// domain- or range-checked beyond their term kind.
pub fn validate_description(triples: &[Triple], ctx: &OntologyContext) -> ValidationReport {
    let ty = vocab::rdf_type();
    let conforms = vocab::iri(vocab::CONFORMS_TO);
    let types = types_by_subject(triples);
    let fits = |x: &Iri, class: &Iri| match types.get(x) {
        None => true,
        Some(cs) => cs.iter().any(|c| ctx.is_subclass(c, class)),
    };
    let mut violations = Vec::new();
    for t in triples {
        let reason = if t.predicate == ty {
            match &t.object {
                Term::Iri(c) if ctx.classes.contains(c) || c.as_str() == vocab::VIRTUAL_OBJECT => None,
                Term::Iri(_) => Some(ViolationReason::UnknownClass),
                Term::Literal(_) => Some(ViolationReason::RangeMismatch),
            }
        } else if t.predicate == conforms {
            None
        } else {
            match ctx.predicates.get(&t.predicate) {
                None => Some(ViolationReason::UnknownPredicate),
                Some(def) if !fits(&t.subject, &def.domain) => Some(ViolationReason::DomainMismatch),
                Some(def) => {
                    let ok = match (&def.range, &t.object) {
                        (RangeKind::Datatype(want), Term::Literal(l)) => {
                            l.datatype() == *want
                                || (*want == Datatype::Decimal && l.datatype() == Datatype::Integer)
                        }
                        (RangeKind::Class(c), Term::Iri(o)) => fits(o, c),
                        _ => false,
                    };
                    (!ok).then_some(ViolationReason::RangeMismatch)
                }
            }
        };
        if let Some(reason) = reason {
            violations.push(Violation { triple: t.clone(), reason });
        }
    }
    ValidationReport::from_violations(violations)
}
