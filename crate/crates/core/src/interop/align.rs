use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::semantic::{vocab, Iri, Term, Triple};

use super::InteropError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Relation {
    Equivalent,
    SubsumedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Correspondence {
    pub source: Iri,
    pub target: Iri,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub name: String,
    pub correspondences: Vec<Correspondence>,
}

impl AlignmentMap {
    pub fn empty(name: &str) -> Self {
        AlignmentMap { name: name.to_owned(), correspondences: Vec::new() }
    }

    /// Rejects a source with two equivalence targets and equivalence cycles.
    pub fn check(&self) -> Result<(), InteropError> {
        let bad = |reason: String| InteropError::InvalidDocument { name: self.name.clone(), reason };
        let mut eq: BTreeMap<&Iri, &Iri> = BTreeMap::new();
        for c in self.correspondences.iter().filter(|c| c.relation == Relation::Equivalent) {
            if let Some(prev) = eq.insert(&c.source, &c.target) {
                if prev != &c.target {
                    return Err(bad(format!("{} is equivalent to both {prev} and {}", c.source, c.target)));
                }
            }
        }
        for start in eq.keys() {
            let mut seen = HashSet::new();
            let mut cur = *start;
            while let Some(next) = eq.get(cur) {
                if !seen.insert(cur) || *next == *start {
                    return Err(bad(format!("equivalence cycle through {start}")));
                }
                cur = next;
            }
        }
        Ok(())
    }
}

struct Resolved {
    canonical: BTreeMap<Iri, Iri>,
    supers: BTreeMap<Iri, BTreeSet<Iri>>,
}

impl Resolved {
    fn new(a: &AlignmentMap) -> Self {
        let eq: BTreeMap<&Iri, &Iri> = a
            .correspondences
            .iter()
            .filter(|c| c.relation == Relation::Equivalent)
            .map(|c| (&c.source, &c.target))
            .collect();
        let canon = |x: &Iri| {
            let mut cur = x;
            let mut hops = 0;
            while let Some(next) = eq.get(cur) {
                cur = next;
                hops += 1;
                if hops > eq.len() {
                    break;
                }
            }
            cur.clone()
        };
        let canonical = eq.keys().map(|k| ((*k).clone(), canon(k))).collect();
        let mut direct: BTreeMap<Iri, BTreeSet<Iri>> = BTreeMap::new();
        for c in a.correspondences.iter().filter(|c| c.relation == Relation::SubsumedBy) {
            direct.entry(canon(&c.source)).or_default().insert(canon(&c.target));
        }
        let mut supers = BTreeMap::new();
        for k in direct.keys() {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<&Iri> = direct[k].iter().collect();
            while let Some(c) = stack.pop() {
                if c != k && seen.insert(c.clone()) {
                    stack.extend(direct.get(c).into_iter().flatten());
                }
            }
            supers.insert(k.clone(), seen);
        }
        Resolved { canonical, supers }
    }

    fn canon(&self, x: &Iri) -> Iri {
        self.canonical.get(x).unwrap_or(x).clone()
    }
}

/// Rewrites predicates and `rdf:type` objects through equivalences, then
/// adds a parallel triple for every (transitive) superconcept. Duplicates are
/// dropped, keeping first occurrences.
pub fn align(triples: &[Triple], a: &AlignmentMap) -> Vec<Triple> {
    if a.correspondences.is_empty() {
        return triples.to_vec();
    }
    let r = Resolved::new(a);
    let ty = vocab::rdf_type();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(triples.len());
    let mut emit = |t: Triple| {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    };
    for t in triples {
        let p = r.canon(&t.predicate);
        if p == ty {
            if let Term::Iri(class) = &t.object {
                let class = r.canon(class);
                emit(Triple::new(t.subject.clone(), p.clone(), class.clone()));
                for sup in r.supers.get(&class).into_iter().flatten() {
                    emit(Triple::new(t.subject.clone(), p.clone(), sup.clone()));
                }
                continue;
            }
        }
        emit(Triple::new(t.subject.clone(), p.clone(), t.object.clone()));
        for sup in r.supers.get(&p).into_iter().flatten() {
            emit(Triple::new(t.subject.clone(), sup.clone(), t.object.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::Literal;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn corr(s: &str, t: &str, relation: Relation) -> Correspondence {
        Correspondence { source: iri(s), target: iri(t), relation }
    }

    #[test]
    fn empty_map_is_identity() {
        let ts = vec![Triple::iris("urn:s", "urn:hr", "urn:o").unwrap(), Triple::iris("urn:s", "urn:hr", "urn:o").unwrap()];
        assert_eq!(align(&ts, &AlignmentMap::empty("none")), ts);
    }

    #[test]
    fn equivalence_rewrites_predicate() {
        let a = AlignmentMap {
            name: "m".into(),
            correspondences: vec![corr("urn:hr", "urn:heartRate", Relation::Equivalent)],
        };
        let ts = vec![Triple::new(iri("urn:s"), iri("urn:hr"), Literal::integer(72))];
        assert_eq!(
            align(&ts, &a),
            vec![Triple::new(iri("urn:s"), iri("urn:heartRate"), Literal::integer(72))]
        );
    }

    #[test]
    fn subsumption_keeps_original_type() {
        let a = AlignmentMap {
            name: "m".into(),
            correspondences: vec![corr("urn:Nurse", "urn:Clinician", Relation::SubsumedBy)],
        };
        let ts = vec![Triple::iris("urn:s", vocab::RDF_TYPE, "urn:Nurse").unwrap()];
        assert_eq!(
            align(&ts, &a),
            vec![
                Triple::iris("urn:s", vocab::RDF_TYPE, "urn:Nurse").unwrap(),
                Triple::iris("urn:s", vocab::RDF_TYPE, "urn:Clinician").unwrap(),
            ]
        );
    }

    #[test]
    fn chains_resolve_and_subjects_stay() {
        let a = AlignmentMap {
            name: "m".into(),
            correspondences: vec![
                corr("urn:a", "urn:b", Relation::Equivalent),
                corr("urn:b", "urn:c", Relation::Equivalent),
                corr("urn:c", "urn:d", Relation::SubsumedBy),
                corr("urn:d", "urn:e", Relation::SubsumedBy),
            ],
        };
        assert!(a.check().is_ok());
        let ts = vec![Triple::iris("urn:a", "urn:a", "urn:a").unwrap()];
        let out = align(&ts, &a);
        assert_eq!(
            out,
            vec![
                Triple::iris("urn:a", "urn:c", "urn:a").unwrap(),
                Triple::iris("urn:a", "urn:d", "urn:a").unwrap(),
                Triple::iris("urn:a", "urn:e", "urn:a").unwrap(),
            ]
        );
        assert_eq!(align(&out, &a), out);
    }

    #[test]
    fn check_rejects_conflicts_and_cycles() {
        let two = AlignmentMap {
            name: "m".into(),
            correspondences: vec![
                corr("urn:a", "urn:b", Relation::Equivalent),
                corr("urn:a", "urn:c", Relation::Equivalent),
            ],
        };
        assert!(two.check().is_err());
        let cyc = AlignmentMap {
            name: "m".into(),
            correspondences: vec![
                corr("urn:a", "urn:b", Relation::Equivalent),
                corr("urn:b", "urn:a", Relation::Equivalent),
            ],
        };
        assert!(cyc.check().is_err());
    }
}
