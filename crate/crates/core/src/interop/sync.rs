use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::semantic::{vocab, GraphStore, Iri, Term, Triple};

pub const DEFAULT_SKEW_MS: i64 = 5 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkewRejection {
    #[serde(with = "super::ontology::triple_text")]
    pub triple: Triple,
    pub incoming_timestamp: i64,
    pub stored_timestamp: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub added: usize,
    pub superseded: usize,
    pub unchanged: usize,
    /// Observations dropped as `ClockSkew`; each is also counted in `unchanged`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<SkewRejection>,
}

type Current = HashMap<(Iri, Iri), (Term, Option<i64>)>;

/// Merges incoming triples into central graphs. Functional predicates keep
/// one value per subject, the one with the newest subject timestamp; all
/// other triples are set-unioned.
pub struct Synchronizer {
    store: Arc<GraphStore>,
    functional: BTreeSet<Iri>,
    skew_ms: i64,
    state: Mutex<HashMap<Iri, Current>>,
}

impl Synchronizer {
    pub fn new(store: Arc<GraphStore>, functional: impl IntoIterator<Item = Iri>) -> Self {
        let mut functional: BTreeSet<Iri> = functional.into_iter().collect();
        functional.insert(vocab::iri(vocab::TIMESTAMP));
        Synchronizer { store, functional, skew_ms: DEFAULT_SKEW_MS, state: Mutex::new(HashMap::new()) }
    }

    pub fn with_skew_ms(mut self, skew_ms: i64) -> Self {
        self.skew_ms = skew_ms;
        self
    }

    pub fn is_functional(&self, p: &Iri) -> bool {
        self.functional.contains(p)
    }

    fn timestamps<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> BTreeMap<Iri, i64> {
        let ts = vocab::iri(vocab::TIMESTAMP);
        let mut out: BTreeMap<Iri, i64> = BTreeMap::new();
        for t in triples.into_iter().filter(|t| t.predicate == ts) {
            if let Some(v) = t.object.as_literal().and_then(|l| l.as_i64()) {
                let e = out.entry(t.subject.clone()).or_insert(v);
                *e = (*e).max(v);
            }
        }
        out
    }

    fn load(&self, graph: &Iri) -> Current {
        let existing = self.store.triples(graph);
        let stamps = Self::timestamps(&existing);
        existing
            .into_iter()
            .filter(|t| self.functional.contains(&t.predicate))
            .map(|t| {
                let ts = stamps.get(&t.subject).copied();
                ((t.subject, t.predicate), (t.object, ts))
            })
            .collect()
    }

    pub fn synchronize(&self, incoming: &[Triple], central: &Iri) -> SyncSummary {
        let mut state = self.state.lock();
        if !state.contains_key(central) {
            let loaded = self.load(central);
            state.insert(central.clone(), loaded);
        }
        let current = state.get_mut(central).expect("inserted above");
        let stamps = Self::timestamps(incoming);
        let mut summary = SyncSummary::default();
        for t in incoming {
            if !self.functional.contains(&t.predicate) {
                if self.store.insert(central, t.clone()) {
                    summary.added += 1;
                } else {
                    summary.unchanged += 1;
                }
                continue;
            }
            let ts = stamps.get(&t.subject).copied();
            let key = (t.subject.clone(), t.predicate.clone());
            match current.get(&key).cloned() {
                None => {
                    self.store.insert(central, t.clone());
                    current.insert(key, (t.object.clone(), ts));
                    summary.added += 1;
                }
                Some((old, old_ts)) if old == t.object => {
                    current.insert(key, (old, old_ts.max(ts)));
                    summary.unchanged += 1;
                }
                Some((old, old_ts)) => {
                    let newer = match (ts, old_ts) {
                        (None, _) | (Some(_), None) => true,
                        (Some(new), Some(stored)) => {
                            if stored - new > self.skew_ms {
                                summary.rejected.push(SkewRejection {
                                    triple: t.clone(),
                                    incoming_timestamp: new,
                                    stored_timestamp: stored,
                                });
                            }
                            new > stored
                        }
                    };
                    if newer {
                        let stale = Triple::new(t.subject.clone(), t.predicate.clone(), old);
                        self.store.replace(central, &[stale], std::slice::from_ref(t));
                        current.insert(key, (t.object.clone(), ts));
                        summary.superseded += 1;
                    } else {
                        summary.unchanged += 1;
                    }
                }
            }
        }
        summary
    }

    /// Forgets cached per-graph state, e.g. after the graph was edited directly.
    pub fn reset(&self, central: &Iri) {
        self.state.lock().remove(central);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::Literal;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn reading(subject: &str, hr: i64, ts: i64) -> Vec<Triple> {
        vec![
            Triple::new(iri(subject), iri("urn:med:heartRate"), Literal::integer(hr)),
            Triple::new(iri(subject), vocab::iri(vocab::TIMESTAMP), Literal::integer(ts)),
            Triple::iris(subject, vocab::RDF_TYPE, "urn:med:Patient").unwrap(),
        ]
    }

    fn sync() -> (Arc<GraphStore>, Synchronizer) {
        let store = Arc::new(GraphStore::new());
        let s = Synchronizer::new(store.clone(), [iri("urn:med:heartRate")]);
        (store, s)
    }

    #[test]
    fn identical_sync_is_unchanged() {
        let (_, s) = sync();
        let g = iri("urn:central");
        let first = s.synchronize(&reading("urn:p1", 70, 1000), &g);
        assert_eq!((first.added, first.superseded, first.unchanged), (3, 0, 0));
        let second = s.synchronize(&reading("urn:p1", 70, 1000), &g);
        assert_eq!((second.added, second.superseded, second.unchanged), (0, 0, 3));
    }

    #[test]
    fn newer_value_supersedes() {
        let (store, s) = sync();
        let g = iri("urn:central");
        s.synchronize(&reading("urn:p1", 70, 1000), &g);
        let sum = s.synchronize(&reading("urn:p1", 90, 2000), &g);
        assert_eq!(sum.superseded, 2);
        let old = Triple::new(iri("urn:p1"), iri("urn:med:heartRate"), Literal::integer(70));
        assert!(!store.contains(&g, &old));
        assert_eq!(store.len(&g), 3);
    }

    #[test]
    fn older_value_is_ignored_and_skew_is_reported() {
        let (store, s) = sync();
        let g = iri("urn:central");
        s.synchronize(&reading("urn:p1", 90, 10 * 60_000), &g);
        let sum = s.synchronize(&reading("urn:p1", 70, 9 * 60_000), &g);
        assert_eq!((sum.superseded, sum.unchanged, sum.rejected.len()), (0, 3, 0));
        let sum = s.synchronize(&reading("urn:p1", 70, 0), &g);
        assert_eq!(sum.unchanged, 3);
        assert_eq!(sum.rejected.len(), 2);
        assert!(store.contains(&g, &Triple::new(iri("urn:p1"), iri("urn:med:heartRate"), Literal::integer(90))));
    }

    #[test]
    fn disjoint_sets_all_added() {
        let (store, s) = sync();
        let g = iri("urn:central");
        let a = s.synchronize(&reading("urn:p1", 70, 1), &g);
        let b = s.synchronize(&reading("urn:p2", 80, 1), &g);
        assert_eq!(a.added + b.added, 6);
        assert_eq!(store.len(&g), 6);
    }

    #[test]
    fn picks_up_existing_graph_contents() {
        let (store, s) = sync();
        let g = iri("urn:central");
        store.insert_all(&g, reading("urn:p1", 70, 1000));
        let sum = s.synchronize(&reading("urn:p1", 75, 2000), &g);
        assert_eq!(sum.superseded, 2);
        assert_eq!(store.len(&g), 3);
    }
}
