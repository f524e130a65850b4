use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;

use super::query::join;
use super::{
    parse_ntriples, to_ntriples, BindingSet, Iri, Query, SemanticError, Term, Triple, TriplePattern,
    TripleSource,
};

/// A named set of triples with subject and predicate indexes.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    triples: BTreeSet<Triple>,
    by_subject: HashMap<Iri, BTreeSet<Triple>>,
    by_predicate: HashMap<Iri, BTreeSet<Triple>>,
}

impl Graph {
    pub fn insert(&mut self, t: Triple) -> bool {
        if self.triples.contains(&t) {
            return false;
        }
        self.by_subject.entry(t.subject.clone()).or_default().insert(t.clone());
        self.by_predicate.entry(t.predicate.clone()).or_default().insert(t.clone());
        self.triples.insert(t)
    }

    pub fn remove(&mut self, t: &Triple) -> bool {
        if !self.triples.remove(t) {
            return false;
        }
        for (index, key) in [(&mut self.by_subject, &t.subject), (&mut self.by_predicate, &t.predicate)] {
            if let Some(set) = index.get_mut(key) {
                set.remove(t);
                if set.is_empty() {
                    index.remove(key);
                }
            }
        }
        true
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn with_subject(&self, s: &Iri) -> impl Iterator<Item = &Triple> {
        self.by_subject.get(s).into_iter().flatten()
    }
}

impl TripleSource for Graph {
    fn scan(
        &self,
        subject: Option<&Iri>,
        predicate: Option<&Iri>,
        object: Option<&Term>,
        visit: &mut dyn FnMut(&Triple),
    ) {
        let candidates: Box<dyn Iterator<Item = &Triple>> = match (subject, predicate) {
            (Some(s), _) => Box::new(self.by_subject.get(s).into_iter().flatten()),
            (None, Some(p)) => Box::new(self.by_predicate.get(p).into_iter().flatten()),
            (None, None) => Box::new(self.triples.iter()),
        };
        for t in candidates {
            if predicate.map_or(true, |p| &t.predicate == p) && object.map_or(true, |o| &t.object == o) {
                visit(t);
            }
        }
    }
}

/// A thread-safe collection of named graphs.
///
/// Graphs are copy-on-write: a [`Snapshot`] holds shared references, and a
/// writer touching a snapshotted graph clones it first, so readers always see
/// a consistent state.
#[derive(Debug, Default)]
pub struct GraphStore {
    graphs: RwLock<BTreeMap<Iri, Arc<Graph>>>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `true` iff the triple was not already present. Creates the graph
    /// on first use.
    pub fn insert(&self, graph: &Iri, t: Triple) -> bool {
        let mut graphs = self.graphs.write();
        Arc::make_mut(graphs.entry(graph.clone()).or_default()).insert(t)
    }

    pub fn insert_all(&self, graph: &Iri, triples: impl IntoIterator<Item = Triple>) -> usize {
        let mut graphs = self.graphs.write();
        let g = Arc::make_mut(graphs.entry(graph.clone()).or_default());
        triples.into_iter().filter(|t| g.insert(t.clone())).count()
    }

    pub fn remove(&self, graph: &Iri, t: &Triple) -> bool {
        let mut graphs = self.graphs.write();
        match graphs.get_mut(graph) {
            Some(g) if g.contains(t) => Arc::make_mut(g).remove(t),
            _ => false,
        }
    }

    /// Removes and inserts in one critical section; returns (removed, inserted).
    pub fn replace(&self, graph: &Iri, remove: &[Triple], insert: &[Triple]) -> (usize, usize) {
        let mut graphs = self.graphs.write();
        let g = Arc::make_mut(graphs.entry(graph.clone()).or_default());
        let removed = remove.iter().filter(|t| g.remove(t)).count();
        let inserted = insert.iter().filter(|t| g.insert((*t).clone())).count();
        (removed, inserted)
    }

    pub fn contains(&self, graph: &Iri, t: &Triple) -> bool {
        self.graphs.read().get(graph).is_some_and(|g| g.contains(t))
    }

    pub fn has_graph(&self, graph: &Iri) -> bool {
        self.graphs.read().contains_key(graph)
    }

    /// Creates an empty graph if absent.
    pub fn create_graph(&self, graph: &Iri) {
        self.graphs.write().entry(graph.clone()).or_default();
    }

    /// Empties the graph but keeps its name registered.
    pub fn clear_graph(&self, graph: &Iri) {
        self.graphs.write().insert(graph.clone(), Arc::default());
    }

    pub fn drop_graph(&self, graph: &Iri) -> bool {
        self.graphs.write().remove(graph).is_some()
    }

    /// Triple count of one graph; 0 for unknown graphs.
    pub fn len(&self, graph: &Iri) -> usize {
        self.graphs.read().get(graph).map_or(0, |g| g.len())
    }

    pub fn total_len(&self) -> usize {
        self.graphs.read().values().map(|g| g.len()).sum()
    }

    pub fn graph_names(&self) -> Vec<Iri> {
        self.graphs.read().keys().cloned().collect()
    }

    /// Sorted copy of one graph's triples.
    pub fn triples(&self, graph: &Iri) -> Vec<Triple> {
        self.graphs.read().get(graph).map(|g| g.iter().cloned().collect()).unwrap_or_default()
    }

    /// Consistent read view of `scope`; an empty scope means every graph.
    pub fn snapshot(&self, scope: &[Iri]) -> Snapshot {
        let graphs = self.graphs.read();
        let selected = if scope.is_empty() {
            graphs.values().cloned().collect()
        } else {
            let wanted: BTreeSet<&Iri> = scope.iter().collect();
            wanted.into_iter().filter_map(|n| graphs.get(n).cloned()).collect()
        };
        Snapshot { graphs: selected }
    }

    /// One row per distinct triple in `scope` unifying with `pattern`.
    pub fn match_pattern(&self, scope: &[Iri], pattern: &TriplePattern) -> BindingSet {
        self.snapshot(scope).match_pattern(pattern)
    }

    /// Evaluates `q` over a snapshot of its graph scope.
    pub fn evaluate(&self, q: &Query) -> Result<BindingSet, SemanticError> {
        q.evaluate_on(&self.snapshot(q.graphs()))
    }

    pub fn load_ntriples(&self, graph: &Iri, text: &str) -> Result<usize, SemanticError> {
        let triples = parse_ntriples(text)?;
        Ok(self.insert_all(graph, triples))
    }

    /// Sorted N-Triples serialization of one graph.
    pub fn dump_ntriples(&self, graph: &Iri) -> String {
        to_ntriples(self.triples(graph).iter())
    }
}

/// A frozen view over a set of graphs; the union is treated as one set.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    graphs: Vec<Arc<Graph>>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.iter().all(|g| g.is_empty())
    }

    /// Distinct triples across the snapshotted graphs, sorted.
    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        let set: BTreeSet<&Triple> = self.graphs.iter().flat_map(|g| g.iter()).collect();
        set.into_iter()
    }

    pub fn match_pattern(&self, pattern: &TriplePattern) -> BindingSet {
        let (vars, rows) = join(std::slice::from_ref(pattern), &[], &|_| self, None)
            .expect("single patterns without filters cannot fail");
        BindingSet::from_rows(vars, rows)
    }
}

impl TripleSource for Snapshot {
    fn scan(
        &self,
        subject: Option<&Iri>,
        predicate: Option<&Iri>,
        object: Option<&Term>,
        visit: &mut dyn FnMut(&Triple),
    ) {
        if self.graphs.len() == 1 {
            return self.graphs[0].scan(subject, predicate, object, visit);
        }
        let mut seen: BTreeSet<Triple> = BTreeSet::new();
        for g in &self.graphs {
            g.scan(subject, predicate, object, &mut |t| {
                if seen.insert(t.clone()) {
                    visit(t);
                }
            });
        }
    }
}
