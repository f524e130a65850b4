use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::semantic::{
    BindingSet, Filter, GraphStore, PatternTerm, Query, SemanticError, TriplePattern, Variable,
};

/// Beyond this many candidate orderings normalization falls back to a single
/// key-sorted order and renaming invariance is no longer guaranteed.
pub const MAX_ORDERINGS: usize = 40_320;

/// A query in canonical form: variables renumbered `?v0, ?v1, …` (selected
/// ones first, in select order), patterns and filters sorted and deduplicated.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub query: Query,
    pub text: String,
    pub signature: String,
}

fn rename_term(t: &PatternTerm, names: &HashMap<Variable, Variable>) -> PatternTerm {
    match t {
        PatternTerm::Var(v) => PatternTerm::Var(names[v].clone()),
        c => c.clone(),
    }
}

fn canonical_var(i: usize) -> Variable {
    Variable::new(&format!("v{i}")).expect("v<digits> is a valid name")
}

struct Candidate {
    text: String,
    select: Vec<Variable>,
    patterns: Vec<TriplePattern>,
    filters: Vec<Filter>,
}

fn render(q: &Query, order: &[&TriplePattern]) -> Candidate {
    let mut names: HashMap<Variable, Variable> = HashMap::new();
    let vars = q.select().iter().chain(order.iter().flat_map(|p| p.variables()));
    for v in vars {
        if !names.contains_key(v) {
            let fresh = canonical_var(names.len());
            names.insert(v.clone(), fresh);
        }
    }
    let mut patterns: Vec<TriplePattern> = order
        .iter()
        .map(|p| TriplePattern {
            subject: rename_term(&p.subject, &names),
            predicate: rename_term(&p.predicate, &names),
            object: rename_term(&p.object, &names),
        })
        .collect();
    patterns.sort_by_cached_key(|p| p.to_string());
    patterns.dedup();
    let mut filters: Vec<Filter> = q
        .filters()
        .iter()
        .map(|f| Filter::new(names[&f.variable].clone(), f.op, f.value.clone()))
        .collect();
    filters.sort_by_cached_key(|f| f.to_string());
    filters.dedup();
    let select: Vec<Variable> = q.select().iter().map(|v| names[v].clone()).collect();

    let mut text = String::from("select");
    for v in &select {
        let _ = write!(text, " {v}");
    }
    text.push_str("\nwhere");
    for p in &patterns {
        let _ = write!(text, "\n  {p}");
    }
    text.push_str("\nfilter");
    for f in &filters {
        let _ = write!(text, "\n  {f}");
    }
    text.push_str("\ngraphs");
    for g in q.graphs() {
        let _ = write!(text, " <{g}>");
    }
    Candidate { text, select, patterns, filters }
}

/// Shape of a pattern with unselected variables blanked out. Renaming cannot
/// change it, so patterns are only permuted within groups of equal shape.
fn shape(p: &TriplePattern, select: &[Variable]) -> String {
    let part = |t: &PatternTerm| match t {
        PatternTerm::Var(v) => match select.iter().position(|s| s == v) {
            Some(i) => format!("?s{i}"),
            None => "?".to_owned(),
        },
        PatternTerm::Const(c) => c.to_string(),
    };
    format!("{} {} {}", part(&p.subject), part(&p.predicate), part(&p.object))
}

fn factorial_capped(n: usize, cap: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|x| *x <= cap)).unwrap_or(cap + 1)
}

fn for_each_permutation<T: Clone>(items: &mut Vec<T>, k: usize, visit: &mut dyn FnMut(&[T])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, visit);
        items.swap(k, i);
    }
}

pub fn normalize(q: &Query) -> Normalized {
    let mut unique: Vec<&TriplePattern> = Vec::new();
    for p in q.patterns() {
        if !unique.contains(&p) {
            unique.push(p);
        }
    }
    let mut groups: BTreeMap<String, Vec<&TriplePattern>> = BTreeMap::new();
    for p in unique {
        groups.entry(shape(p, q.select())).or_default().push(p);
    }
    let groups: Vec<Vec<&TriplePattern>> = groups.into_values().collect();
    let orderings = groups
        .iter()
        .try_fold(1usize, |acc, g| acc.checked_mul(factorial_capped(g.len(), MAX_ORDERINGS)))
        .unwrap_or(usize::MAX);

    let mut best: Option<Candidate> = None;
    let mut consider = |order: &[&TriplePattern]| {
        let c = render(q, order);
        if best.as_ref().map_or(true, |b| c.text < b.text) {
            best = Some(c);
        }
    };
    if orderings > MAX_ORDERINGS {
        let flat: Vec<&TriplePattern> = groups.iter().flatten().copied().collect();
        consider(&flat);
    } else {
        permute_groups(&groups, 0, &mut Vec::new(), &mut consider);
    }
    let best = best.expect("at least one ordering");
    let query = Query::new(best.select, best.patterns, best.filters, q.graphs().to_vec())
        .expect("renaming preserves boundness");
    let signature = hex::encode(Sha256::digest(best.text.as_bytes()));
    Normalized { query, text: best.text, signature }
}

fn permute_groups<'q>(
    groups: &[Vec<&'q TriplePattern>],
    i: usize,
    prefix: &mut Vec<&'q TriplePattern>,
    visit: &mut dyn FnMut(&[&'q TriplePattern]),
) {
    if i == groups.len() {
        visit(prefix);
        return;
    }
    let mut g = groups[i].clone();
    for_each_permutation(&mut g, 0, &mut |perm| {
        let len = prefix.len();
        prefix.extend_from_slice(perm);
        permute_groups(groups, i + 1, prefix, visit);
        prefix.truncate(len);
    });
}

pub fn signature(q: &Query) -> String {
    normalize(q).signature
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheStatus {
    Hit,
    MissGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryLogEntry {
    pub signature: String,
    pub query: Query,
    pub last_result_digest: String,
    pub hit_count: u64,
}

struct Logged {
    query: Query,
    hits: AtomicU64,
    digest: Mutex<String>,
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub bindings: BindingSet,
    pub status: CacheStatus,
    pub signature: String,
}

/// Log of normalized queries keyed by signature. Results are never cached:
/// every call executes against the current store.
#[derive(Default)]
pub struct QueryLog {
    entries: RwLock<BTreeMap<String, Arc<Logged>>>,
}

impl QueryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, signature: &str) -> Option<QueryLogEntry> {
        self.entries.read().get(signature).map(|l| QueryLogEntry {
            signature: signature.to_owned(),
            query: l.query.clone(),
            last_result_digest: l.digest.lock().clone(),
            hit_count: l.hits.load(Ordering::SeqCst),
        })
    }

    pub fn entries(&self) -> Vec<QueryLogEntry> {
        let keys: Vec<String> = self.entries.read().keys().cloned().collect();
        keys.iter().filter_map(|k| self.entry(k)).collect()
    }

    /// Looks `q` up by signature, logging it on a miss, then runs the stored
    /// normalized query. Result columns carry the caller's variable names.
    pub fn process(&self, store: &GraphStore, q: &Query) -> Result<QueryOutcome, SemanticError> {
        let norm = normalize(q);
        let existing = self.entries.read().get(&norm.signature).cloned();
        let (logged, status) = match existing {
            Some(l) => (l, CacheStatus::Hit),
            None => {
                let mut w = self.entries.write();
                match w.get(&norm.signature) {
                    Some(l) => (l.clone(), CacheStatus::Hit),
                    None => {
                        let l = Arc::new(Logged {
                            query: norm.query,
                            hits: AtomicU64::new(0),
                            digest: Mutex::new(String::new()),
                        });
                        w.insert(norm.signature.clone(), l.clone());
                        (l, CacheStatus::MissGenerated)
                    }
                }
            }
        };
        logged.hits.fetch_add(1, Ordering::SeqCst);
        let bindings = store.evaluate(&logged.query)?.renamed(q.select().to_vec());
        *logged.digest.lock() = hex::encode(Sha256::digest(bindings.to_json().as_bytes()));
        Ok(QueryOutcome { bindings, status, signature: norm.signature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{Iri, Literal, Triple};

    fn q(text: &str) -> Query {
        Query::from_json(text).unwrap()
    }

    fn store() -> GraphStore {
        let s = GraphStore::new();
        let g = Iri::new("urn:g").unwrap();
        s.insert(&g, Triple::new(Iri::new("urn:a").unwrap(), Iri::new("urn:hr").unwrap(), Literal::integer(70)));
        s.insert(&g, Triple::iris("urn:a", "urn:type", "urn:Patient").unwrap());
        s
    }

    #[test]
    fn repeat_is_a_hit() {
        let log = QueryLog::new();
        let s = store();
        let query = q(r#"{"select":["?x"],"where":[["?x","urn:hr","?v"]]}"#);
        let first = log.process(&s, &query).unwrap();
        assert_eq!(first.status, CacheStatus::MissGenerated);
        let second = log.process(&s, &query).unwrap();
        assert_eq!(second.status, CacheStatus::Hit);
        assert_eq!(log.entry(&second.signature).unwrap().hit_count, 2);
        assert_eq!(second.bindings.len(), 1);
    }

    #[test]
    fn renamed_and_permuted_variants_share_a_signature() {
        let a = q(r#"{"select":["?x"],"where":[["?x","urn:hr","?v"],["?x","urn:type","?t"]],
                      "filters":[{"var":"?v","op":">","value":60}]}"#);
        let b = q(r#"{"select":["?p"],"where":[["?p","urn:type","?k"],["?p","urn:hr","?w"]],
                      "filters":[{"var":"?w","op":">","value":60}]}"#);
        assert_eq!(signature(&a), signature(&b));
        let log = QueryLog::new();
        let s = store();
        log.process(&s, &a).unwrap();
        let out = log.process(&s, &b).unwrap();
        assert_eq!(out.status, CacheStatus::Hit);
        assert_eq!(out.bindings.variables()[0].name(), "p");
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn symmetric_patterns_need_the_minimum_over_orderings() {
        let a = q(r#"{"select":[],"where":[["?a","urn:p","?b"],["?b","urn:p","?c"]]}"#);
        let b = q(r#"{"select":[],"where":[["?y","urn:p","?z"],["?x","urn:p","?y"]]}"#);
        assert_eq!(signature(&a), signature(&b));
    }

    #[test]
    fn different_constants_differ() {
        let a = q(r#"{"select":["?x"],"where":[["?x","urn:hr","?v"]]}"#);
        let b = q(r#"{"select":["?x"],"where":[["?x","urn:rr","?v"]]}"#);
        assert_ne!(signature(&a), signature(&b));
        let log = QueryLog::new();
        let s = store();
        log.process(&s, &a).unwrap();
        assert_eq!(log.process(&s, &b).unwrap().status, CacheStatus::MissGenerated);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn results_track_the_store() {
        let log = QueryLog::new();
        let s = store();
        let query = q(r#"{"select":["?x"],"where":[["?x","urn:hr","?v"]]}"#);
        assert_eq!(log.process(&s, &query).unwrap().bindings.len(), 1);
        s.insert(
            &Iri::new("urn:g").unwrap(),
            Triple::new(Iri::new("urn:b").unwrap(), Iri::new("urn:hr").unwrap(), Literal::integer(80)),
        );
        assert_eq!(log.process(&s, &query).unwrap().bindings.len(), 2);
    }
}
