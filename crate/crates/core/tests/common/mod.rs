//! Independent oracles and case generators shared by the integration suites.
//! Nothing here calls the library's join, matcher or normalizer.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use iot_hub::knowledge::InferenceRule;
use iot_hub::semantic::{CompareOp, Filter, GraphStore, Iri, Literal, PatternTerm, Query, Term, Triple, TriplePattern, Variable};

pub const NUM: &str = "urn:p:num";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn iri(s: &str) -> Iri {
    Iri::new(s).unwrap()
}

pub fn entity(i: usize) -> Iri {
    iri(&format!("urn:e:{i}"))
}

pub fn pred(i: usize) -> Iri {
    iri(&format!("urn:p:{i}"))
}

pub fn graph(i: usize) -> Iri {
    iri(&format!("urn:g:{i}"))
}

/// Up to `max` triples spread over two graphs: entity links, string
/// attributes and integer-valued `urn:p:num` facts.
pub fn gen_store(r: &mut impl Rng, max: usize) -> BTreeMap<Iri, BTreeSet<Triple>> {
    let mut out: BTreeMap<Iri, BTreeSet<Triple>> = BTreeMap::new();
    let n = r.gen_range(max / 2..=max);
    for _ in 0..n {
        let s = entity(r.gen_range(0..4));
        let t = match r.gen_range(0..10) {
            0..=5 => Triple::new(s, pred(r.gen_range(0..3)), entity(r.gen_range(0..4))),
            6 | 7 => Triple::new(s, pred(r.gen_range(0..3)), Literal::string(["a", "b"][r.gen_range(0..2)])),
            _ => Triple::new(s, iri(NUM), Literal::integer(r.gen_range(0..6))),
        };
        out.entry(graph(r.gen_range(0..2))).or_default().insert(t);
    }
    out
}

pub fn load(store: &BTreeMap<Iri, BTreeSet<Triple>>) -> GraphStore {
    let g = GraphStore::new();
    for (name, ts) in store {
        g.create_graph(name);
        g.insert_all(name, ts.iter().cloned());
    }
    g
}

fn var(name: &str) -> PatternTerm {
    PatternTerm::Var(Variable::new(name).unwrap())
}

fn node_term(r: &mut impl Rng) -> PatternTerm {
    if r.gen_bool(0.6) {
        var(&format!("x{}", r.gen_range(0..4)))
    } else {
        PatternTerm::Const(Term::Iri(entity(r.gen_range(0..4))))
    }
}

/// One to `max_patterns` patterns with optional integer filters. Variables
/// `?n*` only ever sit in the object of a constant `urn:p:num` pattern, so
/// every filter compares integers.
pub fn gen_query(r: &mut impl Rng, max_patterns: usize) -> Query {
    let k = r.gen_range(1..=max_patterns);
    let mut patterns = Vec::with_capacity(k);
    let mut numeric: BTreeSet<String> = BTreeSet::new();
    for _ in 0..k {
        let s = node_term(r);
        let p = if r.gen_bool(0.2) {
            PatternTerm::Const(Term::Iri(iri(NUM)))
        } else if r.gen_bool(0.15) {
            var(&format!("x{}", r.gen_range(0..4)))
        } else {
            PatternTerm::Const(Term::Iri(pred(r.gen_range(0..3))))
        };
        let o = if matches!(&p, PatternTerm::Const(Term::Iri(i)) if i.as_str() == NUM) {
            if r.gen_bool(0.8) {
                let n = format!("n{}", r.gen_range(0..2));
                numeric.insert(n.clone());
                var(&n)
            } else {
                PatternTerm::Const(Term::Literal(Literal::integer(r.gen_range(0..6))))
            }
        } else {
            match r.gen_range(0..10) {
                0 => PatternTerm::Const(Term::Literal(Literal::string("a"))),
                1..=3 => PatternTerm::Const(Term::Iri(entity(r.gen_range(0..4)))),
                _ => var(&format!("x{}", r.gen_range(0..4))),
            }
        };
        patterns.push(TriplePattern::new(s, p, o).unwrap());
    }
    let mut filters = Vec::new();
    for n in &numeric {
        if r.gen_bool(0.5) {
            let op = [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge]
                [r.gen_range(0..6)];
            filters.push(Filter::new(Variable::new(n).unwrap(), op, Literal::integer(r.gen_range(0..6))));
        }
    }
    let mut vars: Vec<Variable> = Vec::new();
    for p in &patterns {
        for v in p.variables() {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
    }
    vars.shuffle(r);
    let keep = if vars.is_empty() { 0 } else { r.gen_range(1..=vars.len()) };
    vars.truncate(keep);
    let graphs = match r.gen_range(0..4) {
        0 => vec![graph(0)],
        1 => vec![graph(1)],
        _ => vec![],
    };
    Query::new(vars, patterns, filters, graphs).unwrap()
}

/// A query grown from triples actually in `store`: a chain of up to
/// `max_patterns` stored triples with entities generalized to shared
/// variables, so most of these have answers.
pub fn gen_query_from(r: &mut impl Rng, store: &BTreeMap<Iri, BTreeSet<Triple>>, max_patterns: usize) -> Query {
    let all: Vec<&Triple> = store.values().flatten().collect();
    if all.is_empty() {
        return gen_query(r, max_patterns);
    }
    let k = r.gen_range(1..=max_patterns);
    let mut chosen: Vec<&Triple> = vec![all[r.gen_range(0..all.len())]];
    while chosen.len() < k {
        let last = chosen[chosen.len() - 1];
        let next: Vec<&Triple> = all.iter().copied().filter(|t| Some(&t.subject) == last.object.as_iri()).collect();
        let pool = if next.is_empty() || r.gen_bool(0.3) { &all } else { &next };
        chosen.push(pool[r.gen_range(0..pool.len())]);
    }
    let mut names: BTreeMap<Iri, Option<String>> = BTreeMap::new();
    let mut numeric: BTreeSet<String> = BTreeSet::new();
    let mut node = |e: &Iri, r: &mut dyn rand::RngCore| -> PatternTerm {
        let n = names.len();
        match names.entry(e.clone()).or_insert_with(|| r.gen_bool(0.7).then(|| format!("x{n}"))) {
            Some(v) => var(v),
            None => PatternTerm::Const(Term::Iri(e.clone())),
        }
    };
    let mut patterns = Vec::new();
    for (i, t) in chosen.iter().enumerate() {
        let s = node(&t.subject, r);
        let p = if t.predicate.as_str() != NUM && r.gen_bool(0.1) {
            var(&format!("p{i}"))
        } else {
            PatternTerm::Const(Term::Iri(t.predicate.clone()))
        };
        let o = match &t.object {
            Term::Iri(e) => node(e, r),
            Term::Literal(_) if t.predicate.as_str() == NUM && r.gen_bool(0.8) => {
                let n = format!("n{i}");
                numeric.insert(n.clone());
                var(&n)
            }
            Term::Literal(l) if r.gen_bool(0.5) => PatternTerm::Const(Term::Literal(l.clone())),
            Term::Literal(_) => var(&format!("l{i}")),
        };
        patterns.push(TriplePattern::new(s, p, o).unwrap());
    }
    let mut filters = Vec::new();
    for n in &numeric {
        if r.gen_bool(0.5) {
            let op = [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge]
                [r.gen_range(0..6)];
            filters.push(Filter::new(Variable::new(n).unwrap(), op, Literal::integer(r.gen_range(0..6))));
        }
    }
    let mut vars: Vec<Variable> = Vec::new();
    for p in &patterns {
        for v in p.variables() {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
    }
    vars.shuffle(r);
    let keep = if vars.is_empty() { 0 } else { r.gen_range(1..=vars.len()) };
    vars.truncate(keep);
    let graphs = if r.gen_bool(0.25) { vec![graph(r.gen_range(0..2))] } else { vec![] };
    Query::new(vars, patterns, filters, graphs).unwrap()
}

type Binding = BTreeMap<Variable, Term>;

fn resolve<'a>(slot: &'a PatternTerm, b: &'a Binding) -> Option<&'a Term> {
    match slot {
        PatternTerm::Const(c) => Some(c),
        PatternTerm::Var(v) => b.get(v),
    }
}

/// Extends `b` so that `p` matches `t`, or `None` on conflict.
fn extend(p: &TriplePattern, t: &Triple, b: &Binding) -> Option<Binding> {
    let values = [Term::Iri(t.subject.clone()), Term::Iri(t.predicate.clone()), t.object.clone()];
    let mut fresh: Vec<(&Variable, &Term)> = Vec::new();
    for (slot, value) in p.terms().into_iter().zip(values.iter()) {
        match slot {
            PatternTerm::Const(c) if c != value => return None,
            PatternTerm::Const(_) => {}
            PatternTerm::Var(v) => match b.get(v).or_else(|| fresh.iter().find(|(f, _)| *f == v).map(|(_, t)| *t)) {
                Some(bound) if bound != value => return None,
                Some(_) => {}
                None => fresh.push((v, value)),
            },
        }
    }
    let mut nb = b.clone();
    for (v, t) in fresh {
        nb.insert(v.clone(), t.clone());
    }
    Some(nb)
}

/// Triples grouped by predicate and by (subject, predicate).
pub struct Index<'a> {
    all: Vec<&'a Triple>,
    by_p: BTreeMap<Iri, Vec<&'a Triple>>,
    by_sp: BTreeMap<(Iri, Iri), Vec<&'a Triple>>,
}

impl<'a> Index<'a> {
    pub fn new(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut ix = Index { all: Vec::new(), by_p: BTreeMap::new(), by_sp: BTreeMap::new() };
        for t in triples {
            ix.all.push(t);
            ix.by_p.entry(t.predicate.clone()).or_default().push(t);
            ix.by_sp.entry((t.subject.clone(), t.predicate.clone())).or_default().push(t);
        }
        ix
    }

    fn candidates(&self, p: &TriplePattern, b: &Binding) -> &[&'a Triple] {
        let s = resolve(&p.subject, b).and_then(Term::as_iri);
        let pr = resolve(&p.predicate, b).and_then(Term::as_iri);
        match (s, pr) {
            (Some(s), Some(pr)) => self.by_sp.get(&(s.clone(), pr.clone())).map_or(&[], Vec::as_slice),
            (None, Some(pr)) => self.by_p.get(pr).map_or(&[], Vec::as_slice),
            _ => &self.all,
        }
    }
}

/// Every binding that matches all `patterns`, by nested loops over the
/// triples (narrowed by a plain lookup table when a subject or predicate is
/// already fixed).
pub fn brute_force_bindings(patterns: &[TriplePattern], ix: &Index) -> Vec<Binding> {
    let mut out = vec![Binding::new()];
    for p in patterns {
        let mut next = Vec::new();
        for b in &out {
            for t in ix.candidates(p, b) {
                if let Some(nb) = extend(p, t, b) {
                    next.push(nb);
                }
            }
        }
        out = next;
    }
    out
}

fn int_of(t: &Term) -> i64 {
    t.as_literal().and_then(|l| l.lexical().parse().ok()).expect("numeric variables bind integers")
}

fn holds(op: CompareOp, a: i64, b: i64) -> bool {
    match op {
        CompareOp::Eq => a == b,
        CompareOp::Ne => a != b,
        CompareOp::Lt => a < b,
        CompareOp::Le => a <= b,
        CompareOp::Gt => a > b,
        CompareOp::Ge => a >= b,
    }
}

/// Answer rows of `q` over `store`, computed by brute force.
pub fn brute_force_query(store: &BTreeMap<Iri, BTreeSet<Triple>>, q: &Query) -> BTreeSet<Vec<Term>> {
    let triples: BTreeSet<Triple> = store
        .iter()
        .filter(|(g, _)| q.graphs().is_empty() || q.graphs().contains(g))
        .flat_map(|(_, ts)| ts.iter().cloned())
        .collect();
    brute_force_bindings(q.patterns(), &Index::new(&triples))
        .into_iter()
        .filter(|b| q.filters().iter().all(|f| holds(f.op, int_of(&b[&f.variable]), int_of(&f.value))))
        .map(|b| q.select().iter().map(|v| b[v].clone()).collect())
        .collect()
}

/// Random rule program: up to `max_rules` rules of one to three connected
/// body patterns and one or two head templates.
pub fn gen_program(r: &mut impl Rng, max_rules: usize) -> Vec<InferenceRule> {
    let n = r.gen_range(1..=max_rules);
    (0..n)
        .map(|i| {
            let k = r.gen_range(1..=3);
            let mut vars: Vec<String> = vec!["?a".into()];
            let mut body = Vec::new();
            let mut subjects: Vec<String> = Vec::new();
            for _ in 0..k {
                let s = vars[r.gen_range(0..vars.len())].clone();
                if !subjects.contains(&s) {
                    subjects.push(s.clone());
                }
                let p = format!("urn:p:{}", r.gen_range(0..3));
                let o = if r.gen_bool(0.15) {
                    format!("urn:e:{}", r.gen_range(0..6))
                } else {
                    let v = format!("?v{}", vars.len());
                    if r.gen_bool(0.3) && vars.len() > 1 {
                        vars[r.gen_range(0..vars.len())].clone()
                    } else {
                        vars.push(v.clone());
                        v
                    }
                };
                body.push(serde_json::json!([s, p, o]));
            }
            let head_n = r.gen_range(1..=2);
            let head: Vec<_> = (0..head_n)
                .map(|_| {
                    // Head subjects must be bound to IRIs, so only body subjects qualify.
                    let s = subjects[r.gen_range(0..subjects.len())].clone();
                    let o = if r.gen_bool(0.2) {
                        format!("urn:e:{}", r.gen_range(0..6))
                    } else {
                        vars[r.gen_range(0..vars.len())].clone()
                    };
                    serde_json::json!([s, format!("urn:p:{}", r.gen_range(0..3)), o])
                })
                .collect();
            let v = serde_json::json!({"id": format!("r{i}"), "body": {"where": body}, "head": head});
            InferenceRule::from_json(&v).unwrap()
        })
        .collect()
}

fn instantiate(t: &TriplePattern, b: &Binding) -> Option<Triple> {
    let get = |p: &PatternTerm| match p {
        PatternTerm::Const(c) => Some(c.clone()),
        PatternTerm::Var(v) => b.get(v).cloned(),
    };
    let s = get(&t.subject)?.as_iri()?.clone();
    let p = get(&t.predicate)?.as_iri()?.clone();
    Some(Triple::new(s, p, get(&t.object)?))
}

/// Naive fixpoint: re-evaluate every rule over everything known until a
/// round adds nothing. Returns the facts not in `input`.
pub fn naive_infer(input: &BTreeSet<Triple>, rules: &[InferenceRule]) -> BTreeSet<Triple> {
    let mut known = input.clone();
    loop {
        let snapshot = known.clone();
        let ix = Index::new(&snapshot);
        let mut added = false;
        for rule in rules {
            for b in brute_force_bindings(&rule.body.patterns, &ix) {
                for h in &rule.head {
                    if let Some(t) = instantiate(h, &b) {
                        added |= known.insert(t);
                    }
                }
            }
        }
        if !added {
            break;
        }
    }
    known.difference(input).cloned().collect()
}

/// Triples over entities and the three link predicates.
pub fn gen_facts(r: &mut impl Rng, max: usize) -> BTreeSet<Triple> {
    let n = r.gen_range(0..=max);
    (0..n).map(|_| Triple::new(entity(r.gen_range(0..8)), pred(r.gen_range(0..3)), entity(r.gen_range(0..8)))).collect()
}

/// A query text that is identical for two queries exactly when one is a
/// variable renaming and pattern reordering of the other: the least
/// rendering over every ordering of the distinct patterns, with variables
/// numbered by first occurrence (selected variables first).
pub fn canonical_text(q: &Query) -> String {
    let mut distinct: Vec<TriplePattern> = Vec::new();
    for p in q.patterns() {
        if !distinct.contains(p) {
            distinct.push(p.clone());
        }
    }
    let mut best: Option<String> = None;
    permutations(distinct.len(), &mut |order| {
        let mut names: BTreeMap<Variable, String> = BTreeMap::new();
        let name = |v: &Variable, names: &mut BTreeMap<Variable, String>| {
            let n = names.len();
            names.entry(v.clone()).or_insert_with(|| format!("?v{n}")).clone()
        };
        let mut text = String::new();
        for v in q.select() {
            text.push_str(&name(v, &mut names));
            text.push(' ');
        }
        text.push('|');
        let render = |t: &PatternTerm, names: &mut BTreeMap<Variable, String>| match t {
            PatternTerm::Var(v) => name(v, names),
            PatternTerm::Const(c) => c.to_string(),
        };
        for &i in order {
            let p = &distinct[i];
            for t in p.terms() {
                text.push_str(&render(t, &mut names));
                text.push(' ');
            }
            text.push(';');
        }
        let mut fs: Vec<String> = q
            .filters()
            .iter()
            .map(|f| format!("{} {} {}", name(&f.variable, &mut names), f.op.symbol(), f.value))
            .collect();
        fs.sort();
        text.push_str(&fs.join(","));
        let mut graphs: Vec<&Iri> = q.graphs().iter().collect();
        graphs.sort();
        text.push_str(&format!("{graphs:?}"));
        if best.as_ref().map_or(true, |b| text < *b) {
            best = Some(text);
        }
    });
    best.unwrap_or_default()
}

fn permutations(n: usize, visit: &mut dyn FnMut(&[usize])) {
    fn go(prefix: &mut Vec<usize>, n: usize, visit: &mut dyn FnMut(&[usize])) {
        if prefix.len() == n {
            visit(prefix);
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                go(prefix, n, visit);
                prefix.pop();
            }
        }
    }
    go(&mut Vec::new(), n, visit);
}

/// `q` with variables renamed through `f` and patterns reordered by `order`.
pub fn rename_and_permute(q: &Query, f: &dyn Fn(&Variable) -> Variable, order: &[usize]) -> Query {
    let map = |t: &PatternTerm| match t {
        PatternTerm::Var(v) => PatternTerm::Var(f(v)),
        c => c.clone(),
    };
    let patterns = order
        .iter()
        .map(|&i| {
            let p = &q.patterns()[i];
            TriplePattern::new(map(&p.subject), map(&p.predicate), map(&p.object)).unwrap()
        })
        .collect();
    let filters = q.filters().iter().map(|x| Filter::new(f(&x.variable), x.op, x.value.clone())).collect();
    Query::new(q.select().iter().map(f).collect(), patterns, filters, q.graphs().to_vec()).unwrap()
}

/// `q` with one constant replaced by a different one of the same kind.
/// `None` if the query has no constant.
pub fn change_constant(q: &Query, r: &mut impl Rng) -> Option<Query> {
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (i, p) in q.patterns().iter().enumerate() {
        for (j, t) in p.terms().iter().enumerate() {
            if matches!(t, PatternTerm::Const(_)) {
                slots.push((i, j));
            }
        }
    }
    let &(i, j) = slots.choose(r)?;
    let mut patterns: Vec<TriplePattern> = q.patterns().to_vec();
    let p = &mut patterns[i];
    let slot = match j {
        0 => &mut p.subject,
        1 => &mut p.predicate,
        _ => &mut p.object,
    };
    let PatternTerm::Const(old) = slot.clone() else { unreachable!() };
    *slot = PatternTerm::Const(match old {
        Term::Iri(x) => Term::Iri(iri(&format!("{}x", x.as_str()))),
        Term::Literal(l) => Term::Literal(Literal::string(format!("{}x", l.lexical()))),
    });
    Some(Query::new(q.select().to_vec(), patterns, q.filters().to_vec(), q.graphs().to_vec()).unwrap())
}
