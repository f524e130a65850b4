use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ntriples::parse_term;
use super::{Datatype, Iri, Literal, SemanticError, Term, Triple, Variable};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternTerm {
    Var(Variable),
    Const(Term),
}

impl PatternTerm {
    pub fn var(name: &str) -> Result<Self, SemanticError> {
        Variable::new(name).map(PatternTerm::Var)
    }

    pub fn iri(s: &str) -> Result<Self, SemanticError> {
        Iri::new(s).map(|i| PatternTerm::Const(Term::Iri(i)))
    }

    pub fn as_var(&self) -> Option<&Variable> {
        match self {
            PatternTerm::Var(v) => Some(v),
            PatternTerm::Const(_) => None,
        }
    }

    /// JSON form: `"?x"` is a variable, `"\"..\"^^<dt>"` an N-Triples literal,
    /// any other string an IRI; numbers, booleans and `{literal, datatype}`
    /// objects are literals.
    pub fn from_json(v: &Value) -> Result<Self, SemanticError> {
        match v {
            Value::String(s) if s.starts_with('?') => PatternTerm::var(s),
            other => term_from_json(other).map(PatternTerm::Const),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            PatternTerm::Var(v) => Value::String(v.to_string()),
            PatternTerm::Const(t) => term_to_json(t),
        }
    }
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => v.fmt(f),
            PatternTerm::Const(t) => t.fmt(f),
        }
    }
}

impl From<Variable> for PatternTerm {
    fn from(v: Variable) -> Self {
        PatternTerm::Var(v)
    }
}

impl From<Term> for PatternTerm {
    fn from(t: Term) -> Self {
        PatternTerm::Const(t)
    }
}

impl From<Iri> for PatternTerm {
    fn from(i: Iri) -> Self {
        PatternTerm::Const(Term::Iri(i))
    }
}

/// Reads a term in the query-document JSON encoding.
pub fn term_from_json(v: &Value) -> Result<Term, SemanticError> {
    let bad = || SemanticError::QueryDocument(format!("cannot read term from {v}"));
    match v {
        Value::String(s) if s.starts_with('"') || s.starts_with('<') => parse_term(s),
        Value::String(s) => Iri::new(s.as_str()).map(Term::Iri),
        Value::Bool(b) => Ok(Term::Literal(Literal::boolean(*b))),
        Value::Number(n) => match n.as_i64() {
            Some(i) => Ok(Term::Literal(Literal::integer(i))),
            None => Literal::new(n.to_string(), Datatype::Decimal).map(Term::Literal),
        },
        Value::Object(map) => {
            let lexical = map.get("literal").and_then(Value::as_str).ok_or_else(bad)?;
            let datatype = match map.get("datatype").and_then(Value::as_str) {
                Some(d) => Datatype::parse(d)?,
                None => Datatype::String,
            };
            Literal::new(lexical, datatype).map(Term::Literal)
        }
        _ => Err(bad()),
    }
}

pub fn term_to_json(t: &Term) -> Value {
    match t {
        Term::Iri(i) => Value::String(i.to_string()),
        Term::Literal(l) => serde_json::json!({
            "literal": l.lexical(),
            "datatype": l.datatype().short_name(),
        }),
    }
}

/// A triple with variables allowed in any position. Constants in subject and
/// predicate position must be IRIs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(
        subject: impl Into<PatternTerm>,
        predicate: impl Into<PatternTerm>,
        object: impl Into<PatternTerm>,
    ) -> Result<Self, SemanticError> {
        let (subject, predicate) = (subject.into(), predicate.into());
        if matches!(subject, PatternTerm::Const(Term::Literal(_))) {
            return Err(SemanticError::LiteralPosition("subject"));
        }
        if matches!(predicate, PatternTerm::Const(Term::Literal(_))) {
            return Err(SemanticError::LiteralPosition("predicate"));
        }
        Ok(TriplePattern { subject, predicate, object: object.into() })
    }

    /// Parses three JSON terms, see [`PatternTerm::from_json`].
    pub fn from_json(parts: &[Value]) -> Result<Self, SemanticError> {
        match parts {
            [s, p, o] => TriplePattern::new(
                PatternTerm::from_json(s)?,
                PatternTerm::from_json(p)?,
                PatternTerm::from_json(o)?,
            ),
            _ => Err(SemanticError::QueryDocument("pattern must have three terms".into())),
        }
    }

    pub fn to_json(&self) -> Value {
        Value::Array(vec![self.subject.to_json(), self.predicate.to_json(), self.object.to_json()])
    }

    pub fn terms(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    /// Distinct variables in subject, predicate, object order.
    pub fn variables(&self) -> Vec<&Variable> {
        let mut out: Vec<&Variable> = Vec::with_capacity(3);
        for v in self.terms().into_iter().filter_map(PatternTerm::as_var) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn parse(s: &str) -> Result<Self, SemanticError> {
        Ok(match s {
            "=" | "==" => CompareOp::Eq,
            "!=" | "≠" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" | "≤" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" | "≥" => CompareOp::Ge,
            other => return Err(SemanticError::UnknownOperator(other.to_owned())),
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
        }
    }
}

/// `variable op constant`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Filter {
    pub variable: Variable,
    pub op: CompareOp,
    pub value: Term,
}

impl Filter {
    pub fn new(variable: Variable, op: CompareOp, value: impl Into<Term>) -> Self {
        Filter { variable, op, value: value.into() }
    }

    /// Comparing values of incompatible kinds is an error, not `false`.
    pub fn test(&self, bound: &Term) -> Result<bool, SemanticError> {
        bound.compare(&self.value).map(|ord| self.op.holds(ord))
    }

    pub fn from_json(v: &Value) -> Result<Self, SemanticError> {
        let field = |k: &str| {
            v.get(k)
                .ok_or_else(|| SemanticError::QueryDocument(format!("filter lacks {k:?}")))
        };
        let var = field("var")?
            .as_str()
            .ok_or_else(|| SemanticError::QueryDocument("filter var must be a string".into()))?;
        let op = field("op")?
            .as_str()
            .ok_or_else(|| SemanticError::QueryDocument("filter op must be a string".into()))?;
        Ok(Filter {
            variable: Variable::new(var)?,
            op: CompareOp::parse(op)?,
            value: term_from_json(field("value")?)?,
        })
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "var": self.variable.to_string(),
            "op": self.op.symbol(),
            "value": term_to_json(&self.value),
        })
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.variable, self.op.symbol(), self.value)
    }
}

/// Anything that can enumerate triples matching constant positions.
pub trait TripleSource {
    fn scan(
        &self,
        subject: Option<&Iri>,
        predicate: Option<&Iri>,
        object: Option<&Term>,
        visit: &mut dyn FnMut(&Triple),
    );
}

enum Slot {
    Var(usize),
    Const(Term),
}

struct Compiled {
    slots: [Slot; 3],
    vars: Vec<usize>,
}

/// Natural join of `patterns`; `source_for(i)` supplies the triples pattern `i`
/// is matched against. Returns the variables in first-occurrence order and
/// the distinct full bindings that pass every filter.
pub(crate) fn join<'s>(
    patterns: &[TriplePattern],
    filters: &[Filter],
    source_for: &dyn Fn(usize) -> &'s dyn TripleSource,
    first: Option<usize>,
) -> Result<(Vec<Variable>, BTreeSet<Vec<Term>>), SemanticError> {
    let mut variables: Vec<Variable> = Vec::new();
    for p in patterns {
        for v in p.variables() {
            if !variables.contains(v) {
                variables.push(v.clone());
            }
        }
    }
    let index = |v: &Variable| variables.iter().position(|x| x == v);
    let mut compiled = Vec::with_capacity(patterns.len());
    for p in patterns {
        let slot = |t: &PatternTerm| match t {
            PatternTerm::Var(v) => Slot::Var(index(v).expect("collected above")),
            PatternTerm::Const(c) => Slot::Const(c.clone()),
        };
        let slots = [slot(&p.subject), slot(&p.predicate), slot(&p.object)];
        let vars = p.variables().into_iter().filter_map(index).collect();
        compiled.push(Compiled { slots, vars });
    }
    let mut filter_slots = Vec::with_capacity(filters.len());
    for f in filters {
        let i = index(&f.variable)
            .ok_or_else(|| SemanticError::UnboundVariable(f.variable.to_string()))?;
        filter_slots.push((i, f));
    }

    let order = plan(&compiled, variables.len(), first);
    let mut binding: Vec<Option<Term>> = vec![None; variables.len()];
    let mut rows = BTreeSet::new();
    let mut failure = None;
    if !patterns.is_empty() {
        extend(&order, 0, &compiled, source_for, &mut binding, &mut |b| {
            if failure.is_some() {
                return;
            }
            let row: Vec<Term> = b.iter().map(|t| t.clone().expect("all bound")).collect();
            for (i, f) in &filter_slots {
                match f.test(&row[*i]) {
                    Ok(true) => {}
                    Ok(false) => return,
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                }
            }
            rows.insert(row);
        });
    }
    match failure {
        Some(e) => Err(e),
        None => Ok((variables, rows)),
    }
}

/// Greedy order: start at `first` (or the most constrained pattern), then
/// repeatedly take the pattern with the most already-bound positions.
fn plan(compiled: &[Compiled], nvars: usize, first: Option<usize>) -> Vec<usize> {
    let mut bound = vec![false; nvars];
    let mut left: Vec<usize> = (0..compiled.len()).collect();
    let mut order = Vec::with_capacity(compiled.len());
    let score = |c: &Compiled, bound: &[bool]| {
        c.slots
            .iter()
            .filter(|s| match s {
                Slot::Const(_) => true,
                Slot::Var(i) => bound[*i],
            })
            .count()
    };
    while !left.is_empty() {
        let pick = match (order.is_empty(), first) {
            (true, Some(f)) if f < compiled.len() => left.iter().position(|&i| i == f).unwrap_or(0),
            _ => {
                let mut best = 0;
                for (k, &i) in left.iter().enumerate() {
                    if score(&compiled[i], &bound) > score(&compiled[left[best]], &bound) {
                        best = k;
                    }
                }
                best
            }
        };
        let i = left.remove(pick);
        for &v in &compiled[i].vars {
            bound[v] = true;
        }
        order.push(i);
    }
    order
}

fn extend<'s>(
    order: &[usize],
    depth: usize,
    compiled: &[Compiled],
    source_for: &dyn Fn(usize) -> &'s dyn TripleSource,
    binding: &mut Vec<Option<Term>>,
    emit: &mut dyn FnMut(&[Option<Term>]),
) {
    if depth == order.len() {
        emit(binding);
        return;
    }
    let idx = order[depth];
    let pat = &compiled[idx];
    let resolve = |s: &Slot, binding: &[Option<Term>]| -> Option<Term> {
        match s {
            Slot::Const(t) => Some(t.clone()),
            Slot::Var(i) => binding[*i].clone(),
        }
    };
    let s = resolve(&pat.slots[0], binding);
    let p = resolve(&pat.slots[1], binding);
    let o = resolve(&pat.slots[2], binding);
    // A literal bound into subject or predicate position can never match.
    let s_iri = match &s {
        Some(Term::Iri(i)) => Some(i.clone()),
        Some(Term::Literal(_)) => return,
        None => None,
    };
    let p_iri = match &p {
        Some(Term::Iri(i)) => Some(i.clone()),
        Some(Term::Literal(_)) => return,
        None => None,
    };
    let mut matches: Vec<Triple> = Vec::new();
    source_for(idx).scan(s_iri.as_ref(), p_iri.as_ref(), o.as_ref(), &mut |t| {
        matches.push(t.clone())
    });
    for t in matches {
        let values = [Term::Iri(t.subject), Term::Iri(t.predicate), t.object];
        let mut assigned: Vec<usize> = Vec::new();
        let mut ok = true;
        for (slot, value) in pat.slots.iter().zip(values) {
            match slot {
                Slot::Const(c) => {
                    if *c != value {
                        ok = false;
                    }
                }
                Slot::Var(i) => match &binding[*i] {
                    Some(b) => {
                        if *b != value {
                            ok = false;
                        }
                    }
                    None => {
                        binding[*i] = Some(value);
                        assigned.push(*i);
                    }
                },
            }
            if !ok {
                break;
            }
        }
        if ok {
            extend(order, depth + 1, compiled, source_for, binding, emit);
        }
        for i in assigned {
            binding[i] = None;
        }
    }
}

/// A select query over a basic graph pattern with comparison filters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    select: Vec<Variable>,
    patterns: Vec<TriplePattern>,
    filters: Vec<Filter>,
    graphs: Vec<Iri>,
}

impl Query {
    /// Fails with `UnboundVariable` if a selected or filtered variable does not
    /// occur in any pattern. An empty graph list scopes the query to every
    /// graph in the store.
    pub fn new(
        select: Vec<Variable>,
        patterns: Vec<TriplePattern>,
        filters: Vec<Filter>,
        graphs: Vec<Iri>,
    ) -> Result<Self, SemanticError> {
        let bound: BTreeSet<&Variable> = patterns.iter().flat_map(|p| p.variables()).collect();
        for v in select.iter().chain(filters.iter().map(|f| &f.variable)) {
            if !bound.contains(v) {
                return Err(SemanticError::UnboundVariable(v.to_string()));
            }
        }
        let mut graphs = graphs;
        graphs.sort();
        graphs.dedup();
        Ok(Query { select, patterns, filters, graphs })
    }

    /// Selects every variable of `patterns` in first-occurrence order.
    pub fn select_all(
        patterns: Vec<TriplePattern>,
        filters: Vec<Filter>,
        graphs: Vec<Iri>,
    ) -> Result<Self, SemanticError> {
        let mut select: Vec<Variable> = Vec::new();
        for v in patterns.iter().flat_map(|p| p.variables()) {
            if !select.contains(v) {
                select.push(v.clone());
            }
        }
        Query::new(select, patterns, filters, graphs)
    }

    pub fn select(&self) -> &[Variable] {
        &self.select
    }

    pub fn patterns(&self) -> &[TriplePattern] {
        &self.patterns
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn graphs(&self) -> &[Iri] {
        &self.graphs
    }

    pub fn with_graphs(mut self, graphs: Vec<Iri>) -> Self {
        self.graphs = graphs;
        self.graphs.sort();
        self.graphs.dedup();
        self
    }

    /// Joins, filters, projects and sorts against `source`.
    pub fn evaluate_on(&self, source: &dyn TripleSource) -> Result<BindingSet, SemanticError> {
        if self.patterns.is_empty() {
            return Ok(BindingSet::empty(self.select.clone()));
        }
        let (vars, rows) = join(&self.patterns, &self.filters, &|_| source, None)?;
        let cols: Vec<usize> = self
            .select
            .iter()
            .map(|v| vars.iter().position(|x| x == v).expect("validated at construction"))
            .collect();
        let projected: BTreeSet<Vec<Term>> = rows
            .into_iter()
            .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
            .collect();
        Ok(BindingSet { variables: self.select.clone(), rows: projected.into_iter().collect() })
    }

    pub fn to_doc(&self) -> QueryDoc {
        QueryDoc {
            select: self.select.iter().map(|v| v.to_string()).collect(),
            patterns: self.patterns.iter().map(TriplePattern::to_json).collect(),
            filters: self.filters.iter().map(Filter::to_json).collect(),
            graphs: self.graphs.iter().map(|g| g.to_string()).collect(),
        }
    }

    pub fn from_doc(doc: &QueryDoc) -> Result<Self, SemanticError> {
        let select = doc.select.iter().map(|s| Variable::new(s)).collect::<Result<_, _>>()?;
        let patterns = doc
            .patterns
            .iter()
            .map(|p| match p {
                Value::Array(parts) => TriplePattern::from_json(parts),
                _ => Err(SemanticError::QueryDocument("pattern must be an array".into())),
            })
            .collect::<Result<_, _>>()?;
        let filters = doc.filters.iter().map(Filter::from_json).collect::<Result<_, _>>()?;
        let graphs = doc.graphs.iter().map(|g| Iri::new(g.as_str())).collect::<Result<_, _>>()?;
        Query::new(select, patterns, filters, graphs)
    }

    pub fn from_json(text: &str) -> Result<Self, SemanticError> {
        let doc: QueryDoc =
            serde_json::from_str(text).map_err(|e| SemanticError::QueryDocument(e.to_string()))?;
        Query::from_doc(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("query documents always serialize")
    }
}

impl Serialize for Query {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = QueryDoc::deserialize(d)?;
        Query::from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

/// The JSON document form of a [`Query`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDoc {
    pub select: Vec<String>,
    #[serde(rename = "where")]
    pub patterns: Vec<Value>,
    #[serde(default)]
    pub filters: Vec<Value>,
    #[serde(default)]
    pub graphs: Vec<String>,
}

/// Query result: one row per distinct binding of the selected variables, in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingSet {
    variables: Vec<Variable>,
    rows: Vec<Vec<Term>>,
}

impl BindingSet {
    pub fn empty(variables: Vec<Variable>) -> Self {
        BindingSet { variables, rows: Vec::new() }
    }

    pub(crate) fn from_rows(variables: Vec<Variable>, rows: BTreeSet<Vec<Term>>) -> Self {
        BindingSet { variables, rows: rows.into_iter().collect() }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    /// Relabels the columns positionally. Panics if the arity differs.
    pub fn renamed(mut self, variables: Vec<Variable>) -> Self {
        assert_eq!(variables.len(), self.variables.len(), "column count mismatch");
        self.variables = variables;
        self
    }

    pub fn rows(&self) -> &[Vec<Term>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Value of `var` in row `row`.
    pub fn get(&self, row: usize, var: &str) -> Option<&Term> {
        let name = var.strip_prefix('?').unwrap_or(var);
        let col = self.variables.iter().position(|v| v.name() == name)?;
        self.rows.get(row).map(|r| &r[col])
    }

    /// Column of values for `var`, in row order.
    pub fn column(&self, var: &str) -> Vec<&Term> {
        (0..self.rows.len()).filter_map(|r| self.get(r, var)).collect()
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::json!({
            "variables": self.variables.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "rows": self.rows.iter()
                .map(|r| r.iter().map(|t| t.to_string()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }

    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }
}
