use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value;

use crate::object::{check_templates, instantiate, Condition};
use crate::semantic::{join, Graph, GraphStore, Iri, PatternTerm, Term, Triple, TriplePattern, TripleSource, Variable};

use super::RuleError;

/// Body → head rule. Head variables must occur in the body, so evaluation
/// never invents terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceRule {
    pub id: String,
    pub body: Condition,
    pub head: Vec<TriplePattern>,
}

impl InferenceRule {
    pub fn new(id: impl Into<String>, body: Condition, head: Vec<TriplePattern>) -> Result<Self, RuleError> {
        let id = id.into();
        let invalid = |reason: String| RuleError::InvalidRule { rule: id.clone(), reason };
        if body.patterns.is_empty() {
            return Err(invalid("empty body".into()));
        }
        if head.is_empty() {
            return Err(invalid("empty head".into()));
        }
        check_templates(&body, &head).map_err(invalid)?;
        Ok(InferenceRule { id, body, head })
    }

    pub fn from_json(v: &Value) -> Result<Self, RuleError> {
        let id = v.get("id").and_then(Value::as_str).unwrap_or_default().to_owned();
        let invalid = |reason: String| RuleError::InvalidRule { rule: id.clone(), reason };
        if id.is_empty() {
            return Err(invalid("rule id is required".into()));
        }
        let body = v.get("body").ok_or_else(|| invalid("missing body".into()))?;
        let body = Condition::from_json(body).map_err(|e| invalid(e.to_string()))?;
        let head = v
            .get("head")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid("missing head array".into()))?
            .iter()
            .map(|t| match t {
                Value::Array(parts) => TriplePattern::from_json(parts).map_err(|e| invalid(e.to_string())),
                _ => Err(invalid("head template must be an array".into())),
            })
            .collect::<Result<_, _>>()?;
        InferenceRule::new(id.clone(), body, head)
    }

    pub fn to_json(&self) -> Value {
        let mut body = serde_json::Map::new();
        self.body.to_json_fields(&mut body);
        serde_json::json!({
            "id": self.id,
            "body": body,
            "head": self.head.iter().map(TriplePattern::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Parses a rule file: `{"rules": [...]}`. Rule ids must be unique.
pub fn parse_rules(text: &str) -> Result<Vec<InferenceRule>, RuleError> {
    let v: Value = serde_json::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
    let rules = v
        .get("rules")
        .and_then(Value::as_array)
        .ok_or_else(|| RuleError::Parse("missing \"rules\" array".into()))?
        .iter()
        .map(InferenceRule::from_json)
        .collect::<Result<Vec<_>, _>>()?;
    let mut ids = BTreeSet::new();
    if let Some(dup) = rules.iter().find(|r| !ids.insert(&r.id)) {
        return Err(RuleError::InvalidRule { rule: dup.id.clone(), reason: "duplicate id".into() });
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleProgram {
    pub name: String,
    pub rules: Vec<InferenceRule>,
    pub input_graphs: BTreeSet<Iri>,
    pub output_graph: Iri,
}

impl RuleProgram {
    pub fn new(
        name: impl Into<String>,
        rules: Vec<InferenceRule>,
        input_graphs: impl IntoIterator<Item = Iri>,
        output_graph: Iri,
    ) -> Result<Self, RuleError> {
        let input_graphs: BTreeSet<Iri> = input_graphs.into_iter().collect();
        if input_graphs.contains(&output_graph) {
            return Err(RuleError::OutputIsInput(output_graph));
        }
        Ok(RuleProgram { name: name.into(), rules, input_graphs, output_graph })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceResult {
    #[serde(serialize_with = "triples_as_text")]
    pub derived: Vec<Triple>,
    pub iterations: usize,
    pub fired_per_rule: BTreeMap<String, usize>,
}

fn triples_as_text<S: serde::Serializer>(ts: &[Triple], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(ts.iter().map(ToString::to_string))
}

/// Least fixpoint of `rules` over `input`, evaluated semi-naively: after the
/// first round every join has one pattern bound to the previous round's new
/// facts. Returns only facts absent from `input`, sorted.
pub fn infer(input: &Graph, rules: &[InferenceRule]) -> Result<InferenceResult, RuleError> {
    let mut fired: BTreeMap<String, usize> = rules.iter().map(|r| (r.id.clone(), 0)).collect();
    let limit = round_limit(input, rules);
    let mut known = input.clone();
    let mut derived = Vec::new();

    let mut delta = Graph::default();
    for rule in rules {
        let source = |_: usize| -> &dyn TripleSource { &known };
        fire(rule, &source, None, &known, &mut delta, &mut fired)?;
    }
    let mut iterations = 1;
    while !delta.is_empty() {
        iterations += 1;
        if iterations > limit {
            return Err(RuleError::NonTermination { iterations, limit });
        }
        for t in delta.iter() {
            known.insert(t.clone());
            derived.push(t.clone());
        }
        let mut next = Graph::default();
        for rule in rules {
            for i in 0..rule.body.patterns.len() {
                let source = |j: usize| -> &dyn TripleSource { if j == i { &delta } else { &known } };
                fire(rule, &source, Some(i), &known, &mut next, &mut fired)?;
            }
        }
        delta = next;
    }
    derived.sort();
    Ok(InferenceResult { derived, iterations, fired_per_rule: fired })
}

fn fire<'s>(
    rule: &InferenceRule,
    source: &dyn Fn(usize) -> &'s dyn TripleSource,
    first: Option<usize>,
    known: &Graph,
    out: &mut Graph,
    fired: &mut BTreeMap<String, usize>,
) -> Result<(), RuleError> {
    let (vars, rows) = join(&rule.body.patterns, &rule.body.filters, source, first)?;
    for row in rows {
        let binding: BTreeMap<Variable, Term> = vars.iter().cloned().zip(row).collect();
        for template in &rule.head {
            let Some(t) = instantiate(template, &binding) else { continue };
            if !known.contains(&t) && out.insert(t) {
                *fired.entry(rule.id.clone()).or_default() += 1;
            }
        }
    }
    Ok(())
}

/// |terms|², over the input terms and head constants; at least 1.
fn round_limit(input: &Graph, rules: &[InferenceRule]) -> usize {
    let mut terms: BTreeSet<Term> = BTreeSet::new();
    for t in input.iter() {
        terms.insert(Term::Iri(t.subject.clone()));
        terms.insert(Term::Iri(t.predicate.clone()));
        terms.insert(t.object.clone());
    }
    for r in rules {
        for t in &r.head {
            for part in t.terms() {
                if let PatternTerm::Const(c) = part {
                    terms.insert(c.clone());
                }
            }
        }
    }
    terms.len().saturating_mul(terms.len()).max(1)
}

/// Runs `prog` on a snapshot of its input graphs and replaces the output
/// graph with the derived facts.
pub fn infer_fixpoint(store: &GraphStore, prog: &RuleProgram) -> Result<InferenceResult, RuleError> {
    let scope: Vec<Iri> = prog.input_graphs.iter().cloned().collect();
    if let Some(missing) = scope.iter().find(|g| !store.has_graph(g)) {
        return Err(RuleError::MissingGraph(missing.clone()));
    }
    let mut input = Graph::default();
    for t in store.snapshot(&scope).iter() {
        input.insert(t.clone());
    }
    let result = infer(&input, &prog.rules)?;
    store.clear_graph(&prog.output_graph);
    store.insert_all(&prog.output_graph, result.derived.iter().cloned());
    Ok(result)
}
