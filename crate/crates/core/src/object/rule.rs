use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::semantic::{
    Filter, Iri, PatternTerm, Query, SemanticError, Term, Triple, TriplePattern, Variable,
};

use super::ObjectError;

/// Condition side of a rule: a basic graph pattern plus filters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
}

impl Condition {
    pub fn variables(&self) -> BTreeSet<&Variable> {
        self.patterns.iter().flat_map(|p| p.variables()).collect()
    }

    /// Variables guaranteed to bind IRIs: those in subject or predicate position.
    pub fn iri_variables(&self) -> BTreeSet<&Variable> {
        self.patterns
            .iter()
            .flat_map(|p| [&p.subject, &p.predicate])
            .filter_map(PatternTerm::as_var)
            .collect()
    }

    /// The condition as a standalone query selecting every variable.
    pub fn as_query(&self, graphs: Vec<Iri>) -> Result<Query, SemanticError> {
        Query::select_all(self.patterns.clone(), self.filters.clone(), graphs)
    }

    pub(crate) fn from_json(obj: &Value) -> Result<Self, SemanticError> {
        let patterns = obj
            .get("where")
            .and_then(Value::as_array)
            .ok_or_else(|| SemanticError::QueryDocument("missing \"where\" array".into()))?
            .iter()
            .map(|p| match p {
                Value::Array(parts) => TriplePattern::from_json(parts),
                _ => Err(SemanticError::QueryDocument("pattern must be an array".into())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let filters = match obj.get("filters") {
            Some(Value::Array(fs)) => fs.iter().map(Filter::from_json).collect::<Result<_, _>>()?,
            _ => Vec::new(),
        };
        let cond = Condition { patterns, filters };
        let bound = cond.variables();
        if let Some(f) = cond.filters.iter().find(|f| !bound.contains(&f.variable)) {
            return Err(SemanticError::UnboundVariable(f.variable.to_string()));
        }
        Ok(cond)
    }

    pub(crate) fn to_json_fields(&self, obj: &mut serde_json::Map<String, Value>) {
        obj.insert("where".into(), self.patterns.iter().map(TriplePattern::to_json).collect());
        obj.insert("filters".into(), self.filters.iter().map(Filter::to_json).collect());
    }
}

/// Checks that head templates only use body variables, and that subject and
/// predicate variables are ones the body binds to IRIs.
pub(crate) fn check_templates(
    cond: &Condition,
    templates: &[TriplePattern],
) -> Result<(), String> {
    let bound = cond.variables();
    let iri_bound = cond.iri_variables();
    for t in templates {
        if matches!(t.subject, PatternTerm::Const(Term::Literal(_))) {
            return Err(format!("template {t} has a literal subject"));
        }
        for v in t.variables() {
            if !bound.contains(v) {
                return Err(format!("template variable {v} does not occur in the condition"));
            }
        }
        for v in [&t.subject, &t.predicate].into_iter().filter_map(PatternTerm::as_var) {
            if !iri_bound.contains(v) {
                return Err(format!(
                    "template variable {v} in subject/predicate position may bind a literal"
                ));
            }
        }
    }
    Ok(())
}

/// Instantiates a template under a full binding. `None` if the result would
/// not be a valid triple.
pub(crate) fn instantiate(t: &TriplePattern, binding: &BTreeMap<Variable, Term>) -> Option<Triple> {
    let value = |p: &PatternTerm| match p {
        PatternTerm::Const(c) => Some(c.clone()),
        PatternTerm::Var(v) => binding.get(v).cloned(),
    };
    let s = value(&t.subject)?.as_iri()?.clone();
    let p = value(&t.predicate)?.as_iri()?.clone();
    Some(Triple::new(s, p, value(&t.object)?))
}

/// Names referenced as `{?name}` in a text template.
pub(crate) fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{?") {
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                out.push(after[..end].to_owned());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// Replaces `{?name}` with the plain value bound to `name`.
pub fn render_template(template: &str, binding: &BTreeMap<Variable, Term>) -> String {
    let mut out = template.to_owned();
    for (var, term) in binding {
        out = out.replace(&format!("{{?{}}}", var.name()), term.value_str());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RuleAction {
    AssertTriples(Vec<TriplePattern>),
    PublishMessage { topic: String, payload: String },
    InvokeService { kind: String, params: BTreeMap<String, String> },
}

/// A condition→action rule attached to a composite virtual object.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub id: String,
    pub condition: Condition,
    pub action: RuleAction,
}

impl Rule {
    pub fn new(id: impl Into<String>, condition: Condition, action: RuleAction) -> Result<Self, ObjectError> {
        let id = id.into();
        let invalid = |reason: String| ObjectError::InvalidRule { rule: id.clone(), reason };
        let bound = condition.variables();
        let mut texts: Vec<&str> = Vec::new();
        match &action {
            RuleAction::AssertTriples(templates) => {
                check_templates(&condition, templates).map_err(invalid)?;
            }
            RuleAction::PublishMessage { topic, payload } => texts.extend([topic.as_str(), payload.as_str()]),
            RuleAction::InvokeService { kind, params } => {
                texts.push(kind);
                texts.extend(params.values().map(String::as_str));
            }
        }
        for name in texts.iter().flat_map(|t| placeholders(t)) {
            let var = Variable::new(&name).map_err(|e| invalid(e.to_string()))?;
            if !bound.contains(&var) {
                return Err(invalid(format!("action references unbound ?{name}")));
            }
        }
        Ok(Rule { id, condition, action })
    }

    pub fn from_json(v: &Value) -> Result<Self, ObjectError> {
        let id = v.get("id").and_then(Value::as_str).unwrap_or_default().to_owned();
        let invalid = |reason: String| ObjectError::InvalidRule { rule: id.clone(), reason };
        if id.is_empty() {
            return Err(invalid("rule id is required".into()));
        }
        let condition = Condition::from_json(v).map_err(|e| invalid(e.to_string()))?;
        let action = v.get("action").ok_or_else(|| invalid("missing action".into()))?;
        let text = |k: &str| action.get(k).and_then(Value::as_str).map(str::to_owned);
        let action = match action.get("type").and_then(Value::as_str) {
            Some("assert") => {
                let triples = action
                    .get("triples")
                    .and_then(Value::as_array)
                    .ok_or_else(|| invalid("assert action needs \"triples\"".into()))?
                    .iter()
                    .map(|p| match p {
                        Value::Array(parts) => TriplePattern::from_json(parts),
                        _ => Err(SemanticError::QueryDocument("template must be an array".into())),
                    })
                    .collect::<Result<_, _>>()
                    .map_err(|e| invalid(e.to_string()))?;
                RuleAction::AssertTriples(triples)
            }
            Some("publish") => RuleAction::PublishMessage {
                topic: text("topic").ok_or_else(|| invalid("publish action needs a topic".into()))?,
                payload: text("payload").unwrap_or_default(),
            },
            Some("invoke") => RuleAction::InvokeService {
                kind: text("kind").ok_or_else(|| invalid("invoke action needs a kind".into()))?,
                params: action
                    .get("params")
                    .and_then(Value::as_object)
                    .map(|m| {
                        m.iter()
                            .map(|(k, v)| (k.clone(), v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string())))
                            .collect()
                    })
                    .unwrap_or_default(),
            },
            other => return Err(invalid(format!("unknown action type {other:?}"))),
        };
        Rule::new(id.clone(), condition, action)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), Value::String(self.id.clone()));
        self.condition.to_json_fields(&mut obj);
        let action = match &self.action {
            RuleAction::AssertTriples(ts) => serde_json::json!({
                "type": "assert",
                "triples": ts.iter().map(TriplePattern::to_json).collect::<Vec<_>>(),
            }),
            RuleAction::PublishMessage { topic, payload } => {
                serde_json::json!({"type": "publish", "topic": topic, "payload": payload})
            }
            RuleAction::InvokeService { kind, params } => {
                serde_json::json!({"type": "invoke", "kind": kind, "params": params})
            }
        };
        obj.insert("action".into(), action);
        Value::Object(obj)
    }
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Rule::from_json(&v).map_err(serde::de::Error::custom)
    }
}
