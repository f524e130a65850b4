use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Repository, ServiceError};

/// Where a step input comes from: a request parameter or a prior step's
/// output. Written `request.<param>` or `step.<id>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Wire {
    Request(String),
    Step(String),
}

impl FromStr for Wire {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('.') {
            Some(("request", p)) if !p.is_empty() => Ok(Wire::Request(p.to_owned())),
            Some(("step", p)) if !p.is_empty() => Ok(Wire::Step(p.to_owned())),
            _ => Err(format!("wire {s:?} must be request.<param> or step.<id>")),
        }
    }
}

impl TryFrom<String> for Wire {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Wire> for String {
    fn from(w: Wire) -> String {
        w.to_string()
    }
}

impl fmt::Display for Wire {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wire::Request(p) => write!(f, "request.{p}"),
            Wire::Step(s) => write!(f, "step.{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStep {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, Wire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompositionFlow {
    pub flow_id: String,
    pub capability: String,
    /// Default request parameters; preferences and the request override them.
    #[serde(default)]
    pub defaults: BTreeMap<String, Value>,
    pub steps: Vec<FlowStep>,
}

impl CompositionFlow {
    /// Steps grouped into dependency levels; each level only reads from
    /// earlier ones. Fails on duplicate ids, dangling wires or cycles.
    pub fn levels(&self) -> Result<Vec<Vec<&FlowStep>>, ServiceError> {
        let invalid = |reason: String| ServiceError::InvalidFlow { flow: self.flow_id.clone(), reason };
        let mut ids = BTreeSet::new();
        for s in &self.steps {
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(format!("duplicate step {}", s.id)));
            }
        }
        let deps = |s: &FlowStep| -> BTreeSet<String> {
            s.inputs
                .values()
                .filter_map(|w| match w {
                    Wire::Step(d) => Some(d.clone()),
                    Wire::Request(_) => None,
                })
                .collect()
        };
        for s in &self.steps {
            if let Some(d) = deps(s).into_iter().find(|d| !ids.contains(d.as_str())) {
                return Err(invalid(format!("step {} reads unknown step {d}", s.id)));
            }
        }
        let mut done: BTreeSet<String> = BTreeSet::new();
        let mut levels = Vec::new();
        while done.len() < self.steps.len() {
            let mut level: Vec<&FlowStep> = self
                .steps
                .iter()
                .filter(|s| !done.contains(&s.id) && deps(s).is_subset(&done))
                .collect();
            if level.is_empty() {
                return Err(invalid("cycle".into()));
            }
            level.sort_by(|a, b| a.id.cmp(&b.id));
            done.extend(level.iter().map(|s| s.id.clone()));
            levels.push(level);
        }
        Ok(levels)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.levels().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum FlowStatus {
    Succeeded,
    Failed { step: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowResult {
    pub flow_id: String,
    pub step_outputs: BTreeMap<String, Value>,
    pub step_errors: BTreeMap<String, String>,
    /// Step → instance that served it.
    pub dispatched: BTreeMap<String, String>,
    pub skipped: Vec<String>,
    pub status: FlowStatus,
}

/// Runs `flow` level by level; steps within a level run concurrently. A
/// failing step marks the flow failed and skips its descendants while
/// independent branches carry on. Every kind is resolved up front, falling
/// back to templates, so an unservable flow fails before any step runs.
pub fn orchestrate(
    flow: &CompositionFlow,
    inputs: &BTreeMap<String, Value>,
    repo: &Repository,
) -> Result<FlowResult, ServiceError> {
    let levels = flow.levels()?;
    let kinds: BTreeSet<&str> = flow.steps.iter().map(|s| s.kind.as_str()).collect();
    for kind in kinds {
        repo.resolve(kind)?;
    }
    let mut result = FlowResult {
        flow_id: flow.flow_id.clone(),
        step_outputs: BTreeMap::new(),
        step_errors: BTreeMap::new(),
        dispatched: BTreeMap::new(),
        skipped: Vec::new(),
        status: FlowStatus::Succeeded,
    };
    let mut blocked: BTreeSet<String> = BTreeSet::new();
    for level in levels {
        let mut runnable = Vec::new();
        for step in level {
            let upstream_blocked =
                step.inputs.values().any(|w| matches!(w, Wire::Step(d) if blocked.contains(d)));
            if upstream_blocked {
                blocked.insert(step.id.clone());
                result.skipped.push(step.id.clone());
                continue;
            }
            let wired: Result<BTreeMap<String, Value>, String> = step
                .inputs
                .iter()
                .map(|(name, w)| {
                    let v = match w {
                        Wire::Request(p) => inputs.get(p).cloned().ok_or(format!("missing request parameter {p}")),
                        Wire::Step(s) => Ok(result.step_outputs[s].clone()),
                    };
                    v.map(|v| (name.clone(), v))
                })
                .collect();
            runnable.push((step, wired));
        }
        let outcomes: Vec<(&str, Result<(String, Result<Value, String>), ServiceError>)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = runnable
                    .into_iter()
                    .map(|(step, wired)| {
                        scope.spawn(move || {
                            let out = match wired {
                                Ok(w) => repo.dispatch(&step.kind, &w),
                                Err(reason) => Ok((String::new(), Err(reason))),
                            };
                            (step.id.as_str(), out)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("flow step panicked")).collect()
            });
        for (id, out) in outcomes {
            let (instance, output) = out?;
            if !instance.is_empty() {
                result.dispatched.insert(id.to_owned(), instance);
            }
            match output {
                Ok(v) => {
                    result.step_outputs.insert(id.to_owned(), v);
                }
                Err(reason) => {
                    blocked.insert(id.to_owned());
                    result.step_errors.insert(id.to_owned(), reason);
                    if result.status == FlowStatus::Succeeded {
                        result.status = FlowStatus::Failed { step: id.to_owned() };
                    }
                }
            }
        }
    }
    Ok(result)
}
