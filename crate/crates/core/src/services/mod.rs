//! Service management: the microservice repository with templates and
//! lifecycle, request admission against user access levels and
//! preferences, and orchestration of composition flows.

mod flow;
mod policy;
mod registry;

pub use flow::{orchestrate, CompositionFlow, FlowResult, FlowStatus, FlowStep, Wire};
pub use policy::{evaluate_request, AccessPolicy, Decision, RequestLog, RequestRecord, ServiceRequest};
pub use registry::{FnService, Microservice, Repository, ServiceFactory, DEFAULT_HALT_DEPTH};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::object::DomainId;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown capability {0}")]
    UnknownCapability(String),
    #[error("no template for kind {0}")]
    NoTemplate(String),
    #[error("parameter {param}: {reason}")]
    ParamViolation { param: String, reason: String },
    #[error("a live instance of singleton kind {0} already exists")]
    SingletonExists(String),
    #[error("illegal transition {from} -> {to} for {id}")]
    IllegalTransition { id: String, from: ServiceState, to: ServiceState },
    #[error("{0} is the last running instance of its kind")]
    LastRunningInstance(String),
    #[error("unknown microservice {0}")]
    UnknownService(String),
    #[error("duplicate microservice id {0}")]
    DuplicateService(String),
    #[error("no instance or template can serve kind {0}")]
    UnresolvableKind(String),
    #[error("invalid flow {flow}: {reason}")]
    InvalidFlow { flow: String, reason: String },
    #[error("duplicate request id {0}")]
    DuplicateRequest(String),
    #[error("invalid service document {name}: {reason}")]
    InvalidDocument { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceState {
    Registered,
    Running,
    Halted,
    Failed,
}

impl ServiceState {
    pub const ALL: [ServiceState; 4] =
        [ServiceState::Registered, ServiceState::Running, ServiceState::Halted, ServiceState::Failed];

    /// Registered→Running, Running↔Halted, and any live state → Failed.
    pub fn can_transition(self, to: ServiceState) -> bool {
        use ServiceState::*;
        matches!(
            (self, to),
            (Registered, Running) | (Running, Halted) | (Halted, Running) | (Registered | Running | Halted, Failed)
        )
    }

    pub fn is_live(self) -> bool {
        self != ServiceState::Failed
    }
}

impl fmt::Display for ServiceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MicroserviceDescriptor {
    pub id: String,
    pub kind: String,
    pub endpoint: String,
    pub state: ServiceState,
    #[serde(default)]
    pub template_id: String,
    #[serde(default)]
    pub load_queue_depth: u32,
    #[serde(default)]
    pub domain_scope: BTreeSet<DomainId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    /// A count followed by `ms`, `s`, `m` or `h`, e.g. `15m`.
    Duration,
}

impl ParamType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Duration => v.as_str().and_then(parse_duration_ms).is_some(),
        }
    }
}

/// `15m` → 900000. Units: ms, s, m, h.
pub fn parse_duration_ms(s: &str) -> Option<i64> {
    let split = s.find(|c: char| !c.is_ascii_digit())?;
    let (n, unit) = s.split_at(split);
    let n: i64 = n.parse().ok()?;
    let scale = match unit {
        "ms" => 1,
        "s" => 1_000,
        "m" => 60_000,
        "h" => 3_600_000,
        _ => return None,
    };
    n.checked_mul(scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamSpec {
    pub param: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MicroserviceTemplate {
    pub template_id: String,
    pub kind: String,
    #[serde(default)]
    pub config_schema: Vec<ParamSpec>,
    #[serde(default)]
    pub singleton: bool,
    #[serde(default)]
    pub domain_scope: BTreeSet<DomainId>,
}

impl MicroserviceTemplate {
    /// Fills defaults and type-checks. Unknown parameters are rejected.
    pub fn resolve_params(&self, given: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, ServiceError> {
        let violation = |param: &str, reason: &str| ServiceError::ParamViolation {
            param: param.to_owned(),
            reason: reason.to_owned(),
        };
        if let Some(extra) = given.keys().find(|k| !self.config_schema.iter().any(|s| &s.param == *k)) {
            return Err(violation(extra, "not in the template's config schema"));
        }
        let mut out = BTreeMap::new();
        for spec in &self.config_schema {
            let v = given
                .get(&spec.param)
                .or(spec.default.as_ref())
                .ok_or_else(|| violation(&spec.param, "required"))?;
            if !spec.ty.accepts(v) {
                return Err(violation(&spec.param, &format!("expected {:?}", spec.ty)));
            }
            out.insert(spec.param.clone(), v.clone());
        }
        Ok(out)
    }
}

pub(crate) fn parse_document<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<T, ServiceError> {
    serde_json::from_str(text).map_err(|e| ServiceError::InvalidDocument { name: name.into(), reason: e.to_string() })
}
