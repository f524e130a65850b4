use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::object::{DomainId, UserModel};
use crate::semantic::Iri;

use super::{CompositionFlow, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceRequest {
    pub request_id: String,
    pub user_id: Iri,
    pub capability: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub domains_hint: BTreeSet<DomainId>,
}

/// Capability → minimum access level.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessPolicy(pub BTreeMap<String, u8>);

impl AccessPolicy {
    pub fn required(&self, capability: &str) -> Option<u8> {
        self.0.get(capability).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Decision {
    pub request_id: String,
    pub approved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<String>,
    pub reason: String,
    /// Effective parameters: flow defaults, then the user's preferences
    /// for the capability, then the request's own parameters.
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request: ServiceRequest,
    pub access_level: u8,
    pub decision: Decision,
}

/// Audit trail of evaluated requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub records: Vec<RequestRecord>,
}

impl RequestLog {
    pub fn contains(&self, request_id: &str) -> bool {
        self.records.iter().any(|r| r.request.request_id == request_id)
    }
}

/// A preference string as a JSON value: numbers and booleans when they
/// parse as such, strings otherwise.
fn preference_value(s: &str) -> Value {
    match serde_json::from_str::<Value>(s) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(s.to_owned()),
    }
}

pub fn evaluate_request(
    r: &ServiceRequest,
    user: &UserModel,
    policy: &AccessPolicy,
    flows: &BTreeMap<String, CompositionFlow>,
    log: &mut RequestLog,
) -> Result<Decision, ServiceError> {
    let (Some(required), Some(flow)) = (policy.required(&r.capability), flows.get(&r.capability)) else {
        return Err(ServiceError::UnknownCapability(r.capability.clone()));
    };
    if log.contains(&r.request_id) {
        return Err(ServiceError::DuplicateRequest(r.request_id.clone()));
    }
    let decision = if user.access_level < required {
        Decision {
            request_id: r.request_id.clone(),
            approved: false,
            flow_id: None,
            reason: "access-level".into(),
            params: BTreeMap::new(),
        }
    } else {
        let mut params = flow.defaults.clone();
        let prefix = format!("{}.", r.capability);
        for (k, v) in &user.preferences {
            if let Some(param) = k.strip_prefix(&prefix) {
                params.insert(param.to_owned(), preference_value(v));
            }
        }
        params.extend(r.params.iter().map(|(k, v)| (k.clone(), v.clone())));
        Decision {
            request_id: r.request_id.clone(),
            approved: true,
            flow_id: Some(flow.flow_id.clone()),
            reason: "approved".into(),
            params,
        }
    };
    log.records.push(RequestRecord { request: r.clone(), access_level: user.access_level, decision: decision.clone() });
    Ok(decision)
}
