//! The multi-domain scenario engine: domain servers with their own object
//! repositories, the central hub that resolves service requests to a single
//! domain or to a cached cross-domain mashup, the analytics server, the
//! seeded device simulators and an HTTP gateway.

mod config;
mod domain;
mod http;
mod runtime;
mod sim;

pub use config::{FaultSwitches, KillSwitch, Rates, ScenarioConfig, ScriptedRequest, UserSpec};
pub use domain::{decode_observations, DomainServer, IngestStats, SourceFormat};
pub use http::{serve, HttpReply};
pub use runtime::{
    bundled_documents, mashup_signature, run_scenario, Accuracy, FaultEvent, Hub, HubCore, InferenceStats, Mashup,
    OutcomeStatus, PathCounts, RequestCounts, RequestOutcome, Resolution, ResolutionPath, RuleStats, ScenarioReport,
    ServiceSummary, CENTRAL_SCOPE,
};
pub use sim::{
    device_kinds, medical_devices_csv, tick_time, user_iri, vo_iri, zone_iri, DeviceKind, Emission, Simulator,
    Truth, TICK_MS,
};

use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::bus::BusError;
use crate::interop::InteropError;
use crate::knowledge::RuleError;
use crate::object::ObjectError;
use crate::semantic::{Iri, SemanticError};
use crate::services::ServiceError;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("unknown user {0}")]
    UnknownUser(Iri),
    #[error("no domain holds an object of class {0}")]
    UnsatisfiableRequirement(Iri),
    #[error("lifting {domain} objects failed validation with {violations} violations")]
    InvalidLift { domain: String, violations: usize },
    #[error("scenario aborted in {component}: {reason}")]
    ScenarioAbort { component: String, reason: String },
    #[error("payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Object(#[from] ObjectError),
    #[error(transparent)]
    Interop(#[from] InteropError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HubError {
    pub(crate) fn abort(component: &str, e: impl std::fmt::Display) -> Self {
        HubError::ScenarioAbort { component: component.to_owned(), reason: e.to_string() }
    }
}
