//! C ABI for embedding the hub.
//!
//! A hub is an opaque `IotHub *` from `iot_hub_boot`, released with
//! `iot_hub_free`. Calls return an `IotHubStatus`; on failure
//! `iot_hub_last_error` describes what went wrong on the calling thread.
//! Strings handed out are NUL-terminated UTF-8 owned by the caller, to be
//! released with `iot_hub_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use iot_hub::hub::{Hub, HubError, ScenarioConfig};
use iot_hub::object::DomainId;
use iot_hub::semantic::{Iri, Query};
use iot_hub::services::{ServiceError, ServiceRequest};

/// Opaque hub handle.
pub struct IotHub {
    hub: Hub,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IotHubStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidQuery = 4,
    UnknownUser = 5,
    UnknownCapability = 6,
    Unsatisfiable = 7,
    Unresolvable = 8,
    DuplicateRequest = 9,
    ScenarioAbort = 10,
    Internal = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &HubError) -> IotHubStatus {
    match e {
        HubError::Config(_) | HubError::Io { .. } => IotHubStatus::InvalidConfig,
        HubError::UnknownUser(_) => IotHubStatus::UnknownUser,
        HubError::UnsatisfiableRequirement(_) => IotHubStatus::Unsatisfiable,
        HubError::Service(ServiceError::UnknownCapability(_)) => IotHubStatus::UnknownCapability,
        HubError::Service(ServiceError::UnresolvableKind(_)) => IotHubStatus::Unresolvable,
        HubError::Service(ServiceError::DuplicateRequest(_)) => IotHubStatus::DuplicateRequest,
        HubError::Semantic(_) => IotHubStatus::InvalidQuery,
        HubError::ScenarioAbort { .. } => IotHubStatus::ScenarioAbort,
        _ => IotHubStatus::Internal,
    }
}

struct Failure(IotHubStatus, String);

impl From<HubError> for Failure {
    fn from(e: HubError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IotHubStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IotHubStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the hub");
            IotHubStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(IotHubStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(IotHubStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `hub` is null or a handle from `iot_hub_boot` not yet freed.
unsafe fn handle<'a>(hub: *const IotHub) -> Result<&'a Hub, Failure> {
    hub.as_ref().map(|h| &h.hub).ok_or_else(|| Failure(IotHubStatus::NullArgument, "hub is null".into()))
}

/// # Safety
/// `out` is null or writable.
unsafe fn hand_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(IotHubStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|e| Failure(IotHubStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn iot_hub_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Boots a hub from a scenario JSON document, or the bundled scenario when
/// `config_json` is null.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_boot(config_json: *const c_char, out: *mut *mut IotHub) -> IotHubStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(IotHubStatus::NullArgument, "output pointer is null".into()));
        }
        let cfg = if config_json.is_null() {
            ScenarioConfig::bundled()
        } else {
            ScenarioConfig::from_json(text(config_json, "config")?)?
        };
        let hub = Hub::boot(cfg)?;
        *out = Box::into_raw(Box::new(IotHub { hub }));
        Ok(())
    })
}

/// Boots a quiet hub: no scripted requests, no faults.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_boot_quiet(seed: u64, duration_ticks: u64, out: *mut *mut IotHub) -> IotHubStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(IotHubStatus::NullArgument, "output pointer is null".into()));
        }
        let hub = Hub::boot(ScenarioConfig::quiet(seed, duration_ticks))?;
        *out = Box::into_raw(Box::new(IotHub { hub }));
        Ok(())
    })
}

/// Releases a hub. Null is ignored.
///
/// # Safety
/// `hub` is null or a handle from `iot_hub_boot` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_free(hub: *mut IotHub) {
    if !hub.is_null() {
        drop(Box::from_raw(hub));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulates until `tick` ticks have run.
///
/// # Safety
/// `hub` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_run_until(hub: *const IotHub, tick: u64) -> IotHubStatus {
    guard(|| Ok(handle(hub)?.run_until(tick)?))
}

/// Ticks simulated so far.
///
/// # Safety
/// `hub` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_ticks(hub: *const IotHub, out: *mut u64) -> IotHubStatus {
    guard(|| {
        let n = handle(hub)?.ticks();
        match out.as_mut() {
            Some(o) => *o = n,
            None => return Err(Failure(IotHubStatus::NullArgument, "output pointer is null".into())),
        }
        Ok(())
    })
}

/// The scenario report as JSON.
///
/// # Safety
/// `hub` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_report_json(hub: *const IotHub, out: *mut *mut c_char) -> IotHubStatus {
    guard(|| hand_out(out, handle(hub)?.report().to_json()))
}

/// Submits a service request and writes its outcome as JSON. `params_json`
/// may be null or a JSON object of request parameters.
///
/// # Safety
/// `hub` is a live handle; the strings are NUL-terminated (or null where
/// allowed); `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_submit(
    hub: *const IotHub,
    user: *const c_char,
    capability: *const c_char,
    params_json: *const c_char,
    force_mashup: bool,
    out: *mut *mut c_char,
) -> IotHubStatus {
    guard(|| {
        let hub = handle(hub)?;
        let user = Iri::new(text(user, "user")?).map_err(|e| Failure(IotHubStatus::UnknownUser, e.to_string()))?;
        let params = if params_json.is_null() {
            Default::default()
        } else {
            serde_json::from_str(text(params_json, "params")?)
                .map_err(|e| Failure(IotHubStatus::InvalidConfig, format!("params: {e}")))?
        };
        let req = ServiceRequest {
            request_id: hub.next_request_id(),
            user_id: user,
            capability: text(capability, "capability")?.to_owned(),
            params,
            domains_hint: Default::default(),
        };
        let outcome = hub.submit(&req, force_mashup)?;
        hand_out(out, serde_json::to_string(&outcome).expect("outcomes serialize"))
    })
}

/// Runs a query document against the central store, or against a domain's
/// store when `domain` is non-null, and writes the outcome as JSON.
///
/// # Safety
/// `hub` is a live handle; the strings are NUL-terminated (`domain` may be
/// null); `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_query(
    hub: *const IotHub,
    query_json: *const c_char,
    domain: *const c_char,
    out: *mut *mut c_char,
) -> IotHubStatus {
    guard(|| {
        let hub = handle(hub)?;
        let q = Query::from_json(text(query_json, "query")?).map_err(|e| Failure(IotHubStatus::InvalidQuery, e.to_string()))?;
        let domain = if domain.is_null() {
            None
        } else {
            Some(DomainId::new(text(domain, "domain")?).map_err(|e| Failure(IotHubStatus::InvalidQuery, e.to_string()))?)
        };
        let o = hub.query(&q, domain.as_ref())?;
        let v = serde_json::json!({
            "status": o.status,
            "signature": o.signature,
            "results": o.bindings.to_json_value(),
        });
        hand_out(out, v.to_string())
    })
}

/// Routes one call through the HTTP gateway without a socket; writes the
/// status code and JSON body.
///
/// # Safety
/// `hub` is a live handle; `method` and `url` are NUL-terminated, `body`
/// may be null; `status` and `out` are writable.
#[no_mangle]
pub unsafe extern "C" fn iot_hub_http(
    hub: *const IotHub,
    method: *const c_char,
    url: *const c_char,
    body: *const c_char,
    status: *mut u16,
    out: *mut *mut c_char,
) -> IotHubStatus {
    guard(|| {
        let hub = handle(hub)?;
        let body = if body.is_null() { "" } else { text(body, "body")? };
        let reply = hub.handle(text(method, "method")?, text(url, "url")?, body);
        match status.as_mut() {
            Some(s) => *s = reply.status,
            None => return Err(Failure(IotHubStatus::NullArgument, "status pointer is null".into())),
        }
        hand_out(out, reply.body.to_string())
    })
}

/// Library version, static; do not free.
#[no_mangle]
pub extern "C" fn iot_hub_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
