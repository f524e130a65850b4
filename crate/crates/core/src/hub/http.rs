//! JSON-over-HTTP gateway onto a running hub.

use std::collections::BTreeMap;
use std::sync::Arc;

use percent_encoding::percent_decode_str;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::analytics::Analyzer;
use crate::object::DomainId;
use crate::semantic::{Iri, Query};
use crate::services::{ServiceRequest, ServiceState};

use super::{Hub, HubError};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: Value,
}

impl HttpReply {
    fn ok(body: Value) -> Self {
        HttpReply { status: 200, body }
    }

    fn error(status: u16, message: impl std::fmt::Display) -> Self {
        HttpReply { status, body: json!({"error": message.to_string()}) }
    }
}

fn hub_error(e: HubError) -> HttpReply {
    let status = match &e {
        HubError::UnknownUser(_) | HubError::Config(_) => 404,
        HubError::Service(crate::services::ServiceError::UnknownCapability(_)) => 404,
        HubError::Service(crate::services::ServiceError::DuplicateRequest(_)) => 409,
        HubError::Semantic(_) | HubError::Payload(_) => 400,
        _ => 500,
    };
    HttpReply::error(status, e)
}

fn decode(s: &str) -> String {
    percent_decode_str(s).decode_utf8_lossy().into_owned()
}

fn query_params(q: &str) -> BTreeMap<String, String> {
    q.split('&')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (decode(k), decode(&v.replace('+', " "))),
            None => (decode(p), String::new()),
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RequestBody {
    #[serde(default)]
    request_id: Option<String>,
    user_id: Iri,
    capability: String,
    #[serde(default)]
    params: BTreeMap<String, Value>,
    #[serde(default)]
    force_mashup: bool,
}

#[derive(Deserialize)]
struct StateBody {
    state: ServiceState,
}

fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, HttpReply> {
    serde_json::from_str(body).map_err(|e| HttpReply::error(400, e))
}

impl Hub {
    /// Routes one HTTP call. `url` may carry a query string.
    pub fn handle(&self, method: &str, url: &str, body: &str) -> HttpReply {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let params = query_params(query);
        let segments: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let result = match (method, segments.as_slice()) {
            ("GET", ["report"]) => Ok(HttpReply::ok(serde_json::to_value(self.report()).expect("reports serialize"))),
            ("POST", ["requests"]) => self.http_request(body),
            ("GET", ["objects"]) => Ok(HttpReply::ok(
                self.objects()
                    .into_iter()
                    .map(|(scope, vo)| json!({"scope": scope, "object": vo}))
                    .collect(),
            )),
            ("GET", ["objects", id]) => Ok(self.http_object(&decode(id))),
            ("POST", ["queries"]) => self.http_query(body, params.get("domain")),
            ("GET", ["services"]) => {
                let mut all = self.services().descriptors();
                all.sort_by(|a, b| a.id.cmp(&b.id));
                Ok(HttpReply::ok(json!(all)))
            }
            ("POST", ["services", id, "state"]) => parse::<StateBody>(body).map(|b| {
                match self.services().set_lifecycle(&decode(id), b.state) {
                    Ok(d) => HttpReply::ok(json!(d)),
                    Err(e) => HttpReply::error(409, e),
                }
            }),
            ("GET", ["analyze", kind]) => Ok(self.http_analyze(kind, params.get("user"))),
            ("POST", ["tick"]) => {
                let n: u64 = params.get("n").and_then(|n| n.parse().ok()).unwrap_or(1);
                self.run_until(self.ticks() + n)
                    .map(|_| HttpReply::ok(json!({"ticks": self.ticks(), "now": self.now()})))
                    .map_err(hub_error)
            }
            _ => Err(HttpReply::error(404, format!("no route for {method} {path}"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn http_request(&self, body: &str) -> Result<HttpReply, HttpReply> {
        let b: RequestBody = parse(body)?;
        let req = ServiceRequest {
            request_id: b.request_id.unwrap_or_else(|| self.next_request_id()),
            user_id: b.user_id,
            capability: b.capability,
            params: b.params,
            domains_hint: Default::default(),
        };
        self.submit(&req, b.force_mashup).map(|o| HttpReply::ok(json!(o))).map_err(hub_error)
    }

    fn http_object(&self, id: &str) -> HttpReply {
        let Ok(iri) = Iri::new(id) else {
            return HttpReply::error(400, format!("not an IRI: {id}"));
        };
        let found: Vec<Value> = self
            .objects()
            .into_iter()
            .filter(|(_, vo)| vo.id == iri)
            .map(|(scope, vo)| {
                let store = if scope == super::CENTRAL_SCOPE {
                    self.core().central.store().clone()
                } else {
                    self.core().domains[&vo.domain].repo.store().clone()
                };
                let description: Vec<String> = store
                    .triples(&vo.description_graph)
                    .into_iter()
                    .filter(|t| t.subject == iri)
                    .map(|t| t.to_string())
                    .collect();
                json!({"scope": scope, "object": vo, "description": description})
            })
            .collect();
        if found.is_empty() {
            HttpReply::error(404, format!("unknown object {id}"))
        } else {
            HttpReply::ok(json!(found))
        }
    }

    fn http_query(&self, body: &str, domain: Option<&String>) -> Result<HttpReply, HttpReply> {
        let q = Query::from_json(body).map_err(|e| HttpReply::error(400, e))?;
        let domain = domain.map(|d| DomainId::new(d)).transpose().map_err(|e| HttpReply::error(400, e))?;
        let out = self.query(&q, domain.as_ref()).map_err(hub_error)?;
        Ok(HttpReply::ok(json!({
            "status": out.status,
            "signature": out.signature,
            "results": out.bindings.to_json_value(),
        })))
    }

    fn http_analyze(&self, kind: &str, user: Option<&String>) -> HttpReply {
        let Some(analyzer) = Analyzer::parse(kind) else {
            return HttpReply::error(404, format!("no analyzer {kind}"));
        };
        let Some(Ok(user)) = user.map(|u| Iri::new(u.as_str())) else {
            return HttpReply::error(400, "user query parameter must be an IRI");
        };
        let capability = match analyzer {
            Analyzer::Physio => "analytics.physio-status",
            Analyzer::Activity => "analytics.activity",
            Analyzer::Location => "analytics.location",
        };
        let plan = match self.resolve(&user, capability, false) {
            Ok(p) => p,
            Err(e) => return hub_error(e),
        };
        let inputs = BTreeMap::from([
            ("user".to_owned(), json!(user.as_str())),
            ("at".to_owned(), json!(self.now())),
            ("scope".to_owned(), json!(plan.scope)),
        ]);
        match self.services().dispatch(&format!("analyze.{}", analyzer.name()), &inputs) {
            Ok((instance, Ok(v))) => HttpReply::ok(json!({"instance": instance, "resolution": plan, "result": v})),
            Ok((_, Err(e))) => HttpReply::error(500, e),
            Err(e) => HttpReply::error(503, e),
        }
    }
}

/// Serves `hub` until the listener fails.
pub fn serve(hub: Arc<Hub>, addr: &str) -> std::io::Result<()> {
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    log::info!("listening on {addr}");
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let reply = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => hub.handle(request.method().as_str(), request.url(), &body),
            Err(e) => HttpReply::error(400, e),
        };
        let header =
            tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
        let response = tiny_http::Response::from_string(reply.body.to_string())
            .with_status_code(reply.status)
            .with_header(header);
        if let Err(e) = request.respond(response) {
            log::warn!("responding: {e}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_string_decoding() {
        let p = query_params("user=urn%3Ahub%3Auser%3Au0&n=3");
        assert_eq!(p["user"], "urn:hub:user:u0");
        assert_eq!(p["n"], "3");
    }
}
