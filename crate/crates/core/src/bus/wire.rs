//! TCP front for the broker: each frame is a 4-byte big-endian length
//! followed by a JSON object. Every request frame gets one response frame.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Broker, BusError, Delivery, DeliveryReport, Qos, Topic, TopicFilter};

pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Connect { client: String },
    Sub { filter: String, qos: Qos },
    Unsub { filter: String },
    Pub { topic: String, payload: String, qos: Qos },
    Ack { id: u64 },
    Poll,
    Advance { ms: u64 },
    Disconnect,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscription: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DeliveryReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliveries: Option<Vec<Delivery>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acked: Option<bool>,
}

impl Response {
    fn ok() -> Self {
        Response { ok: true, ..Default::default() }
    }

    fn error(e: impl ToString) -> Self {
        Response { ok: false, error: Some(e.to_string()), ..Default::default() }
    }
}

pub fn write_frame<T: Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    let body = serde_json::to_vec(value)?;
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame<T: for<'de> Deserialize<'de>>(r: &mut impl Read) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        other => other?,
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn handle(broker: &Broker, client: &mut Option<String>, req: Request) -> Response {
    let need = |c: &Option<String>| c.clone().ok_or_else(|| BusError::NotConnected("(anonymous)".into()));
    let result: Result<Response, BusError> = (|| match req {
        Request::Connect { client: id } => {
            broker.connect(&id)?;
            *client = Some(id);
            Ok(Response::ok())
        }
        Request::Sub { filter, qos } => {
            let id = broker.subscribe(&need(client)?, &TopicFilter::new(&filter)?, qos)?;
            Ok(Response { subscription: Some(id.0), ..Response::ok() })
        }
        Request::Unsub { filter } => {
            let removed = broker.unsubscribe(&need(client)?, &TopicFilter::new(&filter)?)?;
            Ok(Response { acked: Some(removed), ..Response::ok() })
        }
        Request::Pub { topic, payload, qos } => {
            let payload = base64::engine::general_purpose::STANDARD
                .decode(payload)
                .map_err(|e| BusError::Frame(e.to_string()))?;
            let publisher = client.clone().unwrap_or_else(|| "anonymous".into());
            let report = broker.publish(&publisher, &Topic::new(&topic)?, payload, qos)?;
            Ok(Response { report: Some(report), ..Response::ok() })
        }
        Request::Ack { id } => Ok(Response { acked: Some(broker.ack(&need(client)?, id)?), ..Response::ok() }),
        Request::Poll => Ok(Response { deliveries: Some(broker.poll(&need(client)?)?), ..Response::ok() }),
        Request::Advance { ms } => {
            broker.advance(ms);
            Ok(Response::ok())
        }
        Request::Disconnect => {
            if let Some(c) = client.take() {
                broker.disconnect(&c);
            }
            Ok(Response::ok())
        }
    })();
    result.unwrap_or_else(Response::error)
}

fn serve_connection(broker: Arc<Broker>, mut stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut client = None;
    let outcome = loop {
        let req: Request = match read_frame(&mut stream) {
            Ok(Some(r)) => r,
            Ok(None) => break Ok(()),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                write_frame(&mut stream, &Response::error(e))?;
                continue;
            }
            Err(e) => break Err(e),
        };
        let done = matches!(req, Request::Disconnect);
        write_frame(&mut stream, &handle(&broker, &mut client, req))?;
        if done {
            break Ok(());
        }
    };
    if let Some(c) = client {
        broker.disconnect(&c);
    }
    outcome
}

pub struct BusServer {
    listener: TcpListener,
    broker: Arc<Broker>,
}

impl BusServer {
    pub fn bind(addr: impl ToSocketAddrs, broker: Arc<Broker>) -> io::Result<Self> {
        Ok(BusServer { listener: TcpListener::bind(addr)?, broker })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one thread each.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let broker = self.broker.clone();
            thread::spawn(move || {
                if let Err(e) = serve_connection(broker, stream) {
                    log::warn!("bus connection closed: {e}");
                }
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> thread::JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

/// Blocking client for [`BusServer`].
pub struct BusClient {
    stream: TcpStream,
}

impl BusClient {
    pub fn connect(addr: impl ToSocketAddrs, client: &str) -> Result<Self, BusError> {
        let stream = TcpStream::connect(addr).map_err(|e| BusError::Frame(e.to_string()))?;
        stream.set_nodelay(true).map_err(|e| BusError::Frame(e.to_string()))?;
        let mut c = BusClient { stream };
        c.call(&Request::Connect { client: client.to_owned() })?;
        Ok(c)
    }

    pub fn call(&mut self, req: &Request) -> Result<Response, BusError> {
        let io = |e: io::Error| BusError::Frame(e.to_string());
        write_frame(&mut self.stream, req).map_err(io)?;
        let resp: Response = read_frame(&mut self.stream).map_err(io)?.ok_or(BusError::Frame("closed".into()))?;
        match resp.error.clone() {
            Some(e) if !resp.ok => Err(BusError::Remote(e)),
            _ => Ok(resp),
        }
    }

    pub fn subscribe(&mut self, filter: &str, qos: Qos) -> Result<u64, BusError> {
        Ok(self.call(&Request::Sub { filter: filter.into(), qos })?.subscription.unwrap_or_default())
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8], qos: Qos) -> Result<DeliveryReport, BusError> {
        let payload = base64::engine::general_purpose::STANDARD.encode(payload);
        let resp = self.call(&Request::Pub { topic: topic.into(), payload, qos })?;
        resp.report.ok_or_else(|| BusError::Frame("missing report".into()))
    }

    pub fn poll(&mut self) -> Result<Vec<Delivery>, BusError> {
        Ok(self.call(&Request::Poll)?.deliveries.unwrap_or_default())
    }

    pub fn ack(&mut self, id: u64) -> Result<bool, BusError> {
        Ok(self.call(&Request::Ack { id })?.acked.unwrap_or(false))
    }
}
