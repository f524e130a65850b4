use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use base64::Engine;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BusError, Topic, TopicFilter};

/// Simulated milliseconds between redeliveries of an unacknowledged
/// qos-1 message.
pub const RETRY_INTERVAL_MS: u64 = 100;
/// Redeliveries before a message is dead-lettered.
pub const MAX_RETRIES: u32 = 10;
/// Unacknowledged qos-1 deliveries allowed per subscriber at once.
pub const IN_FLIGHT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Qos {
    AtMostOnce,
    AtLeastOnce,
}

impl TryFrom<u8> for Qos {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Qos::AtMostOnce),
            1 => Ok(Qos::AtLeastOnce),
            _ => Err(format!("unsupported qos {v}")),
        }
    }
}

impl From<Qos> for u8 {
    fn from(q: Qos) -> u8 {
        match q {
            Qos::AtMostOnce => 0,
            Qos::AtLeastOnce => 1,
        }
    }
}

mod payload_b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Message {
    pub topic: Topic,
    #[serde(with = "payload_b64")]
    pub payload: Vec<u8>,
    pub qos: Qos,
    /// Per-publisher sequence for qos-1 messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_id: Option<u64>,
    pub publisher: String,
}

impl Message {
    pub fn payload_text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn payload_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Delivery {
    /// Unique per subscriber session; acknowledgements name it.
    pub delivery_id: u64,
    pub message: Message,
    /// Effective qos for this subscriber.
    pub qos: Qos,
    /// Set on redeliveries: the subscriber may have seen this already.
    pub duplicate: bool,
    pub at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeliveryReport {
    pub matched_subscribers: usize,
    /// Subscribers whose copy was delivered (qos 0) or acknowledged
    /// (qos 1) before publish returned.
    pub acked: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BusStats {
    pub published: u64,
    pub delivered: u64,
    pub redelivered: u64,
    pub acked: u64,
    pub acks_dropped: u64,
    pub deliveries_dropped: u64,
    pub dead_lettered: u64,
}

/// Seeded fault injection. Probabilities apply per delivery attempt and
/// per acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultConfig {
    pub seed: u64,
    #[serde(default)]
    pub ack_drop: f64,
    #[serde(default)]
    pub delivery_drop: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig { seed: 0, ack_drop: 0.0, delivery_drop: 0.0 }
    }
}

pub type Handler = Arc<dyn Fn(&Delivery) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriptionId(pub u64);

enum Sink {
    Inbox(VecDeque<Delivery>),
    Handler(Handler),
}

struct Pending {
    seq: u64,
    message: Message,
    qos: Qos,
}

struct InFlight {
    seq: u64,
    message: Message,
    attempts: u32,
    next_retry: u64,
}

struct Session {
    sink: Sink,
    subscriptions: BTreeMap<TopicFilter, (SubscriptionId, Qos)>,
    queue: VecDeque<Pending>,
    in_flight: BTreeMap<u64, InFlight>,
    next_delivery: u64,
}

impl Session {
    fn new(sink: Sink) -> Self {
        Session {
            sink,
            subscriptions: BTreeMap::new(),
            queue: VecDeque::new(),
            in_flight: BTreeMap::new(),
            next_delivery: 0,
        }
    }

    /// Highest qos among this session's filters matching `topic`.
    fn matching_qos(&self, topic: &Topic) -> Option<Qos> {
        self.subscriptions.iter().filter(|(f, _)| f.matches(topic)).map(|(_, (_, q))| *q).max()
    }
}

struct Inner {
    sessions: BTreeMap<String, Session>,
    now: u64,
    rng: ChaCha8Rng,
    faults: FaultConfig,
    stats: BusStats,
    pumping: bool,
    down: bool,
    next_seq: u64,
    next_subscription: u64,
    next_message_id: BTreeMap<String, u64>,
    completed: BTreeMap<u64, usize>,
}

enum Work {
    Call(Handler, Delivery, String),
    Nothing,
}

impl Inner {
    fn enqueue(&mut self, message: Message) -> (u64, usize) {
        self.next_seq += 1;
        let seq = self.next_seq;
        let mut matched = 0;
        for s in self.sessions.values_mut() {
            if let Some(sub_qos) = s.matching_qos(&message.topic) {
                matched += 1;
                s.queue.push_back(Pending { seq, qos: message.qos.min(sub_qos), message: message.clone() });
            }
        }
        self.stats.published += 1;
        (seq, matched)
    }

    fn dead_letter(&mut self, message: Message) {
        self.stats.dead_lettered += 1;
        let dead = Message {
            topic: message.topic.dead_letter(),
            qos: Qos::AtMostOnce,
            message_id: None,
            publisher: message.publisher,
            payload: message.payload,
        };
        self.enqueue(dead);
    }

    fn done(&mut self, seq: u64) {
        *self.completed.entry(seq).or_default() += 1;
    }

    fn roll(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.gen_bool(p.min(1.0))
    }

    /// Picks one unit of delivery work. Inbox deliveries complete here;
    /// handler calls are returned to run without the lock.
    fn next_work(&mut self) -> Option<Work> {
        let now = self.now;
        let clients: Vec<String> = self.sessions.keys().cloned().collect();
        for client in clients {
            let s = self.sessions.get_mut(&client).expect("listed session");
            let due = s.in_flight.iter().find(|(_, f)| f.next_retry <= now).map(|(id, _)| *id);
            let (delivery, seq) = if let Some(id) = due {
                let f = s.in_flight.get_mut(&id).expect("due entry");
                if f.attempts > MAX_RETRIES {
                    let f = s.in_flight.remove(&id).expect("due entry");
                    self.dead_letter(f.message);
                    return Some(Work::Nothing);
                }
                f.attempts += 1;
                f.next_retry = now + RETRY_INTERVAL_MS;
                self.stats.redelivered += 1;
                let d = Delivery { delivery_id: id, message: f.message.clone(), qos: Qos::AtLeastOnce, duplicate: true, at: now };
                (d, f.seq)
            } else if s.in_flight.len() < IN_FLIGHT_WINDOW && !s.queue.is_empty() {
                let p = s.queue.pop_front().expect("non-empty queue");
                s.next_delivery += 1;
                let id = s.next_delivery;
                if p.qos == Qos::AtLeastOnce {
                    s.in_flight.insert(
                        id,
                        InFlight { seq: p.seq, message: p.message.clone(), attempts: 1, next_retry: now + RETRY_INTERVAL_MS },
                    );
                }
                let d = Delivery { delivery_id: id, message: p.message, qos: p.qos, duplicate: false, at: now };
                (d, p.seq)
            } else {
                continue;
            };
            let drop_p = self.faults.delivery_drop;
            if self.roll(drop_p) {
                self.stats.deliveries_dropped += 1;
                return Some(Work::Nothing);
            }
            self.stats.delivered += 1;
            if delivery.qos == Qos::AtMostOnce {
                self.done(seq);
            }
            let s = self.sessions.get_mut(&client).expect("listed session");
            return Some(match &mut s.sink {
                Sink::Inbox(q) => {
                    q.push_back(delivery);
                    Work::Nothing
                }
                Sink::Handler(h) => Work::Call(h.clone(), delivery, client),
            });
        }
        None
    }

    /// Applies an acknowledgement; false when it was lost or unknown.
    fn ack(&mut self, client: &str, delivery_id: u64) -> Result<bool, BusError> {
        let s = self.sessions.get(client).ok_or_else(|| BusError::NotConnected(client.to_owned()))?;
        if !s.in_flight.contains_key(&delivery_id) {
            return Ok(false);
        }
        let drop_p = self.faults.ack_drop;
        if self.roll(drop_p) {
            self.stats.acks_dropped += 1;
            return Ok(false);
        }
        let s = self.sessions.get_mut(client).expect("checked session");
        let f = s.in_flight.remove(&delivery_id).expect("checked entry");
        self.stats.acked += 1;
        self.done(f.seq);
        Ok(true)
    }
}

/// In-process broker on a simulated clock. Handler subscribers are called
/// without the broker lock held and acknowledge automatically after the
/// handler returns; inbox subscribers poll and acknowledge themselves.
pub struct Broker {
    inner: Mutex<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new(FaultConfig::default())
    }
}

impl Broker {
    pub fn new(faults: FaultConfig) -> Self {
        Broker {
            inner: Mutex::new(Inner {
                sessions: BTreeMap::new(),
                now: 0,
                rng: ChaCha8Rng::seed_from_u64(faults.seed),
                faults,
                stats: BusStats::default(),
                pumping: false,
                down: false,
                next_seq: 0,
                next_subscription: 0,
                next_message_id: BTreeMap::new(),
                completed: BTreeMap::new(),
            }),
        }
    }

    fn open(&self, client: &str, sink: Sink) -> Result<(), BusError> {
        let mut inner = self.inner.lock();
        if inner.down {
            return Err(BusError::BrokerDown);
        }
        if inner.sessions.contains_key(client) {
            return Err(BusError::AlreadyConnected(client.to_owned()));
        }
        inner.sessions.insert(client.to_owned(), Session::new(sink));
        Ok(())
    }

    /// A polling client.
    pub fn connect(&self, client: &str) -> Result<(), BusError> {
        self.open(client, Sink::Inbox(VecDeque::new()))
    }

    pub fn connect_handler(&self, client: &str, handler: Handler) -> Result<(), BusError> {
        self.open(client, Sink::Handler(handler))
    }

    /// Drops the session with its queue and in-flight messages.
    pub fn disconnect(&self, client: &str) -> bool {
        self.inner.lock().sessions.remove(client).is_some()
    }

    pub fn subscribe(&self, client: &str, filter: &TopicFilter, qos: Qos) -> Result<SubscriptionId, BusError> {
        let mut inner = self.inner.lock();
        if inner.down {
            return Err(BusError::BrokerDown);
        }
        let next = inner.next_subscription + 1;
        let s = inner.sessions.get_mut(client).ok_or_else(|| BusError::NotConnected(client.to_owned()))?;
        let entry = s.subscriptions.entry(filter.clone()).or_insert((SubscriptionId(next), qos));
        entry.1 = qos;
        let id = entry.0;
        if id.0 == next {
            inner.next_subscription = next;
        }
        Ok(id)
    }

    /// Messages already queued for the client are still delivered.
    pub fn unsubscribe(&self, client: &str, filter: &TopicFilter) -> Result<bool, BusError> {
        let mut inner = self.inner.lock();
        let s = inner.sessions.get_mut(client).ok_or_else(|| BusError::NotConnected(client.to_owned()))?;
        Ok(s.subscriptions.remove(filter).is_some())
    }

    pub fn publish(&self, publisher: &str, topic: &Topic, payload: Vec<u8>, qos: Qos) -> Result<DeliveryReport, BusError> {
        let (seq, matched) = {
            let mut inner = self.inner.lock();
            if inner.down {
                return Err(BusError::BrokerDown);
            }
            let message_id = (qos == Qos::AtLeastOnce).then(|| {
                let n = inner.next_message_id.entry(publisher.to_owned()).or_insert(0);
                *n += 1;
                *n
            });
            let message = Message { topic: topic.clone(), payload, qos, message_id, publisher: publisher.to_owned() };
            inner.enqueue(message)
        };
        self.pump();
        let acked = self.inner.lock().completed.remove(&seq).unwrap_or(0);
        Ok(DeliveryReport { matched_subscribers: matched, acked })
    }

    pub fn ack(&self, client: &str, delivery_id: u64) -> Result<bool, BusError> {
        let ok = self.inner.lock().ack(client, delivery_id)?;
        if ok {
            self.pump();
        }
        Ok(ok)
    }

    pub fn poll(&self, client: &str) -> Result<Vec<Delivery>, BusError> {
        let mut inner = self.inner.lock();
        let s = inner.sessions.get_mut(client).ok_or_else(|| BusError::NotConnected(client.to_owned()))?;
        match &mut s.sink {
            Sink::Inbox(q) => Ok(q.drain(..).collect()),
            Sink::Handler(_) => Ok(Vec::new()),
        }
    }

    /// Moves the simulated clock forward and performs due redeliveries.
    pub fn advance(&self, ms: u64) {
        self.inner.lock().now += ms;
        self.pump();
    }

    pub fn now(&self) -> u64 {
        self.inner.lock().now
    }

    /// True when no session has queued or unacknowledged messages.
    pub fn is_idle(&self) -> bool {
        self.inner.lock().sessions.values().all(|s| s.queue.is_empty() && s.in_flight.is_empty())
    }

    /// Advances in retry steps until idle or `max_ms` has passed; returns
    /// the simulated time spent.
    pub fn settle(&self, max_ms: u64) -> u64 {
        let start = self.now();
        self.pump();
        while !self.is_idle() && self.now() - start < max_ms {
            self.advance(RETRY_INTERVAL_MS);
        }
        self.now() - start
    }

    pub fn stats(&self) -> BusStats {
        self.inner.lock().stats
    }

    pub fn shutdown(&self) {
        let mut inner = self.inner.lock();
        inner.down = true;
        inner.sessions.clear();
    }

    fn pump(&self) {
        {
            let mut inner = self.inner.lock();
            if inner.pumping {
                return;
            }
            inner.pumping = true;
        }
        loop {
            let work = {
                let mut inner = self.inner.lock();
                match inner.next_work() {
                    Some(w) => w,
                    None => {
                        inner.pumping = false;
                        return;
                    }
                }
            };
            if let Work::Call(handler, delivery, client) = work {
                handler(&delivery);
                if delivery.qos == Qos::AtLeastOnce {
                    let _ = self.inner.lock().ack(&client, delivery.delivery_id);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic(s: &str) -> Topic {
        Topic::new(s).unwrap()
    }

    fn filter(s: &str) -> TopicFilter {
        TopicFilter::new(s).unwrap()
    }

    #[test]
    fn qos0_without_faults_is_exactly_once() {
        let b = Broker::default();
        b.connect("sub").unwrap();
        b.subscribe("sub", &filter("obs/#"), Qos::AtMostOnce).unwrap();
        assert_eq!(b.publish("p", &topic("x"), vec![], Qos::AtMostOnce).unwrap().matched_subscribers, 0);
        for i in 0..5u8 {
            let r = b.publish("p", &topic("obs/home/temp"), vec![i], Qos::AtMostOnce).unwrap();
            assert_eq!(r, DeliveryReport { matched_subscribers: 1, acked: 1 });
        }
        let got: Vec<u8> = b.poll("sub").unwrap().iter().map(|d| d.message.payload[0]).collect();
        assert_eq!(got, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn resubscribe_updates_qos_in_place() {
        let b = Broker::default();
        b.connect("s").unwrap();
        let a = b.subscribe("s", &filter("a/+"), Qos::AtMostOnce).unwrap();
        let again = b.subscribe("s", &filter("a/+"), Qos::AtLeastOnce).unwrap();
        assert_eq!(a, again);
        b.publish("p", &topic("a/b"), vec![1], Qos::AtLeastOnce).unwrap();
        let d = b.poll("s").unwrap();
        assert_eq!(d[0].qos, Qos::AtLeastOnce);
        assert!(matches!(b.subscribe("nobody", &filter("a"), Qos::AtMostOnce), Err(BusError::NotConnected(_))));
    }

    #[test]
    fn unacked_messages_are_retried_then_dead_lettered() {
        let b = Broker::default();
        b.connect("s").unwrap();
        b.connect("dlq").unwrap();
        b.subscribe("s", &filter("t"), Qos::AtLeastOnce).unwrap();
        b.subscribe("dlq", &filter("$dead/#"), Qos::AtMostOnce).unwrap();
        b.publish("p", &topic("t"), b"x".to_vec(), Qos::AtLeastOnce).unwrap();
        b.settle(10_000);
        let copies = b.poll("s").unwrap();
        assert_eq!(copies.len() as u32, 1 + MAX_RETRIES);
        assert!(copies[1..].iter().all(|d| d.duplicate));
        let dead = b.poll("dlq").unwrap();
        assert_eq!(dead.len(), 1);
        assert_eq!(dead[0].message.topic.to_string(), "$dead/t");
    }

    #[test]
    fn handlers_ack_and_may_publish() {
        let b = Arc::new(Broker::default());
        let inner = b.clone();
        b.connect_handler(
            "relay",
            Arc::new(move |d: &Delivery| {
                inner.publish("relay", &Topic::new("out").unwrap(), d.message.payload.clone(), Qos::AtMostOnce).unwrap();
            }),
        )
        .unwrap();
        b.subscribe("relay", &filter("in"), Qos::AtLeastOnce).unwrap();
        b.connect("sink").unwrap();
        b.subscribe("sink", &filter("out"), Qos::AtMostOnce).unwrap();
        let r = b.publish("p", &topic("in"), b"hi".to_vec(), Qos::AtLeastOnce).unwrap();
        assert_eq!(r.acked, 1);
        assert_eq!(b.poll("sink").unwrap()[0].message.payload_text(), "hi");
        assert!(b.is_idle());
        b.shutdown();
        assert!(matches!(b.publish("p", &topic("in"), vec![], Qos::AtMostOnce), Err(BusError::BrokerDown)));
    }
}
