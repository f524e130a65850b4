//! Topic-based publish/subscribe with MQTT-style wildcards, qos 0 and 1,
//! seeded fault injection on a simulated clock, and a TCP frame protocol.

mod broker;
mod topic;
pub mod wire;

pub use broker::{
    Broker, BusStats, Delivery, DeliveryReport, FaultConfig, Handler, Message, Qos, SubscriptionId,
    IN_FLIGHT_WINDOW, MAX_RETRIES, RETRY_INTERVAL_MS,
};
pub use topic::{Segment, Topic, TopicFilter};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("client {0} is not connected")]
    NotConnected(String),
    #[error("client {0} is already connected")]
    AlreadyConnected(String),
    #[error("broker is down")]
    BrokerDown,
    #[error("frame: {0}")]
    Frame(String),
    #[error("remote: {0}")]
    Remote(String),
}
