//! Topic-based publish/subscribe: the wire envelope, its LF-delimited codec,
//! the built-in message schemas and a sans-IO broker.

pub mod broker;
pub mod envelope;
pub mod schema;
pub mod topic;

pub use broker::{Broker, ClientId, Delivery, FrameBytes, RouteError, OUTBOUND_QUEUE_CAP};
pub use envelope::{decode_frame, encode_frame, Envelope, FrameError, Op, Payload};
pub use schema::Message;
pub use topic::{topic_in_namespace, InvalidTopic, Topic, SYS_ALERTS, SYS_NAMESPACE};
