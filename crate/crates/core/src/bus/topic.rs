use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reserved namespace for broker and safety traffic.
pub const SYS_NAMESPACE: &str = "/sys";
/// Reserved topic carrying [`Alert`](crate::bus::schema::Alert) frames.
pub const SYS_ALERTS: &str = "/sys/alerts";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid topic name {0:?}: expected absolute lowercase path like /rover/cmd_vel")]
pub struct InvalidTopic(pub String);

/// A validated topic name matching `(/[a-z0-9_]+)+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Result<Self, InvalidTopic> {
        let name = name.into();
        if is_valid_topic(&name) {
            Ok(Topic(name))
        } else {
            Err(InvalidTopic(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Appends a relative path (`scan`, `debug/x`) to this topic.
    pub fn join(&self, relative: &str) -> Result<Topic, InvalidTopic> {
        Topic::new(format!("{}/{}", self.0, relative.trim_start_matches('/')))
    }

    /// Returns the part of `self` below `namespace`, without the leading slash.
    /// `None` if the topic is outside the namespace or is the namespace root.
    pub fn strip_namespace(&self, namespace: &Topic) -> Option<&str> {
        self.0
            .strip_prefix(namespace.as_str())
            .and_then(|rest| rest.strip_prefix('/'))
    }

    pub fn is_system(&self) -> bool {
        topic_in_namespace(SYS_NAMESPACE, &self.0)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for Topic {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<&str> for Topic {
    type Error = InvalidTopic;
    fn try_from(value: &str) -> Result<Self, Self::Error> {
        Topic::new(value)
    }
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Topic::new(s).map_err(serde::de::Error::custom)
    }
}

pub fn is_valid_topic(name: &str) -> bool {
    if !name.starts_with('/') {
        return false;
    }
    name[1..].split('/').all(|seg| {
        !seg.is_empty()
            && seg
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
    })
}

/// True iff `topic` equals `namespace` or lies below it at a `/` boundary.
pub fn topic_in_namespace(namespace: &str, topic: &str) -> bool {
    match topic.strip_prefix(namespace) {
        Some("") => true,
        Some(rest) => rest.starts_with('/'),
        None => false,
    }
}
