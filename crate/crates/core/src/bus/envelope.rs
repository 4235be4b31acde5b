//! Envelope type and the LF-delimited frame codec.
//!
//! A frame is one compact JSON document with exactly the keys
//! `op,topic,msg_type,seq,stamp_us,payload`, followed by a single `\n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use super::schema::{self, Message};
use super::topic::Topic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "ADV")]
    Adv,
    #[serde(rename = "PUB")]
    Pub,
    #[serde(rename = "SUB")]
    Sub,
    #[serde(rename = "UNSUB")]
    Unsub,
    #[serde(rename = "PING")]
    Ping,
    #[serde(rename = "PONG")]
    Pong,
    #[serde(rename = "ERR")]
    Err,
}

impl Op {
    pub const ALL: [Op; 7] = [Op::Adv, Op::Pub, Op::Sub, Op::Unsub, Op::Ping, Op::Pong, Op::Err];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Adv => "ADV",
            Op::Pub => "PUB",
            Op::Sub => "SUB",
            Op::Unsub => "UNSUB",
            Op::Ping => "PING",
            Op::Pong => "PONG",
            Op::Err => "ERR",
        }
    }

    /// PUB and ERR carry a typed payload; every other op carries `{}`.
    pub fn carries_payload(self) -> bool {
        matches!(self, Op::Pub | Op::Err)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Op::ALL.into_iter().find(|op| op.as_str() == s).ok_or(())
    }
}

/// Raw JSON payload, kept verbatim so relayed frames stay byte-identical.
#[derive(Clone)]
pub struct Payload(Box<RawValue>);

impl Payload {
    pub fn empty() -> Self {
        Payload(RawValue::from_string("{}".to_owned()).expect("literal JSON"))
    }

    pub fn encode<T: Message>(msg: &T) -> Self {
        let json = serde_json::to_string(msg).expect("schema types always serialize");
        Payload(RawValue::from_string(json).expect("serde_json output is valid JSON"))
    }

    /// Wraps an arbitrary JSON object, normalizing it to compact form.
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let value: serde_json::Map<String, serde_json::Value> = serde_json::from_str(json)?;
        let compact = serde_json::to_string(&value)?;
        Ok(Payload(RawValue::from_string(compact)?))
    }

    fn from_raw(raw: &RawValue) -> Self {
        Payload(raw.to_owned())
    }

    pub fn as_str(&self) -> &str {
        self.0.get()
    }

    pub fn decode<T: Message>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_str(self.0.get())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::from_str(self.0.get()).expect("payload holds valid JSON")
    }
}

impl PartialEq for Payload {
    fn eq(&self, other: &Self) -> bool {
        self.as_str() == other.as_str()
    }
}

impl Eq for Payload {}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub op: Op,
    pub topic: Topic,
    pub msg_type: String,
    pub seq: u64,
    pub stamp_us: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn publish<T: Message>(topic: Topic, seq: u64, stamp_us: u64, msg: &T) -> Self {
        Envelope {
            op: Op::Pub,
            topic,
            msg_type: T::NAME.to_owned(),
            seq,
            stamp_us,
            payload: Payload::encode(msg),
        }
    }

    /// A control frame (ADV, SUB, UNSUB, PING, PONG) with an empty payload.
    pub fn control(op: Op, topic: Topic, msg_type: impl Into<String>, seq: u64, stamp_us: u64) -> Self {
        Envelope {
            op,
            topic,
            msg_type: msg_type.into(),
            seq,
            stamp_us,
            payload: Payload::empty(),
        }
    }

    pub fn error(topic: Topic, stamp_us: u64, alert: &schema::Alert) -> Self {
        Envelope {
            op: Op::Err,
            topic,
            msg_type: schema::Alert::NAME.to_owned(),
            seq: 0,
            stamp_us,
            payload: Payload::encode(alert),
        }
    }

    pub fn with_topic(&self, topic: Topic) -> Self {
        Envelope {
            topic,
            ..self.clone()
        }
    }

    pub fn decode_payload<T: Message>(&self) -> Result<T, serde_json::Error> {
        if self.msg_type != T::NAME {
            return Err(serde::de::Error::custom(format!(
                "payload is {}, not {}",
                self.msg_type,
                T::NAME
            )));
        }
        self.payload.decode()
    }

    pub fn is_valid(&self) -> bool {
        if !schema::is_valid_schema_name(&self.msg_type) || self.payload.as_str().contains('\n') {
            return false;
        }
        check_payload(self.op, &self.msg_type, self.payload.as_str()).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("malformed frame at byte {offset}: {detail}")]
    MalformedFrame { offset: usize, detail: String },
    #[error("unknown op {op:?} at byte {offset}")]
    UnknownOp { offset: usize, op: String },
    #[error("payload violates schema {msg_type} at byte {offset}: {detail}")]
    SchemaViolation {
        offset: usize,
        msg_type: String,
        detail: String,
    },
}

impl FrameError {
    pub fn offset(&self) -> usize {
        match self {
            FrameError::MalformedFrame { offset, .. }
            | FrameError::UnknownOp { offset, .. }
            | FrameError::SchemaViolation { offset, .. } => *offset,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            FrameError::MalformedFrame { .. } => "MALFORMED_FRAME",
            FrameError::UnknownOp { .. } => "UNKNOWN_OP",
            FrameError::SchemaViolation { .. } => "SCHEMA_VIOLATION",
        }
    }
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let mut out = String::with_capacity(96 + env.payload.as_str().len());
    out.push_str(r#"{"op":""#);
    out.push_str(env.op.as_str());
    out.push_str(r#"","topic":"#);
    out.push_str(&serde_json::to_string(env.topic.as_str()).expect("string"));
    out.push_str(r#","msg_type":"#);
    out.push_str(&serde_json::to_string(&env.msg_type).expect("string"));
    out.push_str(r#","seq":"#);
    out.push_str(&env.seq.to_string());
    out.push_str(r#","stamp_us":"#);
    out.push_str(&env.stamp_us.to_string());
    out.push_str(r#","payload":"#);
    out.push_str(env.payload.as_str());
    out.push_str("}\n");
    out.into_bytes()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame<'a> {
    #[serde(borrow)]
    op: &'a RawValue,
    #[serde(borrow)]
    topic: &'a RawValue,
    #[serde(borrow)]
    msg_type: &'a RawValue,
    #[serde(borrow)]
    seq: &'a RawValue,
    #[serde(borrow)]
    stamp_us: &'a RawValue,
    #[serde(borrow)]
    payload: &'a RawValue,
}

fn malformed(offset: usize, detail: impl Into<String>) -> FrameError {
    FrameError::MalformedFrame {
        offset,
        detail: detail.into(),
    }
}

fn json_error_offset(base: usize, err: &serde_json::Error) -> usize {
    base + err.column().saturating_sub(1)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Envelope, FrameError> {
    let Some((&b'\n', body)) = bytes.split_last() else {
        return Err(malformed(bytes.len(), "frame is not LF-terminated"));
    };
    if let Some(pos) = body.iter().position(|&b| b == b'\n') {
        return Err(malformed(pos, "interior LF"));
    }
    let body = std::str::from_utf8(body).map_err(|e| malformed(e.valid_up_to(), "invalid UTF-8"))?;
    let raw: RawFrame<'_> =
        serde_json::from_str(body).map_err(|e| malformed(json_error_offset(0, &e), e.to_string()))?;
    let offset_of = |v: &RawValue| v.get().as_ptr() as usize - body.as_ptr() as usize;

    let op_text: String = serde_json::from_str(raw.op.get())
        .map_err(|_| malformed(offset_of(raw.op), "op must be a string"))?;
    let op = op_text.parse::<Op>().map_err(|_| FrameError::UnknownOp {
        offset: offset_of(raw.op),
        op: op_text.clone(),
    })?;

    let topic_text: String = serde_json::from_str(raw.topic.get())
        .map_err(|_| malformed(offset_of(raw.topic), "topic must be a string"))?;
    let topic = Topic::new(topic_text).map_err(|e| malformed(offset_of(raw.topic), e.to_string()))?;

    let msg_type: String = serde_json::from_str(raw.msg_type.get())
        .map_err(|_| malformed(offset_of(raw.msg_type), "msg_type must be a string"))?;
    if !schema::is_valid_schema_name(&msg_type) {
        return Err(malformed(offset_of(raw.msg_type), "invalid msg_type name"));
    }

    let seq: u64 = serde_json::from_str(raw.seq.get())
        .map_err(|_| malformed(offset_of(raw.seq), "seq must be an unsigned 64-bit integer"))?;
    let stamp_us: u64 = serde_json::from_str(raw.stamp_us.get())
        .map_err(|_| malformed(offset_of(raw.stamp_us), "stamp_us must be an unsigned 64-bit integer"))?;

    let payload_offset = offset_of(raw.payload);
    check_payload(op, &msg_type, raw.payload.get()).map_err(|(rel, detail)| {
        FrameError::SchemaViolation {
            offset: payload_offset + rel,
            msg_type: msg_type.clone(),
            detail,
        }
    })?;

    Ok(Envelope {
        op,
        topic,
        msg_type,
        seq,
        stamp_us,
        payload: Payload::from_raw(raw.payload),
    })
}

/// Returns the offending offset within the payload and a description.
fn check_payload(op: Op, msg_type: &str, raw: &str) -> Result<(), (usize, String)> {
    let schema_name = if op.carries_payload() { msg_type } else { "none" };
    match schema::validate_builtin(schema_name, raw) {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err((json_error_offset(0, &e), e.to_string())),
        None => serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(raw)
            .map(|_| ())
            .map_err(|e| (json_error_offset(0, &e), format!("payload must be an object: {e}"))),
    }
}
