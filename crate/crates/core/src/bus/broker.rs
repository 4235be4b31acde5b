//! Sans-IO topic broker.
//!
//! The broker owns the subscription table and one bounded outbound queue per
//! client. Transports push decoded envelopes in with [`Broker::route`] and pull
//! encoded frames out with [`Broker::drain`]. All mutation goes through
//! `&mut self`, so callers linearize routing by owning the broker in one place.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::envelope::{encode_frame, Envelope, Op};
use super::schema::{Alert, Severity};
use super::topic::{Topic, SYS_ALERTS};

/// Outbound frames retained per client before the oldest is dropped.
pub const OUTBOUND_QUEUE_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(pub u64);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

pub type FrameBytes = Arc<[u8]>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("client {0} is not connected")]
    UnknownClient(ClientId),
    #[error("PUB on {topic} as {msg_type} without a prior ADV")]
    NotAdvertised { topic: Topic, msg_type: String },
    #[error("seq {got} on {topic} does not increase past {last}")]
    SeqRegression { topic: Topic, last: u64, got: u64 },
}

impl RouteError {
    pub fn code(&self) -> &'static str {
        match self {
            RouteError::UnknownClient(_) => "UNKNOWN_CLIENT",
            RouteError::NotAdvertised { .. } => "NOT_ADVERTISED",
            RouteError::SeqRegression { .. } => "SEQ_REGRESSION",
        }
    }
}

/// Clients that received a routed frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delivery {
    pub recipients: Vec<ClientId>,
}

impl Delivery {
    pub fn is_empty(&self) -> bool {
        self.recipients.is_empty()
    }
}

#[derive(Debug, Default)]
struct ClientEntry {
    alive: bool,
    adverts: HashSet<(Topic, String)>,
    last_seq: HashMap<Topic, u64>,
    subscriptions: BTreeSet<Topic>,
    outbound: VecDeque<FrameBytes>,
    overflowing: bool,
    dropped: u64,
}

#[derive(Debug, Default)]
pub struct Broker {
    clients: BTreeMap<ClientId, ClientEntry>,
    subscriptions: BTreeMap<Topic, BTreeSet<ClientId>>,
    next_client: u64,
    alert_seq: u64,
    alerts: Vec<Alert>,
    queue_cap: usize,
    now_us: u64,
}

impl Broker {
    pub fn new() -> Self {
        Self::with_queue_cap(OUTBOUND_QUEUE_CAP)
    }

    pub fn with_queue_cap(queue_cap: usize) -> Self {
        Broker {
            queue_cap: queue_cap.max(1),
            ..Default::default()
        }
    }

    pub fn connect(&mut self) -> ClientId {
        self.next_client += 1;
        let id = ClientId(self.next_client);
        self.clients.insert(
            id,
            ClientEntry {
                alive: true,
                ..Default::default()
            },
        );
        id
    }

    /// Orderly close: forget the client and its subscriptions now.
    pub fn disconnect(&mut self, id: ClientId) {
        if let Some(entry) = self.clients.remove(&id) {
            for topic in entry.subscriptions {
                self.unsubscribe_entry(&topic, id);
            }
        }
    }

    /// Transport failure: the client is dropped on the next delivery attempt.
    pub fn mark_dead(&mut self, id: ClientId) {
        if let Some(entry) = self.clients.get_mut(&id) {
            entry.alive = false;
        }
    }

    pub fn is_connected(&self, id: ClientId) -> bool {
        self.clients.contains_key(&id)
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn subscribers(&self, topic: &str) -> Vec<ClientId> {
        self.subscriptions
            .get(topic)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn is_subscribed(&self, id: ClientId, topic: &str) -> bool {
        self.subscriptions
            .get(topic)
            .is_some_and(|s| s.contains(&id))
    }

    pub fn dropped_frames(&self, id: ClientId) -> u64 {
        self.clients.get(&id).map_or(0, |c| c.dropped)
    }

    /// Alerts raised by the broker itself since the last call.
    pub fn take_alerts(&mut self) -> Vec<Alert> {
        std::mem::take(&mut self.alerts)
    }

    pub fn route(&mut self, sender: ClientId, env: &Envelope, now_us: u64) -> Result<Delivery, RouteError> {
        self.now_us = self.now_us.max(now_us);
        let entry = self
            .clients
            .get_mut(&sender)
            .ok_or(RouteError::UnknownClient(sender))?;
        match env.op {
            Op::Adv => {
                entry.adverts.insert((env.topic.clone(), env.msg_type.clone()));
                Ok(Delivery::default())
            }
            Op::Pub => {
                if !entry.adverts.contains(&(env.topic.clone(), env.msg_type.clone())) {
                    return Err(RouteError::NotAdvertised {
                        topic: env.topic.clone(),
                        msg_type: env.msg_type.clone(),
                    });
                }
                let last = entry.last_seq.get(&env.topic).copied();
                if let Some(last) = last {
                    if env.seq <= last {
                        return Err(RouteError::SeqRegression {
                            topic: env.topic.clone(),
                            last,
                            got: env.seq,
                        });
                    }
                }
                entry.last_seq.insert(env.topic.clone(), env.seq);
                let stamped = Envelope {
                    stamp_us: now_us,
                    ..env.clone()
                };
                Ok(self.deliver(&stamped))
            }
            Op::Sub => {
                entry.subscriptions.insert(env.topic.clone());
                self.subscriptions
                    .entry(env.topic.clone())
                    .or_default()
                    .insert(sender);
                Ok(Delivery::default())
            }
            Op::Unsub => {
                entry.subscriptions.remove(&env.topic);
                self.unsubscribe_entry(&env.topic, sender);
                Ok(Delivery::default())
            }
            Op::Ping => {
                let pong = Envelope::control(Op::Pong, env.topic.clone(), "none", env.seq, env.stamp_us);
                self.send_to(sender, &pong);
                Ok(Delivery {
                    recipients: vec![sender],
                })
            }
            Op::Pong | Op::Err => Ok(Delivery::default()),
        }
    }

    /// Delivers a host-originated frame as is: no ADV, seq or stamp handling.
    pub fn inject(&mut self, env: &Envelope, now_us: u64) -> Delivery {
        self.now_us = self.now_us.max(now_us);
        self.deliver(env)
    }

    /// Queues one frame for one client, bypassing the subscription table.
    pub fn send_to(&mut self, id: ClientId, env: &Envelope) -> bool {
        let frame: FrameBytes = encode_frame(env).into();
        self.enqueue(id, frame, env.topic.as_str() != SYS_ALERTS)
    }

    pub fn drain(&mut self, id: ClientId) -> Vec<FrameBytes> {
        match self.clients.get_mut(&id) {
            Some(entry) => {
                entry.overflowing = false;
                entry.outbound.drain(..).collect()
            }
            None => Vec::new(),
        }
    }

    pub fn pending(&self, id: ClientId) -> usize {
        self.clients.get(&id).map_or(0, |c| c.outbound.len())
    }

    /// Clients that currently have frames waiting.
    pub fn clients_with_output(&self) -> Vec<ClientId> {
        self.clients
            .iter()
            .filter(|(_, c)| !c.outbound.is_empty())
            .map(|(id, _)| *id)
            .collect()
    }

    fn deliver(&mut self, env: &Envelope) -> Delivery {
        let subscribers = self.subscribers(env.topic.as_str());
        if subscribers.is_empty() {
            return Delivery::default();
        }
        let frame: FrameBytes = encode_frame(env).into();
        let may_alert = env.topic.as_str() != SYS_ALERTS;
        let mut recipients = Vec::with_capacity(subscribers.len());
        let mut dead = Vec::new();
        for id in subscribers {
            if self.clients.get(&id).is_some_and(|c| c.alive) {
                self.enqueue(id, frame.clone(), may_alert);
                recipients.push(id);
            } else {
                dead.push(id);
            }
        }
        for id in dead {
            self.disconnect(id);
            self.raise(Severity::Warn, "CLIENT_DROPPED", format!("client {id} is gone; dropped from {}", env.topic));
        }
        Delivery { recipients }
    }

    fn enqueue(&mut self, id: ClientId, frame: FrameBytes, may_alert: bool) -> bool {
        let cap = self.queue_cap;
        let Some(entry) = self.clients.get_mut(&id) else {
            return false;
        };
        entry.outbound.push_back(frame);
        if entry.outbound.len() > cap {
            entry.outbound.pop_front();
            entry.dropped += 1;
            if !entry.overflowing {
                entry.overflowing = true;
                if may_alert {
                    self.raise(
                        Severity::Warn,
                        "QUEUE_OVERFLOW",
                        format!("client {id} outbound queue full; dropping oldest frames"),
                    );
                }
            }
        }
        true
    }

    fn raise(&mut self, severity: Severity, code: &str, detail: String) {
        let alert = Alert {
            severity,
            code: code.to_owned(),
            detail,
        };
        self.alerts.push(alert.clone());
        self.publish_alert(&alert, self.now_us);
    }

    /// Publishes an alert on `/sys/alerts` on behalf of the broker.
    pub fn publish_alert(&mut self, alert: &Alert, now_us: u64) -> Delivery {
        self.alert_seq += 1;
        let topic = Topic::new(SYS_ALERTS).expect("reserved topic is valid");
        let env = Envelope::publish(topic, self.alert_seq, now_us, alert);
        self.deliver(&env)
    }

    fn unsubscribe_entry(&mut self, topic: &Topic, id: ClientId) {
        if let Some(set) = self.subscriptions.get_mut(topic) {
            set.remove(&id);
            if set.is_empty() {
                self.subscriptions.remove(topic);
            }
        }
    }
}
