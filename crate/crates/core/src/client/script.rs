//! Timed command scripts: publish steps and wait-for steps with a predicate
//! over incoming payloads.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{resolve_topic, ClientError, Link};
use crate::bus::schema::Alert;
use crate::bus::{Envelope, Op, Payload, Topic};
use crate::gateway::inbound_remap;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Earliest start, ms after the script starts.
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: StepAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Publish(Publish),
    WaitFor(WaitFor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Publish {
    pub topic: String,
    /// Defaults to the schema of the robot command topic of the same name.
    #[serde(default)]
    pub msg_type: Option<String>,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaitFor {
    pub topic: String,
    /// Any message on the topic matches when absent.
    #[serde(default)]
    pub predicate: Option<Predicate>,
    pub timeout_ms: u64,
    /// The predicate must stay true on every message for this long.
    #[serde(default)]
    pub hold_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    /// JSON pointer into the payload; empty selects the whole payload.
    #[serde(default)]
    pub field: String,
    #[serde(default)]
    pub reduce: Option<Reduce>,
    pub op: Cmp,
    pub value: Value,
    /// Absolute tolerance for `near` and numeric `eq`.
    #[serde(default)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    Min,
    Max,
    Sum,
    Mean,
    Len,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Near,
}

fn reduce(r: Reduce, v: &Value) -> Option<Value> {
    let items = v.as_array()?;
    if r == Reduce::Len {
        return Some(Value::from(items.len()));
    }
    let nums: Vec<f64> = items.iter().map(Value::as_f64).collect::<Option<_>>()?;
    let out = match r {
        Reduce::Min => nums.iter().copied().reduce(f64::min)?,
        Reduce::Max => nums.iter().copied().reduce(f64::max)?,
        Reduce::Sum => nums.iter().sum(),
        Reduce::Mean if nums.is_empty() => return None,
        Reduce::Mean => nums.iter().sum::<f64>() / nums.len() as f64,
        Reduce::Len => unreachable!(),
    };
    Some(Value::from(out))
}

fn near(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Array(xs), Value::Array(ys)) => xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| near(x, y, tol)),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= tol,
            _ => false,
        },
    }
}

impl Predicate {
    /// Missing fields and type mismatches evaluate to false.
    pub fn eval(&self, payload: &Value) -> bool {
        let Some(v) = payload.pointer(&self.field) else {
            return false;
        };
        let v = match self.reduce {
            Some(r) => match reduce(r, v) {
                Some(v) => v,
                None => return false,
            },
            None => v.clone(),
        };
        let ord = || match (v.as_f64(), self.value.as_f64()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => None,
        };
        use std::cmp::Ordering::*;
        match self.op {
            Cmp::Lt => ord() == Some(Less),
            Cmp::Le => matches!(ord(), Some(Less | Equal)),
            Cmp::Gt => ord() == Some(Greater),
            Cmp::Ge => matches!(ord(), Some(Greater | Equal)),
            Cmp::Eq => v == self.value || near(&v, &self.value, self.tol),
            Cmp::Ne => !(v == self.value || near(&v, &self.value, self.tol)),
            Cmp::Near => near(&v, &self.value, self.tol),
        }
    }
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, ClientError> {
        let script: Script = serde_json::from_str(text).map_err(|e| ClientError::Script(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        for (i, pair) in self.steps.windows(2).enumerate() {
            if pair[1].at_ms < pair[0].at_ms {
                return Err(ClientError::Script(format!("step {}: at_ms goes backwards", i + 1)));
            }
        }
        for (i, step) in self.steps.iter().enumerate() {
            if let StepAction::Publish(p) = &step.action {
                if p.msg_type.is_none() && inbound_remap(&p.topic).is_none() {
                    return Err(ClientError::Script(format!("step {i}: msg_type required for {}", p.topic)));
                }
            }
        }
        Ok(())
    }
}

impl Publish {
    fn msg_type(&self) -> String {
        self.msg_type
            .clone()
            .or_else(|| inbound_remap(&self.topic).map(|r| r.msg_type.to_owned()))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub sent: u64,
    pub received: u64,
    /// ERR frames the host sent back.
    pub errors: Vec<Alert>,
    pub elapsed_ms: u64,
}

struct Runner<'a, L: Link> {
    link: &'a mut L,
    report: RunReport,
    seqs: BTreeMap<Topic, u64>,
}

impl<L: Link> Runner<'_, L> {
    fn send(&mut self, env: Envelope) -> Result<(), ClientError> {
        self.link.send(&env)?;
        self.report.sent += 1;
        Ok(())
    }

    fn recv(&mut self, deadline_us: u64) -> Result<Option<Envelope>, ClientError> {
        let got = self.link.recv_until(deadline_us)?;
        if let Some(env) = &got {
            self.report.received += 1;
            if env.op == Op::Err {
                if let Ok(alert) = env.payload.decode::<Alert>() {
                    self.report.errors.push(alert);
                }
            }
        }
        Ok(got)
    }

    fn idle_until(&mut self, t_us: u64) -> Result<(), ClientError> {
        while self.link.now_us() < t_us {
            self.recv(t_us)?;
        }
        Ok(())
    }

    fn publish(&mut self, p: &Publish) -> Result<(), ClientError> {
        let topic = resolve_topic(self.link.identity(), &p.topic)?;
        let payload = Payload::from_json(&p.payload.to_string()).map_err(|e| ClientError::Script(e.to_string()))?;
        let seq = self.seqs.entry(topic.clone()).or_insert(0);
        *seq += 1;
        let env = Envelope {
            op: Op::Pub,
            topic,
            msg_type: p.msg_type(),
            seq: *seq,
            stamp_us: self.link.now_us(),
            payload,
        };
        self.send(env)
    }

    fn wait_for(&mut self, step: usize, w: &WaitFor) -> Result<(), ClientError> {
        let topic = resolve_topic(self.link.identity(), &w.topic)?;
        let deadline = self.link.now_us() + w.timeout_ms * 1000;
        let mut since: Option<u64> = None;
        loop {
            let Some(env) = self.recv(deadline)? else {
                if self.link.now_us() >= deadline {
                    return Err(ClientError::ScriptTimeout {
                        step,
                        topic: w.topic.clone(),
                        timeout_ms: w.timeout_ms,
                    });
                }
                continue;
            };
            if env.op != Op::Pub || env.topic != topic {
                continue;
            }
            let ok = match &w.predicate {
                None => true,
                Some(p) => p.eval(&env.payload.to_value()),
            };
            if !ok {
                since = None;
                continue;
            }
            let now = self.link.now_us();
            let start = *since.get_or_insert(now);
            if now - start >= w.hold_ms * 1000 {
                return Ok(());
            }
        }
    }
}

/// Advertises and subscribes everything the script touches, then executes
/// the steps in order. Fails on the first wait-for timeout.
pub fn run_script<L: Link>(link: &mut L, script: &Script) -> Result<RunReport, ClientError> {
    script.validate()?;
    let t0 = link.now_us();
    let mut runner = Runner {
        link,
        report: RunReport::default(),
        seqs: BTreeMap::new(),
    };
    let mut adv = BTreeSet::new();
    let mut sub = BTreeSet::new();
    for step in &script.steps {
        match &step.action {
            StepAction::Publish(p) => {
                adv.insert((resolve_topic(runner.link.identity(), &p.topic)?, p.msg_type()));
            }
            StepAction::WaitFor(w) => {
                sub.insert(resolve_topic(runner.link.identity(), &w.topic)?);
            }
        }
    }
    for (topic, msg_type) in adv {
        let now = runner.link.now_us();
        runner.send(Envelope::control(Op::Adv, topic, msg_type, 0, now))?;
    }
    for topic in sub {
        let now = runner.link.now_us();
        runner.send(Envelope::control(Op::Sub, topic, "Empty", 0, now))?;
    }
    for (i, step) in script.steps.iter().enumerate() {
        runner.idle_until(t0 + step.at_ms * 1000)?;
        match &step.action {
            StepAction::Publish(p) => runner.publish(p)?,
            StepAction::WaitFor(w) => runner.wait_for(i, w)?,
        }
        runner.report.steps += 1;
    }
    runner.report.elapsed_ms = (runner.link.now_us() - t0) / 1000;
    Ok(runner.report)
}
