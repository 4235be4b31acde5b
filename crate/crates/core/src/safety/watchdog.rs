//! Per-topic rate monitor over a sliding window.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::bus::schema::{Alert, Severity};

pub const WATCHDOG_LOW_RATE: &str = "WATCHDOG_LOW_RATE";
pub const WATCHDOG_STALLED: &str = "WATCHDOG_STALLED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub severity: Severity,
    pub code: String,
    pub detail: String,
    pub stamp_us: u64,
}

impl AlertEvent {
    pub fn new(severity: Severity, code: &str, detail: impl Into<String>, stamp_us: u64) -> Self {
        AlertEvent {
            severity,
            code: code.to_owned(),
            detail: detail.into(),
            stamp_us,
        }
    }

    pub fn to_alert(&self) -> Alert {
        Alert {
            severity: self.severity,
            code: self.code.clone(),
            detail: self.detail.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct TopicWatch {
    registered_us: u64,
    stamps: VecDeque<u64>,
    consecutive_low: u32,
}

#[derive(Debug, Clone)]
pub struct Watchdog {
    min_hz: f64,
    window_us: u64,
    topics: BTreeMap<String, TopicWatch>,
}

impl Watchdog {
    pub fn new(min_hz: f64, window_s: f64) -> Self {
        Watchdog {
            min_hz,
            window_us: (window_s * 1e6).round() as u64,
            topics: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, topic: &str, now_us: u64) {
        self.topics.entry(topic.to_owned()).or_insert(TopicWatch {
            registered_us: now_us,
            stamps: VecDeque::new(),
            consecutive_low: 0,
        });
    }

    pub fn is_registered(&self, topic: &str) -> bool {
        self.topics.contains_key(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    /// Records one arrival. Unregistered topics are ignored.
    pub fn observe(&mut self, topic: &str, stamp_us: u64) {
        if let Some(w) = self.topics.get_mut(topic) {
            w.stamps.push_back(stamp_us);
        }
    }

    /// Arrivals in `(now - window, now]` divided by the window length.
    pub fn rate(&self, topic: &str, now_us: u64) -> Option<f64> {
        let w = self.topics.get(topic)?;
        let lo = now_us.saturating_sub(self.window_us);
        let n = w.stamps.iter().filter(|&&s| s > lo && s <= now_us).count();
        Some(n as f64 / (self.window_us as f64 * 1e-6))
    }

    /// One alert per starved topic: WARN on the first low poll in a row,
    /// CRITICAL from the second on. Topics younger than one window are skipped.
    pub fn poll(&mut self, now_us: u64) -> Vec<AlertEvent> {
        let lo = now_us.saturating_sub(self.window_us);
        let mut alerts = Vec::new();
        for (topic, w) in &mut self.topics {
            while w.stamps.front().is_some_and(|&s| s <= lo) {
                w.stamps.pop_front();
            }
            if now_us < w.registered_us + self.window_us {
                continue;
            }
            let n = w.stamps.iter().filter(|&&s| s <= now_us).count();
            let hz = n as f64 / (self.window_us as f64 * 1e-6);
            if hz < self.min_hz {
                w.consecutive_low += 1;
                let (severity, code) = if w.consecutive_low >= 2 {
                    (Severity::Critical, WATCHDOG_STALLED)
                } else {
                    (Severity::Warn, WATCHDOG_LOW_RATE)
                };
                alerts.push(AlertEvent::new(
                    severity,
                    code,
                    format!("{topic} at {hz:.1} Hz, minimum {} Hz", self.min_hz),
                    now_us,
                ));
            } else {
                w.consecutive_low = 0;
            }
        }
        alerts
    }

    /// Topics currently in the CRITICAL state.
    pub fn critical_topics(&self) -> Vec<&str> {
        self.topics
            .iter()
            .filter(|(_, w)| w.consecutive_low >= 2)
            .map(|(t, _)| t.as_str())
            .collect()
    }
}
