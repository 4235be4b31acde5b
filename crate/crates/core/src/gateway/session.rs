use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::profile::{LatencyProfile, PermissionProfile, SessionMode};
use crate::bus::schema::TaskScore;
use crate::bus::Topic;
use crate::safety::Decision;
use crate::slots::{SlotId, TeamId};

pub type SessionId = u64;

/// Maximum session length, s.
pub const SESSION_SECONDS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub team_id: TeamId,
    pub slot_id: SlotId,
    /// 128-bit secret, hex. Only returned when the session is opened.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    pub mode: SessionMode,
    pub namespace: Topic,
    pub latency: LatencyProfile,
    pub permissions: PermissionProfile,
    pub opened_at_us: u64,
    pub expires_at_us: u64,
}

impl Session {
    pub fn redacted(&self) -> Session {
        Session {
            token: None,
            ..self.clone()
        }
    }
}

/// What a bus client learns after a successful `AUTH`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub session_id: SessionId,
    pub team_id: String,
    pub namespace: Topic,
    pub mode: SessionMode,
    pub expires_at_us: u64,
    pub permissions: PermissionProfile,
    pub latency: LatencyProfile,
}

impl From<&Session> for Grant {
    fn from(s: &Session) -> Self {
        Grant {
            session_id: s.id,
            team_id: s.team_id.to_string(),
            namespace: s.namespace.clone(),
            mode: s.mode,
            expires_at_us: s.expires_at_us,
            permissions: s.permissions.clone(),
            latency: s.latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CloseReason {
    Expired,
    Operator,
    SlotDeactivated,
    Shutdown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounters {
    /// Student frames accepted toward the robots.
    pub inbound: u64,
    /// Robot frames scheduled toward the student.
    pub outbound: u64,
    /// Frames refused by the permission profile or for expiry.
    pub denied: u64,
    pub verdicts: BTreeMap<Decision, u64>,
    pub verdict_codes: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: SessionId,
    pub team_id: String,
    pub slot_id: SlotId,
    pub mode: SessionMode,
    /// `None` while the session is still open.
    pub reason: Option<CloseReason>,
    pub opened_at_us: u64,
    pub closed_at_us: Option<u64>,
    pub duration_s: f64,
    pub counts: SessionCounters,
    pub score: Option<TaskScore>,
}
