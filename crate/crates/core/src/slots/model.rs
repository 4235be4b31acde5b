use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SlotId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlotStatus {
    Draft,
    Activated,
    Booked,
    Completed,
    Deactivated,
}

impl SlotStatus {
    pub const ALL: [SlotStatus; 5] = [
        SlotStatus::Draft,
        SlotStatus::Activated,
        SlotStatus::Booked,
        SlotStatus::Completed,
        SlotStatus::Deactivated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotStatus::Draft => "DRAFT",
            SlotStatus::Activated => "ACTIVATED",
            SlotStatus::Booked => "BOOKED",
            SlotStatus::Completed => "COMPLETED",
            SlotStatus::Deactivated => "DEACTIVATED",
        }
    }

    /// The only edges of the slot life cycle.
    pub fn can_become(self, next: SlotStatus) -> bool {
        use SlotStatus::*;
        matches!(
            (self, next),
            (Draft, Activated) | (Activated, Booked) | (Activated, Deactivated) | (Booked, Completed) | (Booked, Deactivated)
        )
    }
}

impl fmt::Display for SlotStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotStatus::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown slot status {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("team id must look like t<digits>, got {0:?}")]
pub struct InvalidTeamId(pub String);

/// `t` followed by one or more digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TeamId(String);

impl TeamId {
    pub fn new(s: impl Into<String>) -> Result<Self, InvalidTeamId> {
        let s = s.into();
        let digits = s.strip_prefix('t').unwrap_or("");
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            Ok(TeamId(s))
        } else {
            Err(InvalidTeamId(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TeamId {
    type Error = InvalidTeamId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        TeamId::new(s)
    }
}

impl From<TeamId> for String {
    fn from(t: TeamId) -> String {
        t.0
    }
}

impl FromStr for TeamId {
    type Err = InvalidTeamId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TeamId::new(s)
    }
}

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub id: TeamId,
    pub name: String,
}

pub const DEFAULT_SLOT_SECONDS: u32 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub id: SlotId,
    pub start: DateTime<Utc>,
    pub duration_s: u32,
    pub status: SlotStatus,
    pub team_id: Option<TeamId>,
    pub join_link: Option<String>,
}

impl Slot {
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::seconds(i64::from(self.duration_s))
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end()
    }

    pub fn overlaps(&self, other: &Slot) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}
