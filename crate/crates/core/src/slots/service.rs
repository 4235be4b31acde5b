//! Slot bookkeeping behind a single writer lock, persisted as an append-only
//! JSON-lines event log that is replayed on open.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::export::export_csv;
use super::model::{Slot, SlotId, SlotStatus, Team, TeamId};

#[derive(Debug, Error)]
pub enum SlotError {
    #[error("slot {0} not found")]
    NotFound(SlotId),
    #[error("slot {id}: {from} cannot become {to}")]
    IllegalTransition { id: SlotId, from: SlotStatus, to: SlotStatus },
    #[error("slot {id} is {status}, not open for booking")]
    NotActivated { id: SlotId, status: SlotStatus },
    #[error("slot {0} is already booked")]
    AlreadyBooked(SlotId),
    #[error("team {team} already holds overlapping slot {other}")]
    OverlapConflict { team: TeamId, other: SlotId },
    #[error("team {0} is not registered")]
    UnknownTeam(TeamId),
    #[error("team {0} is already registered")]
    DuplicateTeam(TeamId),
    #[error("slot duration must be positive")]
    InvalidDuration,
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {msg}")]
    CorruptLog { line: usize, msg: String },
}

impl SlotError {
    pub fn code(&self) -> &'static str {
        match self {
            SlotError::NotFound(_) => "NOT_FOUND",
            SlotError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            SlotError::NotActivated { .. } => "NOT_ACTIVATED",
            SlotError::AlreadyBooked(_) => "ALREADY_BOOKED",
            SlotError::OverlapConflict { .. } => "OVERLAP_CONFLICT",
            SlotError::UnknownTeam(_) => "UNKNOWN_TEAM",
            SlotError::DuplicateTeam(_) => "DUPLICATE_TEAM",
            SlotError::InvalidDuration => "INVALID_DURATION",
            SlotError::Io(_) => "IO",
            SlotError::CorruptLog { .. } => "CORRUPT_LOG",
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SlotEvent {
    TeamRegistered { team: Team },
    Created { slot: Slot },
    Activated { id: SlotId },
    Deactivated { id: SlotId, notified: Option<TeamId> },
    Booked { id: SlotId, team_id: TeamId, join_link: String },
    Completed { id: SlotId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: SlotEvent,
}

/// A team whose booking was withdrawn by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub team_id: TeamId,
    pub slot_id: SlotId,
    pub at: DateTime<Utc>,
}

#[derive(Debug)]
struct Inner {
    slots: BTreeMap<SlotId, Slot>,
    teams: BTreeMap<TeamId, Team>,
    notifications: Vec<Notification>,
    next_id: SlotId,
    log: Option<File>,
    rng: ChaCha8Rng,
    link_base: String,
}

#[derive(Debug)]
pub struct SlotService {
    inner: Mutex<Inner>,
}

pub const DEFAULT_LINK_BASE: &str = "https://meet.telelab.invalid/j/";

impl Inner {
    fn apply(&mut self, rec: &LogRecord) {
        match &rec.event {
            SlotEvent::TeamRegistered { team } => {
                self.teams.insert(team.id.clone(), team.clone());
            }
            SlotEvent::Created { slot } => {
                self.next_id = self.next_id.max(slot.id + 1);
                self.slots.insert(slot.id, slot.clone());
            }
            SlotEvent::Activated { id } => self.set_status(*id, SlotStatus::Activated),
            SlotEvent::Deactivated { id, notified } => {
                self.set_status(*id, SlotStatus::Deactivated);
                if let Some(team_id) = notified {
                    self.notifications.push(Notification {
                        team_id: team_id.clone(),
                        slot_id: *id,
                        at: rec.at,
                    });
                }
            }
            SlotEvent::Booked { id, team_id, join_link } => {
                if let Some(s) = self.slots.get_mut(id) {
                    s.status = SlotStatus::Booked;
                    s.team_id = Some(team_id.clone());
                    s.join_link = Some(join_link.clone());
                }
            }
            SlotEvent::Completed { id } => self.set_status(*id, SlotStatus::Completed),
        }
    }

    fn set_status(&mut self, id: SlotId, status: SlotStatus) {
        if let Some(s) = self.slots.get_mut(&id) {
            s.status = status;
        }
    }

    /// Persists first, then applies, so a failed write changes nothing.
    fn commit(&mut self, event: SlotEvent) -> Result<(), SlotError> {
        let rec = LogRecord { at: Utc::now(), event };
        if let Some(f) = &mut self.log {
            let mut line = serde_json::to_string(&rec).expect("events serialize");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.apply(&rec);
        Ok(())
    }

    fn slot(&self, id: SlotId) -> Result<&Slot, SlotError> {
        self.slots.get(&id).ok_or(SlotError::NotFound(id))
    }

    fn transition(&self, id: SlotId, to: SlotStatus) -> Result<&Slot, SlotError> {
        let slot = self.slot(id)?;
        if slot.status.can_become(to) {
            Ok(slot)
        } else {
            Err(SlotError::IllegalTransition {
                id,
                from: slot.status,
                to,
            })
        }
    }
}

impl SlotService {
    fn with_parts(log: Option<File>, rng: ChaCha8Rng) -> Self {
        SlotService {
            inner: Mutex::new(Inner {
                slots: BTreeMap::new(),
                teams: BTreeMap::new(),
                notifications: Vec::new(),
                next_id: 1,
                log,
                rng,
                link_base: DEFAULT_LINK_BASE.to_owned(),
            }),
        }
    }

    pub fn in_memory() -> Self {
        Self::with_parts(None, ChaCha8Rng::from_os_rng())
    }

    /// Deterministic join links, for tests.
    pub fn seeded(seed: u64) -> Self {
        Self::with_parts(None, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Replays the log at `path` (if any) and appends new events to it.
    pub fn open(path: &Path) -> Result<Self, SlotError> {
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| SlotError::CorruptLog {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                records.push(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let svc = Self::with_parts(Some(file), ChaCha8Rng::from_os_rng());
        {
            let mut inner = svc.lock();
            for rec in &records {
                inner.apply(rec);
            }
        }
        Ok(svc)
    }

    pub fn set_link_base(&self, base: &str) {
        self.lock().link_base = base.to_owned();
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn register_team(&self, id: TeamId, name: &str) -> Result<Team, SlotError> {
        let mut inner = self.lock();
        if inner.teams.contains_key(&id) {
            return Err(SlotError::DuplicateTeam(id));
        }
        let team = Team {
            id,
            name: name.to_owned(),
        };
        inner.commit(SlotEvent::TeamRegistered { team: team.clone() })?;
        Ok(team)
    }

    pub fn teams(&self) -> Vec<Team> {
        self.lock().teams.values().cloned().collect()
    }

    pub fn create_slot(&self, start: DateTime<Utc>, duration_s: u32) -> Result<Slot, SlotError> {
        if duration_s == 0 {
            return Err(SlotError::InvalidDuration);
        }
        let mut inner = self.lock();
        let slot = Slot {
            id: inner.next_id,
            start,
            duration_s,
            status: SlotStatus::Draft,
            team_id: None,
            join_link: None,
        };
        inner.commit(SlotEvent::Created { slot: slot.clone() })?;
        Ok(slot)
    }

    pub fn activate(&self, id: SlotId) -> Result<Slot, SlotError> {
        let mut inner = self.lock();
        inner.transition(id, SlotStatus::Activated)?;
        inner.commit(SlotEvent::Activated { id })?;
        inner.slot(id).cloned()
    }

    /// Withdraws a slot; a booked team gets a notification record.
    pub fn deactivate(&self, id: SlotId) -> Result<Slot, SlotError> {
        let mut inner = self.lock();
        let notified = inner.transition(id, SlotStatus::Deactivated)?.team_id.clone();
        inner.commit(SlotEvent::Deactivated { id, notified })?;
        inner.slot(id).cloned()
    }

    pub fn complete(&self, id: SlotId) -> Result<Slot, SlotError> {
        let mut inner = self.lock();
        inner.transition(id, SlotStatus::Completed)?;
        inner.commit(SlotEvent::Completed { id })?;
        inner.slot(id).cloned()
    }

    pub fn book(&self, id: SlotId, team: &TeamId) -> Result<Slot, SlotError> {
        let mut inner = self.lock();
        let slot = inner.slot(id)?;
        match slot.status {
            SlotStatus::Activated => {}
            SlotStatus::Booked => return Err(SlotError::AlreadyBooked(id)),
            status => return Err(SlotError::NotActivated { id, status }),
        }
        if !inner.teams.contains_key(team) {
            return Err(SlotError::UnknownTeam(team.clone()));
        }
        if let Some(other) = inner
            .slots
            .values()
            .find(|o| o.status == SlotStatus::Booked && o.team_id.as_ref() == Some(team) && o.overlaps(slot))
        {
            return Err(SlotError::OverlapConflict {
                team: team.clone(),
                other: other.id,
            });
        }
        let mut token = [0u8; 16];
        inner.rng.fill_bytes(&mut token);
        let join_link = format!("{}{}", inner.link_base, hex::encode(token));
        inner.commit(SlotEvent::Booked {
            id,
            team_id: team.clone(),
            join_link,
        })?;
        inner.slot(id).cloned()
    }

    pub fn get(&self, id: SlotId) -> Result<Slot, SlotError> {
        self.lock().slot(id).cloned()
    }

    /// Snapshot of every slot in id order.
    pub fn list(&self) -> Vec<Slot> {
        self.lock().slots.values().cloned().collect()
    }

    pub fn notifications(&self) -> Vec<Notification> {
        self.lock().notifications.clone()
    }

    pub fn export_csv(&self) -> String {
        export_csv(&self.list())
    }
}
