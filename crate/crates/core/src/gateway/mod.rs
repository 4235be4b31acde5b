//! The host-side relay between a student namespace and the robots.
//!
//! A session owns the namespace `/s/<team>`. Student commands published
//! there are authorized against the permission profile, renamed onto robot
//! topics and delayed per the latency profile; the host runs each through the
//! safety monitor when it comes due. Robot output flows the other way under
//! the namespace. All methods take an explicit clock, in µs since the epoch.

pub mod delay;
pub mod profile;
pub mod session;

use std::collections::{BTreeMap, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use delay::{sample_delay_us, DelayLine};
pub use profile::{
    inbound_remap, is_robot_command_topic, outbound_remap, LatencyProfile, PermissionProfile, Remap, SessionMode,
    CAMERA_FRAME, CMD_VEL, GRIPPER, INBOUND, JOINT_CMD, JOINT_STATES, ODOM, OUTBOUND, SAFETY_TOPIC, SCAN, TASK_SCORE,
};
pub use session::{CloseReason, Grant, Session, SessionCounters, SessionId, SessionReport, SESSION_SECONDS};

use crate::bus::schema::{is_builtin, Alert, Severity, TaskScore};
use crate::bus::{Envelope, Topic};
use crate::safety::{Decision, SafetyVerdict};
use crate::slots::{Slot, SlotStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("slot is not booked")]
    SlotNotBooked,
    #[error("slot window does not contain the current time")]
    OutsideWindow,
    #[error("another session is active on this testbed")]
    TestbedBusy,
    #[error("unknown or revoked token")]
    AuthFailed,
    #[error("session has expired")]
    Expired,
    #[error("{topic}: {reason}")]
    PermissionDenied { topic: String, reason: &'static str },
    #[error("{topic} carries {expected}, not {got}")]
    WrongSchema {
        topic: String,
        expected: &'static str,
        got: String,
    },
    #[error("session {0} not found")]
    NoSuchSession(SessionId),
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error("latency profile values must be finite and non-negative")]
    InvalidProfile,
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::SlotNotBooked => "SLOT_NOT_BOOKED",
            GatewayError::OutsideWindow => "OUTSIDE_WINDOW",
            GatewayError::TestbedBusy => "TESTBED_BUSY",
            GatewayError::AuthFailed => "AUTH_FAILED",
            GatewayError::Expired => "EXPIRED",
            GatewayError::PermissionDenied { .. } => "PERMISSION_DENIED",
            GatewayError::WrongSchema { .. } => "SCHEMA_VIOLATION",
            GatewayError::NoSuchSession(_) => "NOT_FOUND",
            GatewayError::SessionClosed(_) => "SESSION_CLOSED",
            GatewayError::InvalidProfile => "INVALID_PROFILE",
        }
    }
}

/// Where an authorized student publish goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Onto a robot topic, through the delay line and the safety check.
    Robot(&'static Remap),
    /// Stays inside the namespace; the broker routes it directly.
    Local,
}

/// A delayed frame whose time has come.
#[derive(Debug, Clone, PartialEq)]
pub enum Due {
    /// Already renamed onto the robot topic; still needs a safety verdict.
    Inbound {
        session: SessionId,
        remap: &'static Remap,
        env: Envelope,
    },
    /// Renamed into the session namespace, ready to publish.
    Outbound { session: SessionId, env: Envelope },
}

impl Due {
    pub fn session(&self) -> SessionId {
        match self {
            Due::Inbound { session, .. } | Due::Outbound { session, .. } => *session,
        }
    }
}

#[derive(Debug)]
struct Entry {
    session: Session,
    counts: SessionCounters,
    report: Option<SessionReport>,
}

pub struct Gateway {
    sessions: BTreeMap<SessionId, Entry>,
    tokens: HashMap<String, SessionId>,
    active: Option<SessionId>,
    line: DelayLine<(SessionId, Topic), Due>,
    rng: ChaCha8Rng,
    next_id: SessionId,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::with_rng(ChaCha8Rng::from_os_rng())
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reproducible tokens and latency draws.
    pub fn seeded(seed: u64) -> Self {
        Self::with_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(rng: ChaCha8Rng) -> Self {
        Gateway {
            sessions: BTreeMap::new(),
            tokens: HashMap::new(),
            active: None,
            line: DelayLine::new(),
            rng,
            next_id: 1,
        }
    }

    pub fn open_session(&mut self, slot: &Slot, mode: SessionMode, now_us: u64) -> Result<Session, GatewayError> {
        self.open_session_with(
            slot,
            mode,
            LatencyProfile::for_mode(mode),
            PermissionProfile::for_mode(mode),
            now_us,
        )
    }

    /// Opens with explicit profiles. The session ends an hour after opening or
    /// at the end of the slot, whichever comes first.
    pub fn open_session_with(
        &mut self,
        slot: &Slot,
        mode: SessionMode,
        latency: LatencyProfile,
        permissions: PermissionProfile,
        now_us: u64,
    ) -> Result<Session, GatewayError> {
        if slot.status != SlotStatus::Booked {
            return Err(GatewayError::SlotNotBooked);
        }
        let team_id = slot.team_id.clone().ok_or(GatewayError::SlotNotBooked)?;
        let start_us = slot.start.timestamp_micros();
        let end_us = slot.end().timestamp_micros();
        let now = i64::try_from(now_us).unwrap_or(i64::MAX);
        if now < start_us || now >= end_us {
            return Err(GatewayError::OutsideWindow);
        }
        if self.active.is_some() {
            return Err(GatewayError::TestbedBusy);
        }
        if !latency.is_valid() {
            return Err(GatewayError::InvalidProfile);
        }
        let mut raw = [0u8; 16];
        self.rng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let id = self.next_id;
        self.next_id += 1;
        let namespace = Topic::new(format!("/s/{team_id}")).expect("team ids are valid topic segments");
        let session = Session {
            id,
            team_id,
            slot_id: slot.id,
            token: Some(token.clone()),
            mode,
            namespace,
            latency,
            permissions,
            opened_at_us: now_us,
            expires_at_us: (now_us + SESSION_SECONDS * 1_000_000).min(end_us as u64),
        };
        self.tokens.insert(token, id);
        self.sessions.insert(
            id,
            Entry {
                session: session.redacted(),
                counts: SessionCounters::default(),
                report: None,
            },
        );
        self.active = Some(id);
        Ok(session)
    }

    pub fn authenticate(&self, token: &str, now_us: u64) -> Result<Grant, GatewayError> {
        let id = self.tokens.get(token).ok_or(GatewayError::AuthFailed)?;
        let entry = &self.sessions[id];
        match &entry.report {
            Some(r) if r.reason == Some(CloseReason::Expired) => Err(GatewayError::Expired),
            Some(_) => Err(GatewayError::AuthFailed),
            None if now_us >= entry.session.expires_at_us => Err(GatewayError::Expired),
            None => Ok(Grant::from(&entry.session)),
        }
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.get(&id).map(|e| &e.session)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values().map(|e| &e.session)
    }

    pub fn active(&self) -> Option<&Session> {
        self.active.and_then(|id| self.session(id))
    }

    pub fn is_open(&self, id: SessionId) -> bool {
        self.sessions.get(&id).is_some_and(|e| e.report.is_none())
    }

    fn live(&mut self, id: SessionId, now_us: u64) -> Result<&mut Entry, GatewayError> {
        let entry = self.sessions.get_mut(&id).ok_or(GatewayError::NoSuchSession(id))?;
        if entry.report.is_some() {
            return Err(GatewayError::SessionClosed(id));
        }
        if now_us >= entry.session.expires_at_us {
            entry.counts.denied += 1;
            return Err(GatewayError::Expired);
        }
        Ok(entry)
    }

    fn relative<'t>(entry: &mut Entry, topic: &'t Topic) -> Result<&'t str, GatewayError> {
        match topic.strip_namespace(&entry.session.namespace) {
            Some(rel) => Ok(rel),
            None => {
                entry.counts.denied += 1;
                Err(GatewayError::PermissionDenied {
                    topic: topic.to_string(),
                    reason: "outside the session namespace",
                })
            }
        }
    }

    pub fn authorize_pub(
        &mut self,
        id: SessionId,
        topic: &Topic,
        msg_type: &str,
        now_us: u64,
    ) -> Result<Route, GatewayError> {
        let entry = self.live(id, now_us)?;
        let rel = Self::relative(entry, topic)?;
        if !entry.session.permissions.may_publish(rel) {
            entry.counts.denied += 1;
            return Err(GatewayError::PermissionDenied {
                topic: topic.to_string(),
                reason: "not in allowed_pub",
            });
        }
        if let Some(remap) = inbound_remap(rel) {
            if msg_type != remap.msg_type {
                entry.counts.denied += 1;
                return Err(GatewayError::WrongSchema {
                    topic: topic.to_string(),
                    expected: remap.msg_type,
                    got: msg_type.to_owned(),
                });
            }
            return Ok(Route::Robot(remap));
        }
        if !entry.session.permissions.allow_arbitrary_schemas && !is_builtin(msg_type) {
            entry.counts.denied += 1;
            return Err(GatewayError::PermissionDenied {
                topic: topic.to_string(),
                reason: "custom message types are not allowed in this mode",
            });
        }
        Ok(Route::Local)
    }

    pub fn authorize_sub(&mut self, id: SessionId, topic: &Topic, now_us: u64) -> Result<(), GatewayError> {
        let entry = self.live(id, now_us)?;
        let rel = Self::relative(entry, topic)?;
        if entry.session.permissions.may_subscribe(rel) {
            Ok(())
        } else {
            entry.counts.denied += 1;
            Err(GatewayError::PermissionDenied {
                topic: topic.to_string(),
                reason: "not in allowed_sub",
            })
        }
    }

    /// Accepts a student PUB. Robot-bound frames are renamed and scheduled;
    /// the return value is their release time. Scratch traffic returns `None`
    /// and is left to the broker.
    pub fn relay_inbound(&mut self, id: SessionId, env: &Envelope, now_us: u64) -> Result<Option<u64>, GatewayError> {
        let route = self.authorize_pub(id, &env.topic, &env.msg_type, now_us)?;
        let Route::Robot(remap) = route else {
            return Ok(None);
        };
        let entry = self.sessions.get_mut(&id).expect("authorized session exists");
        entry.counts.inbound += 1;
        let lat = entry.session.latency;
        let robot = Topic::new(remap.robot).expect("remap targets are valid");
        let delay = sample_delay_us(lat.data_mean, lat.data_jitter_sigma, &mut self.rng);
        let renamed = env.with_topic(robot.clone());
        let due = self.line.push(
            (id, robot),
            now_us,
            delay,
            Due::Inbound {
                session: id,
                remap,
                env: renamed,
            },
        );
        Ok(Some(due))
    }

    /// Offers a robot frame to the active session. Camera frames take the
    /// camera delay, everything else the data delay.
    pub fn relay_outbound(&mut self, env: &Envelope, now_us: u64) -> Option<u64> {
        let id = self.active?;
        let remap = outbound_remap(env.topic.as_str())?;
        let entry = self.sessions.get_mut(&id)?;
        if entry.report.is_some() || now_us >= entry.session.expires_at_us {
            return None;
        }
        if !entry.session.permissions.may_subscribe(remap.relative) {
            return None;
        }
        let lat = entry.session.latency;
        let mean = if remap.robot == CAMERA_FRAME {
            lat.camera_delay
        } else {
            lat.data_mean
        };
        let topic = entry.session.namespace.join(remap.relative).expect("remap names are valid");
        entry.counts.outbound += 1;
        let delay = sample_delay_us(mean, lat.data_jitter_sigma, &mut self.rng);
        let renamed = env.with_topic(topic.clone());
        Some(self.line.push(
            (id, topic),
            now_us,
            delay,
            Due::Outbound {
                session: id,
                env: renamed,
            },
        ))
    }

    /// Everything due by `now`, in release order.
    pub fn poll_due(&mut self, now_us: u64) -> Vec<Due> {
        self.line.pop_due(now_us).into_iter().map(|(_, d)| d).collect()
    }

    pub fn next_due(&self) -> Option<u64> {
        self.line.next_due()
    }

    pub fn pending(&self) -> usize {
        self.line.len()
    }

    /// Counts a verdict. CLAMP and BLOCK come back as an alert for the
    /// session's safety topic.
    pub fn record_verdict(&mut self, id: SessionId, verdict: &SafetyVerdict) -> Option<(Topic, Alert)> {
        let entry = self.sessions.get_mut(&id)?;
        *entry.counts.verdicts.entry(verdict.decision).or_default() += 1;
        *entry.counts.verdict_codes.entry(verdict.code.to_string()).or_default() += 1;
        let severity = match verdict.decision {
            Decision::Allow => return None,
            Decision::Clamp => Severity::Info,
            Decision::Block => Severity::Warn,
        };
        let topic = entry.session.namespace.join(SAFETY_TOPIC).expect("valid");
        Some((
            topic,
            Alert {
                severity,
                code: verdict.code.to_string(),
                detail: verdict.detail.clone(),
            },
        ))
    }

    /// Open sessions whose time is up.
    pub fn expired(&self, now_us: u64) -> Vec<SessionId> {
        self.sessions
            .iter()
            .filter(|(_, e)| e.report.is_none() && now_us >= e.session.expires_at_us)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Revokes the token, discards undelivered frames and freezes the report.
    pub fn close_session(
        &mut self,
        id: SessionId,
        reason: CloseReason,
        now_us: u64,
        score: Option<TaskScore>,
    ) -> Result<SessionReport, GatewayError> {
        let entry = self.sessions.get_mut(&id).ok_or(GatewayError::NoSuchSession(id))?;
        if entry.report.is_some() {
            return Err(GatewayError::SessionClosed(id));
        }
        let closed_at = now_us.min(entry.session.expires_at_us).max(entry.session.opened_at_us);
        let report = build_report(entry, Some(reason), Some(closed_at), score);
        entry.report = Some(report.clone());
        if self.active == Some(id) {
            self.active = None;
        }
        self.line.retain(|d| d.session() != id);
        Ok(report)
    }

    /// Frozen report for a closed session, running totals for an open one.
    pub fn report(&self, id: SessionId, now_us: u64) -> Option<SessionReport> {
        let entry = self.sessions.get(&id)?;
        Some(match &entry.report {
            Some(r) => r.clone(),
            None => {
                let mut r = build_report(entry, None, None, None);
                r.duration_s = now_us.saturating_sub(entry.session.opened_at_us) as f64 * 1e-6;
                r
            }
        })
    }
}

fn build_report(
    entry: &Entry,
    reason: Option<CloseReason>,
    closed_at_us: Option<u64>,
    score: Option<TaskScore>,
) -> SessionReport {
    let s = &entry.session;
    SessionReport {
        session_id: s.id,
        team_id: s.team_id.to_string(),
        slot_id: s.slot_id,
        mode: s.mode,
        reason,
        opened_at_us: s.opened_at_us,
        closed_at_us,
        duration_s: closed_at_us.map_or(0.0, |c| (c - s.opened_at_us) as f64 * 1e-6),
        counts: entry.counts.clone(),
        score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::schema::{LaserScan, Twist};
    use crate::safety::ReasonCode;
    use crate::slots::TeamId;
    use chrono::DateTime;

    const T0: u64 = 1_800_000_000_000_000;

    fn slot() -> Slot {
        Slot {
            id: 7,
            start: DateTime::from_timestamp_micros(T0 as i64).unwrap(),
            duration_s: 3600,
            status: SlotStatus::Booked,
            team_id: Some(TeamId::new("t01").unwrap()),
            join_link: Some("x".into()),
        }
    }

    fn topic(s: &str) -> Topic {
        Topic::new(s).unwrap()
    }

    fn twist_env(t: &str, seq: u64) -> Envelope {
        Envelope::publish(topic(t), seq, 0, &Twist { vx: 0.1, wz: 0.0 })
    }

    #[test]
    fn open_rules() {
        let mut gw = Gateway::seeded(0);
        let mut draft = slot();
        draft.status = SlotStatus::Activated;
        assert_eq!(gw.open_session(&draft, SessionMode::StudentSide, T0), Err(GatewayError::SlotNotBooked));
        assert_eq!(gw.open_session(&slot(), SessionMode::StudentSide, T0 - 1), Err(GatewayError::OutsideWindow));
        let s = gw.open_session(&slot(), SessionMode::StudentSide, T0 + 10).unwrap();
        assert_eq!(s.expires_at_us, T0 + 3_600_000_000);
        assert_eq!(s.namespace.as_str(), "/s/t01");
        assert_eq!(s.token.as_ref().unwrap().len(), 32);
        assert_eq!(gw.open_session(&slot(), SessionMode::StudentSide, T0 + 20), Err(GatewayError::TestbedBusy));
    }

    #[test]
    fn truncated_near_window_end() {
        let mut gw = Gateway::seeded(0);
        let end = T0 + 3_600_000_000;
        let s = gw.open_session(&slot(), SessionMode::HostSide, end - 1_000_000).unwrap();
        assert_eq!(s.expires_at_us, end);
    }

    #[test]
    fn auth_and_expiry() {
        let mut gw = Gateway::seeded(1);
        let s = gw.open_session(&slot(), SessionMode::StudentSide, T0).unwrap();
        let token = s.token.unwrap();
        assert_eq!(gw.authenticate(&token, T0).unwrap().namespace.as_str(), "/s/t01");
        assert_eq!(gw.authenticate("00", T0), Err(GatewayError::AuthFailed));
        assert_eq!(gw.authenticate(&token, s.expires_at_us), Err(GatewayError::Expired));
        let late = twist_env("/s/t01/cmd_vel", 1);
        assert_eq!(gw.relay_inbound(s.id, &late, s.expires_at_us), Err(GatewayError::Expired));
        assert_eq!(gw.expired(s.expires_at_us), vec![s.id]);
        gw.close_session(s.id, CloseReason::Expired, s.expires_at_us, None).unwrap();
        assert_eq!(gw.authenticate(&token, T0), Err(GatewayError::Expired));
        assert!(gw.active().is_none());
    }

    #[test]
    fn remap_and_permissions() {
        let mut gw = Gateway::seeded(2);
        let s = gw.open_session(&slot(), SessionMode::HostSide, T0).unwrap();
        let env = twist_env("/s/t01/cmd_vel", 1);
        assert_eq!(gw.relay_inbound(s.id, &env, T0), Ok(Some(T0)));
        let due = gw.poll_due(T0);
        let [Due::Inbound { env: out, remap, .. }] = due.as_slice() else { panic!("{due:?}") };
        assert_eq!(out.topic.as_str(), "/rover/cmd_vel");
        assert_eq!(remap.robot, CMD_VEL);
        assert_eq!((&out.payload, out.seq, &out.msg_type), (&env.payload, env.seq, &env.msg_type));

        let direct = twist_env("/rover/cmd_vel", 2);
        assert!(matches!(gw.relay_inbound(s.id, &direct, T0), Err(GatewayError::PermissionDenied { .. })));
        let other = twist_env("/s/t02/cmd_vel", 3);
        assert!(matches!(gw.relay_inbound(s.id, &other, T0), Err(GatewayError::PermissionDenied { .. })));
        let wrong = Envelope::publish(topic("/s/t01/cmd_vel"), 4, 0, &LaserScan {
            angle_min: 0.0,
            angle_increment: 0.0,
            range_max: 1.0,
            ranges: vec![],
        });
        assert!(matches!(gw.relay_inbound(s.id, &wrong, T0), Err(GatewayError::WrongSchema { .. })));
        assert_eq!(gw.authorize_pub(s.id, &topic("/s/t01/ext/notes"), "Twist", T0), Ok(Route::Local));
        assert!(gw.authorize_pub(s.id, &topic("/s/t01/ext/notes"), "MyType", T0).is_err());
        assert!(gw.authorize_sub(s.id, &topic("/s/t01/scan"), T0).is_ok());
        assert!(gw.authorize_sub(s.id, &topic("/rover/scan"), T0).is_err());
        assert_eq!(gw.report(s.id, T0).unwrap().counts.denied, 5);
    }

    #[test]
    fn outbound_delays() {
        let mut gw = Gateway::seeded(3);
        let s = gw.open_session(&slot(), SessionMode::StudentSide, T0).unwrap();
        let scan = Envelope::publish(topic(SCAN), 1, T0, &LaserScan {
            angle_min: 0.0,
            angle_increment: 0.0,
            range_max: 1.0,
            ranges: vec![1.0],
        });
        let due = gw.relay_outbound(&scan, T0).unwrap();
        assert!(due > T0 && due < T0 + 600_000, "{}", due - T0);
        assert!(gw.relay_outbound(&Envelope::publish(topic("/rover/other"), 1, 0, &Twist::ZERO), T0).is_none());
        let out = gw.poll_due(due);
        let [Due::Outbound { env, session }] = out.as_slice() else { panic!() };
        assert_eq!((env.topic.as_str(), *session), ("/s/t01/scan", s.id));
    }

    #[test]
    fn close_drops_pending_and_reports() {
        let mut gw = Gateway::seeded(4);
        let s = gw.open_session(&slot(), SessionMode::StudentSide, T0).unwrap();
        gw.relay_inbound(s.id, &twist_env("/s/t01/cmd_vel", 1), T0).unwrap();
        gw.record_verdict(s.id, &SafetyVerdict::allow());
        let echo = gw.record_verdict(s.id, &SafetyVerdict::block(ReasonCode::CollisionAhead, "wall"));
        assert_eq!(echo.unwrap().0.as_str(), "/s/t01/safety");
        let r = gw.close_session(s.id, CloseReason::Operator, T0 + 5_000_000, None).unwrap();
        assert_eq!(gw.pending(), 0);
        assert_eq!(r.duration_s, 5.0);
        assert_eq!(r.counts.inbound, 1);
        assert_eq!(r.counts.verdicts[&Decision::Block], 1);
        assert_eq!(r.counts.verdict_codes["COLLISION_AHEAD"], 1);
        assert_eq!(gw.close_session(s.id, CloseReason::Operator, T0, None), Err(GatewayError::SessionClosed(s.id)));
        assert_eq!(gw.report(s.id, T0).unwrap(), r);
    }
}
