//! The testbed host: broker, gateway, safety monitor, simulator and slot
//! book in one sans-IO engine.
//!
//! Transports feed it authenticated client frames and wall-clock (or
//! simulated) time; it hands back encoded frames per client. Nothing here
//! blocks or spawns.

pub mod server;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bus::schema::{Alert, GripperCmd, JointCommand, Message, Severity, TaskScore, Twist};
use crate::bus::{decode_frame, Broker, ClientId, Envelope, FrameBytes, FrameError, Op, RouteError, Topic, SYS_NAMESPACE};
use crate::config::{ConfigError, PlatformConfig, SensorRates};
use crate::gateway::{
    is_robot_command_topic, CloseReason, Due, Gateway, GatewayError, Route, Session, SessionId, SessionMode,
    SessionReport, CAMERA_FRAME, CMD_VEL, GRIPPER, JOINT_CMD, JOINT_STATES, ODOM, SCAN, TASK_SCORE,
};
use crate::safety::{
    Authority, Command, EStopSource, EStopState, ReleaseRefused, SafetyAction, SafetyConfig, SafetyMonitor,
};
use crate::sim::{ArmModel, MountKind, SimConfig, SimEvent, World, WorldError, WorldSpec};
use crate::slots::{Slot, SlotError, SlotId, SlotService, SlotStatus, TeamId};

#[derive(Debug, Error)]
pub enum HostError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Slot(#[from] SlotError),
    #[error(transparent)]
    Release(#[from] ReleaseRefused),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Forbidden(String),
    #[error("client {0} is not connected")]
    UnknownClient(ClientId),
}

impl HostError {
    pub fn code(&self) -> &'static str {
        match self {
            HostError::Frame(e) => e.code(),
            HostError::Route(e) => e.code(),
            HostError::Gateway(e) => e.code(),
            HostError::Slot(e) => e.code(),
            HostError::Release(e) => e.code(),
            HostError::World(_) | HostError::Config(_) => "CONFIG",
            HostError::Forbidden(_) => "PERMISSION_DENIED",
            HostError::UnknownClient(_) => "UNKNOWN_CLIENT",
        }
    }
}

/// Who is behind a bus connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Principal {
    Operator,
    Student { session_id: SessionId },
}

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub world: WorldSpec,
    pub arm: ArmModel,
    pub sim: SimConfig,
    pub safety: SafetyConfig,
    pub sensors: SensorRates,
    pub operator_token: String,
    pub seed: Option<u64>,
}

impl HostConfig {
    /// Bundled greenhouse, UR5, default sim and safety settings.
    pub fn greenhouse(operator_token: &str) -> Self {
        Self::for_world(crate::sim::bundled::greenhouse(), operator_token)
    }

    pub fn for_world(world: WorldSpec, operator_token: &str) -> Self {
        let arm = crate::sim::bundled::ur5();
        HostConfig {
            safety: SafetyConfig::for_arm(&arm),
            world,
            arm,
            sim: SimConfig::default(),
            sensors: SensorRates::default(),
            operator_token: operator_token.to_owned(),
            seed: None,
        }
    }

    pub fn from_platform(cfg: &PlatformConfig, operator_token: &str) -> Result<Self, ConfigError> {
        let arm = cfg.arm_model()?;
        Ok(HostConfig {
            world: cfg.world_spec()?,
            safety: cfg.safety_config(&arm)?,
            arm,
            sim: cfg.sim,
            sensors: cfg.sensors,
            operator_token: operator_token.to_owned(),
            seed: cfg.seed,
        })
    }
}

/// Snapshot for the operator API.
#[derive(Debug, Clone, Serialize)]
pub struct HostStatus {
    pub now_us: u64,
    pub tick: u64,
    pub world: String,
    pub estop: EStopState,
    pub active_session: Option<Session>,
    /// Observed rate per monitored topic over the watchdog window, Hz.
    pub topic_rates: BTreeMap<String, f64>,
    pub clients: usize,
}

/// Topics the watchdog expects from the robots.
pub const MONITORED: [&str; 3] = [SCAN, ODOM, JOINT_STATES];

struct Schedule {
    scan: u64,
    odom: u64,
    joints: u64,
    frame: u64,
    score: u64,
}

fn period_ticks(hz: f64, tick_s: f64) -> u64 {
    if hz <= 0.0 {
        u64::MAX
    } else {
        ((1.0 / hz) / tick_s).round().max(1.0) as u64
    }
}

pub struct Host {
    config: HostConfig,
    broker: Broker,
    gateway: Gateway,
    safety: SafetyMonitor,
    world: World,
    slots: Arc<SlotService>,
    clients: HashMap<ClientId, Principal>,
    kicked: Vec<ClientId>,
    seqs: HashMap<Topic, u64>,
    schedule: Schedule,
    tick_us: u64,
    host_tick: u64,
    now_us: u64,
    next_tick_us: u64,
    poll_us: u64,
    next_poll_us: u64,
    robot_log: Vec<(u64, Envelope)>,
    log_robot_commands: bool,
}

fn topic(s: &str) -> Topic {
    Topic::new(s).expect("static topic names are valid")
}

impl Host {
    pub fn new(config: HostConfig, slots: Arc<SlotService>, now_us: u64) -> Result<Self, HostError> {
        let mut safety_cfg = config.safety.clone();
        if config.world.arm_mount.kind == MountKind::Fixed {
            safety_cfg.rover_body = None;
        }
        safety_cfg
            .validate()
            .map_err(|e| HostError::Config(ConfigError::Invalid(e.to_string())))?;
        let world = World::new(config.world.clone(), config.arm.clone(), config.sim)?;
        let mut safety = SafetyMonitor::new(safety_cfg, config.arm.clone());
        for t in MONITORED {
            safety.monitor_topic(t, now_us);
        }
        let tick_s = config.sim.tick_s;
        let r = config.sensors;
        let tick_us = (tick_s * 1e6).round() as u64;
        let poll_us = (safety.config().watchdog_poll * 1e6).round() as u64;
        Ok(Host {
            schedule: Schedule {
                scan: period_ticks(r.scan_hz, tick_s),
                odom: period_ticks(r.odom_hz, tick_s),
                joints: period_ticks(r.joint_states_hz, tick_s),
                frame: period_ticks(r.frame_hz, tick_s),
                score: period_ticks(r.score_hz, tick_s),
            },
            gateway: match config.seed {
                Some(s) => Gateway::seeded(s),
                None => Gateway::new(),
            },
            broker: Broker::new(),
            safety,
            world,
            slots,
            clients: HashMap::new(),
            kicked: Vec::new(),
            seqs: HashMap::new(),
            tick_us,
            host_tick: 0,
            now_us,
            next_tick_us: now_us + tick_us,
            poll_us,
            next_poll_us: now_us + poll_us,
            robot_log: Vec::new(),
            log_robot_commands: false,
            config,
        })
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_spec(&self) -> &WorldSpec {
        &self.config.world
    }

    pub fn slots(&self) -> &Arc<SlotService> {
        &self.slots
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn safety(&self) -> &SafetyMonitor {
        &self.safety
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    /// Keeps a copy of every frame the host applies to a robot command topic.
    pub fn log_robot_commands(&mut self, on: bool) {
        self.log_robot_commands = on;
    }

    pub fn robot_command_log(&self) -> &[(u64, Envelope)] {
        &self.robot_log
    }

    pub fn status(&self) -> HostStatus {
        HostStatus {
            now_us: self.now_us,
            tick: self.host_tick,
            world: self.config.world.name.clone(),
            estop: self.safety.estop(),
            active_session: self.gateway.active().cloned(),
            topic_rates: self
                .safety
                .watchdog()
                .topics()
                .map(|t| (t.to_owned(), self.safety.watchdog().rate(t, self.now_us).unwrap_or(0.0)))
                .collect(),
            clients: self.broker.client_count(),
        }
    }

    // ---- connections -------------------------------------------------

    /// Checks an `AUTH` token and returns the principal and its grant.
    pub fn authenticate(&self, token: &str) -> Result<(Principal, serde_json::Value), HostError> {
        if !self.config.operator_token.is_empty() && token == self.config.operator_token {
            return Ok((Principal::Operator, serde_json::json!({ "role": "operator" })));
        }
        let grant = self.gateway.authenticate(token, self.now_us)?;
        let value = serde_json::to_value(&grant).expect("grant serializes");
        Ok((
            Principal::Student {
                session_id: grant.session_id,
            },
            value,
        ))
    }

    pub fn connect(&mut self, principal: Principal) -> ClientId {
        let id = self.broker.connect();
        self.clients.insert(id, principal);
        id
    }

    pub fn disconnect(&mut self, id: ClientId) {
        self.broker.disconnect(id);
        self.clients.remove(&id);
    }

    /// Transport failure on a connection.
    pub fn mark_dead(&mut self, id: ClientId) {
        self.broker.mark_dead(id);
    }

    pub fn principal(&self, id: ClientId) -> Option<Principal> {
        self.clients.get(&id).copied()
    }

    /// Connections whose session ended; the transport should close them.
    pub fn take_kicked(&mut self) -> Vec<ClientId> {
        std::mem::take(&mut self.kicked)
    }

    pub fn drain(&mut self, id: ClientId) -> Vec<FrameBytes> {
        self.broker.drain(id)
    }

    pub fn clients_with_output(&self) -> Vec<ClientId> {
        self.broker.clients_with_output()
    }

    /// Decodes and handles one line. Failures go back to the sender as an
    /// ERR frame and are also returned.
    pub fn handle_frame(&mut self, client: ClientId, line: &[u8]) -> Result<(), HostError> {
        let env = match decode_frame(line) {
            Ok(env) => env,
            Err(e) => {
                let e = HostError::from(e);
                self.send_error(client, topic(SYS_NAMESPACE), &e);
                return Err(e);
            }
        };
        let result = self.handle_envelope(client, &env);
        if let Err(e) = &result {
            self.send_error(client, env.topic.clone(), e);
        }
        result
    }

    fn send_error(&mut self, client: ClientId, t: Topic, e: &HostError) {
        let alert = Alert {
            severity: Severity::Warn,
            code: e.code().to_owned(),
            detail: e.to_string(),
        };
        self.broker.send_to(client, &Envelope::error(t, self.now_us, &alert));
    }

    pub fn handle_envelope(&mut self, client: ClientId, env: &Envelope) -> Result<(), HostError> {
        let principal = *self.clients.get(&client).ok_or(HostError::UnknownClient(client))?;
        let now = self.now_us;
        match principal {
            Principal::Operator => {
                if matches!(env.op, Op::Pub | Op::Adv)
                    && (env.topic.is_system() || is_robot_command_topic(env.topic.as_str()))
                {
                    return Err(HostError::Forbidden(format!(
                        "{} is published by the host only",
                        env.topic
                    )));
                }
                self.broker.route(client, env, now)?;
            }
            Principal::Student { session_id } => match env.op {
                Op::Adv => {
                    self.gateway.authorize_pub(session_id, &env.topic, &env.msg_type, now)?;
                    self.broker.route(client, env, now)?;
                }
                Op::Pub => {
                    let route = self.gateway.authorize_pub(session_id, &env.topic, &env.msg_type, now)?;
                    self.broker.route(client, env, now)?;
                    if let Route::Robot(_) = route {
                        let stamped = Envelope {
                            stamp_us: now,
                            ..env.clone()
                        };
                        self.gateway.relay_inbound(session_id, &stamped, now)?;
                        self.process_due(now);
                    }
                }
                Op::Sub => {
                    self.gateway.authorize_sub(session_id, &env.topic, now)?;
                    self.broker.route(client, env, now)?;
                }
                Op::Unsub | Op::Ping => {
                    self.broker.route(client, env, now)?;
                }
                Op::Pong | Op::Err => {}
            },
        }
        Ok(())
    }

    // ---- time ----------------------------------------------------------

    /// Runs every tick, delivery and watchdog poll up to `now_us`.
    pub fn advance_to(&mut self, now_us: u64) {
        while self.next_tick_us <= now_us {
            let t = self.next_tick_us;
            self.now_us = t;
            self.process_due(t);
            self.expire(t);
            self.step_world(t);
            while self.next_poll_us <= t {
                let at = self.next_poll_us;
                self.safety.poll(at);
                self.flush_safety(at);
                self.next_poll_us += self.poll_us;
            }
            self.next_tick_us += self.tick_us;
        }
        if now_us > self.now_us {
            self.now_us = now_us;
        }
        self.process_due(self.now_us);
        self.expire(self.now_us);
    }

    /// Time of the next scheduled host activity.
    pub fn next_wakeup(&self) -> u64 {
        let tick = self.next_tick_us;
        self.gateway.next_due().map_or(tick, |d| d.min(tick))
    }

    pub fn tick_us(&self) -> u64 {
        self.tick_us
    }

    fn next_seq(&mut self, t: &Topic) -> u64 {
        let s = self.seqs.entry(t.clone()).or_insert(0);
        *s += 1;
        *s
    }

    fn inject<T: Message>(&mut self, name: &str, msg: &T) -> Envelope {
        let t = topic(name);
        let seq = self.next_seq(&t);
        let env = Envelope::publish(t, seq, self.now_us, msg);
        self.broker.inject(&env, self.now_us);
        env
    }

    fn step_world(&mut self, t: u64) {
        self.world.step_tick();
        self.host_tick += 1;
        for ev in self.world.drain_events() {
            if let SimEvent::Collision { attempted, .. } = ev {
                let detail = format!("rover blocked at ({:.2}, {:.2})", attempted.x, attempted.y);
                self.safety.engage(EStopSource::CollisionGuard, t, &detail);
            }
        }
        self.flush_safety(t);
        let k = self.host_tick;
        let s = &self.schedule;
        let (scan, odom, joints, frame, score) = (
            k % s.scan == 0,
            k % s.odom == 0,
            k % s.joints == 0,
            k % s.frame == 0,
            k % s.score == 0,
        );
        if scan {
            let msg = self.world.scan();
            let env = self.inject(SCAN, &msg);
            self.safety.observe(SCAN, t);
            self.safety.observe_scan(msg, t);
            self.gateway.relay_outbound(&env, t);
        }
        if odom {
            let msg = self.world.rover().odom;
            let env = self.inject(ODOM, &msg);
            self.safety.observe(ODOM, t);
            self.gateway.relay_outbound(&env, t);
        }
        if joints {
            let msg = self.world.joint_state();
            let env = self.inject(JOINT_STATES, &msg);
            self.safety.observe(JOINT_STATES, t);
            self.gateway.relay_outbound(&env, t);
        }
        if frame {
            let msg = self.world.render_snapshot();
            let env = self.inject(CAMERA_FRAME, &msg);
            self.gateway.relay_outbound(&env, t);
        }
        if score {
            let msg = self.world.evaluate_task();
            let env = self.inject(TASK_SCORE, &msg);
            self.gateway.relay_outbound(&env, t);
        }
    }

    fn process_due(&mut self, now: u64) {
        for due in self.gateway.poll_due(now) {
            match due {
                Due::Outbound { env, .. } => {
                    self.broker.inject(&env, now);
                }
                Due::Inbound { session, remap, env } => self.apply_inbound(session, remap.robot, env, now),
            }
        }
    }

    fn apply_inbound(&mut self, session: SessionId, robot: &str, env: Envelope, now: u64) {
        let cmd = match robot {
            CMD_VEL => env.payload.decode::<Twist>().map(Command::CmdVel),
            JOINT_CMD => env.payload.decode::<JointCommand>().map(Command::Joint),
            GRIPPER => env.payload.decode::<GripperCmd>().map(Command::Gripper),
            _ => return,
        };
        let Ok(cmd) = cmd else {
            return;
        };
        let verdict = self.safety.check(&cmd, now);
        // Alerts raised by the check go out before the verdict takes effect.
        self.flush_safety(now);
        if let Some((t, alert)) = self.gateway.record_verdict(session, &verdict) {
            let seq = self.next_seq(&t);
            self.broker.inject(&Envelope::publish(t, seq, now, &alert), now);
        }
        let Some(effective) = verdict.effective(cmd) else {
            return;
        };
        let out = if effective == cmd {
            env
        } else {
            let payload = match effective {
                Command::CmdVel(c) => crate::bus::Payload::encode(&c),
                Command::Joint(c) => crate::bus::Payload::encode(&c),
                Command::Gripper(c) => crate::bus::Payload::encode(&c),
            };
            Envelope { payload, ..env }
        };
        self.apply_command(effective);
        if self.log_robot_commands {
            self.robot_log.push((now, out.clone()));
        }
        self.broker.inject(&out, now);
    }

    fn apply_command(&mut self, cmd: Command) {
        match cmd {
            Command::CmdVel(c) => self.world.apply_cmd_vel(c),
            Command::Joint(c) => self.world.apply_joint_cmd(c),
            Command::Gripper(c) => {
                self.world.apply_gripper(c);
            }
        }
    }

    fn inject_stop(&mut self) {
        self.world.halt();
        let env = self.inject(CMD_VEL, &Twist::ZERO);
        let env2 = self.inject(JOINT_CMD, &JointCommand::STOP);
        if self.log_robot_commands {
            self.robot_log.push((self.now_us, env));
            self.robot_log.push((self.now_us, env2));
        }
    }

    fn flush_safety(&mut self, now: u64) {
        for action in self.safety.take_actions() {
            match action {
                SafetyAction::Alert(a) => {
                    self.broker.publish_alert(&a.to_alert(), a.stamp_us.max(now));
                }
                SafetyAction::InjectStop => self.inject_stop(),
            }
        }
    }

    fn expire(&mut self, now: u64) {
        for id in self.gateway.expired(now) {
            let _ = self.close_session(id, CloseReason::Expired);
        }
    }

    // ---- operator API --------------------------------------------------

    /// Opens a session on a booked slot and resets the testbed for it.
    pub fn open_session(&mut self, slot_id: SlotId, mode: SessionMode) -> Result<Session, HostError> {
        let slot = self.slots.get(slot_id)?;
        let session = self.gateway.open_session(&slot, mode, self.now_us)?;
        self.world = World::new(self.config.world.clone(), self.config.arm.clone(), self.config.sim)?;
        Ok(session)
    }

    /// Ends a session: revokes its token, stops the robots, drops its
    /// connections and marks the slot completed.
    pub fn close_session(&mut self, id: SessionId, reason: CloseReason) -> Result<SessionReport, HostError> {
        let score: TaskScore = self.world.evaluate_task();
        let report = self.gateway.close_session(id, reason, self.now_us, Some(score))?;
        self.inject_stop();
        let mut kicked: Vec<ClientId> = self
            .clients
            .iter()
            .filter(|(_, p)| **p == Principal::Student { session_id: id })
            .map(|(c, _)| *c)
            .collect();
        kicked.sort();
        for c in &kicked {
            self.send_error(
                *c,
                topic(SYS_NAMESPACE),
                &HostError::Gateway(GatewayError::SessionClosed(id)),
            );
        }
        self.kicked.extend(kicked);
        if reason != CloseReason::SlotDeactivated {
            if let Ok(slot) = self.slots.get(report.slot_id) {
                if slot.status == SlotStatus::Booked {
                    let _ = self.slots.complete(slot.id);
                }
            }
        }
        Ok(report)
    }

    pub fn report(&self, id: SessionId) -> Option<SessionReport> {
        let mut r = self.gateway.report(id, self.now_us)?;
        if r.reason.is_none() {
            r.score = Some(self.world.evaluate_task());
        }
        Some(r)
    }

    /// Withdraws a slot, closing its session first if one is running.
    pub fn deactivate_slot(&mut self, slot_id: SlotId) -> Result<Slot, HostError> {
        let running = self
            .gateway
            .active()
            .filter(|s| s.slot_id == slot_id)
            .map(|s| s.id);
        if let Some(id) = running {
            self.close_session(id, CloseReason::SlotDeactivated)?;
        }
        Ok(self.slots.deactivate(slot_id)?)
    }

    pub fn engage_estop(&mut self, source: EStopSource, detail: &str) -> EStopState {
        let now = self.now_us;
        let state = self.safety.engage(source, now, detail);
        self.flush_safety(now);
        state
    }

    pub fn release_estop(&mut self, authority: Authority) -> Result<EStopState, HostError> {
        let now = self.now_us;
        let result = self.safety.release(authority, now);
        self.flush_safety(now);
        Ok(result?)
    }

    pub fn estop(&self) -> EStopState {
        self.safety.estop()
    }
}

/// Builds the engine described by a platform file, with its slot book.
pub fn host_from_config(cfg: &PlatformConfig, operator_token: &str, now_us: u64) -> Result<Host, HostError> {
    let slots = match &cfg.server.slot_log {
        Some(p) => SlotService::open(p)?,
        None => SlotService::in_memory(),
    };
    Host::new(HostConfig::from_platform(cfg, operator_token)?, Arc::new(slots), now_us)
}

/// A host with one registered team, a booked slot starting at `now_us` and
/// an open session for it. The usual starting point for local runs.
pub fn demo_session(
    config: HostConfig,
    team: &TeamId,
    mode: SessionMode,
    now_us: u64,
) -> Result<(Host, Session), HostError> {
    let slots = Arc::new(SlotService::seeded(config.seed.unwrap_or(0)));
    slots.register_team(team.clone(), team.as_str())?;
    let start = chrono::DateTime::from_timestamp_micros(now_us as i64).unwrap_or_default();
    let slot = slots.create_slot(start, crate::slots::DEFAULT_SLOT_SECONDS)?;
    slots.activate(slot.id)?;
    slots.book(slot.id, team)?;
    let mut host = Host::new(config, slots, now_us)?;
    let session = host.open_session(slot.id, mode)?;
    Ok((host, session))
}
