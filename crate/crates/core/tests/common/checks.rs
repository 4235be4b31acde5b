//! Criterion checks used by both the focused test files and the acceptance
//! runner. Each returns an [`Outcome`] instead of panicking so the runner can
//! report every criterion.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telelab::bus::schema::{GripperCmd, JointCommand, JointMode, LaserScan, Severity, Twist};
use telelab::bus::{Envelope, Op};
use telelab::gateway::{SessionMode, CMD_VEL, JOINT_CMD, SCAN};
use telelab::host::{demo_session, HostConfig, Principal};
use telelab::safety::{
    check_cmd_vel, Command, Decision, EStopSource, ReasonCode, SafetyAction, SafetyConfig, SafetyMonitor, Stamped,
};
use telelab::sim::bundled;
use telelab::slots::TeamId;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub ok: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            ok,
            detail: detail.into(),
        }
    }
}

pub const T0: u64 = 1_800_000_000_000_000;

// ---- safety ---------------------------------------------------------------

/// Smallest range inside the cone, computed from scratch with `atan2`
/// wrapping. NaN counts as contact.
pub fn cone_min_oracle(scan: &LaserScan, half: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (k, &r) in scan.ranges.iter().enumerate() {
        let a = scan.angle_min + k as f64 * scan.angle_increment;
        let wrapped = a.sin().atan2(a.cos());
        if wrapped.abs() <= half {
            let r = if r.is_nan() { 0.0 } else { r };
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
    }
    best
}

fn random_scan(rng: &mut ChaCha8Rng, cfg: &SafetyConfig) -> LaserScan {
    let n = rng.random_range(4..=400);
    let angle_min = if rng.random_bool(0.5) { -PI } else { rng.random_range(-PI..PI) };
    let range_max = rng.random_range(2.0..12.0);
    let mut ranges: Vec<f64> = (0..n)
        .map(|_| match rng.random_range(0..20) {
            0 => f64::NAN,
            1 => f64::INFINITY,
            2 => range_max,
            _ => rng.random_range(0.0..range_max),
        })
        .collect();
    // Half the cases get one beam inside the cone pulled below clearance.
    if rng.random_bool(0.5) {
        let inc = TAU / n as f64;
        let target = rng.random_range(-cfg.forward_cone..cfg.forward_cone);
        let k = ((target - angle_min).rem_euclid(TAU) / inc).round() as usize % n;
        ranges[k] = rng.random_range(0.0..cfg.min_clearance);
    }
    LaserScan {
        angle_min,
        angle_increment: TAU / n as f64,
        range_max,
        ranges,
    }
}

fn random_twist(rng: &mut ChaCha8Rng) -> Twist {
    let vx = match rng.random_range(0..10) {
        0 => 0.0,
        1 => -rng.random_range(0.0..2.0),
        2 => f64::MIN_POSITIVE,
        _ => rng.random_range(0.0..2.0),
    };
    let wz = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-3.0..3.0) };
    Twist { vx, wz }
}

fn random_command(rng: &mut ChaCha8Rng) -> Command {
    match rng.random_range(0..3) {
        0 => Command::CmdVel(random_twist(rng)),
        1 => {
            let mode = if rng.random_bool(0.5) { JointMode::Position } else { JointMode::Velocity };
            let values = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            Command::Joint(JointCommand { mode, values })
        }
        _ => Command::Gripper(GripperCmd {
            engage: rng.random_bool(0.5),
        }),
    }
}

fn moves_forward(cmd: &Option<Command>) -> bool {
    matches!(cmd, Some(Command::CmdVel(t)) if t.vx > 0.0)
}

/// Randomized (scan, command) pairs through both the stateless check and
/// the monitor. Forward motion must never survive a cone minimum below
/// clearance.
pub fn safety_soundness(seed: u64, cases: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = bundled::ur5();
    let mut violations = Vec::new();
    let mut guarded = 0usize;
    for case in 0..cases {
        let mut cfg = SafetyConfig::for_arm(&arm);
        cfg.min_clearance = rng.random_range(0.05..1.0);
        cfg.forward_cone = rng.random_range(0.05..1.4);
        let scan = random_scan(&mut rng, &cfg);
        let now = 10_000_000;
        let age = if rng.random_bool(0.8) {
            rng.random_range(0..1_000_000)
        } else {
            rng.random_range(0..3_000_000)
        };
        let cmd = random_twist(&mut rng);
        let stamped = Stamped {
            value: scan.clone(),
            stamp_us: now - age,
        };
        let close = cone_min_oracle(&scan, cfg.forward_cone).is_some_and(|m| m < cfg.min_clearance);
        if cmd.vx > 0.0 && close {
            guarded += 1;
        }
        let v1 = check_cmd_vel(Some(&stamped), &cmd, now, &cfg);
        let mut monitor = SafetyMonitor::new(cfg.clone(), arm.clone());
        monitor.observe_scan(scan.clone(), now - age);
        let v2 = monitor.check(&Command::CmdVel(cmd), now);
        for v in [&v1, &v2] {
            let eff = v.effective(Command::CmdVel(cmd));
            let unsafe_allow = cmd.vx > 0.0 && close && (v.decision == Decision::Allow || moves_forward(&eff));
            if unsafe_allow && violations.len() < 5 {
                violations.push(format!("case {case}: {cmd:?} -> {:?} {:?}", v.decision, v.code));
            }
        }
    }
    Outcome::new(
        violations.is_empty() && guarded >= cases / 5,
        format!(
            "{cases} cases, {guarded} forward-and-obstructed, {} unsafe verdicts{}",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(": {}", violations.join("; ")) }
        ),
    )
}

/// With the e-stop engaged, no command of any kind has an effective form.
pub fn estop_blocks_all(seed: u64, cases: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = bundled::ur5();
    let cfg = SafetyConfig::for_arm(&arm);
    let mut passed = 0usize;
    for _ in 0..cases {
        let mut monitor = SafetyMonitor::new(cfg.clone(), arm.clone());
        let now = rng.random_range(1_000_000..100_000_000);
        let source = [EStopSource::Operator, EStopSource::Watchdog, EStopSource::CollisionGuard][rng.random_range(0..3)];
        monitor.engage(source, now - 1, "test");
        if rng.random_bool(0.7) {
            monitor.observe_scan(random_scan(&mut rng, &cfg), now);
        }
        for _ in 0..4 {
            let cmd = random_command(&mut rng);
            let v = monitor.check(&cmd, now);
            if v.effective(cmd).is_some() || v.code != ReasonCode::Estop {
                passed += 1;
            }
        }
    }
    Outcome::new(passed == 0, format!("{} commands while engaged, {passed} passed", cases * 4))
}

fn is_stop(env: &Envelope) -> bool {
    match env.topic.as_str() {
        CMD_VEL => env.payload.decode::<Twist>().is_ok_and(|t| t == Twist::ZERO),
        JOINT_CMD => env.payload.decode::<JointCommand>().is_ok_and(|j| j == JointCommand::STOP),
        _ => false,
    }
}

/// Student commands through the full host pipeline, including ones still in
/// the latency line when the e-stop engages. Only stop commands may reach
/// the robots afterwards.
pub fn estop_host_pipeline(seed: u64) -> Outcome {
    let mut cfg = HostConfig::greenhouse("op");
    cfg.seed = Some(seed);
    let team = TeamId::new("t01").unwrap();
    let (mut host, session) = demo_session(cfg, &team, SessionMode::StudentSide, T0).unwrap();
    host.log_robot_commands(true);
    let client = host.connect(Principal::Student { session_id: session.id });
    let ns = session.namespace.clone();
    let topics = [
        (ns.join("cmd_vel").unwrap(), "Twist"),
        (ns.join("joint_cmd").unwrap(), "JointCommand"),
        (ns.join("gripper").unwrap(), "GripperCmd"),
    ];
    for (t, ty) in &topics {
        host.handle_envelope(client, &Envelope::control(Op::Adv, t.clone(), *ty, 0, T0)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let engage_at = T0 + 3_000_000;
    let mut seq = 0;
    let mut now = T0;
    let mut sent = 0;
    let mut engaged_index = None;
    while now < T0 + 6_000_000 {
        now += rng.random_range(5_000..60_000);
        host.advance_to(now);
        if now >= engage_at && engaged_index.is_none() {
            engaged_index = Some(host.robot_command_log().len());
            host.engage_estop(EStopSource::Operator, "pressed");
        }
        seq += 1;
        let k = rng.random_range(0..3);
        let env = match k {
            0 => Envelope::publish(topics[0].0.clone(), seq, now, &Twist { vx: 0.3, wz: 0.2 }),
            1 => Envelope::publish(
                topics[1].0.clone(),
                seq,
                now,
                &JointCommand {
                    mode: JointMode::Velocity,
                    values: [0.1; 6],
                },
            ),
            _ => Envelope::publish(topics[2].0.clone(), seq, now, &GripperCmd { engage: true }),
        };
        if host.handle_envelope(client, &env).is_ok() {
            sent += 1;
        }
    }
    host.advance_to(now + 2_000_000);
    let before = engaged_index.unwrap_or(0);
    let log = host.robot_command_log();
    let leaked = log[before..].iter().filter(|(_, e)| !is_stop(e)).count();
    Outcome::new(
        leaked == 0 && before > 0 && host.estop().engaged,
        format!("{sent} commands sent, {before} applied before the stop, {leaked} applied after"),
    )
}

/// 10 Hz scans stop at a random instant; the first CRITICAL poll and the
/// e-stop must follow within one window plus two poll periods.
pub fn watchdog_drop(seed: u64, trials: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = bundled::ur5();
    let cfg = SafetyConfig::for_arm(&arm);
    let window = (cfg.watchdog_window * 1e6) as u64;
    let poll = (cfg.watchdog_poll * 1e6) as u64;
    let budget = window + 2 * poll;
    let mut worst = 0u64;
    let mut failures = Vec::new();
    for trial in 0..trials {
        let mut m = SafetyMonitor::new(cfg.clone(), arm.clone());
        m.monitor_topic(SCAN, 0);
        let phase = rng.random_range(0..100_000);
        let poll_phase = rng.random_range(0..poll);
        let drop_at = rng.random_range(2_000_000..6_000_000u64);
        let mut next_msg = phase;
        let mut next_poll = poll_phase;
        let mut critical_at = None;
        let mut early = false;
        while next_poll < drop_at + 3 * window {
            while next_msg <= next_poll && next_msg < drop_at {
                m.observe(SCAN, next_msg);
                next_msg += 100_000;
            }
            let alerts = m.poll(next_poll);
            if alerts.iter().any(|a| a.severity == Severity::Critical) {
                if next_poll < drop_at {
                    early = true;
                }
                critical_at.get_or_insert(next_poll);
            }
            if critical_at.is_some() {
                break;
            }
            next_poll += poll;
        }
        let actions = m.take_actions();
        let stop_injected = actions.iter().any(|a| matches!(a, SafetyAction::InjectStop));
        let estop = m.estop();
        let ok = match critical_at {
            Some(t) => {
                let lag = t - drop_at;
                worst = worst.max(lag);
                !early && lag <= budget && estop.engaged && estop.since_us == t && stop_injected
                    && estop.engaged_by == Some(EStopSource::Watchdog)
            }
            None => false,
        };
        if !ok && failures.len() < 3 {
            failures.push(format!("trial {trial}: drop {drop_at} critical {critical_at:?} early {early}"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{trials} drops, worst CRITICAL+e-stop lag {} ms (budget {} ms){}",
            worst / 1000,
            budget / 1000,
            if failures.is_empty() { String::new() } else { format!(": {}", failures.join("; ")) }
        ),
    )
}

// ---- latency --------------------------------------------------------------

#[derive(Debug, Default)]
pub struct DelayStats {
    pub count: usize,
    pub mean_ms: f64,
    pub order_violations: usize,
}

fn delay_stats(samples: &[(String, u64, u64, u64)]) -> DelayStats {
    // (topic, seq, sent, released), in release order.
    let mut last: std::collections::HashMap<&str, u64> = Default::default();
    let mut violations = 0;
    let mut total = 0u64;
    for (topic, seq, sent, released) in samples {
        total += released - sent;
        let prev = last.insert(topic.as_str(), *seq);
        if prev.is_some_and(|p| p >= *seq) {
            violations += 1;
        }
    }
    DelayStats {
        count: samples.len(),
        mean_ms: total as f64 / samples.len().max(1) as f64 / 1000.0,
        order_violations: violations,
    }
}

/// Drives a STUDENT_SIDE session's delay line on a simulated clock: `n`
/// student commands spread over three robot topics, `n` sensor frames over
/// three data topics and `n` camera frames. Returns (data, camera) stats.
pub fn student_side_delays(seed: u64, n: usize) -> (DelayStats, DelayStats) {
    use telelab::gateway::{Due, Gateway, JOINT_STATES, ODOM, CAMERA_FRAME};
    use telelab::sim::{SimConfig, World};

    let slots = telelab::slots::SlotService::seeded(seed);
    let team = TeamId::new("t01").unwrap();
    slots.register_team(team.clone(), "Alpha").unwrap();
    let start = chrono::DateTime::from_timestamp_micros(T0 as i64).unwrap();
    let slot = slots.create_slot(start, 3600).unwrap();
    slots.activate(slot.id).unwrap();
    let slot = slots.book(slot.id, &team).unwrap();
    let mut gw = Gateway::seeded(seed);
    let session = gw.open_session(&slot, SessionMode::StudentSide, T0).unwrap();
    let mut world = World::new(bundled::greenhouse(), bundled::ur5(), SimConfig::default()).unwrap();
    let scan = world.scan();
    let frame = world.render_snapshot();
    let ns = &session.namespace;
    let inbound = [ns.join("cmd_vel").unwrap(), ns.join("joint_cmd").unwrap(), ns.join("gripper").unwrap()];
    for t in &inbound {
        let ty = telelab::gateway::inbound_remap(t.as_str().rsplit('/').next().unwrap()).unwrap().msg_type;
        gw.authorize_pub(session.id, t, ty, T0).unwrap();
    }

    // Every topic runs at 10 Hz; the camera at 1 Hz.
    let period = 100_000u64;
    let mut events: Vec<(u64, usize)> = Vec::new();
    for k in 0..n {
        let stagger = (k % 3) as u64 * 7_000;
        events.push((T0 + 1_000 + (k / 3) as u64 * period + stagger, k % 3));
        events.push((T0 + 2_000 + (k / 3) as u64 * period + stagger, 3 + k % 3));
        events.push((T0 + 3_000 + k as u64 * 1_000_000, 6));
    }
    events.sort();
    let mut seqs = [0u64; 7];
    let mut sent: std::collections::HashMap<(String, u64), u64> = Default::default();
    let (mut data, mut camera) = (Vec::new(), Vec::new());
    let mut collect = |due: Vec<Due>, now: u64, sent: &std::collections::HashMap<(String, u64), u64>| {
        for d in due {
            let (env, is_camera) = match d {
                Due::Inbound { env, .. } => (env, false),
                Due::Outbound { env, .. } => {
                    let cam = env.topic.as_str().ends_with("/frame");
                    (env, cam)
                }
            };
            let key = (env.topic.as_str().to_owned(), env.seq);
            let t_sent = sent[&key];
            let row = (key.0, env.seq, t_sent, now);
            if is_camera {
                camera.push(row);
            } else {
                data.push(row);
            }
        }
    };
    let out_topics = [SCAN, ODOM, JOINT_STATES, CAMERA_FRAME];
    for (at, kind) in events {
        while let Some(due) = gw.next_due().filter(|&d| d < at) {
            let ready = gw.poll_due(due);
            collect(ready, due, &sent);
        }
        seqs[kind] += 1;
        let seq = seqs[kind];
        if kind < 3 {
            let t = inbound[kind].clone();
            let env = match kind {
                0 => Envelope::publish(t, seq, at, &Twist { vx: 0.1, wz: 0.0 }),
                1 => Envelope::publish(t, seq, at, &JointCommand::STOP),
                _ => Envelope::publish(t, seq, at, &GripperCmd { engage: false }),
            };
            gw.relay_inbound(session.id, &env, at).unwrap();
            let robot = telelab::gateway::INBOUND[kind].robot;
            sent.insert((robot.to_owned(), seq), at);
        } else {
            let robot = telelab::bus::Topic::new(out_topics[kind - 3]).unwrap();
            let env = if kind == 6 {
                Envelope::publish(robot, seq, at, &frame)
            } else {
                Envelope::publish(robot, seq, at, &scan)
            };
            gw.relay_outbound(&env, at).unwrap();
            let rel = telelab::gateway::outbound_remap(out_topics[kind - 3]).unwrap().relative;
            sent.insert((ns.join(rel).unwrap().as_str().to_owned(), seq), at);
        }
    }
    while let Some(due) = gw.next_due() {
        let ready = gw.poll_due(due);
        collect(ready, due, &sent);
    }
    (delay_stats(&data), delay_stats(&camera))
}

/// Both means within 10 % of the STUDENT_SIDE figures and no per-topic
/// reordering.
pub fn latency_fidelity(seed: u64) -> Outcome {
    let started = std::time::Instant::now();
    let (data, camera) = student_side_delays(seed, 1000);
    let data_ok = (data.mean_ms - 300.0).abs() <= 30.0;
    let camera_ok = (camera.mean_ms - 2000.0).abs() <= 200.0;
    let order_ok = data.order_violations == 0 && camera.order_violations == 0;
    let fast = started.elapsed().as_secs_f64() < 60.0;
    Outcome::new(
        data_ok && camera_ok && order_ok && fast && data.count == 2000 && camera.count == 1000,
        format!(
            "data mean {:.1} ms over {} (300 ± 30), camera mean {:.1} ms over {} (2000 ± 200), {} reorderings, {:.2} s",
            data.mean_ms,
            data.count,
            camera.mean_ms,
            camera.count,
            data.order_violations + camera.order_violations,
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---- slots ----------------------------------------------------------------

use telelab::slots::{parse_csv, write_rows, SlotService, SlotStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOp {
    Activate,
    Book,
    Complete,
    Deactivate,
}

pub const SLOT_OPS: [SlotOp; 4] = [SlotOp::Activate, SlotOp::Book, SlotOp::Complete, SlotOp::Deactivate];

/// The life cycle written out as a table, independent of the library.
pub fn expected_next(from: &str, op: SlotOp) -> Option<&'static str> {
    match (from, op) {
        ("DRAFT", SlotOp::Activate) => Some("ACTIVATED"),
        ("ACTIVATED", SlotOp::Book) => Some("BOOKED"),
        ("ACTIVATED", SlotOp::Deactivate) => Some("DEACTIVATED"),
        ("BOOKED", SlotOp::Complete) => Some("COMPLETED"),
        ("BOOKED", SlotOp::Deactivate) => Some("DEACTIVATED"),
        _ => None,
    }
}

fn apply(svc: &SlotService, id: u64, op: SlotOp, team: &TeamId) -> Result<telelab::slots::Slot, telelab::slots::SlotError> {
    match op {
        SlotOp::Activate => svc.activate(id),
        SlotOp::Book => svc.book(id, team),
        SlotOp::Complete => svc.complete(id),
        SlotOp::Deactivate => svc.deactivate(id),
    }
}

/// Every operation sequence up to `depth` from a fresh slot, checked step by
/// step against the table: legal edges succeed and land where expected,
/// everything else fails and leaves the slot untouched.
pub fn slot_transitions(depth: u32) -> Outcome {
    let team = TeamId::new("t1").unwrap();
    let start = chrono::DateTime::from_timestamp(1_900_000_000, 0).unwrap();
    let mut sequences = 0usize;
    let mut steps = 0usize;
    let mut edges_seen = std::collections::BTreeSet::new();
    let mut mismatches = Vec::new();
    for len in 0..=depth {
        for code in 0..4usize.pow(len) {
            let svc = SlotService::seeded(7);
            svc.register_team(team.clone(), "Alpha").unwrap();
            let id = svc.create_slot(start, 3600).unwrap().id;
            let mut state = "DRAFT";
            let mut c = code;
            for _ in 0..len {
                let op = SLOT_OPS[c % 4];
                c /= 4;
                steps += 1;
                let result = apply(&svc, id, op, &team);
                let after = svc.get(id).unwrap();
                match (expected_next(state, op), result) {
                    (Some(next), Ok(slot)) if slot.status.as_str() == next && after.status.as_str() == next => {
                        edges_seen.insert((state, next));
                        state = next;
                    }
                    (None, Err(_)) if after.status.as_str() == state => {}
                    (want, got) => {
                        if mismatches.len() < 5 {
                            mismatches.push(format!("{state} --{op:?}--> expected {want:?}, got {got:?}"));
                        }
                        break;
                    }
                }
                let booked_ok = after.status != SlotStatus::Booked || after.team_id.is_some();
                if !booked_ok && mismatches.len() < 5 {
                    mismatches.push(format!("BOOKED without a team after {op:?}"));
                }
            }
            sequences += 1;
        }
    }
    // Library graph agrees with the table on all 25 status pairs too.
    for from in SlotStatus::ALL {
        for to in SlotStatus::ALL {
            let table = SLOT_OPS.iter().any(|&op| expected_next(from.as_str(), op) == Some(to.as_str()));
            if from.can_become(to) != table && mismatches.len() < 5 {
                mismatches.push(format!("can_become({from}, {to}) disagrees"));
            }
        }
    }
    Outcome::new(
        mismatches.is_empty() && edges_seen.len() == 5,
        format!(
            "{sequences} sequences, {steps} steps, {} of 5 edges exercised, {} mismatches{}",
            edges_seen.len(),
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(": {}", mismatches.join("; ")) }
        ),
    )
}

/// `threads` teams race to book one slot, `rounds` times over.
pub fn booking_race(rounds: usize, threads: usize) -> Outcome {
    let mut bad = Vec::new();
    for round in 0..rounds {
        let svc = std::sync::Arc::new(SlotService::seeded(round as u64));
        let teams: Vec<TeamId> = (0..threads).map(|k| TeamId::new(format!("t{k}")).unwrap()).collect();
        for t in &teams {
            svc.register_team(t.clone(), t.as_str()).unwrap();
        }
        let start = chrono::DateTime::from_timestamp(1_900_000_000, 0).unwrap();
        let id = svc.create_slot(start, 3600).unwrap().id;
        svc.activate(id).unwrap();
        let barrier = std::sync::Arc::new(std::sync::Barrier::new(threads));
        let handles: Vec<_> = teams
            .iter()
            .cloned()
            .map(|t| {
                let svc = svc.clone();
                let barrier = barrier.clone();
                std::thread::spawn(move || {
                    barrier.wait();
                    svc.book(id, &t).map(|s| (t, s))
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let winners: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let losers_ok = results
            .iter()
            .filter_map(|r| r.as_ref().err())
            .all(|e| e.code() == "ALREADY_BOOKED");
        let slot = svc.get(id).unwrap();
        let consistent = winners.len() == 1
            && slot.status == SlotStatus::Booked
            && slot.team_id.as_ref() == Some(&winners[0].0)
            && slot.join_link == winners[0].1.join_link;
        if !(consistent && losers_ok) && bad.len() < 3 {
            bad.push(format!("round {round}: {} winners", winners.len()));
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{rounds} races of {threads} teams, {} without exactly one winner{}", bad.len(), if bad.is_empty() { String::new() } else { format!(": {}", bad.join("; ")) }),
    )
}

/// Random slot books exported, parsed and re-written byte for byte.
pub fn csv_round_trip(seed: u64, books: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let mut rows_total = 0;
    let bases = [
        "https://lab.example/join/",
        "https://x.example/j?a=1,b=",
        "https://q.example/\"quoted\"/",
        "https://nl.example/line\nbreak/",
    ];
    for book in 0..books {
        let svc = SlotService::seeded(rng.random());
        svc.set_link_base(bases[rng.random_range(0..bases.len())]);
        let teams: Vec<TeamId> = (0..5).map(|k| TeamId::new(format!("t{k}")).unwrap()).collect();
        for t in &teams {
            svc.register_team(t.clone(), t.as_str()).unwrap();
        }
        for _ in 0..rng.random_range(0..30) {
            let start = chrono::DateTime::from_timestamp(1_900_000_000 + rng.random_range(0..50) * 1800, 0).unwrap();
            let id = svc.create_slot(start, 3600).unwrap().id;
            for _ in 0..rng.random_range(0..4) {
                let op = SLOT_OPS[rng.random_range(0..4)];
                let _ = apply(&svc, id, op, &teams[rng.random_range(0..teams.len())]);
            }
        }
        let text = svc.export_csv();
        let header_ok = text.starts_with("time,team_id,status,join_link\r\n");
        let parsed = parse_csv(&text);
        let visible = svc.list().iter().filter(|s| s.status != SlotStatus::Draft).count();
        match parsed {
            Ok(rows) => {
                rows_total += rows.len();
                let again = write_rows(rows.clone());
                let sorted = rows.windows(2).all(|w| w[0].time <= w[1].time);
                if !(header_ok && again == text && rows.len() == visible && sorted) && bad.len() < 3 {
                    bad.push(format!("book {book}: header {header_ok}, identical {}, rows {}/{visible}", again == text, rows.len()));
                }
            }
            Err(e) => {
                if bad.len() < 3 {
                    bad.push(format!("book {book}: {e}"));
                }
            }
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{books} exports, {rows_total} rows, {} mismatches{}", bad.len(), if bad.is_empty() { String::new() } else { format!(": {}", bad.join("; ")) }),
    )
}

// ---- end to end -----------------------------------------------------------

use std::sync::{Arc, Mutex};
use telelab::bus::schema::Frame;
use telelab::client::{replay, run_script, LocalLink, Recorder, Recording, RunReport, Script};
use telelab::gateway::{CloseReason, SessionReport};
use telelab::host::Host;
use telelab::sim::WorldSpec;

pub struct Run {
    pub report: RunReport,
    pub session: SessionReport,
    pub frame: Frame,
    pub recording: Vec<u8>,
}

fn fresh_host(world: WorldSpec, mode: SessionMode, seed: u64) -> (Arc<Mutex<Host>>, telelab::gateway::Session) {
    let mut cfg = HostConfig::for_world(world, "op");
    cfg.seed = Some(seed);
    let (host, session) = demo_session(cfg, &TeamId::new("t01").unwrap(), mode, T0).unwrap();
    (Arc::new(Mutex::new(host)), session)
}

fn close(host: &Arc<Mutex<Host>>, session: &telelab::gateway::Session) -> (SessionReport, Frame) {
    let mut h = host.lock().unwrap();
    let frame = h.world().render_snapshot();
    let report = h.close_session(session.id, CloseReason::Operator).unwrap();
    (report, frame)
}

/// Runs a script on a fresh host while recording the link.
pub fn run_recorded(world: WorldSpec, script: &str, mode: SessionMode, seed: u64) -> Result<Run, String> {
    let script = Script::from_json(script).map_err(|e| e.to_string())?;
    let (host, session) = fresh_host(world, mode, seed);
    let link = LocalLink::connect(host.clone(), session.token.as_deref().unwrap()).map_err(|e| e.to_string())?;
    let mut rec = Recorder::new(link, Vec::new()).map_err(|e| e.to_string())?;
    let report = run_script(&mut rec, &script).map_err(|e| e.to_string())?;
    let (link, recording) = rec.finish().map_err(|e| e.to_string())?;
    drop(link);
    let (session, frame) = close(&host, &session);
    Ok(Run {
        report,
        session,
        frame,
        recording,
    })
}

/// Replays a recording into a fresh session.
pub fn replay_into(world: WorldSpec, recording: &[u8], mode: SessionMode, seed: u64) -> Result<(SessionReport, Frame), String> {
    let rec = telelab::client::read_recording(recording).map_err(|e| e.to_string())?;
    let (host, session) = fresh_host(world, mode, seed);
    let mut link = LocalLink::connect(host.clone(), session.token.as_deref().unwrap()).map_err(|e| e.to_string())?;
    replay(&mut link, &rec).map_err(|e| e.to_string())?;
    drop(link);
    let _: &Recording = &rec;
    Ok(close(&host, &session))
}

fn points(r: &SessionReport) -> u32 {
    r.score.as_ref().map_or(0, |s| s.points)
}

/// Bundled greenhouse solution scores every fruit, and its recording
/// replayed into a new session reproduces the score.
pub fn greenhouse_end_to_end(mode: SessionMode, seed: u64) -> Outcome {
    let started = std::time::Instant::now();
    let run = match run_recorded(bundled::greenhouse(), telelab::client::scripts::GREENHOUSE_PLUCK, mode, seed) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("scripted run failed: {e}")),
    };
    let (replayed, replay_frame) = match replay_into(bundled::greenhouse(), &run.recording, mode, seed) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("replay failed: {e}")),
    };
    let p = points(&run.session);
    let rp = points(&replayed);
    let denied = run.session.counts.denied;
    let ok = p == 3 && rp == p && denied == 0 && run.report.errors.is_empty() && started.elapsed().as_secs() < 120;
    Outcome::new(
        ok,
        format!(
            "{mode:?}: scored {p}/3 in {:.1} s sim, replay scored {rp}/3, frames {}, {} denied, {} errors, {:.1} s wall",
            run.report.elapsed_ms as f64 / 1000.0,
            if replay_frame == run.frame { "identical" } else { "differ" },
            denied,
            run.report.errors.len(),
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---- kinematics -----------------------------------------------------------

use telelab::sim::{normalize_angle, SimConfig, World};

/// Worst position error over 5 s at dt = 1 ms against the exact arc.
pub fn unicycle_arc_error(v: f64, w: f64, th0: f64) -> f64 {
    let mut spec = WorldSpec::open_field("field", (40.0, 40.0), 0.1).unwrap();
    spec.rover_start.theta = th0;
    let mut world = World::new(spec, bundled::ur5(), SimConfig::default()).unwrap();
    let start = world.rover().pose;
    world.apply_cmd_vel(Twist { vx: v, wz: w });
    let mut worst: f64 = 0.0;
    for k in 1..=5000 {
        world.step(0.001);
        let (x, y, th) = super::unicycle_arc(start.x, start.y, start.theta, v, w, k as f64 * 0.001);
        let p = world.rover().pose;
        let heading_err = normalize_angle(p.theta - th).abs();
        worst = worst.max(((p.x - x).powi(2) + (p.y - y).powi(2)).sqrt()).max(heading_err);
    }
    worst
}

pub fn unicycle_arcs(seed: u64, random_arcs: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = vec![(1.0, 1.0, 0.3), (1.0, 0.0, 0.0), (0.5, 0.5, 1.0), (-0.7, 1.3, -2.0), (0.0, -2.0, 0.5)];
    for _ in 0..random_arcs {
        arcs.push((rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0), rng.random_range(-3.1..3.1)));
    }
    let worst = arcs.iter().map(|&(v, w, th)| unicycle_arc_error(v, w, th)).fold(0.0, f64::max);
    Outcome::new(worst <= 1e-3, format!("{} arcs, worst error {worst:.3e} m (limit 1e-3)", arcs.len()))
}

pub fn fk_matches_oracle(seed: u64, samples: usize) -> Outcome {
    let arm = bundled::ur5();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let q: [f64; 6] = std::array::from_fn(|_| rng.random_range(-TAU..TAU));
        let expected = super::fk_oracle(&arm.dh, &q);
        let got = arm.fk(&q).to_homogeneous();
        for (i, row) in expected.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                worst = worst.max((got[(i, j)] - e).abs());
            }
        }
    }
    Outcome::new(worst <= 1e-9, format!("{samples} poses, worst element error {worst:.2e} (limit 1e-9)"))
}

pub fn reach_bound(seed: u64, samples: usize) -> Outcome {
    let arm = bundled::ur5();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut longest: f64 = 0.0;
    for _ in 0..samples {
        let q: [f64; 6] = std::array::from_fn(|k| rng.random_range(arm.limits[k].min..=arm.limits[k].max));
        longest = longest.max(arm.wrist_center_distance(&q));
    }
    Outcome::new(longest <= 0.85, format!("{samples} samples, longest reach {longest:.4} m (limit 0.85)"))
}

// ---- raycast --------------------------------------------------------------

/// One 360-beam scan from a random free pose in each of `worlds` random
/// grids, every beam compared with the dense oracle.
pub fn raycast_oracle(seed: u64, worlds: usize) -> Outcome {
    use telelab::bus::schema::Pose2D;
    use telelab::sim::{scan_lidar, LidarParams};
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = LidarParams::default();
    let (mut done, mut beams, mut outside) = (0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    while done < worlds {
        let g = super::random_grid(&mut rng);
        let Some((x, y)) = super::free_point(&mut rng, &g) else { continue };
        let pose = Pose2D {
            x,
            y,
            theta: rng.random_range(-PI..PI),
        };
        let scan = scan_lidar(&g, &pose, &params, &mut rng);
        let diag = g.resolution() * 2f64.sqrt();
        for (k, &r) in scan.ranges.iter().enumerate() {
            let th = pose.theta + scan.beam_angle(k);
            let oracle = super::dense_ray(&g, x, y, th, params.range_max, g.resolution() / 10.0);
            let err = (r - oracle).abs();
            worst_ratio = worst_ratio.max(err / diag);
            if err > diag {
                outside += 1;
            }
            beams += 1;
        }
        done += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(
        outside == 0 && secs < 60.0,
        format!("{worlds} worlds, {beams} beams, {outside} beyond one diagonal, worst {worst_ratio:.3} diagonals, {secs:.1} s"),
    )
}

// ---- protocol -------------------------------------------------------------

use telelab::bus::{decode_frame, encode_frame, FrameError, Payload, Topic};

fn random_json(rng: &mut ChaCha8Rng, depth: u32) -> serde_json::Value {
    use serde_json::Value;
    let leaf = depth == 0 || rng.random_bool(0.5);
    if leaf {
        return match rng.random_range(0..5) {
            0 => Value::Null,
            1 => Value::from(rng.random_bool(0.5)),
            2 => Value::from(rng.random::<i64>()),
            3 => Value::from(rng.random_range(-1e9..1e9)),
            _ => {
                let n = rng.random_range(0..12);
                Value::from((0..n).map(|_| rng.random_range(' '..='\u{2fff}')).collect::<String>())
            }
        };
    }
    if rng.random_bool(0.5) {
        Value::Array((0..rng.random_range(0..4)).map(|_| random_json(rng, depth - 1)).collect())
    } else {
        Value::Object(
            (0..rng.random_range(0..4))
                .map(|k| (format!("k{k}{}", rng.random_range(0..100)), random_json(rng, depth - 1)))
                .collect(),
        )
    }
}

pub fn random_envelope(rng: &mut ChaCha8Rng) -> Envelope {
    use telelab::bus::schema::Alert;
    let segs = rng.random_range(1..5);
    let name: String = (0..segs)
        .map(|_| {
            let n = rng.random_range(1..8);
            let s: String = (0..n).map(|_| b"abcdefghijklmnopqrstuvwxyz0123456789_"[rng.random_range(0..37)] as char).collect();
            format!("/{s}")
        })
        .collect();
    let topic = Topic::new(name).unwrap();
    let op = Op::ALL[rng.random_range(0..Op::ALL.len())];
    let (msg_type, payload) = match op {
        Op::Pub => match rng.random_range(0..3) {
            0 => ("Twist".to_owned(), Payload::encode(&Twist { vx: rng.random_range(-1e6..1e6), wz: rng.random_range(-1e6..1e6) })),
            1 => (
                "JointCommand".to_owned(),
                Payload::encode(&JointCommand {
                    mode: if rng.random_bool(0.5) { JointMode::Position } else { JointMode::Velocity },
                    values: std::array::from_fn(|_| rng.random_range(-10.0..10.0)),
                }),
            ),
            _ => {
                let mut obj = random_json(rng, 3);
                if !obj.is_object() {
                    obj = serde_json::json!({ "v": obj });
                }
                ("Custom".to_owned(), Payload::from_json(&obj.to_string()).unwrap())
            }
        },
        Op::Err => (
            "Alert".to_owned(),
            Payload::encode(&Alert {
                severity: Severity::Warn,
                code: "X".into(),
                detail: random_json(rng, 0).to_string(),
            }),
        ),
        _ => ("none".to_owned(), Payload::empty()),
    };
    Envelope {
        op,
        topic,
        msg_type,
        seq: rng.random(),
        stamp_us: rng.random(),
        payload,
    }
}

/// Round trip on `cases` random envelopes; every proper prefix of each,
/// with and without a fresh terminator, must decode to MalformedFrame
/// without panicking.
pub fn protocol_fuzz(seed: u64, cases: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut round_trip_bad, mut truncations, mut truncation_bad, mut panics) = (0, 0, 0, 0);
    for _ in 0..cases {
        let env = random_envelope(&mut rng);
        let bytes = encode_frame(&env);
        if decode_frame(&bytes).ok().as_ref() != Some(&env) {
            round_trip_bad += 1;
        }
        for cut in 0..bytes.len() {
            for reterminate in [false, true] {
                // Re-terminating the cut just before the LF rebuilds the frame.
                if reterminate && cut == bytes.len() - 1 {
                    continue;
                }
                let mut prefix = bytes[..cut].to_vec();
                if reterminate {
                    prefix.push(b'\n');
                }
                truncations += 1;
                match std::panic::catch_unwind(|| decode_frame(&prefix)) {
                    Ok(Err(FrameError::MalformedFrame { .. })) => {}
                    Ok(_) => truncation_bad += 1,
                    Err(_) => panics += 1,
                }
            }
        }
    }
    Outcome::new(
        round_trip_bad == 0 && truncation_bad == 0 && panics == 0,
        format!(
            "{cases} envelopes ({round_trip_bad} round-trip failures), {truncations} truncations ({truncation_bad} not MalformedFrame, {panics} panics)"
        ),
    )
}
