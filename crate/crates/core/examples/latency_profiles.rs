//! Delay injection through a session's gateway: mean delays for each mode
//! and per-topic order under jitter.
//!
//! cargo run --example latency_profiles

use chrono::DateTime;
use telelab::bus::schema::Twist;
use telelab::bus::Envelope;
use telelab::gateway::{Due, Gateway, SessionMode};
use telelab::slots::{SlotService, TeamId};

const T0: u64 = 1_800_000_000_000_000;

fn run(mode: SessionMode) {
    let slots = SlotService::seeded(1);
    let team = TeamId::new("t01").unwrap();
    slots.register_team(team.clone(), "Alpha").unwrap();
    let slot = slots.create_slot(DateTime::from_timestamp_micros(T0 as i64).unwrap(), 3600).unwrap();
    slots.activate(slot.id).unwrap();
    let slot = slots.book(slot.id, &team).unwrap();

    let mut gw = Gateway::seeded(7);
    let session = gw.open_session(&slot, mode, T0).unwrap();
    let topic = session.namespace.join("cmd_vel").unwrap();
    gw.authorize_pub(session.id, &topic, "Twist", T0).unwrap();

    let mut sent = Vec::new();
    for k in 0..500u64 {
        let at = T0 + k * 100_000;
        gw.relay_inbound(session.id, &Envelope::publish(topic.clone(), k + 1, at, &Twist::ZERO), at).unwrap();
        sent.push(at);
    }
    let mut delays = Vec::new();
    let mut last_seq = 0;
    let mut in_order = true;
    while let Some(due_at) = gw.next_due() {
        for due in gw.poll_due(due_at) {
            if let Due::Inbound { env, .. } = due {
                in_order &= env.seq > last_seq;
                last_seq = env.seq;
                delays.push((due_at - sent[env.seq as usize - 1]) as f64 / 1000.0);
            }
        }
    }
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    let max = delays.iter().cloned().fold(0.0, f64::max);
    println!(
        "{mode:?}: profile {:?}\n  {} commands, mean delay {mean:.1} ms, max {max:.1} ms, order preserved: {in_order}",
        session.latency,
        delays.len()
    );
}

fn main() {
    run(SessionMode::StudentSide);
    run(SessionMode::HostSide);
}
