//! The full pipeline on a simulated clock: open a session, run the bundled
//! greenhouse solution through the student client while recording it, then
//! replay the recording into a fresh session.
//!
//! cargo run --example greenhouse_pluck [-- --host-side]

use std::sync::{Arc, Mutex};

use telelab::client::{read_recording, replay, run_script, scripts, LocalLink, Recorder, Script};
use telelab::gateway::{CloseReason, SessionMode};
use telelab::host::{demo_session, Host, HostConfig};
use telelab::slots::TeamId;

const T0: u64 = 1_800_000_000_000_000;

fn session(mode: SessionMode) -> (Arc<Mutex<Host>>, telelab::gateway::Session) {
    let mut cfg = HostConfig::greenhouse("operator");
    cfg.seed = Some(1);
    let (host, session) = demo_session(cfg, &TeamId::new("t01").unwrap(), mode, T0).unwrap();
    (Arc::new(Mutex::new(host)), session)
}

fn main() {
    let mode = if std::env::args().any(|a| a == "--host-side") {
        SessionMode::HostSide
    } else {
        SessionMode::StudentSide
    };
    let script = Script::from_json(scripts::GREENHOUSE_PLUCK).unwrap();

    let (host, s) = session(mode);
    let link = LocalLink::connect(host.clone(), s.token.as_deref().unwrap()).unwrap();
    let mut recorder = Recorder::new(link, Vec::new()).unwrap();
    let report = run_script(&mut recorder, &script).unwrap();
    let (link, bytes) = recorder.finish().unwrap();
    drop(link);
    let first = host.lock().unwrap().close_session(s.id, CloseReason::Operator).unwrap();
    println!(
        "{mode:?} run: {} steps, {} sent, {} received, {:.1} s simulated",
        report.steps,
        report.sent,
        report.received,
        report.elapsed_ms as f64 / 1000.0
    );
    println!("  score {:?}, verdicts {:?}", first.score.as_ref().map(|s| s.points), first.counts.verdicts);
    for ev in first.score.iter().flat_map(|s| &s.events) {
        println!("  {ev:?}");
    }

    let recording = read_recording(bytes.as_slice()).unwrap();
    println!("recording: {} entries, {} bytes", recording.entries.len(), bytes.len());
    let (host, s) = session(mode);
    let mut link = LocalLink::connect(host.clone(), s.token.as_deref().unwrap()).unwrap();
    let rep = replay(&mut link, &recording).unwrap();
    drop(link);
    let second = host.lock().unwrap().close_session(s.id, CloseReason::Operator).unwrap();
    println!(
        "replay: {} frames re-sent, score {:?}",
        rep.sent,
        second.score.as_ref().map(|s| s.points)
    );
}
