//! The warehouse world: two boxes from the rack into their zones, with the
//! task frame printed before and after.
//!
//! cargo run --example warehouse_sort

use std::sync::{Arc, Mutex};

use telelab::client::{run_script, scripts, LocalLink, Script};
use telelab::gateway::{CloseReason, SessionMode};
use telelab::host::{demo_session, HostConfig};
use telelab::sim::bundled;
use telelab::slots::TeamId;

fn main() {
    let cfg = HostConfig::for_world(bundled::warehouse(), "operator");
    let (host, session) = demo_session(cfg, &TeamId::new("t01").unwrap(), SessionMode::HostSide, 0).unwrap();
    let host = Arc::new(Mutex::new(host));
    let show = |label: &str| {
        let frame = host.lock().unwrap().world().render_snapshot();
        println!("{label}:");
        for e in frame.entities.iter().skip(3) {
            println!("  {:<6} ({:.2}, {:.2}) {:?}", e.id, e.x, e.y, e.attached_to);
        }
    };
    show("before");
    let mut link = LocalLink::connect(host.clone(), session.token.as_deref().unwrap()).unwrap();
    let report = run_script(&mut link, &Script::from_json(scripts::WAREHOUSE_SORT).unwrap()).unwrap();
    drop(link);
    show("after");
    let closed = host.lock().unwrap().close_session(session.id, CloseReason::Operator).unwrap();
    println!(
        "{} steps in {:.1} s, score {:?}",
        report.steps,
        report.elapsed_ms as f64 / 1000.0,
        closed.score.map(|s| s.points)
    );
}
