//! The booking sheet: teams, slots through their life cycle, a refused
//! double booking and the CSV export.
//!
//! cargo run --example slot_booking

use chrono::{DateTime, Duration};
use telelab::slots::{SlotService, TeamId};

fn main() {
    let svc = SlotService::seeded(3);
    let alpha = TeamId::new("t1").unwrap();
    let beta = TeamId::new("t2").unwrap();
    svc.register_team(alpha.clone(), "Alpha").unwrap();
    svc.register_team(beta.clone(), "Beta").unwrap();

    let monday = DateTime::parse_from_rfc3339("2030-01-07T09:00:00Z").unwrap().to_utc();
    let ids: Vec<_> = (0..4)
        .map(|h| svc.create_slot(monday + Duration::hours(h), 3600).unwrap().id)
        .collect();
    for &id in &ids[..3] {
        svc.activate(id).unwrap();
    }
    svc.book(ids[0], &alpha).unwrap();
    match svc.book(ids[0], &beta) {
        Err(e) => println!("second booking refused: {} ({e})", e.code()),
        Ok(_) => unreachable!(),
    }
    svc.book(ids[1], &beta).unwrap();
    svc.complete(ids[0]).unwrap();
    svc.deactivate(ids[1]).unwrap();
    if let Err(e) = svc.activate(ids[0]) {
        println!("completed slot cannot be reactivated: {}", e.code());
    }
    for n in svc.notifications() {
        println!("notification: {n:?}");
    }
    println!("\n{}", svc.export_csv());
}
