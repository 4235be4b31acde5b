//! The safety monitor on its own: verdicts for a few commands, a scan
//! stream that stops, and the e-stop that follows.
//!
//! cargo run --example safety_gate

use std::f64::consts::PI;

use telelab::bus::schema::{GripperCmd, JointCommand, JointMode, LaserScan, Twist};
use telelab::gateway::SCAN;
use telelab::safety::{Authority, Command, SafetyAction, SafetyConfig, SafetyMonitor};
use telelab::sim::bundled;

fn scan(ahead: f64) -> LaserScan {
    LaserScan {
        angle_min: -PI,
        angle_increment: PI / 180.0,
        range_max: 10.0,
        ranges: (0..360).map(|k| if (k as i32 - 180).abs() < 10 { ahead } else { 5.0 }).collect(),
    }
}

fn main() {
    let arm = bundled::ur5();
    let mut monitor = SafetyMonitor::new(SafetyConfig::for_arm(&arm), arm);
    monitor.monitor_topic(SCAN, 0);

    let commands = [
        Command::CmdVel(Twist { vx: 0.3, wz: 0.0 }),
        Command::CmdVel(Twist { vx: 2.0, wz: 0.0 }),
        Command::Joint(JointCommand {
            mode: JointMode::Position,
            values: [0.0, -1.2, 1.0, -1.4, -1.57, 0.0],
        }),
        Command::Gripper(GripperCmd { engage: true }),
    ];
    monitor.observe_scan(scan(2.0), 0);
    println!("clear path:");
    for c in &commands {
        let v = monitor.check(c, 1_000);
        println!("  {c:?} -> {:?} {:?}", v.decision, v.code);
    }
    monitor.observe_scan(scan(0.2), 2_000);
    let v = monitor.check(&commands[0], 3_000);
    println!("wall 0.2 m ahead: forward -> {:?} {:?} ({})", v.decision, v.code, v.detail);

    // Scans at 10 Hz for two seconds, then nothing.
    let mut t = 0;
    while t <= 5_000_000 {
        if t < 2_000_000 && t % 100_000 == 0 {
            monitor.observe(SCAN, t);
        }
        if t % 100_000 == 0 {
            for alert in monitor.poll(t) {
                println!("t={:.1}s {:?} {}: {}", t as f64 / 1e6, alert.severity, alert.code, alert.detail);
            }
            if monitor.estop().engaged {
                break;
            }
        }
        t += 10_000;
    }
    let stops = monitor
        .take_actions()
        .iter()
        .filter(|a| matches!(a, SafetyAction::InjectStop))
        .count();
    println!("e-stop {:?}, {stops} stop injection(s)", monitor.estop());
    let v = monitor.check(&Command::Gripper(GripperCmd { engage: false }), t);
    println!("gripper while engaged -> {:?} {:?}", v.decision, v.code);
    println!("student release: {:?}", monitor.release(Authority::Student, t));
}
