//! Drives the rover across the greenhouse and prints odometry and the
//! nearest obstacle ahead from the LIDAR scan.
//!
//! cargo run --example rover_lidar

use telelab::bus::schema::Twist;
use telelab::safety::forward_cone_min;
use telelab::sim::{bundled, SimConfig, World};

fn main() {
    let mut world = World::new(bundled::greenhouse(), bundled::ur5(), SimConfig::default()).unwrap();
    let spec = world.spec();
    println!("{}: {} x {} m at {} m/cell", spec.name, spec.size[0], spec.size[1], spec.resolution);

    world.apply_cmd_vel(Twist { vx: 0.4, wz: 0.15 });
    for second in 0..=6 {
        if second > 0 {
            for _ in 0..100 {
                world.step_tick();
            }
        }
        let pose = world.rover().pose;
        let scan = world.scan();
        let ahead = forward_cone_min(&scan, 0.3).unwrap_or(f64::INFINITY);
        println!(
            "t={:>4.1}s  x={:.3} y={:.3} th={:+.3}  {} beams, nearest ahead {:.2} m",
            world.clock_s(),
            pose.x,
            pose.y,
            pose.theta,
            scan.ranges.len(),
            ahead
        );
    }
    let events = world.drain_events();
    if let Some(first) = events.first() {
        println!("{} blocked ticks, first: {first:?}", events.len());
    }
}
