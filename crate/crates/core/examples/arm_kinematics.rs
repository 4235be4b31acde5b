//! Forward kinematics of the bundled six-axis arm: a few named poses and
//! the largest reach seen over random joint samples.
//!
//! cargo run --example arm_kinematics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telelab::sim::{bundled, ARM_HOME};

fn main() {
    let arm = bundled::ur5();
    let poses = [
        ("zero", [0.0; 6]),
        ("home", ARM_HOME),
        ("reach", [0.0, -0.3, 0.6, -1.9, -1.57, 0.0]),
    ];
    for (name, q) in poses {
        let t = arm.fk(&q).translation.vector;
        println!(
            "{name:>6}: flange at ({:+.4}, {:+.4}, {:+.4}) m, wrist centre {:.4} m from the base",
            t.x,
            t.y,
            t.z,
            arm.wrist_center_distance(&q)
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let longest = (0..100_000)
        .map(|_| {
            let q: [f64; 6] = std::array::from_fn(|k| rng.random_range(arm.limits[k].min..=arm.limits[k].max));
            arm.wrist_center_distance(&q)
        })
        .fold(0.0, f64::max);
    println!("longest reach over 100000 samples: {longest:.4} m");
}
