//! Two clients on the broker: one advertises and publishes a Twist, the
//! other subscribes and receives the restamped wire frame.
//!
//! cargo run --example bus_pubsub

use telelab::bus::schema::Twist;
use telelab::bus::{decode_frame, encode_frame, Broker, Envelope, Op, Topic};

fn main() {
    let mut broker = Broker::new();
    let publisher = broker.connect();
    let listener = broker.connect();
    let topic = Topic::new("/demo/cmd_vel").unwrap();

    broker
        .route(listener, &Envelope::control(Op::Sub, topic.clone(), "none", 0, 0), 0)
        .unwrap();
    broker
        .route(publisher, &Envelope::control(Op::Adv, topic.clone(), "Twist", 0, 0), 0)
        .unwrap();

    for seq in 1..=3 {
        let env = Envelope::publish(topic.clone(), seq, 0, &Twist { vx: 0.1 * seq as f64, wz: 0.0 });
        print!("sent     {}", String::from_utf8_lossy(&encode_frame(&env)));
        broker.route(publisher, &env, 1_000 * seq).unwrap();
    }

    for frame in broker.drain(listener) {
        let env = decode_frame(&frame).unwrap();
        let twist: Twist = env.payload.decode().unwrap();
        println!("received seq {} at {} us: vx = {:.1}", env.seq, env.stamp_us, twist.vx);
    }

    // Publishing without ADV is refused.
    let other = broker.connect();
    let err = broker
        .route(other, &Envelope::publish(topic, 1, 0, &Twist::ZERO), 5_000)
        .unwrap_err();
    println!("unadvertised publish: {}", err.code());
}
