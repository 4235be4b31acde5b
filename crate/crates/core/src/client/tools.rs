//! Interactive helpers behind `echo` and `teleop`.

use std::io::Write;
use std::sync::mpsc;

use super::{resolve_topic, ClientError, Link};
use crate::bus::schema::Twist;
use crate::bus::{encode_frame, Envelope, Op};
use crate::gateway::profile::SAFETY_TOPIC;

/// Subscribes to `topic` and writes every frame on it to `out` in wire
/// format. Stops after `count` frames when given.
pub fn echo<L: Link, W: Write>(link: &mut L, topic: &str, count: Option<usize>, out: &mut W) -> Result<usize, ClientError> {
    let topic = resolve_topic(link.identity(), topic)?;
    let now = link.now_us();
    link.send(&Envelope::control(Op::Sub, topic.clone(), "Empty", 0, now))?;
    let mut seen = 0;
    while count.is_none_or(|n| seen < n) {
        let deadline = link.now_us() + 1_000_000;
        let Some(env) = link.recv_until(deadline)? else {
            continue;
        };
        if env.topic == topic || env.op == Op::Err {
            out.write_all(&encode_frame(&env))?;
            out.flush()?;
            seen += usize::from(env.topic == topic);
        }
    }
    Ok(seen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleopKey {
    Faster,
    Slower,
    Left,
    Right,
    Stop,
    Quit,
}

impl TeleopKey {
    /// `w`/`s` change speed, `a`/`d` turn, space or `x` stops, `q` quits.
    pub fn from_char(c: char) -> Option<Self> {
        Some(match c.to_ascii_lowercase() {
            'w' => TeleopKey::Faster,
            's' => TeleopKey::Slower,
            'a' => TeleopKey::Left,
            'd' => TeleopKey::Right,
            ' ' | 'x' => TeleopKey::Stop,
            'q' => TeleopKey::Quit,
            _ => return None,
        })
    }
}

const DV: f64 = 0.1;
const DW: f64 = 0.25;
const REPEAT_US: u64 = 200_000;

/// Velocity keying. Keys arrive on `keys` from another thread so frames keep
/// flowing while the user types; the current Twist is re-sent every 200 ms
/// and safety alerts are written to `out`.
pub fn teleop<L: Link, W: Write>(link: &mut L, keys: mpsc::Receiver<TeleopKey>, out: &mut W) -> Result<Twist, ClientError> {
    let cmd_topic = resolve_topic(link.identity(), "cmd_vel")?;
    let safety = resolve_topic(link.identity(), SAFETY_TOPIC)?;
    let now = link.now_us();
    link.send(&Envelope::control(Op::Adv, cmd_topic.clone(), "Twist", 0, now))?;
    link.send(&Envelope::control(Op::Sub, safety.clone(), "Empty", 0, now))?;
    let mut twist = Twist::ZERO;
    let mut seq = 0;
    let mut next_send = now;
    loop {
        let mut changed = false;
        loop {
            match keys.try_recv() {
                Ok(key) => {
                    changed = true;
                    match key {
                        TeleopKey::Faster => twist.vx += DV,
                        TeleopKey::Slower => twist.vx -= DV,
                        TeleopKey::Left => twist.wz += DW,
                        TeleopKey::Right => twist.wz -= DW,
                        TeleopKey::Stop => twist = Twist::ZERO,
                        TeleopKey::Quit => twist = Twist::ZERO,
                    }
                    if key == TeleopKey::Quit {
                        seq += 1;
                        link.send(&Envelope::publish(cmd_topic, seq, link.now_us(), &twist))?;
                        return Ok(twist);
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    seq += 1;
                    link.send(&Envelope::publish(cmd_topic, seq, link.now_us(), &Twist::ZERO))?;
                    return Ok(Twist::ZERO);
                }
            }
        }
        let now = link.now_us();
        if changed || now >= next_send {
            seq += 1;
            link.send(&Envelope::publish(cmd_topic.clone(), seq, now, &twist))?;
            writeln!(out, "vx={:+.2} wz={:+.2}", twist.vx, twist.wz)?;
            next_send = now + REPEAT_US;
        }
        if let Some(env) = link.recv_until(now.min(next_send) + 50_000)? {
            if env.topic == safety || env.op == Op::Err {
                out.write_all(&encode_frame(&env))?;
            }
        }
    }
}
