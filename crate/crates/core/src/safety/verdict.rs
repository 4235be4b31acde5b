//! The stateless half of the pipeline: one command in, one verdict out.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::SafetyConfig;
use crate::bus::schema::{GripperCmd, JointCommand, JointMode, LaserScan, Twist};
use crate::sim::kinematics::ArmModel;
use crate::sim::world::normalize_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Allow,
    Clamp,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    Ok,
    SpeedLimit,
    JointVelocityLimit,
    CollisionAhead,
    StaleSensor,
    JointLimit,
    Workspace,
    ArmCollision,
    Estop,
    InvalidCommand,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::Ok => "OK",
            ReasonCode::SpeedLimit => "SPEED_LIMIT",
            ReasonCode::JointVelocityLimit => "JOINT_VELOCITY_LIMIT",
            ReasonCode::CollisionAhead => "COLLISION_AHEAD",
            ReasonCode::StaleSensor => "STALE_SENSOR",
            ReasonCode::JointLimit => "JOINT_LIMIT",
            ReasonCode::Workspace => "WORKSPACE",
            ReasonCode::ArmCollision => "ARM_COLLISION",
            ReasonCode::Estop => "ESTOP",
            ReasonCode::InvalidCommand => "INVALID_COMMAND",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A robot-bound command as the pipeline sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "cmd", rename_all = "snake_case")]
pub enum Command {
    CmdVel(Twist),
    Joint(JointCommand),
    Gripper(GripperCmd),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub decision: Decision,
    pub code: ReasonCode,
    pub detail: String,
    pub clamped_command: Option<Command>,
}

impl SafetyVerdict {
    pub fn allow() -> Self {
        SafetyVerdict {
            decision: Decision::Allow,
            code: ReasonCode::Ok,
            detail: String::new(),
            clamped_command: None,
        }
    }

    pub fn block(code: ReasonCode, detail: impl Into<String>) -> Self {
        SafetyVerdict {
            decision: Decision::Block,
            code,
            detail: detail.into(),
            clamped_command: None,
        }
    }

    pub fn clamp(code: ReasonCode, detail: impl Into<String>, cmd: Command) -> Self {
        SafetyVerdict {
            decision: Decision::Clamp,
            code,
            detail: detail.into(),
            clamped_command: Some(cmd),
        }
    }

    pub fn passes(&self) -> bool {
        self.decision != Decision::Block
    }

    /// What should reach the robot, if anything.
    pub fn effective(&self, original: Command) -> Option<Command> {
        match self.decision {
            Decision::Allow => Some(original),
            Decision::Clamp => self.clamped_command,
            Decision::Block => None,
        }
    }
}

/// A sensor reading with the bus time it was received.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamped<T> {
    pub value: T,
    pub stamp_us: u64,
}

/// Smallest range among beams whose bearing lies within the forward cone.
/// Non-finite ranges count as contact. `None` if no beam falls in the cone.
pub fn forward_cone_min(scan: &LaserScan, half_angle: f64) -> Option<f64> {
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(k, _)| normalize_angle(scan.beam_angle(*k)).abs() <= half_angle)
        .map(|(_, &r)| if r.is_nan() { 0.0 } else { r })
        .min_by(f64::total_cmp)
}

pub fn check_cmd_vel(scan: Option<&Stamped<LaserScan>>, cmd: &Twist, now_us: u64, cfg: &SafetyConfig) -> SafetyVerdict {
    if !(cmd.vx.is_finite() && cmd.wz.is_finite()) {
        return SafetyVerdict::block(ReasonCode::InvalidCommand, "non-finite velocity");
    }
    let window_us = (cfg.watchdog_window * 1e6) as u64;
    let is_stop = cmd.vx == 0.0 && cmd.wz == 0.0;
    let scan = match scan {
        Some(s) if now_us.saturating_sub(s.stamp_us) <= window_us => &s.value,
        _ if is_stop => return SafetyVerdict::allow(),
        Some(s) => {
            return SafetyVerdict::block(
                ReasonCode::StaleSensor,
                format!("scan is {} ms old", now_us.saturating_sub(s.stamp_us) / 1000),
            )
        }
        None => return SafetyVerdict::block(ReasonCode::StaleSensor, "no scan received"),
    };
    if cmd.vx > 0.0 {
        if let Some(min) = forward_cone_min(scan, cfg.forward_cone) {
            if min < cfg.min_clearance {
                return SafetyVerdict::block(
                    ReasonCode::CollisionAhead,
                    format!("obstacle {min:.3} m ahead, clearance {} m", cfg.min_clearance),
                );
            }
        }
    }
    let clamped = Twist {
        vx: cmd.vx.clamp(-cfg.v_max, cfg.v_max),
        wz: cmd.wz.clamp(-cfg.w_max, cfg.w_max),
    };
    if clamped != *cmd {
        return SafetyVerdict::clamp(
            ReasonCode::SpeedLimit,
            format!("limited to |vx| <= {}, |wz| <= {}", cfg.v_max, cfg.w_max),
            Command::CmdVel(clamped),
        );
    }
    SafetyVerdict::allow()
}

/// Flange position in the arm-base frame for a joint target.
pub fn tool_point(arm: &ArmModel, joints: &[f64; 6]) -> [f64; 3] {
    let t = arm.fk(joints).translation.vector;
    [t.x, t.y, t.z]
}

pub fn check_joint_cmd(arm: &ArmModel, cmd: &JointCommand, cfg: &SafetyConfig) -> SafetyVerdict {
    if cmd.values.iter().any(|v| !v.is_finite()) {
        return SafetyVerdict::block(ReasonCode::InvalidCommand, "non-finite joint value");
    }
    match cmd.mode {
        JointMode::Position => {
            for (k, (q, [lo, hi])) in cmd.values.iter().zip(&cfg.joint_pos_limits).enumerate() {
                if q < lo || q > hi {
                    return SafetyVerdict::block(
                        ReasonCode::JointLimit,
                        format!("joint {k} target {q:.3} outside [{lo:.3}, {hi:.3}]"),
                    );
                }
            }
            let p = tool_point(arm, &cmd.values);
            if !cfg.workspace_box.contains(p) {
                return SafetyVerdict::block(
                    ReasonCode::Workspace,
                    format!("tool target ({:.3}, {:.3}, {:.3}) leaves the workspace", p[0], p[1], p[2]),
                );
            }
            if let Some(body) = cfg.rover_body {
                if body.inflate(cfg.rover_body_margin).contains(p) {
                    return SafetyVerdict::block(
                        ReasonCode::ArmCollision,
                        format!("tool target ({:.3}, {:.3}, {:.3}) hits the rover body", p[0], p[1], p[2]),
                    );
                }
            }
            SafetyVerdict::allow()
        }
        JointMode::Velocity => {
            let lim = cfg.joint_vel_limit;
            let values = cmd.values.map(|v| v.clamp(-lim, lim));
            if values != cmd.values {
                SafetyVerdict::clamp(
                    ReasonCode::JointVelocityLimit,
                    format!("joint speeds limited to {lim:.3} rad/s"),
                    Command::Joint(JointCommand {
                        mode: JointMode::Velocity,
                        values,
                    }),
                )
            } else {
                SafetyVerdict::allow()
            }
        }
    }
}

/// The stateless verdict for any command, e-stop aside.
pub fn check_command(
    arm: &ArmModel,
    scan: Option<&Stamped<LaserScan>>,
    cmd: &Command,
    now_us: u64,
    cfg: &SafetyConfig,
) -> SafetyVerdict {
    match cmd {
        Command::CmdVel(t) => check_cmd_vel(scan, t, now_us, cfg),
        Command::Joint(j) => check_joint_cmd(arm, j, cfg),
        Command::Gripper(_) => SafetyVerdict::allow(),
    }
}
