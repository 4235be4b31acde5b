//! What a session may touch and how slow its link is.

use serde::{Deserialize, Serialize};

use crate::bus::schema::{Frame, GripperCmd, JointCommand, JointState, LaserScan, Message, Pose2D, TaskScore, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionMode {
    /// Student code runs remotely and talks over a slow link.
    StudentSide,
    /// Student code runs on the host next to the robots.
    HostSide,
}

/// Delays in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub data_mean: f64,
    pub data_jitter_sigma: f64,
    pub camera_delay: f64,
}

impl LatencyProfile {
    pub const STUDENT_SIDE: LatencyProfile = LatencyProfile {
        data_mean: 300.0,
        data_jitter_sigma: 50.0,
        camera_delay: 2000.0,
    };
    pub const HOST_SIDE: LatencyProfile = LatencyProfile {
        data_mean: 0.0,
        data_jitter_sigma: 0.0,
        camera_delay: 0.0,
    };

    pub fn for_mode(mode: SessionMode) -> Self {
        match mode {
            SessionMode::StudentSide => Self::STUDENT_SIDE,
            SessionMode::HostSide => Self::HOST_SIDE,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.data_mean, self.data_jitter_sigma, self.camera_delay]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Topic lists are relative to the session namespace. A trailing `/**`
/// admits everything below that prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermissionProfile {
    pub allowed_pub: Vec<String>,
    pub allowed_sub: Vec<String>,
    pub allow_arbitrary_schemas: bool,
}

/// Private scratch space inside every namespace.
pub const SCRATCH: &str = "ext";

pub fn pattern_matches(pattern: &str, rel: &str) -> bool {
    match pattern.strip_suffix("/**") {
        Some(prefix) => rel.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/') && rest.len() > 1),
        None => pattern == rel,
    }
}

impl PermissionProfile {
    pub fn for_mode(mode: SessionMode) -> Self {
        let scratch = format!("{SCRATCH}/**");
        let mut allowed_pub: Vec<String> = INBOUND.iter().map(|r| r.relative.to_owned()).collect();
        allowed_pub.push(scratch.clone());
        let mut allowed_sub: Vec<String> = OUTBOUND.iter().map(|r| r.relative.to_owned()).collect();
        allowed_sub.push(SAFETY_TOPIC.to_owned());
        allowed_sub.push(scratch);
        PermissionProfile {
            allowed_pub,
            allowed_sub,
            allow_arbitrary_schemas: mode == SessionMode::StudentSide,
        }
    }

    pub fn may_publish(&self, rel: &str) -> bool {
        !rel.starts_with("sys/") && rel != "sys" && self.allowed_pub.iter().any(|p| pattern_matches(p, rel))
    }

    pub fn may_subscribe(&self, rel: &str) -> bool {
        self.allowed_sub.iter().any(|p| pattern_matches(p, rel))
    }
}

/// A namespace-relative topic mapped onto a robot topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Remap {
    pub relative: &'static str,
    pub robot: &'static str,
    pub msg_type: &'static str,
}

pub const CMD_VEL: &str = "/rover/cmd_vel";
pub const JOINT_CMD: &str = "/arm/joint_cmd";
pub const GRIPPER: &str = "/arm/gripper";
pub const SCAN: &str = "/rover/scan";
pub const ODOM: &str = "/rover/odom";
pub const JOINT_STATES: &str = "/arm/joint_states";
pub const CAMERA_FRAME: &str = "/camera/frame";
pub const TASK_SCORE: &str = "/task/score";

/// Gateway-generated verdict echoes, relative to the namespace.
pub const SAFETY_TOPIC: &str = "safety";

pub const INBOUND: [Remap; 3] = [
    Remap {
        relative: "cmd_vel",
        robot: CMD_VEL,
        msg_type: Twist::NAME,
    },
    Remap {
        relative: "joint_cmd",
        robot: JOINT_CMD,
        msg_type: JointCommand::NAME,
    },
    Remap {
        relative: "gripper",
        robot: GRIPPER,
        msg_type: GripperCmd::NAME,
    },
];

pub const OUTBOUND: [Remap; 5] = [
    Remap {
        relative: "scan",
        robot: SCAN,
        msg_type: LaserScan::NAME,
    },
    Remap {
        relative: "odom",
        robot: ODOM,
        msg_type: Pose2D::NAME,
    },
    Remap {
        relative: "joint_states",
        robot: JOINT_STATES,
        msg_type: JointState::NAME,
    },
    Remap {
        relative: "frame",
        robot: CAMERA_FRAME,
        msg_type: Frame::NAME,
    },
    Remap {
        relative: "score",
        robot: TASK_SCORE,
        msg_type: TaskScore::NAME,
    },
];

pub fn inbound_remap(rel: &str) -> Option<&'static Remap> {
    INBOUND.iter().find(|r| r.relative == rel)
}

pub fn outbound_remap(robot: &str) -> Option<&'static Remap> {
    OUTBOUND.iter().find(|r| r.robot == robot)
}

/// Robot topics only the host itself may publish.
pub fn is_robot_command_topic(topic: &str) -> bool {
    INBOUND.iter().any(|r| r.robot == topic)
}
