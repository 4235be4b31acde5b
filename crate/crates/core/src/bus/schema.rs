//! Built-in message schemas carried in envelope payloads.
//!
//! The set is closed: a payload tagged with one of these names must
//! deserialize into the matching struct with no extra or missing fields.
//! Units are SI (m, rad, s) unless noted.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Planar velocity command. `vx` in m/s, `wz` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Twist {
    pub vx: f64,
    pub wz: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { vx: 0.0, wz: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserScan {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn beam_angle(&self, index: usize) -> f64 {
        self.angle_min + index as f64 * self.angle_increment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JointMode {
    Position,
    Velocity,
}

/// Six joint targets: positions in rad or velocities in rad/s, depending on `mode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointCommand {
    pub mode: JointMode,
    pub values: [f64; 6],
}

impl JointCommand {
    pub const STOP: JointCommand = JointCommand {
        mode: JointMode::Velocity,
        values: [0.0; 6],
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointState {
    pub positions: [f64; 6],
    pub velocities: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperCmd {
    pub engage: bool,
}

/// One drawable thing in a [`Frame`]: the rover, the arm, the tool point or a task object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    #[serde(default)]
    pub attached_to: Option<String>,
    #[serde(default)]
    pub joints: Option<[f64; 6]>,
}

/// World snapshot; the camera-feed surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub tick: u64,
    pub entities: Vec<Entity>,
}

impl Frame {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Info,
    Warn,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alert {
    pub severity: Severity,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEvent {
    pub tick: u64,
    pub kind: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScore {
    pub points: u32,
    pub events: Vec<TaskEvent>,
}

/// Payload of control frames (ADV, SUB, PING, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

/// Associates a schema struct with its wire name.
pub trait Message: Serialize + DeserializeOwned {
    const NAME: &'static str;
}

macro_rules! message {
    ($($ty:ty => $name:literal),* $(,)?) => {
        $(impl Message for $ty { const NAME: &'static str = $name; })*

        /// Names of every built-in schema, including the `none` control type.
        pub const BUILTIN_SCHEMAS: &[&str] = &[$($name),*];

        /// Checks a raw JSON payload against the named built-in schema.
        /// Returns `None` when `msg_type` is not built in.
        pub fn validate_builtin(msg_type: &str, raw: &str) -> Option<Result<(), serde_json::Error>> {
            match msg_type {
                $($name => Some(serde_json::from_str::<$ty>(raw).map(|_| ())),)*
                _ => None,
            }
        }
    };
}

message! {
    Empty => "none",
    Twist => "Twist",
    Pose2D => "Pose2D",
    LaserScan => "LaserScan",
    JointCommand => "JointCommand",
    JointState => "JointState",
    GripperCmd => "GripperCmd",
    Frame => "Frame",
    Alert => "Alert",
    TaskScore => "TaskScore",
}

pub fn is_builtin(msg_type: &str) -> bool {
    BUILTIN_SCHEMAS.contains(&msg_type)
}

/// Schema names must look like identifiers.
pub fn is_valid_schema_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic())
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && name.len() <= 64
}
