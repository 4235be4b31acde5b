//! Command verdicts, sensor-rate watchdog and emergency stop.
//!
//! Every robot-bound command passes [`SafetyMonitor::check`]. Speed limits
//! clamp; joint, workspace and collision violations block; an engaged e-stop
//! blocks everything.

pub mod config;
pub mod monitor;
pub mod verdict;
pub mod watchdog;

pub use config::{Aabb, SafetyConfig, SafetyConfigError};
pub use monitor::{Authority, EStopSource, EStopState, ReleaseRefused, SafetyAction, SafetyMonitor};
pub use verdict::{
    check_cmd_vel, check_command, check_joint_cmd, forward_cone_min, tool_point, Command, Decision, ReasonCode,
    SafetyVerdict, Stamped,
};
pub use watchdog::{AlertEvent, Watchdog};
