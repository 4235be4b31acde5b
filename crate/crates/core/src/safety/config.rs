use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::kinematics::{ArmModel, JOINTS};

/// Axis-aligned box, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] < self.max[k])
    }
}

/// Thresholds for the verdict pipeline and the watchdog. Boxes are in the
/// arm-base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub min_clearance: f64,
    /// Half-angle of the forward cone, rad.
    pub forward_cone: f64,
    pub joint_pos_limits: [[f64; 2]; JOINTS],
    pub joint_vel_limit: f64,
    pub workspace_box: Aabb,
    /// Rover chassis as seen from the arm base; `None` for a fixed arm.
    pub rover_body: Option<Aabb>,
    /// Clearance kept between the tool point and the rover chassis, m.
    pub rover_body_margin: f64,
    pub watchdog_min_hz: f64,
    pub watchdog_window: f64,
    pub watchdog_poll: f64,
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        use std::f64::consts::{PI, TAU};
        SafetyConfig {
            min_clearance: 0.35,
            forward_cone: PI / 6.0,
            joint_pos_limits: [[-TAU, TAU]; JOINTS],
            joint_vel_limit: PI,
            workspace_box: Aabb {
                min: [-0.9, -0.9, -0.4],
                max: [0.9, 0.9, 1.1],
            },
            rover_body: Some(Aabb {
                min: [-0.45, -0.25, -0.45],
                max: [0.25, 0.25, 0.0],
            }),
            rover_body_margin: 0.05,
            watchdog_min_hz: 5.0,
            watchdog_window: 1.0,
            watchdog_poll: 0.1,
            v_max: 0.5,
            w_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("safety config: {0}")]
pub struct SafetyConfigError(pub String);

impl SafetyConfig {
    /// Defaults with joint limits taken from an arm table.
    pub fn for_arm(arm: &ArmModel) -> Self {
        SafetyConfig {
            joint_pos_limits: arm.limits.map(|l| [l.min, l.max]),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SafetyConfigError> {
        let bad = |m: &str| Err(SafetyConfigError(m.to_owned()));
        let scalars = [
            self.min_clearance,
            self.forward_cone,
            self.joint_vel_limit,
            self.rover_body_margin,
            self.watchdog_min_hz,
            self.watchdog_window,
            self.watchdog_poll,
            self.v_max,
            self.w_max,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return bad("all limits must be finite");
        }
        if !(self.min_clearance > 0.0) {
            return bad("min_clearance must be positive");
        }
        if !(self.forward_cone > 0.0 && self.forward_cone <= std::f64::consts::PI) {
            return bad("forward_cone must be in (0, pi]");
        }
        if self.joint_pos_limits.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return bad("joint limits need finite lo < hi");
        }
        if !self.workspace_box.is_valid() || self.rover_body.is_some_and(|b| !b.is_valid()) {
            return bad("boxes need finite min < max on every axis");
        }
        if !(self.joint_vel_limit > 0.0 && self.v_max > 0.0 && self.w_max > 0.0) {
            return bad("velocity limits must be positive");
        }
        if !(self.watchdog_min_hz >= 0.0 && self.watchdog_window > 0.0 && self.watchdog_poll > 0.0) {
            return bad("watchdog needs min_hz >= 0 and positive window and poll period");
        }
        if self.rover_body_margin < 0.0 {
            return bad("rover_body_margin must be non-negative");
        }
        Ok(())
    }
}
