//! Serial-arm forward kinematics from a standard Denavit–Hartenberg table.
//!
//! Joint `i` contributes `Rz(q_i + θ_i) · Tz(d_i) · Tx(a_i) · Rx(α_i)`.
//! The table is configuration: nothing here knows it is a UR5.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JOINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhParam {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhParam {
    pub fn transform(&self, q: f64) -> Isometry3<f64> {
        let rz_tz = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, self.d),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + self.theta_offset),
        );
        let tx_rx = Isometry3::from_parts(
            Translation3::new(self.a, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        );
        rz_tz * tx_rx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmFile {
    name: String,
    reach: f64,
    max_joint_velocity: f64,
    shoulder_frame: usize,
    wrist_frame: usize,
    joint: Vec<ArmJointFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmJointFile {
    a: f64,
    alpha: f64,
    d: f64,
    #[serde(default)]
    theta_offset: f64,
    min: f64,
    max: f64,
}

#[derive(Debug, Error)]
pub enum ArmConfigError {
    #[error("arm config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("arm config needs exactly {JOINTS} joints, got {0}")]
    JointCount(usize),
    #[error("arm config: {0}")]
    Invalid(String),
}

/// Kinematic description of a six-joint arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub name: String,
    pub dh: [DhParam; JOINTS],
    pub limits: [JointLimit; JOINTS],
    /// Bound on the shoulder-to-wrist distance, m.
    pub reach: f64,
    /// Fastest joint motion the simulated drives allow, rad/s.
    pub max_joint_velocity: f64,
    /// Frame whose origin is the reach reference (0 = base).
    pub shoulder_frame: usize,
    /// Frame whose origin is treated as the wrist center.
    pub wrist_frame: usize,
}

impl ArmModel {
    pub fn from_toml(text: &str) -> Result<Self, ArmConfigError> {
        let file: ArmFile = toml::from_str(text)?;
        if file.joint.len() != JOINTS {
            return Err(ArmConfigError::JointCount(file.joint.len()));
        }
        let dh = std::array::from_fn(|i| {
            let j = &file.joint[i];
            DhParam {
                a: j.a,
                alpha: j.alpha,
                d: j.d,
                theta_offset: j.theta_offset,
            }
        });
        let limits = std::array::from_fn(|i| JointLimit {
            min: file.joint[i].min,
            max: file.joint[i].max,
        });
        let model = ArmModel {
            name: file.name,
            dh,
            limits,
            reach: file.reach,
            max_joint_velocity: file.max_joint_velocity,
            shoulder_frame: file.shoulder_frame,
            wrist_frame: file.wrist_frame,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ArmConfigError> {
        let bad = |msg: &str| Err(ArmConfigError::Invalid(msg.to_owned()));
        if self.limits.iter().any(|l| !(l.min < l.max) || !l.min.is_finite() || !l.max.is_finite()) {
            return bad("joint limits must be finite with min < max");
        }
        if !(self.reach > 0.0) || !(self.max_joint_velocity > 0.0) {
            return bad("reach and max_joint_velocity must be positive");
        }
        if self.shoulder_frame > JOINTS || self.wrist_frame > JOINTS || self.shoulder_frame >= self.wrist_frame {
            return bad("need shoulder_frame < wrist_frame <= 6");
        }
        Ok(())
    }

    /// A table of zeros: every joint spins about the same axis at the base.
    pub fn degenerate() -> Self {
        ArmModel {
            name: "degenerate".into(),
            dh: [DhParam {
                a: 0.0,
                alpha: 0.0,
                d: 0.0,
                theta_offset: 0.0,
            }; JOINTS],
            limits: [JointLimit {
                min: -std::f64::consts::PI,
                max: std::f64::consts::PI,
            }; JOINTS],
            reach: 1.0,
            max_joint_velocity: 1.0,
            shoulder_frame: 0,
            wrist_frame: 4,
        }
    }

    /// Arm-base frame to flange.
    pub fn fk(&self, joints: &[f64; JOINTS]) -> Isometry3<f64> {
        self.dh
            .iter()
            .zip(joints)
            .fold(Isometry3::identity(), |acc, (p, &q)| acc * p.transform(q))
    }

    /// Origins of frames 0..=6 in the arm-base frame.
    pub fn frame_origins(&self, joints: &[f64; JOINTS]) -> [Point3<f64>; JOINTS + 1] {
        let mut origins = [Point3::origin(); JOINTS + 1];
        let mut acc = Isometry3::identity();
        for (i, (p, &q)) in self.dh.iter().zip(joints).enumerate() {
            acc *= p.transform(q);
            origins[i + 1] = acc * Point3::origin();
        }
        origins
    }

    pub fn wrist_center_distance(&self, joints: &[f64; JOINTS]) -> f64 {
        let o = self.frame_origins(joints);
        (o[self.wrist_frame] - o[self.shoulder_frame]).norm()
    }

    pub fn within_limits(&self, joints: &[f64; JOINTS]) -> bool {
        joints
            .iter()
            .zip(&self.limits)
            .all(|(q, l)| *q >= l.min && *q <= l.max)
    }

    pub fn clamp_to_limits(&self, joints: &mut [f64; JOINTS]) {
        for (q, l) in joints.iter_mut().zip(&self.limits) {
            *q = q.clamp(l.min, l.max);
        }
    }
}

/// Position plus unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolPose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl From<Isometry3<f64>> for ToolPose {
    fn from(iso: Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        ToolPose {
            position: [t.x, t.y, t.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}
