//! Deterministic testbed simulator: occupancy grid, unicycle rover, DH arm,
//! magnetic gripper, LIDAR and task scoring.

pub mod bundled;
pub mod grid;
pub mod kinematics;
pub mod lidar;
pub mod world;
pub mod world_file;

pub use grid::{GridError, OccupancyGrid};
pub use kinematics::{ArmConfigError, ArmModel, DhParam, JointLimit, ToolPose, JOINTS};
pub use lidar::{cast_ray, scan_lidar, LidarParams};
pub use world::{normalize_angle, score_from_frame, SimConfig, SimEvent, World, ARM_HOME};
pub use world_file::{
    ArmMount, Attachment, MountKind, MountOffset, ObjectKind, TaskKind, TaskObject, WorldError, WorldSpec,
};

/// Parses a world document and builds it with the bundled UR5 and default settings.
pub fn load_world(doc: &str) -> Result<World, WorldError> {
    World::new(WorldSpec::from_json(doc)?, bundled::ur5(), SimConfig::default())
}
