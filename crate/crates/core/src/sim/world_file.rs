//! World-file documents: the static description of a testbed.
//!
//! A world file is one JSON document:
//!
//! ```json
//! {
//!   "name": "greenhouse",
//!   "origin": [0.0, 0.0],
//!   "size": [10.0, 6.0],
//!   "resolution": 0.05,
//!   "occupancy": ["#####...", "#......#", ...],
//!   "rover_start": {"x": 2.0, "y": 3.0, "theta": 0.0},
//!   "arm_mount": {"kind": "ON_ROVER", "offset": {"x": 0.1, "y": 0.0, "z": 0.45, "yaw": 0.0}},
//!   "objects": [{"id": "fruit_1", "kind": "FRUIT", "pose": {...}, "height": 0.7, "attached_to": "PLANT:p1"}],
//!   "task": "FRUIT_PLUCK"
//! }
//! ```
//!
//! Occupancy rows run top (largest y) to bottom; `.` is free, `#` occupied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::grid::{GridError, OccupancyGrid};
use crate::bus::schema::Pose2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectKind {
    Fruit,
    Box,
    Rack,
    DepositBin,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Fruit => "FRUIT",
            ObjectKind::Box => "BOX",
            ObjectKind::Rack => "RACK",
            ObjectKind::DepositBin => "DEPOSIT_BIN",
        }
    }

    pub fn graspable(self) -> bool {
        matches!(self, ObjectKind::Fruit | ObjectKind::Box)
    }
}

/// What an object hangs on. Serialized as `GRIPPER`, `RACK:<id>` or `PLANT:<anchor>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Attachment {
    Gripper,
    Rack(String),
    Plant(String),
}

impl fmt::Display for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attachment::Gripper => f.write_str("GRIPPER"),
            Attachment::Rack(id) => write!(f, "RACK:{id}"),
            Attachment::Plant(id) => write!(f, "PLANT:{id}"),
        }
    }
}

impl FromStr for Attachment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "GRIPPER" => Ok(Attachment::Gripper),
            Some(("RACK", id)) if !id.is_empty() => Ok(Attachment::Rack(id.to_owned())),
            Some(("PLANT", id)) if !id.is_empty() => Ok(Attachment::Plant(id.to_owned())),
            _ => Err(format!("bad attachment {s:?}")),
        }
    }
}

impl Serialize for Attachment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Attachment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskObject {
    pub id: String,
    pub kind: ObjectKind,
    pub pose: Pose2D,
    /// Height above the floor, m.
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_to: Option<Attachment>,
    /// Half extents `[x, y]` of the footprint, for bins and racks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<[f64; 2]>,
    /// Designated drop zone (a bin id) for warehouse boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
}

impl TaskObject {
    /// Whether a point lies inside this object's footprint (in its own rotated frame).
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let Some([hx, hy]) = self.footprint else {
            return false;
        };
        let (dx, dy) = (x - self.pose.x, y - self.pose.y);
        let (s, c) = self.pose.theta.sin_cos();
        let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
        lx.abs() <= hx && ly.abs() <= hy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MountKind {
    OnRover,
    Fixed,
}

/// Arm base placement; relative to the rover for `ON_ROVER`, to the world for `FIXED`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountOffset {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmMount {
    pub kind: MountKind,
    pub offset: MountOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    FruitPluck,
    WarehouseSort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub name: String,
    #[serde(default)]
    pub origin: [f64; 2],
    pub size: [f64; 2],
    pub resolution: f64,
    pub occupancy: Vec<String>,
    pub rover_start: Pose2D,
    pub arm_mount: ArmMount,
    #[serde(default)]
    pub objects: Vec<TaskObject>,
    pub task: TaskKind,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("world file: {0}")]
    SchemaError(String),
    #[error("rover start ({x}, {y}) is not in free space")]
    UnreachableStart { x: f64, y: f64 },
}

impl From<serde_json::Error> for WorldError {
    fn from(e: serde_json::Error) -> Self {
        WorldError::SchemaError(e.to_string())
    }
}

impl From<GridError> for WorldError {
    fn from(e: GridError) -> Self {
        WorldError::SchemaError(e.to_string())
    }
}

impl WorldSpec {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let spec: WorldSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world spec serializes")
    }

    pub fn grid(&self) -> Result<OccupancyGrid, GridError> {
        OccupancyGrid::from_rows(
            (self.origin[0], self.origin[1]),
            (self.size[0], self.size[1]),
            self.resolution,
            &self.occupancy,
        )
    }

    /// Checks every invariant of a loadable world and returns its grid.
    pub fn validate(&self) -> Result<OccupancyGrid, WorldError> {
        let schema = |msg: String| Err(WorldError::SchemaError(msg));
        if !(self.resolution > 0.0) {
            return schema(format!("resolution must be positive, got {}", self.resolution));
        }
        let grid = self.grid()?;
        let start = self.rover_start;
        if !(start.x.is_finite() && start.y.is_finite() && start.theta.is_finite()) {
            return schema("rover_start must be finite".into());
        }
        if grid.occupied_at(start.x, start.y) {
            return Err(WorldError::UnreachableStart { x: start.x, y: start.y });
        }
        let mut ids = std::collections::HashSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id.as_str()) {
                return schema(format!("duplicate object id {:?}", obj.id));
            }
            if !grid.contains(obj.pose.x, obj.pose.y) || !obj.height.is_finite() {
                return schema(format!("object {:?} lies outside the world", obj.id));
            }
            if matches!(obj.kind, ObjectKind::DepositBin | ObjectKind::Rack) && obj.footprint.is_none() {
                return schema(format!("{} {:?} needs a footprint", obj.kind.as_str(), obj.id));
            }
            if obj.kind == ObjectKind::Fruit && !matches!(obj.attached_to, Some(Attachment::Plant(_))) {
                return schema(format!("fruit {:?} must start on a plant anchor", obj.id));
            }
            if obj.attached_to == Some(Attachment::Gripper) {
                return schema(format!("object {:?} cannot start in the gripper", obj.id));
            }
        }
        for obj in &self.objects {
            if let Some(Attachment::Rack(rack)) = &obj.attached_to {
                if !self.objects.iter().any(|o| o.id == *rack && o.kind == ObjectKind::Rack) {
                    return schema(format!("object {:?} hangs on unknown rack {rack:?}", obj.id));
                }
            }
            if let Some(zone) = &obj.zone {
                if !self.objects.iter().any(|o| o.id == *zone && o.kind == ObjectKind::DepositBin) {
                    return schema(format!("object {:?} names unknown drop zone {zone:?}", obj.id));
                }
            }
        }
        Ok(grid)
    }

    /// An obstacle-free world with the rover at its centre.
    pub fn open_field(name: &str, size: (f64, f64), resolution: f64) -> Result<Self, WorldError> {
        let grid = OccupancyGrid::empty((0.0, 0.0), size, resolution)?;
        let spec = WorldSpec {
            name: name.to_owned(),
            origin: [0.0, 0.0],
            size: [size.0, size.1],
            resolution,
            occupancy: grid.to_rows(),
            rover_start: Pose2D {
                x: size.0 / 2.0,
                y: size.1 / 2.0,
                theta: 0.0,
            },
            arm_mount: ArmMount {
                kind: MountKind::OnRover,
                offset: MountOffset::default(),
            },
            objects: Vec::new(),
            task: TaskKind::FruitPluck,
        };
        spec.validate()?;
        Ok(spec)
    }
}
