//! Assets compiled into the library.

use super::kinematics::ArmModel;
use super::world_file::WorldSpec;

pub const UR5_TOML: &str = include_str!("../../assets/ur5.toml");
pub const GREENHOUSE_JSON: &str = include_str!("../../assets/worlds/greenhouse.world.json");
pub const WAREHOUSE_JSON: &str = include_str!("../../assets/worlds/warehouse.world.json");

pub fn ur5() -> ArmModel {
    ArmModel::from_toml(UR5_TOML).expect("bundled UR5 table is valid")
}

/// Rover-mounted arm among plant beds; three fruits to drop in one bin.
pub fn greenhouse() -> WorldSpec {
    WorldSpec::from_json(GREENHOUSE_JSON).expect("bundled greenhouse is valid")
}

/// Fixed arm beside a rack; two boxes, each owed to a specific bin.
pub fn warehouse() -> WorldSpec {
    WorldSpec::from_json(WAREHOUSE_JSON).expect("bundled warehouse is valid")
}

/// Looks up a bundled world by name.
pub fn world(name: &str) -> Option<WorldSpec> {
    match name {
        "greenhouse" => Some(greenhouse()),
        "warehouse" => Some(warehouse()),
        _ => None,
    }
}
