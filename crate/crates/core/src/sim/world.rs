//! Dynamic testbed state and the fixed-tick integrator.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid;
use super::kinematics::{ArmModel, ToolPose, JOINTS};
use super::lidar::{scan_lidar, LidarParams};
use super::world_file::{Attachment, MountKind, ObjectKind, TaskKind, TaskObject, WorldError, WorldSpec};
use crate::bus::schema::{
    Entity, Frame, GripperCmd, JointCommand, JointMode, JointState, LaserScan, Pose2D, TaskEvent, TaskScore, Twist,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integrator step, s.
    pub tick_s: f64,
    /// Rover drive limits, m/s and rad/s.
    pub v_max: f64,
    pub w_max: f64,
    /// Magnetic gripper capture distance, m.
    pub grasp_radius: f64,
    /// Per-step odometry noise sigma: `[m, rad]`.
    pub odom_noise: [f64; 2],
    pub lidar: LidarParams,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick_s: 0.01,
            v_max: 1.0,
            w_max: 2.0,
            grasp_radius: 0.05,
            odom_noise: [0.0, 0.0],
            lidar: LidarParams::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Odometry and LIDAR noise switched on, for students who want realism.
    pub fn noisy() -> Self {
        SimConfig {
            odom_noise: [0.0005, 0.0005],
            lidar: LidarParams {
                noise_sigma: 0.01,
                ..LidarParams::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    Collision { tick: u64, attempted: Pose2D },
    NothingInReach { tick: u64 },
    Attached { tick: u64, object: String },
    Detached { tick: u64, object: String },
    Dropped { tick: u64, object: String, into: String },
}

pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut t = theta % TAU;
    if t <= -PI {
        t += TAU;
    } else if t > PI {
        t -= TAU;
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoverState {
    pub pose: Pose2D,
    /// Dead-reckoned estimate; equals `pose` when odometry noise is off.
    pub odom: Pose2D,
    pub cmd: Twist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub joints: [f64; JOINTS],
    pub joint_vel: [f64; JOINTS],
    pub cmd: JointCommand,
}

#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    grid: OccupancyGrid,
    arm_model: ArmModel,
    config: SimConfig,
    tick: u64,
    clock_s: f64,
    rover: RoverState,
    arm: ArmState,
    gripper_engaged: bool,
    objects: Vec<TaskObject>,
    task_events: Vec<TaskEvent>,
    pending: Vec<SimEvent>,
    rng: ChaCha8Rng,
}

/// Arm joints start folded upright.
pub const ARM_HOME: [f64; JOINTS] = [0.0, -std::f64::consts::FRAC_PI_2, 0.0, -std::f64::consts::FRAC_PI_2, 0.0, 0.0];

impl World {
    pub fn new(spec: WorldSpec, arm_model: ArmModel, config: SimConfig) -> Result<Self, WorldError> {
        let grid = spec.validate()?;
        let mut home = ARM_HOME;
        arm_model.clamp_to_limits(&mut home);
        let mut world = World {
            grid,
            config,
            tick: 0,
            clock_s: 0.0,
            rover: RoverState {
                pose: spec.rover_start,
                odom: spec.rover_start,
                cmd: Twist::ZERO,
            },
            arm: ArmState {
                joints: home,
                joint_vel: [0.0; JOINTS],
                cmd: JointCommand {
                    mode: JointMode::Position,
                    values: home,
                },
            },
            gripper_engaged: false,
            objects: spec.objects.clone(),
            task_events: Vec::new(),
            pending: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            spec,
            arm_model,
        };
        world.rover.pose.theta = normalize_angle(world.rover.pose.theta);
        world.rover.odom = world.rover.pose;
        Ok(world)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn arm_model(&self) -> &ArmModel {
        &self.arm_model
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn rover(&self) -> &RoverState {
        &self.rover
    }

    pub fn arm(&self) -> &ArmState {
        &self.arm
    }

    pub fn gripper_engaged(&self) -> bool {
        self.gripper_engaged
    }

    pub fn objects(&self) -> &[TaskObject] {
        &self.objects
    }

    pub fn object(&self, id: &str) -> Option<&TaskObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn joint_state(&self) -> JointState {
        JointState {
            positions: self.arm.joints,
            velocities: self.arm.joint_vel,
        }
    }

    /// World pose of the arm base frame.
    pub fn arm_base(&self) -> Isometry3<f64> {
        let m = self.spec.arm_mount;
        let mount = Isometry3::from_parts(
            Translation3::new(m.offset.x, m.offset.y, m.offset.z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), m.offset.yaw),
        );
        match m.kind {
            MountKind::Fixed => mount,
            MountKind::OnRover => {
                let p = self.rover.pose;
                let rover = Isometry3::from_parts(
                    Translation3::new(p.x, p.y, 0.0),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), p.theta),
                );
                rover * mount
            }
        }
    }

    /// World pose of the flange for the given joints at the current base pose.
    pub fn tool_pose_for(&self, joints: &[f64; JOINTS]) -> ToolPose {
        (self.arm_base() * self.arm_model.fk(joints)).into()
    }

    pub fn tool_pose(&self) -> ToolPose {
        self.tool_pose_for(&self.arm.joints)
    }

    pub fn tool_position(&self) -> [f64; 3] {
        self.tool_pose().position
    }

    pub fn apply_cmd_vel(&mut self, cmd: Twist) {
        self.rover.cmd = cmd;
    }

    pub fn apply_joint_cmd(&mut self, cmd: JointCommand) {
        self.arm.cmd = cmd;
    }

    /// Engaging attaches the nearest graspable object within the grasp radius;
    /// releasing drops whatever is held at its current pose. The command is
    /// recorded either way; a miss shows up as `NothingInReach`.
    pub fn apply_gripper(&mut self, cmd: GripperCmd) -> Vec<SimEvent> {
        let start = self.pending.len();
        if cmd.engage {
            self.gripper_engaged = true;
            if !self.holding_anything() {
                self.try_grasp();
            }
        } else {
            self.gripper_engaged = false;
            self.release_all();
        }
        self.pending[start..].to_vec()
    }

    /// Zero rover and arm velocity.
    pub fn halt(&mut self) {
        self.rover.cmd = Twist::ZERO;
        self.arm.cmd = JointCommand::STOP;
    }

    fn holding_anything(&self) -> bool {
        self.objects.iter().any(|o| o.attached_to == Some(Attachment::Gripper))
    }

    fn try_grasp(&mut self) {
        let tool = Point3::from(self.tool_position());
        let nearest = self
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.kind.graspable())
            .map(|(i, o)| (i, (object_point(o) - tool).norm()))
            .filter(|(_, d)| *d <= self.config.grasp_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, _)) => {
                self.objects[i].attached_to = Some(Attachment::Gripper);
                let object = self.objects[i].id.clone();
                self.record("ATTACH", &object);
                self.pending.push(SimEvent::Attached { tick: self.tick, object });
            }
            None => self.pending.push(SimEvent::NothingInReach { tick: self.tick }),
        }
    }

    fn release_all(&mut self) {
        let held: Vec<usize> = (0..self.objects.len())
            .filter(|&i| self.objects[i].attached_to == Some(Attachment::Gripper))
            .collect();
        for i in held {
            self.objects[i].attached_to = None;
            let object = self.objects[i].id.clone();
            self.record("DETACH", &object);
            self.pending.push(SimEvent::Detached {
                tick: self.tick,
                object: object.clone(),
            });
            let (x, y) = (self.objects[i].pose.x, self.objects[i].pose.y);
            let bin = self
                .objects
                .iter()
                .find(|b| b.kind == ObjectKind::DepositBin && b.footprint_contains(x, y))
                .map(|b| b.id.clone());
            if let Some(into) = bin {
                self.record("DROP", &object);
                self.pending.push(SimEvent::Dropped {
                    tick: self.tick,
                    object,
                    into,
                });
            }
        }
    }

    fn record(&mut self, kind: &str, object: &str) {
        self.task_events.push(TaskEvent {
            tick: self.tick,
            kind: kind.to_owned(),
            object: object.to_owned(),
        });
    }

    pub fn step(&mut self, dt: f64) {
        assert!(dt > 0.0 && dt.is_finite(), "step needs dt > 0, got {dt}");
        self.step_rover(dt);
        self.step_arm(dt);
        self.follow_attachments();
        self.tick += 1;
        self.clock_s += dt;
    }

    /// Advances one configured tick.
    pub fn step_tick(&mut self) {
        self.step(self.config.tick_s);
    }

    fn step_rover(&mut self, dt: f64) {
        let v = self.rover.cmd.vx.clamp(-self.config.v_max, self.config.v_max);
        let w = self.rover.cmd.wz.clamp(-self.config.w_max, self.config.w_max);
        let (v, w) = (finite_or_zero(v), finite_or_zero(w));
        let p = self.rover.pose;
        let next = Pose2D {
            x: p.x + v * p.theta.cos() * dt,
            y: p.y + v * p.theta.sin() * dt,
            theta: normalize_angle(p.theta + w * dt),
        };
        if self.grid.occupied_at(next.x, next.y) {
            self.pending.push(SimEvent::Collision {
                tick: self.tick,
                attempted: next,
            });
            return;
        }
        self.rover.pose = next;

        let [sigma_xy, sigma_theta] = self.config.odom_noise;
        if sigma_xy > 0.0 || sigma_theta > 0.0 {
            let o = self.rover.odom;
            let nxy = Normal::new(0.0, sigma_xy.max(0.0)).expect("finite sigma");
            let nth = Normal::new(0.0, sigma_theta.max(0.0)).expect("finite sigma");
            self.rover.odom = Pose2D {
                x: o.x + v * o.theta.cos() * dt + nxy.sample(&mut self.rng),
                y: o.y + v * o.theta.sin() * dt + nxy.sample(&mut self.rng),
                theta: normalize_angle(o.theta + w * dt + nth.sample(&mut self.rng)),
            };
        } else {
            self.rover.odom = next;
        }
    }

    fn step_arm(&mut self, dt: f64) {
        let vmax = self.arm_model.max_joint_velocity;
        let cmd = self.arm.cmd;
        let before = self.arm.joints;
        for k in 0..JOINTS {
            let target = finite_or_zero(cmd.values[k]);
            let delta = match cmd.mode {
                JointMode::Position => (target - before[k]).clamp(-vmax * dt, vmax * dt),
                JointMode::Velocity => target.clamp(-vmax, vmax) * dt,
            };
            let limit = self.arm_model.limits[k];
            self.arm.joints[k] = (before[k] + delta).clamp(limit.min, limit.max);
            self.arm.joint_vel[k] = (self.arm.joints[k] - before[k]) / dt;
        }
    }

    fn follow_attachments(&mut self) {
        let tool = self.tool_position();
        let yaw = self.rover.pose.theta;
        for obj in &mut self.objects {
            if obj.attached_to == Some(Attachment::Gripper) {
                obj.pose = Pose2D {
                    x: tool[0],
                    y: tool[1],
                    theta: yaw,
                };
                obj.height = tool[2];
            }
        }
    }

    pub fn scan(&mut self) -> LaserScan {
        let params = self.config.lidar;
        self.scan_with(&params)
    }

    pub fn scan_with(&mut self, params: &LidarParams) -> LaserScan {
        scan_lidar(&self.grid, &self.rover.pose, params, &mut self.rng)
    }

    pub fn drain_events(&mut self) -> Vec<SimEvent> {
        std::mem::take(&mut self.pending)
    }

    pub fn evaluate_task(&self) -> TaskScore {
        let points = self
            .objects
            .iter()
            .filter(|o| scores(self.spec.task, o, &self.objects))
            .count() as u32;
        TaskScore {
            points,
            events: self.task_events.clone(),
        }
    }

    pub fn render_snapshot(&self) -> Frame {
        let p = self.rover.pose;
        let base = self.arm_base();
        let b = base.translation.vector;
        let (_, _, base_yaw) = base.rotation.euler_angles();
        let tool = self.tool_position();
        let mut entities = vec![
            Entity {
                id: "rover".into(),
                kind: "ROVER".into(),
                x: p.x,
                y: p.y,
                z: 0.0,
                theta: p.theta,
                attached_to: None,
                joints: None,
            },
            Entity {
                id: "arm".into(),
                kind: "ARM".into(),
                x: b.x,
                y: b.y,
                z: b.z,
                theta: base_yaw,
                attached_to: None,
                joints: Some(self.arm.joints),
            },
            Entity {
                id: "tool".into(),
                kind: "TOOL".into(),
                x: tool[0],
                y: tool[1],
                z: tool[2],
                theta: 0.0,
                attached_to: None,
                joints: None,
            },
        ];
        entities.extend(self.objects.iter().map(|o| Entity {
            id: o.id.clone(),
            kind: o.kind.as_str().into(),
            x: o.pose.x,
            y: o.pose.y,
            z: o.height,
            theta: o.pose.theta,
            attached_to: o.attached_to.as_ref().map(ToString::to_string),
            joints: None,
        }));
        Frame {
            tick: self.tick,
            entities,
        }
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn object_point(o: &TaskObject) -> Point3<f64> {
    Point3::new(o.pose.x, o.pose.y, o.height)
}

fn scores(task: TaskKind, obj: &TaskObject, all: &[TaskObject]) -> bool {
    if obj.attached_to.is_some() {
        return false;
    }
    let (x, y) = (obj.pose.x, obj.pose.y);
    match (task, obj.kind) {
        (TaskKind::FruitPluck, ObjectKind::Fruit) => all
            .iter()
            .any(|b| b.kind == ObjectKind::DepositBin && b.footprint_contains(x, y)),
        (TaskKind::WarehouseSort, ObjectKind::Box) => obj.zone.as_ref().is_some_and(|zone| {
            all.iter()
                .any(|b| b.id == *zone && b.kind == ObjectKind::DepositBin && b.footprint_contains(x, y))
        }),
        _ => false,
    }
}

/// Recomputes the score from a snapshot alone, using the static bins of `spec`.
pub fn score_from_frame(frame: &Frame, spec: &WorldSpec) -> u32 {
    frame
        .entities
        .iter()
        .filter_map(|e| {
            let kind = match e.kind.as_str() {
                "FRUIT" => ObjectKind::Fruit,
                "BOX" => ObjectKind::Box,
                _ => return None,
            };
            let original = spec.objects.iter().find(|o| o.id == e.id)?;
            Some(TaskObject {
                id: e.id.clone(),
                kind,
                pose: Pose2D {
                    x: e.x,
                    y: e.y,
                    theta: e.theta,
                },
                height: e.z,
                attached_to: e.attached_to.as_deref().and_then(|a| a.parse().ok()),
                footprint: None,
                zone: original.zone.clone(),
            })
        })
        .filter(|o| scores(spec.task, o, &spec.objects))
        .count() as u32
}
