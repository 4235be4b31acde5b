//! The single owner of e-stop state, watchdog histories and the latest scan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::SafetyConfig;
use super::verdict::{check_command, Command, Decision, ReasonCode, SafetyVerdict, Stamped};
use super::watchdog::{AlertEvent, Watchdog};
use crate::bus::schema::{LaserScan, Severity};
use crate::sim::kinematics::ArmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EStopSource {
    Operator,
    Watchdog,
    CollisionGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EStopState {
    pub engaged: bool,
    pub engaged_by: Option<EStopSource>,
    pub since_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Authority {
    Operator,
    Student,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReleaseRefused {
    #[error("only an operator can release the e-stop")]
    NotOperator,
    #[error("critical condition still active: {0}")]
    CriticalActive(String),
}

impl ReleaseRefused {
    pub fn code(&self) -> &'static str {
        "RELEASE_REFUSED"
    }
}

/// Side effects the owner must carry out, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum SafetyAction {
    /// Publish on `/sys/alerts`.
    Alert(AlertEvent),
    /// Send zero velocity to rover and arm.
    InjectStop,
}

#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    config: SafetyConfig,
    arm: ArmModel,
    estop: EStopState,
    watchdog: Watchdog,
    scan: Option<Stamped<LaserScan>>,
    actions: Vec<SafetyAction>,
}

pub const ESTOP_ENGAGED: &str = "ESTOP_ENGAGED";
pub const ESTOP_RELEASED: &str = "ESTOP_RELEASED";

impl SafetyMonitor {
    pub fn new(config: SafetyConfig, arm: ArmModel) -> Self {
        SafetyMonitor {
            watchdog: Watchdog::new(config.watchdog_min_hz, config.watchdog_window),
            config,
            arm,
            estop: EStopState {
                engaged: false,
                engaged_by: None,
                since_us: 0,
            },
            scan: None,
            actions: Vec::new(),
        }
    }

    pub fn config(&self) -> &SafetyConfig {
        &self.config
    }

    pub fn estop(&self) -> EStopState {
        self.estop
    }

    pub fn watchdog(&self) -> &Watchdog {
        &self.watchdog
    }

    pub fn monitor_topic(&mut self, topic: &str, now_us: u64) {
        self.watchdog.register(topic, now_us);
    }

    pub fn observe(&mut self, topic: &str, stamp_us: u64) {
        self.watchdog.observe(topic, stamp_us);
    }

    pub fn observe_scan(&mut self, scan: LaserScan, stamp_us: u64) {
        self.scan = Some(Stamped { value: scan, stamp_us });
    }

    pub fn latest_scan(&self) -> Option<&Stamped<LaserScan>> {
        self.scan.as_ref()
    }

    /// Runs the full pipeline. An arm-collision block also engages the e-stop,
    /// with its alert queued ahead of the returned verdict.
    pub fn check(&mut self, cmd: &Command, now_us: u64) -> SafetyVerdict {
        if self.estop.engaged {
            return SafetyVerdict::block(ReasonCode::Estop, "emergency stop engaged");
        }
        let verdict = check_command(&self.arm, self.scan.as_ref(), cmd, now_us, &self.config);
        if verdict.decision == Decision::Block && verdict.code == ReasonCode::ArmCollision {
            self.engage(EStopSource::CollisionGuard, now_us, &verdict.detail);
        }
        verdict
    }

    /// Engages once; repeated calls while engaged change nothing.
    pub fn engage(&mut self, source: EStopSource, now_us: u64, detail: &str) -> EStopState {
        if !self.estop.engaged {
            self.estop = EStopState {
                engaged: true,
                engaged_by: Some(source),
                since_us: now_us,
            };
            self.actions.push(SafetyAction::Alert(AlertEvent::new(
                Severity::Critical,
                ESTOP_ENGAGED,
                format!("{source:?}: {detail}"),
                now_us,
            )));
            self.actions.push(SafetyAction::InjectStop);
        }
        self.estop
    }

    pub fn release(&mut self, authority: Authority, now_us: u64) -> Result<EStopState, ReleaseRefused> {
        if authority != Authority::Operator {
            return Err(ReleaseRefused::NotOperator);
        }
        let critical = self.watchdog.critical_topics();
        if !critical.is_empty() {
            return Err(ReleaseRefused::CriticalActive(critical.join(", ")));
        }
        if self.estop.engaged {
            self.estop = EStopState {
                engaged: false,
                engaged_by: None,
                since_us: now_us,
            };
            self.actions.push(SafetyAction::Alert(AlertEvent::new(
                Severity::Info,
                ESTOP_RELEASED,
                "released by operator",
                now_us,
            )));
        }
        Ok(self.estop)
    }

    /// Rate check; a CRITICAL result engages the e-stop after its own alert.
    pub fn poll(&mut self, now_us: u64) -> Vec<AlertEvent> {
        let alerts = self.watchdog.poll(now_us);
        let mut stalled = None;
        for a in &alerts {
            self.actions.push(SafetyAction::Alert(a.clone()));
            if a.severity == Severity::Critical && stalled.is_none() {
                stalled = Some(a.detail.clone());
            }
        }
        if let Some(detail) = stalled {
            self.engage(EStopSource::Watchdog, now_us, &detail);
        }
        alerts
    }

    pub fn take_actions(&mut self) -> Vec<SafetyAction> {
        std::mem::take(&mut self.actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::schema::{GripperCmd, Twist};
    use crate::sim::bundled;

    fn monitor() -> SafetyMonitor {
        let arm = bundled::ur5();
        SafetyMonitor::new(SafetyConfig::for_arm(&arm), arm)
    }

    fn open_scan() -> LaserScan {
        LaserScan {
            angle_min: -std::f64::consts::PI,
            angle_increment: std::f64::consts::PI / 180.0,
            range_max: 10.0,
            ranges: vec![5.0; 360],
        }
    }

    #[test]
    fn engage_blocks_everything_and_injects_once() {
        let mut m = monitor();
        m.observe_scan(open_scan(), 0);
        let go = Command::CmdVel(Twist { vx: 0.1, wz: 0.0 });
        assert!(m.check(&go, 0).passes());
        m.engage(EStopSource::Operator, 10, "button");
        m.engage(EStopSource::Operator, 20, "button again");
        let actions = m.take_actions();
        assert_eq!(actions.len(), 2);
        assert!(matches!(&actions[0], SafetyAction::Alert(a) if a.severity == Severity::Critical));
        assert_eq!(actions[1], SafetyAction::InjectStop);
        for cmd in [go, Command::CmdVel(Twist::ZERO), Command::Gripper(GripperCmd { engage: false })] {
            assert_eq!(m.check(&cmd, 30).code, ReasonCode::Estop);
        }
    }

    #[test]
    fn release_rules() {
        let mut m = monitor();
        m.observe_scan(open_scan(), 0);
        m.engage(EStopSource::Operator, 0, "");
        assert_eq!(m.release(Authority::Student, 1), Err(ReleaseRefused::NotOperator));
        assert!(!m.release(Authority::Operator, 2).unwrap().engaged);
        assert_eq!(m.check(&Command::CmdVel(Twist { vx: 0.1, wz: 0.0 }), 3).decision, Decision::Allow);
    }

    #[test]
    fn watchdog_critical_engages_and_holds_release() {
        let mut m = monitor();
        m.monitor_topic("/rover/scan", 0);
        assert_eq!(m.poll(1_000_000)[0].severity, Severity::Warn);
        assert!(!m.estop().engaged);
        assert_eq!(m.poll(1_100_000)[0].severity, Severity::Critical);
        assert_eq!(m.estop().engaged_by, Some(EStopSource::Watchdog));
        let actions = m.take_actions();
        let kinds: Vec<_> = actions
            .iter()
            .map(|a| match a {
                SafetyAction::Alert(a) => a.code.as_str(),
                SafetyAction::InjectStop => "STOP",
            })
            .collect();
        assert_eq!(kinds, ["WATCHDOG_LOW_RATE", "WATCHDOG_STALLED", "ESTOP_ENGAGED", "STOP"]);
        assert!(matches!(m.release(Authority::Operator, 1_200_000), Err(ReleaseRefused::CriticalActive(_))));
    }
}
