//! Student-side client: a [`Link`] to the host, scripted runs, recording,
//! replay, teleoperation and topic echo.

mod link;
mod record;
mod script;
mod tools;

pub use link::{Identity, Link, LocalLink, TcpLink};
pub use record::{read_recording, replay, Entry, EntryKind, Recorder, Recording, ReplayReport, REC_MAGIC};
pub use script::{run_script, Cmp, Predicate, Publish, Reduce, RunReport, Script, ScriptStep, StepAction, WaitFor};
pub use tools::{echo, teleop, TeleopKey};

use crate::bus::Topic;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("session expired")]
    Expired,
    #[error("step {step}: wait_for {topic} timed out after {timeout_ms} ms")]
    ScriptTimeout { step: usize, topic: String, timeout_ms: u64 },
    #[error("connection broken: {0}")]
    BrokenConnection(String),
    #[error("invalid script: {0}")]
    Script(String),
    #[error("invalid recording: {0}")]
    Recording(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::AuthFailed | ClientError::Expired => 2,
            ClientError::ScriptTimeout { .. } => 3,
            ClientError::BrokenConnection(_) => 4,
            ClientError::Script(_) | ClientError::Recording(_) | ClientError::Io(_) => 1,
        }
    }
}

/// Absolute topics pass through; relative ones are joined to the session
/// namespace.
pub fn resolve_topic(identity: &Identity, name: &str) -> Result<Topic, ClientError> {
    if name.starts_with('/') {
        return Topic::new(name).map_err(|e| ClientError::Script(e.to_string()));
    }
    match identity {
        Identity::Student(g) => g.namespace.join(name).map_err(|e| ClientError::Script(e.to_string())),
        Identity::Operator => Err(ClientError::Script(format!(
            "relative topic {name:?} needs a student session"
        ))),
    }
}

/// Scripts shipped with the crate.
pub mod scripts {
    /// Three fruits into the bin, arm only, in the greenhouse world.
    pub const GREENHOUSE_PLUCK: &str = include_str!("../../assets/scripts/greenhouse_pluck.json");
    /// Both boxes into their zones in the warehouse world.
    pub const WAREHOUSE_SORT: &str = include_str!("../../assets/scripts/warehouse_sort.json");
    /// One metre forward, then a scan check on the obstacle ahead.
    pub const DRIVE_FORWARD: &str = include_str!("../../assets/scripts/drive_forward.json");
}
