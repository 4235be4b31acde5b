//! Lab-time booking: operators create and activate one-hour slots, teams
//! book them, and everyone reads a generated spreadsheet.

pub mod export;
pub mod model;
pub mod service;

pub use export::{export_csv, parse_csv, write_rows, SheetRow};
pub use model::{InvalidTeamId, Slot, SlotId, SlotStatus, Team, TeamId, DEFAULT_SLOT_SECONDS};
pub use service::{LogRecord, Notification, SlotError, SlotEvent, SlotService};
