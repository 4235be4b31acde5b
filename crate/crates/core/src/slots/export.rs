//! The shared spreadsheet: `time,team_id,status,join_link`, RFC 4180.

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use super::model::{Slot, SlotStatus};

pub const HEADER: [&str; 4] = ["time", "team_id", "status", "join_link"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRow {
    pub time: String,
    pub team_id: String,
    pub status: String,
    pub join_link: String,
}

impl From<&Slot> for SheetRow {
    fn from(s: &Slot) -> Self {
        SheetRow {
            time: s.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            team_id: s.team_id.as_ref().map(ToString::to_string).unwrap_or_default(),
            status: s.status.to_string(),
            join_link: s.join_link.clone().unwrap_or_default(),
        }
    }
}

/// One row per non-draft slot, ordered by start time then id.
pub fn export_csv<'a>(slots: impl IntoIterator<Item = &'a Slot>) -> String {
    let mut visible: Vec<&Slot> = slots.into_iter().filter(|s| s.status != SlotStatus::Draft).collect();
    visible.sort_by_key(|s| (s.start, s.id));
    write_rows(visible.into_iter().map(SheetRow::from))
}

pub fn write_rows(rows: impl IntoIterator<Item = SheetRow>) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<SheetRow>, csv::Error> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    r.deserialize().collect()
}
