//! Session recordings: a magic line followed by length-prefixed entries
//! `[kind u8][offset_us u64 LE][len u32 LE][bytes]`. Offsets count from the
//! start of the recording.

use std::io::{Read, Write};
use std::path::Path;

use super::{ClientError, Identity, Link};
use crate::bus::{decode_frame, encode_frame, Envelope, Op, Topic};

pub const REC_MAGIC: &[u8] = b"TELELAB-REC 1\n";
const MAX_ENTRY: u32 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// The grant returned at `AUTH`, as JSON.
    Grant,
    Sent,
    Received,
}

impl EntryKind {
    fn byte(self) -> u8 {
        match self {
            EntryKind::Grant => b'G',
            EntryKind::Sent => b'T',
            EntryKind::Received => b'R',
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            b'G' => Some(EntryKind::Grant),
            b'T' => Some(EntryKind::Sent),
            b'R' => Some(EntryKind::Received),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub kind: EntryKind,
    pub offset_us: u64,
    pub bytes: Vec<u8>,
}

fn write_entry<W: Write>(w: &mut W, e: &Entry) -> std::io::Result<()> {
    let len = u32::try_from(e.bytes.len()).map_err(|_| std::io::Error::other("entry too large"))?;
    w.write_all(&[e.kind.byte()])?;
    w.write_all(&e.offset_us.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&e.bytes)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recording {
    pub entries: Vec<Entry>,
}

impl Recording {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = REC_MAGIC.to_vec();
        for e in &self.entries {
            write_entry(&mut out, e).expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        read_recording(std::fs::File::open(path)?)
    }

    /// Namespace of the recorded session, if it was a student session.
    pub fn namespace(&self) -> Option<Topic> {
        let g = self.entries.iter().find(|e| e.kind == EntryKind::Grant)?;
        let v: serde_json::Value = serde_json::from_slice(&g.bytes).ok()?;
        Topic::new(v.get("namespace")?.as_str()?).ok()
    }

    pub fn frames(&self, kind: EntryKind) -> impl Iterator<Item = (u64, Envelope)> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.kind == kind)
            .filter_map(|e| decode_frame(&e.bytes).ok().map(|env| (e.offset_us, env)))
    }

    pub fn duration_us(&self) -> u64 {
        self.entries.iter().map(|e| e.offset_us).max().unwrap_or(0)
    }
}

pub fn read_recording<R: Read>(mut r: R) -> Result<Recording, ClientError> {
    let bad = |m: &str| ClientError::Recording(m.to_owned());
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut rest = data.strip_prefix(REC_MAGIC).ok_or_else(|| bad("missing header"))?;
    let mut entries = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 13 {
            return Err(bad("truncated entry header"));
        }
        let kind = EntryKind::from_byte(rest[0]).ok_or_else(|| bad("unknown entry kind"))?;
        let offset_us = u64::from_le_bytes(rest[1..9].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(rest[9..13].try_into().expect("4 bytes"));
        if len > MAX_ENTRY || rest.len() - 13 < len as usize {
            return Err(bad("truncated entry body"));
        }
        let end = 13 + len as usize;
        entries.push(Entry {
            kind,
            offset_us,
            bytes: rest[13..end].to_vec(),
        });
        rest = &rest[end..];
    }
    Ok(Recording { entries })
}

/// Wraps a link and logs every frame in both directions to `out`.
pub struct Recorder<L: Link, W: Write> {
    inner: L,
    out: W,
    t0: u64,
}

impl<L: Link, W: Write> Recorder<L, W> {
    pub fn new(inner: L, mut out: W) -> Result<Self, ClientError> {
        let t0 = inner.now_us();
        out.write_all(REC_MAGIC)?;
        let grant = Entry {
            kind: EntryKind::Grant,
            offset_us: 0,
            bytes: inner.identity().to_json().to_string().into_bytes(),
        };
        write_entry(&mut out, &grant)?;
        Ok(Recorder { inner, out, t0 })
    }

    fn log(&mut self, kind: EntryKind, env: &Envelope) -> Result<(), ClientError> {
        let e = Entry {
            kind,
            offset_us: self.inner.now_us().saturating_sub(self.t0),
            bytes: encode_frame(env),
        };
        write_entry(&mut self.out, &e)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(L, W), ClientError> {
        self.out.flush()?;
        Ok((self.inner, self.out))
    }
}

impl<L: Link, W: Write> Link for Recorder<L, W> {
    fn identity(&self) -> &Identity {
        self.inner.identity()
    }

    fn now_us(&self) -> u64 {
        self.inner.now_us()
    }

    fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        self.inner.send(env)?;
        self.log(EntryKind::Sent, env)
    }

    fn recv_until(&mut self, deadline_us: u64) -> Result<Option<Envelope>, ClientError> {
        let got = self.inner.recv_until(deadline_us)?;
        if let Some(env) = &got {
            self.log(EntryKind::Received, env)?;
        }
        Ok(got)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub sent: u64,
    pub received: u64,
    pub errors: u64,
}

fn retarget(topic: &Topic, from: Option<&Topic>, to: &Identity) -> Result<Topic, ClientError> {
    match (from.and_then(|ns| topic.strip_namespace(ns)), to) {
        (Some(rel), Identity::Student(g)) => g.namespace.join(rel).map_err(|e| ClientError::Recording(e.to_string())),
        _ => Ok(topic.clone()),
    }
}

/// Re-sends the recorded outbound frames at their recorded offsets, moved
/// into this session's namespace, then keeps receiving until the recorded
/// duration has elapsed.
pub fn replay<L: Link>(link: &mut L, rec: &Recording) -> Result<ReplayReport, ClientError> {
    let from = rec.namespace();
    let t0 = link.now_us();
    let mut report = ReplayReport::default();
    let drain = |link: &mut L, until: u64, report: &mut ReplayReport| -> Result<(), ClientError> {
        while link.now_us() < until {
            if let Some(env) = link.recv_until(until)? {
                report.received += 1;
                report.errors += u64::from(env.op == Op::Err);
            }
        }
        Ok(())
    };
    for (offset, env) in rec.frames(EntryKind::Sent) {
        drain(link, t0 + offset, &mut report)?;
        let env = Envelope {
            topic: retarget(&env.topic, from.as_ref(), link.identity())?,
            stamp_us: link.now_us(),
            ..env
        };
        link.send(&env)?;
        report.sent += 1;
    }
    drain(link, t0 + rec.duration_us(), &mut report)?;
    Ok(report)
}
