use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::time::Duration;

use super::ClientError;
use crate::bus::{decode_frame, encode_frame, ClientId, Envelope};
use crate::gateway::{GatewayError, Grant};
use crate::host::server::unix_now_us;
use crate::host::{Host, HostError};

/// Who the host says we are after `AUTH`.
#[derive(Debug, Clone, PartialEq)]
pub enum Identity {
    Operator,
    Student(Grant),
}

impl Identity {
    fn from_grant_json(v: serde_json::Value) -> Result<Self, ClientError> {
        if v.get("role").and_then(|r| r.as_str()) == Some("operator") {
            return Ok(Identity::Operator);
        }
        serde_json::from_value(v)
            .map(Identity::Student)
            .map_err(|e| ClientError::BrokenConnection(format!("unreadable grant: {e}")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Identity::Operator => serde_json::json!({ "role": "operator" }),
            Identity::Student(g) => serde_json::to_value(g).expect("grant serializes"),
        }
    }
}

/// One authenticated bus connection with its own notion of time.
pub trait Link {
    fn identity(&self) -> &Identity;
    fn now_us(&self) -> u64;
    fn send(&mut self, env: &Envelope) -> Result<(), ClientError>;
    /// Next inbound frame, or `None` once `deadline_us` passes without one.
    fn recv_until(&mut self, deadline_us: u64) -> Result<Option<Envelope>, ClientError>;
}

/// In-process link that drives a shared [`Host`] on its simulated clock.
/// Waiting advances the host, so runs are deterministic and fast.
pub struct LocalLink {
    host: Arc<Mutex<Host>>,
    client: ClientId,
    identity: Identity,
    inbox: VecDeque<Envelope>,
}

fn lock(host: &Mutex<Host>) -> MutexGuard<'_, Host> {
    host.lock().unwrap_or_else(|p| p.into_inner())
}

impl LocalLink {
    pub fn connect(host: Arc<Mutex<Host>>, token: &str) -> Result<Self, ClientError> {
        let (principal, grant) = {
            let h = lock(&host);
            h.authenticate(token).map_err(|e| match e {
                HostError::Gateway(GatewayError::Expired) => ClientError::Expired,
                _ => ClientError::AuthFailed,
            })?
        };
        let client = lock(&host).connect(principal);
        Ok(LocalLink {
            identity: Identity::from_grant_json(grant)?,
            host,
            client,
            inbox: VecDeque::new(),
        })
    }

    pub fn client_id(&self) -> ClientId {
        self.client
    }

    /// Moves queued frames into the inbox and plays transport for any
    /// connection the host has kicked. `false` once ours is gone.
    fn collect(&mut self, h: &mut Host) -> bool {
        for f in h.drain(self.client) {
            if let Ok(env) = decode_frame(&f) {
                self.inbox.push_back(env);
            }
        }
        for c in h.take_kicked() {
            h.disconnect(c);
        }
        h.principal(self.client).is_some()
    }
}

impl Drop for LocalLink {
    fn drop(&mut self) {
        lock(&self.host).disconnect(self.client);
    }
}

impl Link for LocalLink {
    fn identity(&self) -> &Identity {
        &self.identity
    }

    fn now_us(&self) -> u64 {
        lock(&self.host).now_us()
    }

    fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        let host = self.host.clone();
        let mut h = lock(&host);
        if !self.collect(&mut h) {
            return Err(ClientError::BrokenConnection("session closed".into()));
        }
        let _ = h.handle_frame(self.client, &encode_frame(env));
        Ok(())
    }

    fn recv_until(&mut self, deadline_us: u64) -> Result<Option<Envelope>, ClientError> {
        let host = self.host.clone();
        loop {
            let mut h = lock(&host);
            let alive = self.collect(&mut h);
            if let Some(env) = self.inbox.pop_front() {
                return Ok(Some(env));
            }
            if !alive {
                return Err(ClientError::BrokenConnection("session closed".into()));
            }
            let now = h.now_us();
            if now >= deadline_us {
                return Ok(None);
            }
            let next = h.next_wakeup().clamp(now + 1, deadline_us);
            h.advance_to(next);
        }
    }
}

enum Inbound {
    Frame(Envelope),
    Closed(String),
}

/// Line-framed TCP link on the wall clock. A reader thread keeps receiving
/// while the caller is busy.
pub struct TcpLink {
    stream: TcpStream,
    rx: mpsc::Receiver<Inbound>,
    identity: Identity,
    closed: Option<String>,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs, token: &str) -> Result<Self, ClientError> {
        let broken = |e: std::io::Error| ClientError::BrokenConnection(e.to_string());
        let mut stream = TcpStream::connect(addr).map_err(broken)?;
        stream.set_nodelay(true).map_err(broken)?;
        stream.write_all(format!("AUTH {token}\n").as_bytes()).map_err(broken)?;
        let mut reader = BufReader::new(stream.try_clone().map_err(broken)?);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(broken)?;
        let line = line.trim_end();
        let identity = match line.split_once(' ') {
            Some(("OK", grant)) => {
                let v = serde_json::from_str(grant)
                    .map_err(|e| ClientError::BrokenConnection(format!("unreadable grant: {e}")))?;
                Identity::from_grant_json(v)?
            }
            _ if line == "ERR EXPIRED" => return Err(ClientError::Expired),
            _ if line.starts_with("ERR") => return Err(ClientError::AuthFailed),
            _ => return Err(ClientError::BrokenConnection(format!("unexpected greeting {line:?}"))),
        };
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            loop {
                buf.clear();
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) => {
                        let _ = tx.send(Inbound::Closed("closed by host".into()));
                        return;
                    }
                    Ok(_) => {
                        if let Ok(env) = decode_frame(&buf) {
                            if tx.send(Inbound::Frame(env)).is_err() {
                                return;
                            }
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Inbound::Closed(e.to_string()));
                        return;
                    }
                }
            }
        });
        Ok(TcpLink {
            stream,
            rx,
            identity,
            closed: None,
        })
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

impl Link for TcpLink {
    fn identity(&self) -> &Identity {
        &self.identity
    }

    fn now_us(&self) -> u64 {
        unix_now_us()
    }

    fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        if let Some(why) = &self.closed {
            return Err(ClientError::BrokenConnection(why.clone()));
        }
        self.stream
            .write_all(&encode_frame(env))
            .map_err(|e| ClientError::BrokenConnection(e.to_string()))
    }

    fn recv_until(&mut self, deadline_us: u64) -> Result<Option<Envelope>, ClientError> {
        if let Some(why) = &self.closed {
            return Err(ClientError::BrokenConnection(why.clone()));
        }
        let wait = Duration::from_micros(deadline_us.saturating_sub(unix_now_us()));
        match self.rx.recv_timeout(wait) {
            Ok(Inbound::Frame(env)) => Ok(Some(env)),
            Ok(Inbound::Closed(why)) => {
                self.closed = Some(why.clone());
                Err(ClientError::BrokenConnection(why))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ClientError::BrokenConnection("reader stopped".into()))
            }
        }
    }
}
