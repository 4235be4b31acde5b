//! A real host on loopback ports plus small blocking HTTP, bus and CLI
//! helpers.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Output;
use std::time::Duration;

use serde_json::{json, Value};
use telelab::gateway::{Session, SessionMode};
use telelab::host::server::{start, unix_now_us, ServerHandle, ServerOptions};
use telelab::host::{demo_session, HostConfig};
use telelab::slots::TeamId;

use super::checks::Outcome;

pub const OPERATOR: &str = "operator-secret";
pub const CLI: &str = env!("CARGO_BIN_EXE_telelab-cli");

pub struct Server {
    rt: tokio::runtime::Runtime,
    handle: Option<ServerHandle>,
    pub bus: SocketAddr,
    pub http: SocketAddr,
    pub session: Session,
    agent: ureq::Agent,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or(Value::Null)
    }
}

impl Server {
    /// Greenhouse host with team `t01` in an open session.
    pub fn start(mode: SessionMode, console_dir: Option<PathBuf>) -> Server {
        let mut cfg = HostConfig::greenhouse(OPERATOR);
        cfg.seed = Some(42);
        let (host, session) = demo_session(cfg, &TeamId::new("t01").unwrap(), mode, unix_now_us()).unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let local: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let handle = rt
            .block_on(start(
                host,
                ServerOptions {
                    bus_addr: local,
                    http_addr: local,
                    console_dir,
                },
            ))
            .unwrap();
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Server {
            bus: handle.bus_addr,
            http: handle.http_addr,
            handle: Some(handle),
            rt,
            session,
            agent,
        }
    }

    pub fn token(&self) -> &str {
        self.session.token.as_deref().unwrap()
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.http)
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.expect("http request");
        Reply {
            status: resp.status().as_u16(),
            body: resp.body_mut().read_to_string().unwrap_or_default(),
        }
    }

    pub fn get(&self, path: &str, bearer: Option<&str>) -> Reply {
        let mut req = self.agent.get(self.url(path));
        if let Some(b) = bearer {
            req = req.header("Authorization", format!("Bearer {b}"));
        }
        Self::finish(req.call())
    }

    pub fn post(&self, path: &str, bearer: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = self.agent.post(self.url(path));
        if let Some(b) = bearer {
            req = req.header("Authorization", format!("Bearer {b}"));
        }
        Self::finish(match body {
            Some(v) => req.content_type("application/json").send(v.to_string()),
            None => req.send_empty(),
        })
    }

    pub fn delete(&self, path: &str, bearer: Option<&str>) -> Reply {
        let mut req = self.agent.delete(self.url(path));
        if let Some(b) = bearer {
            req = req.header("Authorization", format!("Bearer {b}"));
        }
        Self::finish(req.call())
    }

    /// Closes the current session and returns its report.
    pub fn close_session(&mut self) -> Value {
        let r = self.delete(&format!("/api/sessions/{}", self.session.id), Some(OPERATOR));
        assert_eq!(r.status, 200, "{}", r.body);
        r.json()
    }

    /// Books a fresh slot for `t01` starting now and opens a session on it.
    pub fn reopen(&mut self, mode: SessionMode, duration_s: u32) -> Reply {
        let start = chrono::DateTime::from_timestamp((unix_now_us() / 1_000_000) as i64, 0).unwrap();
        let slot = self.post(
            "/api/slots",
            Some(OPERATOR),
            Some(json!({"start": start.to_rfc3339(), "duration_s": duration_s})),
        );
        assert_eq!(slot.status, 201, "{}", slot.body);
        let id = slot.json()["id"].as_u64().unwrap();
        assert_eq!(self.post(&format!("/api/slots/{id}/activate"), Some(OPERATOR), None).status, 200);
        let booked = self.post(&format!("/api/slots/{id}/book"), None, Some(json!({"team_id": "t01"})));
        assert_eq!(booked.status, 200, "{}", booked.body);
        let opened = self.post(
            "/api/sessions",
            None,
            Some(json!({"slot_id": id, "team_id": "t01", "mode": mode})),
        );
        if opened.status == 201 {
            self.session = serde_json::from_str(&opened.body).unwrap();
        }
        opened
    }

    /// Sends `AUTH` on a raw bus connection and returns the reply line.
    pub fn bus_auth(&self, token: &str) -> (String, BufReader<TcpStream>) {
        let mut s = TcpStream::connect(self.bus).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        writeln!(s, "AUTH {token}").unwrap();
        let mut r = BufReader::new(s);
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        (line, r)
    }

    /// Runs the student CLI against this server.
    pub fn cli(&self, token: &str, args: &[&str]) -> Output {
        std::process::Command::new(CLI)
            .arg("--port")
            .arg(self.bus.port().to_string())
            .arg("--token")
            .arg(token)
            .args(args)
            .output()
            .unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            self.rt.block_on(h.shutdown());
        }
    }
}

fn write_script(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn points(report: &Value) -> Option<u64> {
    report["score"]["points"].as_u64()
}

/// The bundled greenhouse solution through the real binary over TCP on the
/// wall clock: `record` in one session, `replay` into a second one.
pub fn cli_end_to_end() -> Outcome {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), "pluck.json", telelab::client::scripts::GREENHOUSE_PLUCK);
    let rec = dir.path().join("pluck.rec").to_string_lossy().into_owned();
    let mut server = Server::start(SessionMode::StudentSide, None);
    let token = server.token().to_owned();
    let out = server.cli(&token, &["record", &rec, "--script", &script]);
    if !out.status.success() {
        return Outcome::new(
            false,
            format!("record exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
        );
    }
    let first = server.close_session();
    let opened = server.reopen(SessionMode::StudentSide, 3600);
    if opened.status != 201 {
        return Outcome::new(false, format!("could not open a second session: {}", opened.body));
    }
    let token = server.token().to_owned();
    let out = server.cli(&token, &["replay", &rec]);
    let second = server.close_session();
    let (p1, p2) = (points(&first), points(&second));
    let denied = first["counts"]["denied"].as_u64();
    Outcome::new(
        out.status.success() && p1 == Some(3) && p2 == p1 && denied == Some(0),
        format!(
            "telelab-cli record scored {p1:?}/3, replay scored {p2:?}/3, {denied:?} denied, {:.1} s wall",
            started.elapsed().as_secs_f64()
        ),
    )
}
