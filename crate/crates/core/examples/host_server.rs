//! Runs the host on loopback with a booked demo session and prints how to
//! reach it. Stops after `SECS` seconds (default: until Ctrl-C).
//!
//! cargo run --example host_server -- [SECS]
//! then, from another shell: telelab-cli --port 7447 --token <token> echo odom --count 5

use std::time::Duration;

use telelab::gateway::SessionMode;
use telelab::host::server::{start, unix_now_us, ServerOptions};
use telelab::host::{demo_session, HostConfig};
use telelab::slots::TeamId;

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let secs: Option<u64> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let cfg = HostConfig::greenhouse("operator-secret");
    let (host, session) = demo_session(cfg, &TeamId::new("t01").unwrap(), SessionMode::StudentSide, unix_now_us())
        .expect("demo session");
    let handle = start(
        host,
        ServerOptions {
            bus_addr: "127.0.0.1:7447".parse().unwrap(),
            http_addr: "127.0.0.1:8080".parse().unwrap(),
            console_dir: None,
        },
    )
    .await?;
    println!("bus     tcp://{}", handle.bus_addr);
    println!("http    http://{}/api/status", handle.http_addr);
    println!("console ws://{}/ws/console?token=operator-secret", handle.http_addr);
    println!("session token for team t01: {}", session.token.unwrap());
    match secs {
        Some(s) => tokio::time::sleep(Duration::from_secs(s)).await,
        None => tokio::signal::ctrl_c().await?,
    }
    handle.shutdown().await;
    Ok(())
}
