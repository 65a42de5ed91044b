mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde_json::Value;

use common::random_walks;
use pros_service::app::{ServiceEvent, SessionState};

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Sends one HTTP/1.0 request and returns the status code and body.
fn request(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.0\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, body.to_string())
}

#[test]
fn the_binary_serves_queries_events_and_the_console() {
    let f = random_walks();
    let console = f.path("console");
    std::fs::create_dir_all(&console).unwrap();
    std::fs::write(console.join("index.html"), "<p>console</p>").unwrap();
    let mut args = f.args(&["serve", "--port", "0", "--policy", "prob:0.05", "--console"]);
    args.push(console.to_str().unwrap());
    let mut child = Command::new(env!("CARGO_BIN_EXE_pros"))
        .args(&args)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let port: u16 = line.trim().rsplit(':').next().unwrap().parse().unwrap();

    let (status, body) = request(port, "GET", "/v1/health", "");
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["status"], "ok");
    assert_eq!(request(port, "GET", "/", ""), (200, "<p>console</p>".to_string()));

    let (status, body) = request(port, "POST", "/v1/queries", r#"{"series_index": 3999}"#);
    assert_eq!(status, 200, "{body}");
    let id = serde_json::from_str::<Value>(&body).unwrap()["session"].as_str().unwrap().to_string();
    let (status, body) = request(port, "GET", &format!("/v1/queries/{id}/events"), "");
    assert_eq!(status, 200);
    let events: Vec<ServiceEvent> = body
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect();
    let last = events.last().unwrap();
    assert!(last.terminal);
    assert!(matches!(last.state, SessionState::StoppedByPolicy | SessionState::Finished));
    assert!(last.decision.is_some() || last.state == SessionState::Finished);

    let (status, body) = request(port, "POST", &format!("/v1/queries/{id}/stop"), "");
    assert_eq!(status, 200);
    let state = serde_json::from_str::<Value>(&body).unwrap()["state"].clone();
    assert_eq!(state, serde_json::to_value(last.state).unwrap());
    assert_eq!(request(port, "POST", "/v1/queries", "[]").0, 400);
    assert_eq!(request(port, "GET", "/v1/queries/nope/events", "").0, 404);
}
