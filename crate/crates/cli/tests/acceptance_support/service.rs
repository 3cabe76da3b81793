//! Scripted TCP session against the real `keysense serve` binary.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use keysense_core::model::EmotionCategory;
use keysense_core::synth::{generate_message, profile};
use serde_json::{json, Value};

struct Serve(Child);

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

struct Peer {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Peer {
    fn connect(addr: &str) -> Result<Peer, String> {
        let s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
        s.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
        s.set_nodelay(true).map_err(|e| e.to_string())?;
        Ok(Peer {
            reader: BufReader::new(s.try_clone().map_err(|e| e.to_string())?),
            writer: s,
        })
    }

    fn send(&mut self, v: Value) -> Result<(), String> {
        writeln!(self.writer, "{v}").map_err(|e| e.to_string())
    }

    fn recv(&mut self) -> Result<Value, String> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(n) if n > 0 => serde_json::from_str(&line).map_err(|e| e.to_string()),
            Ok(_) => Err("connection closed".into()),
            Err(e) => Err(format!("no frame: {e}")),
        }
    }

    fn join(&mut self, role: &str, user: &str) -> Result<(), String> {
        self.send(json!({"type":"join","session_id":"acceptance","role":role,"user_id":user}))?;
        let f = self.recv()?;
        if f["type"] != "joined" {
            return Err(format!("{role} join answered with {f}"));
        }
        Ok(())
    }
}

pub fn end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sessions = dir.path().join("sessions");
    let config = dir.path().join("serve.toml");
    std::fs::write(
        &config,
        format!(
            "[server]\nport = 0\n[analyzer]\nmode = \"lexicon\"\n[privacy]\nretention = false\n\
             [persistence]\npath = {:?}\n",
            sessions.display().to_string()
        ),
    )
    .map_err(|e| e.to_string())?;
    let child = Command::new(env!("CARGO_BIN_EXE_keysense"))
        .args(["serve", "--config"])
        .arg(&config)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut serve = Serve(child);
    let mut banner = String::new();
    BufReader::new(serve.0.stdout.take().ok_or("no stdout")?)
        .read_line(&mut banner)
        .map_err(|e| e.to_string())?;
    let addr = banner
        .split_whitespace()
        .find_map(|w| w.strip_prefix("tcp="))
        .ok_or_else(|| format!("unexpected banner {banner:?}"))?
        .to_string();

    let mut client = Peer::connect(&addr)?;
    let mut responder = Peer::connect(&addr)?;
    let mut supervisor = Peer::connect(&addr)?;
    client.join("client", "c1")?;
    responder.join("responder", "r1")?;
    supervisor.join("supervisor", "s1")?;

    let mut worst = Duration::ZERO;
    let mut offset = 0.0;
    let categories = [EmotionCategory::Sadness, EmotionCategory::Fear, EmotionCategory::Anger];
    for (i, c) in categories.into_iter().enumerate() {
        let (msg, window, _) = generate_message(&profile(c), 1_000 + i as u64);
        let mut last = offset;
        for e in &window.events {
            last = e.t_ms + offset;
            client.send(json!({"type":"key_event","key":e.key,"action":e.action,"t_ms":last}))?;
        }
        client.send(json!({"type":"chat_message","text":msg.text}))?;
        offset = last + 3_000.0;
        for (name, peer) in [("responder", &mut responder), ("supervisor", &mut supervisor)] {
            let chat = peer.recv()?;
            let seen = Instant::now();
            if chat["type"] != "chat_message" {
                return Err(format!("{name}: expected chat_message first, got {chat}"));
            }
            let update = peer.recv()?;
            let latency = seen.elapsed();
            if update["type"] != "emotion_update" || update["message_id"] != chat["message_id"] {
                return Err(format!("{name}: expected emotion_update for {}, got {update}", chat["message_id"]));
            }
            if latency > Duration::from_millis(500) {
                return Err(format!("{name}: update {latency:?} after its chat_message"));
            }
            worst = worst.max(latency);
        }
    }
    // Give the service a moment to append the last record.
    std::thread::sleep(Duration::from_millis(100));
    let log = std::fs::read_to_string(sessions.join("acceptance.ndjson")).map_err(|e| e.to_string())?;
    let records: Vec<Value> = log
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if records.len() != 3 {
        return Err(format!("{} persisted records, expected 3", records.len()));
    }
    let raw = records
        .iter()
        .filter(|r| r.get("raw_events").is_some())
        .count()
        + log.matches("\"t_ms\"").count();
    if raw != 0 {
        return Err(format!("persisted log contains {raw} raw key event traces"));
    }
    drop(serve);
    Ok(format!(
        "3/3 updates after their chat_message, worst latency {} ms; 0 raw events persisted",
        worst.as_millis()
    ))
}
