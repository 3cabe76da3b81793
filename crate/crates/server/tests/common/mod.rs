#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use keysense_core::model::{EmotionCategory, MessageEventWindow};
use keysense_core::synth::{generate_message, profile};
use keysense_server::config::Config;
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

pub fn test_config(dir: &std::path::Path) -> Config {
    let mut c = Config::default();
    c.server.port = 0;
    c.persistence.path = dir.to_path_buf();
    c
}

pub struct Peer {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl Peer {
    pub async fn connect(addr: SocketAddr) -> Peer {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Peer {
            reader: BufReader::new(r),
            writer: w,
        }
    }

    pub async fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).await.unwrap();
        self.writer.write_all(b"\n").await.unwrap();
    }

    pub async fn send(&mut self, v: Value) {
        self.send_raw(&v.to_string()).await;
    }

    /// Next frame, or None if nothing arrives within `ms`.
    pub async fn recv_within(&mut self, ms: u64) -> Option<Value> {
        let mut line = String::new();
        match tokio::time::timeout(Duration::from_millis(ms), self.reader.read_line(&mut line)).await {
            Ok(Ok(n)) if n > 0 => Some(serde_json::from_str(&line).unwrap()),
            _ => None,
        }
    }

    pub async fn recv(&mut self) -> Value {
        self.recv_within(5_000).await.expect("frame expected")
    }

    pub async fn expect_error(&mut self, code: &str) {
        let f = self.recv().await;
        assert_eq!(f["type"], "error", "{f}");
        assert_eq!(f["code"], code, "{f}");
    }

    pub async fn join(&mut self, session: &str, role: &str, user: &str) {
        self.send(json!({"type":"join","session_id":session,"role":role,"user_id":user}))
            .await;
        let f = self.recv().await;
        assert_eq!(f["type"], "joined", "{f}");
    }

    /// Sends the window's key events shifted by `offset_ms`, then the chat
    /// message. Returns the last timestamp sent.
    pub async fn type_and_send(&mut self, window: &MessageEventWindow, text: &str, offset_ms: f64) -> f64 {
        let mut last = offset_ms;
        for e in &window.events {
            last = e.t_ms + offset_ms;
            self.send(json!({"type":"key_event","key":e.key,"action":e.action,"t_ms":last}))
                .await;
        }
        self.send(json!({"type":"chat_message","text":text})).await;
        last
    }
}

pub fn synthetic(category: EmotionCategory, seed: u64) -> (String, MessageEventWindow) {
    let (msg, window, _) = generate_message(&profile(category), seed);
    (msg.text, window)
}
