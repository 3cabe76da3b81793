//! Listeners: newline-delimited JSON over raw TCP, and the same frames over
//! WebSocket text messages for browsers.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use keysense_core::fusion::{load_suite, FusionError, ModelSuite};
use keysense_core::text::AnalyzerError;
use thiserror::Error;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

use crate::analyzer::build_analyzer;
use crate::config::Config;
use crate::inference::InferenceEngine;
use crate::protocol::{ErrorCode, ServerFrame, MAX_FRAME_BYTES};
use crate::session::{Connection, Hub};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot load model suite {path}: {source}")]
    Suite {
        path: String,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn suite(path: Option<&Path>) -> Result<Option<Arc<ModelSuite>>, ServerError> {
    path.map(|p| {
        load_suite(p).map(Arc::new).map_err(|source| ServerError::Suite {
            path: p.display().to_string(),
            source,
        })
    })
    .transpose()
}

/// Loads the configured suites and analyzer.
pub fn build_engine(config: &Config) -> Result<InferenceEngine, ServerError> {
    Ok(InferenceEngine {
        primary: suite(config.model.model_path.as_deref())?,
        fallback: suite(config.model.fallback_model_path.as_deref())?,
        analyzer: build_analyzer(&config.analyzer)?,
        pause_threshold_ms: config.features.pause_threshold_ms,
    })
}

pub struct Server {
    hub: Arc<Hub>,
    tcp: TcpListener,
    ws: Option<TcpListener>,
}

impl Server {
    /// Binds the listeners described by `config`.
    pub async fn bind(config: Config) -> Result<Server, ServerError> {
        let engine = build_engine(&config)?;
        Server::bind_with(config, engine).await
    }

    /// Binds with an explicit engine, e.g. one with a custom analyzer.
    pub async fn bind_with(config: Config, engine: InferenceEngine) -> Result<Server, ServerError> {
        let host = config.server.host.clone();
        let tcp = TcpListener::bind((host.as_str(), config.server.port)).await?;
        let ws = match config.server.ws_port {
            Some(port) => Some(TcpListener::bind((host.as_str(), port)).await?),
            None => None,
        };
        Ok(Server {
            hub: Hub::new(config, engine),
            tcp,
            ws,
        })
    }

    pub fn tcp_addr(&self) -> std::io::Result<SocketAddr> {
        self.tcp.local_addr()
    }

    pub fn ws_addr(&self) -> Option<std::io::Result<SocketAddr>> {
        self.ws.as_ref().map(|l| l.local_addr())
    }

    pub fn hub(&self) -> Arc<Hub> {
        Arc::clone(&self.hub)
    }

    /// Accepts connections until the task is dropped.
    pub async fn run(self) -> Result<(), ServerError> {
        let Server { hub, tcp, ws } = self;
        if let Some(ws) = ws {
            let hub = Arc::clone(&hub);
            tokio::spawn(async move {
                loop {
                    match ws.accept().await {
                        Ok((stream, peer)) => {
                            tokio::spawn(serve_ws(Arc::clone(&hub), stream, peer));
                        }
                        Err(e) => log::warn!("ws accept failed: {e}"),
                    }
                }
            });
        }
        loop {
            let (stream, peer) = tcp.accept().await?;
            tokio::spawn(serve_tcp(Arc::clone(&hub), stream, peer));
        }
    }

    /// Binds, then runs on a background task. Returns the bound addresses.
    pub async fn spawn(config: Config) -> Result<RunningServer, ServerError> {
        let server = Server::bind(config).await?;
        Ok(RunningServer::start(server))
    }
}

/// A server running on a background task; aborted on drop.
pub struct RunningServer {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    pub hub: Arc<Hub>,
    task: tokio::task::JoinHandle<Result<(), ServerError>>,
}

impl RunningServer {
    pub fn start(server: Server) -> RunningServer {
        let tcp_addr = server.tcp_addr().expect("bound listener has an address");
        let ws_addr = server.ws_addr().map(|a| a.expect("bound listener has an address"));
        let hub = server.hub();
        RunningServer {
            tcp_addr,
            ws_addr,
            hub,
            task: tokio::spawn(server.run()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

enum Line {
    Frame(String),
    TooLong,
    Eof,
}

/// Reads one newline-terminated line of at most `max` bytes. Longer lines
/// are consumed and reported without being buffered.
async fn read_line<R: AsyncBufRead + Unpin>(reader: &mut R, max: usize) -> std::io::Result<Line> {
    let mut buf = Vec::new();
    let mut too_long = false;
    loop {
        let chunk = reader.fill_buf().await?;
        if chunk.is_empty() {
            return Ok(if buf.is_empty() && !too_long {
                Line::Eof
            } else if too_long {
                Line::TooLong
            } else {
                Line::Frame(String::from_utf8_lossy(&buf).into_owned())
            });
        }
        let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        if !too_long {
            buf.extend_from_slice(&chunk[..take]);
            if buf.len() > max + 1 {
                too_long = true;
                buf.clear();
            }
        }
        reader.consume(take);
        if done {
            if too_long {
                return Ok(Line::TooLong);
            }
            while matches!(buf.last(), Some(b'\n' | b'\r')) {
                buf.pop();
            }
            return Ok(Line::Frame(String::from_utf8_lossy(&buf).into_owned()));
        }
    }
}

fn too_long() -> ServerFrame {
    ServerFrame::error(
        ErrorCode::BadFrame,
        format!("frame exceeds {MAX_FRAME_BYTES} bytes"),
    )
}

async fn serve_tcp(hub: Arc<Hub>, stream: TcpStream, peer: SocketAddr) {
    log::debug!("tcp connection from {peer}");
    let (read, mut write) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerFrame>();
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if write.write_all(frame.to_line().as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut conn: Connection = hub.connect(tx.clone());
    let mut reader = BufReader::new(read);
    loop {
        match read_line(&mut reader, MAX_FRAME_BYTES).await {
            Ok(Line::Frame(line)) if line.trim().is_empty() => {}
            Ok(Line::Frame(line)) => conn.handle_line(&line).await,
            Ok(Line::TooLong) => {
                let _ = tx.send(too_long());
            }
            Ok(Line::Eof) | Err(_) => break,
        }
    }
    conn.close();
    drop(conn);
    drop(tx);
    let _ = writer.await;
    log::debug!("tcp connection from {peer} closed");
}

async fn serve_ws(hub: Arc<Hub>, stream: TcpStream, peer: SocketAddr) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("ws handshake from {peer} failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerFrame>();
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            let text = serde_json::to_string(&frame).expect("frames always serialize");
            if sink.send(Message::text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let mut conn = hub.connect(tx.clone());
    while let Some(msg) = source.next().await {
        match msg {
            Ok(Message::Text(text)) => {
                if text.len() > MAX_FRAME_BYTES {
                    let _ = tx.send(too_long());
                    continue;
                }
                for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                    conn.handle_line(line).await;
                }
            }
            Ok(Message::Binary(_)) => {
                let _ = tx.send(ServerFrame::error(ErrorCode::BadFrame, "binary messages are not supported"));
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    conn.close();
    drop(conn);
    drop(tx);
    let _ = writer.await;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn line_reader_limits_length() {
        let data = format!("short\n{}\nnext\nlast", "x".repeat(100));
        let mut r = BufReader::with_capacity(7, data.as_bytes());
        let mut out = Vec::new();
        loop {
            match read_line(&mut r, 10).await.unwrap() {
                Line::Frame(s) => out.push(s),
                Line::TooLong => out.push("<too long>".into()),
                Line::Eof => break,
            }
        }
        assert_eq!(out, vec!["short", "<too long>", "next", "last"]);
    }
}
