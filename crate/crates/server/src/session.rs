//! Session actors. Each session is one task that owns its participants,
//! pending keystroke buffers and conversation context; connections talk to
//! it over a channel, so no state is shared between sessions.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use keysense_core::corpus::EventRecord;
use keysense_core::model::{
    validate_event_stream, ChatMessage, Key, KeyAction, KeyEvent, MessageEventWindow, Role,
    MAX_MESSAGE_CHARS,
};
use keysense_core::text::{redact_pii, ConversationContext};
use tokio::sync::{mpsc, oneshot};

use crate::config::Config;
use crate::inference::{Inference, InferenceEngine};
use crate::persist::{RecordStore, SessionRecord};
use crate::protocol::{ClientFrame, ErrorCode, ServerFrame};

/// Outbound frames for one connection.
pub type Outbox = mpsc::UnboundedSender<ServerFrame>;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Counters describing one user's pending keystroke buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub pending: usize,
    pub dropped: u64,
}

enum Command {
    Join {
        conn: u64,
        role: Role,
        user_id: String,
        out: Outbox,
        reply: oneshot::Sender<Result<(), ServerFrame>>,
    },
    Key {
        conn: u64,
        event: KeyEvent,
    },
    Chat {
        conn: u64,
        text: String,
    },
    Leave {
        conn: u64,
    },
    Featurize {
        user_id: String,
    },
    Inferred(Box<Completed>),
    Stats {
        user_id: String,
        reply: oneshot::Sender<BufferStats>,
    },
}

struct Completed {
    message: ChatMessage,
    user_id: String,
    events: Vec<KeyEvent>,
    dropped: u64,
    result: Result<Inference, String>,
}

struct Participant {
    role: Role,
    user_id: String,
    out: Outbox,
}

struct PendingSend {
    message: ChatMessage,
    /// Latest client timestamp seen when the send arrived.
    send_t: Option<f64>,
    context: ConversationContext,
}

#[derive(Default)]
struct UserBuffer {
    events: VecDeque<KeyEvent>,
    dropped: u64,
    max_t: Option<f64>,
    sends: VecDeque<PendingSend>,
}

/// Splits the buffer at `send_t`: everything typed up to the send belongs
/// to the message, plus the later releases of keys still held at the send
/// (the Enter that sent it). The remainder stays buffered for the next
/// message. The returned window is validated (sorted, orphans dropped,
/// dangling presses closed); a clock reset yields an empty window.
pub fn take_window(buffer: &mut VecDeque<KeyEvent>, send_t: Option<f64>) -> Vec<KeyEvent> {
    let Some(send_t) = send_t else {
        return Vec::new();
    };
    let (mut window, after): (Vec<KeyEvent>, Vec<KeyEvent>) =
        buffer.drain(..).partition(|e| e.t_ms <= send_t);
    let mut sorted: Vec<&KeyEvent> = window.iter().collect();
    sorted.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
    let mut open: HashMap<Key, usize> = HashMap::new();
    for e in sorted {
        let n = open.entry(e.key.clone()).or_default();
        match e.action {
            KeyAction::Press => *n += 1,
            KeyAction::Release => *n = n.saturating_sub(1),
        }
    }
    let mut after = after;
    after.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
    for e in after {
        match open.get_mut(&e.key) {
            Some(n) if *n > 0 && e.action == KeyAction::Release => {
                *n -= 1;
                window.push(e);
            }
            _ => buffer.push_back(e),
        }
    }
    match validate_event_stream(window) {
        Ok(v) => v.events,
        Err(e) => {
            log::warn!("discarding keystroke window: {e}");
            Vec::new()
        }
    }
}

struct Shared {
    config: Config,
    engine: InferenceEngine,
    store: RecordStore,
}

/// Registry of live sessions.
pub struct Hub {
    sessions: Mutex<HashMap<String, mpsc::UnboundedSender<Command>>>,
    shared: Arc<Shared>,
    next_conn: AtomicU64,
}

impl Hub {
    pub fn new(config: Config, engine: InferenceEngine) -> Arc<Hub> {
        let store = RecordStore::new(config.persistence.path.clone());
        Arc::new(Hub {
            sessions: Mutex::new(HashMap::new()),
            shared: Arc::new(Shared {
                config,
                engine,
                store,
            }),
            next_conn: AtomicU64::new(1),
        })
    }

    pub fn store(&self) -> &RecordStore {
        &self.shared.store
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("hub lock").len()
    }

    /// A fresh connection handle that sends its frames to `out`.
    pub fn connect(self: &Arc<Self>, out: Outbox) -> Connection {
        Connection {
            id: self.next_conn.fetch_add(1, Ordering::Relaxed),
            hub: Arc::clone(self),
            out,
            joined: None,
        }
    }

    fn session(self: &Arc<Self>, session_id: &str) -> mpsc::UnboundedSender<Command> {
        let mut sessions = self.sessions.lock().expect("hub lock");
        if let Some(tx) = sessions.get(session_id).filter(|tx| !tx.is_closed()) {
            return tx.clone();
        }
        let (tx, rx) = mpsc::unbounded_channel();
        sessions.insert(session_id.to_string(), tx.clone());
        let actor = Actor {
            session_id: session_id.to_string(),
            shared: Arc::clone(&self.shared),
            tx: tx.downgrade(),
            participants: HashMap::new(),
            buffers: HashMap::new(),
            context: ConversationContext::default(),
            seq: 0,
            in_flight: 0,
        };
        let hub = Arc::downgrade(self);
        let me = tx.downgrade();
        let id = session_id.to_string();
        tokio::spawn(async move {
            actor.run(rx).await;
            if let Some(hub) = hub.upgrade() {
                let mut sessions = hub.sessions.lock().expect("hub lock");
                let mine = match (sessions.get(&id), me.upgrade()) {
                    (Some(tx), Some(me)) => tx.same_channel(&me),
                    _ => false,
                };
                if mine {
                    sessions.remove(&id);
                }
            }
        });
        tx
    }

    /// Buffer counters for a user, for diagnostics and tests.
    pub async fn buffer_stats(self: &Arc<Self>, session_id: &str, user_id: &str) -> Option<BufferStats> {
        let tx = self.sessions.lock().expect("hub lock").get(session_id).cloned()?;
        let (reply, rx) = oneshot::channel();
        tx.send(Command::Stats {
            user_id: user_id.to_string(),
            reply,
        })
        .ok()?;
        rx.await.ok()
    }
}

struct Actor {
    session_id: String,
    shared: Arc<Shared>,
    tx: mpsc::WeakUnboundedSender<Command>,
    participants: HashMap<u64, Participant>,
    buffers: HashMap<String, UserBuffer>,
    context: ConversationContext,
    seq: u64,
    in_flight: usize,
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            self.handle(cmd);
            if self.participants.is_empty() && self.idle() {
                break;
            }
        }
        log::debug!("session {} closed", self.session_id);
    }

    fn idle(&self) -> bool {
        self.in_flight == 0 && self.buffers.values().all(|b| b.sends.is_empty())
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join {
                conn,
                role,
                user_id,
                out,
                reply,
            } => {
                let taken = role != Role::Supervisor
                    && self.participants.values().any(|p| p.role == role);
                if taken {
                    let _ = reply.send(Err(ServerFrame::error(
                        ErrorCode::RoleTaken,
                        format!("session already has a {role}"),
                    )));
                    return;
                }
                let _ = out.send(ServerFrame::Joined {
                    session_id: self.session_id.clone(),
                    role,
                    user_id: user_id.clone(),
                });
                self.participants.insert(conn, Participant { role, user_id, out });
                let _ = reply.send(Ok(()));
            }
            Command::Key { conn, event } => {
                let Some(p) = self.participants.get(&conn) else { return };
                let cap = self.shared.config.features.max_pending_events;
                let buf = self.buffers.entry(p.user_id.clone()).or_default();
                if buf.events.len() >= cap {
                    buf.events.pop_front();
                    buf.dropped += 1;
                    if buf.dropped.is_power_of_two() {
                        log::warn!(
                            "session {}: pending buffer full, {} events dropped",
                            self.session_id,
                            buf.dropped
                        );
                    }
                }
                buf.max_t = Some(buf.max_t.map_or(event.t_ms, |m| m.max(event.t_ms)));
                buf.events.push_back(event);
            }
            Command::Chat { conn, text } => self.chat(conn, text),
            Command::Leave { conn } => {
                self.participants.remove(&conn);
            }
            Command::Featurize { user_id } => self.featurize(&user_id),
            Command::Inferred(done) => self.complete(*done),
            Command::Stats { user_id, reply } => {
                let stats = self
                    .buffers
                    .get(&user_id)
                    .map(|b| BufferStats {
                        pending: b.events.len(),
                        dropped: b.dropped,
                    })
                    .unwrap_or_default();
                let _ = reply.send(stats);
            }
        }
    }

    fn chat(&mut self, conn: u64, text: String) {
        let Some(p) = self.participants.get(&conn) else { return };
        if text.trim().is_empty() {
            let _ = p.out.send(ServerFrame::error(ErrorCode::EmptyMessage, "message text is empty"));
            return;
        }
        if text.chars().count() > MAX_MESSAGE_CHARS {
            let _ = p.out.send(ServerFrame::error(
                ErrorCode::OversizeMessage,
                format!("messages are limited to {MAX_MESSAGE_CHARS} characters"),
            ));
            return;
        }
        let (role, user_id) = (p.role, p.user_id.clone());
        self.seq += 1;
        let message = ChatMessage {
            message_id: format!("m{}", self.seq),
            session_id: self.session_id.clone(),
            sender_role: role,
            text,
            sent_at_ms: now_ms(),
        };
        self.broadcast(&ServerFrame::ChatMessage {
            message_id: message.message_id.clone(),
            sender_role: role,
            text: message.text.clone(),
            ts: message.sent_at_ms,
        });
        let context = self.context.clone();
        self.context.push(role, redact_pii(&message.text));
        let buf = self.buffers.entry(user_id.clone()).or_default();
        buf.sends.push_back(PendingSend {
            message,
            send_t: buf.max_t,
            context,
        });
        let tx = self.tx.clone();
        let grace = Duration::from_millis(self.shared.config.features.grace_ms);
        tokio::spawn(async move {
            tokio::time::sleep(grace).await;
            if let Some(tx) = tx.upgrade() {
                let _ = tx.send(Command::Featurize { user_id });
            }
        });
    }

    fn featurize(&mut self, user_id: &str) {
        let Some(buf) = self.buffers.get_mut(user_id) else { return };
        let Some(send) = buf.sends.pop_front() else { return };
        let events = take_window(&mut buf.events, send.send_t);
        let dropped = buf.dropped;
        self.in_flight += 1;
        let shared = Arc::clone(&self.shared);
        let tx = self.tx.clone();
        let user_id = user_id.to_string();
        tokio::spawn(async move {
            let window = MessageEventWindow {
                message_id: send.message.message_id.clone(),
                events,
            };
            let result = shared
                .engine
                .infer(&send.message, &window, &send.context)
                .await
                .map_err(|e| e.to_string());
            if let Some(tx) = tx.upgrade() {
                let _ = tx.send(Command::Inferred(Box::new(Completed {
                    message: send.message,
                    user_id,
                    events: window.events,
                    dropped,
                    result,
                })));
            }
        });
    }

    fn complete(&mut self, done: Completed) {
        self.in_flight -= 1;
        let inference = match done.result {
            Ok(i) => i,
            Err(e) => {
                log::error!("inference failed for {}: {e}", done.message.message_id);
                return;
            }
        };
        let sender = done.message.sender_role;
        let show_own = self.shared.config.privacy.show_own_emotions;
        let frame = ServerFrame::EmotionUpdate(inference.prediction.clone());
        for p in self.participants.values() {
            let deliver = match p.role {
                Role::Supervisor => true,
                Role::Responder => sender == Role::Client,
                Role::Client => false,
            } || (show_own && p.user_id == done.user_id);
            if deliver {
                let _ = p.out.send(frame.clone());
            }
        }
        let privacy = &self.shared.config.privacy;
        let record = SessionRecord {
            session_id: self.session_id.clone(),
            message_id: done.message.message_id.clone(),
            sender_role: sender,
            user_id: done.user_id,
            text: if privacy.redact {
                redact_pii(&done.message.text)
            } else {
                done.message.text.clone()
            },
            text_redacted: privacy.redact,
            sent_at_ms: done.message.sent_at_ms,
            predicted_at_ms: now_ms(),
            features: inference.features,
            text_emotion: inference.text_emotion,
            prediction: inference.prediction,
            dropped_events: done.dropped,
            raw_events: privacy
                .retention
                .then(|| done.events.iter().map(EventRecord::from).collect()),
        };
        if let Err(e) = self.shared.store.append(&record) {
            log::error!("cannot persist {}: {e}", record.message_id);
        }
    }

    fn broadcast(&self, frame: &ServerFrame) {
        for p in self.participants.values() {
            let _ = p.out.send(frame.clone());
        }
    }
}

/// One transport connection. Feed it decoded lines; replies and broadcasts
/// arrive on the outbox it was created with.
pub struct Connection {
    id: u64,
    hub: Arc<Hub>,
    out: Outbox,
    joined: Option<Joined>,
}

struct Joined {
    role: Role,
    session: mpsc::UnboundedSender<Command>,
}

impl Connection {
    fn reply(&self, frame: ServerFrame) {
        let _ = self.out.send(frame);
    }

    pub async fn handle_line(&mut self, line: &str) {
        let frame = match crate::protocol::parse_client_frame(line) {
            Ok(f) => f,
            Err(err) => return self.reply(err),
        };
        match frame {
            ClientFrame::Join {
                session_id,
                role,
                user_id,
            } => {
                if self.joined.is_some() {
                    return self.reply(ServerFrame::error(ErrorCode::AlreadyJoined, "already joined"));
                }
                if session_id.is_empty() || user_id.is_empty() {
                    return self.reply(ServerFrame::error(
                        ErrorCode::BadFrame,
                        "session_id and user_id must be non-empty",
                    ));
                }
                // A session actor may be shutting down; retry once on a fresh one.
                for _ in 0..2 {
                    let session = self.hub.session(&session_id);
                    let (reply, rx) = oneshot::channel();
                    let sent = session.send(Command::Join {
                        conn: self.id,
                        role,
                        user_id: user_id.clone(),
                        out: self.out.clone(),
                        reply,
                    });
                    if sent.is_err() {
                        continue;
                    }
                    match rx.await {
                        Ok(Ok(())) => {
                            self.joined = Some(Joined { role, session });
                            return;
                        }
                        Ok(Err(frame)) => return self.reply(frame),
                        Err(_) => continue,
                    }
                }
                self.reply(ServerFrame::error(ErrorCode::BadFrame, "session unavailable"));
            }
            ClientFrame::KeyEvent { key, action, t_ms } => {
                let Some(joined) = self.author() else { return };
                if !t_ms.is_finite() || t_ms < 0.0 {
                    return self.reply(ServerFrame::error(
                        ErrorCode::InvalidEvent,
                        format!("t_ms must be finite and non-negative, got {t_ms}"),
                    ));
                }
                let _ = joined.session.send(Command::Key {
                    conn: self.id,
                    event: KeyEvent::new(key, action, t_ms),
                });
            }
            ClientFrame::ChatMessage { text, .. } => {
                let Some(joined) = self.author() else { return };
                let _ = joined.session.send(Command::Chat { conn: self.id, text });
            }
        }
    }

    /// The joined state of a participant allowed to type, or an error sent.
    fn author(&self) -> Option<&Joined> {
        match &self.joined {
            None => {
                self.reply(ServerFrame::error(ErrorCode::NotJoined, "send a join frame first"));
                None
            }
            Some(j) if j.role == Role::Supervisor => {
                self.reply(ServerFrame::error(ErrorCode::NotPermitted, "supervisors are read-only"));
                None
            }
            Some(j) => Some(j),
        }
    }

    /// Leaves the session; pending messages are still featurized.
    pub fn close(&mut self) {
        if let Some(j) = self.joined.take() {
            let _ = j.session.send(Command::Leave { conn: self.id });
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
    }
}
