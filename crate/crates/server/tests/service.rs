mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use common::{synthetic, test_config, Peer};
use keysense_core::classifier::{ClassifierParams, ForestParams};
use keysense_core::corpus::label_records;
use keysense_core::features::DEFAULT_PAUSE_THRESHOLD_MS;
use keysense_core::fusion::{save_suite, train_suite, Mode};
use keysense_core::model::{EmotionCategory, Role};
use keysense_core::synth::{generate_corpus, CorpusConfig};
use keysense_core::text::{AnalyzerError, ConversationContext, TextAnalyzer, TextEmotion};
use keysense_server::analyzer::FallbackAnalyzer;
use keysense_server::server::{build_engine, RunningServer};
use keysense_server::{Config, Server};
use serde_json::json;

async fn start(config: Config) -> RunningServer {
    Server::spawn(config).await.unwrap()
}

#[tokio::test]
async fn chat_precedes_update_and_fan_out_follows_roles() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(test_config(dir.path())).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut responder = Peer::connect(srv.tcp_addr).await;
    let mut supervisor = Peer::connect(srv.tcp_addr).await;
    client.join("s1", "client", "c").await;
    responder.join("s1", "responder", "r").await;
    supervisor.join("s1", "supervisor", "boss").await;

    let (text, window) = synthetic(EmotionCategory::Anger, 1);
    client.type_and_send(&window, &text, 0.0).await;
    for peer in [&mut responder, &mut supervisor] {
        let chat = peer.recv().await;
        assert_eq!(chat["type"], "chat_message");
        assert_eq!(chat["message_id"], "m1");
        assert_eq!(chat["sender_role"], "client");
        assert_eq!(chat["text"], text.as_str());
        let update = peer.recv().await;
        assert_eq!(update["type"], "emotion_update", "{update}");
        assert_eq!(update["message_id"], "m1");
        assert_eq!(update["degraded"], false);
    }
    assert_eq!(client.recv().await["type"], "chat_message");
    assert!(client.recv_within(500).await.is_none(), "client saw its own update");

    responder.send(json!({"type":"chat_message","text":"I hear you, that sounds hard"})).await;
    assert_eq!(client.recv().await["message_id"], "m2");
    assert_eq!(responder.recv().await["message_id"], "m2");
    let s_chat = supervisor.recv().await;
    assert_eq!(s_chat["type"], "chat_message");
    let s_update = supervisor.recv().await;
    assert_eq!(s_update["type"], "emotion_update");
    assert_eq!(s_update["message_id"], "m2");
    // Pasted text has no keystrokes; with no suite the analyzer answers.
    assert_eq!(s_update["source"], "text");
    assert!(client.recv_within(400).await.is_none());
    assert!(responder.recv_within(100).await.is_none());
}

#[tokio::test]
async fn own_emotions_can_be_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path());
    config.privacy.show_own_emotions = true;
    let srv = start(config).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    client.join("s", "client", "c").await;
    client.send(json!({"type":"chat_message","text":"so happy today"})).await;
    assert_eq!(client.recv().await["type"], "chat_message");
    let update = client.recv().await;
    assert_eq!(update["type"], "emotion_update");
    assert_eq!(update["labels"][0]["label"], "happiness");
}

#[tokio::test]
async fn protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(test_config(dir.path())).await;
    let mut p = Peer::connect(srv.tcp_addr).await;
    p.send(json!({"type":"chat_message","text":"hi"})).await;
    p.expect_error("not_joined").await;
    p.send(json!({"type":"key_event","key":"a","action":"press","t_ms":1.0})).await;
    p.expect_error("not_joined").await;
    p.send_raw("{not json").await;
    p.expect_error("bad_frame").await;
    p.send_raw(&"x".repeat(300 * 1024)).await;
    p.expect_error("bad_frame").await;

    p.join("s", "client", "c").await;
    p.send(json!({"type":"join","session_id":"s","role":"client","user_id":"c"})).await;
    p.expect_error("already_joined").await;
    p.send(json!({"type":"chat_message","text":"  \n\t"})).await;
    p.expect_error("empty_message").await;
    p.send(json!({"type":"chat_message","text":"a".repeat(10_001)})).await;
    p.expect_error("oversize_message").await;
    p.send(json!({"type":"key_event","key":"a","action":"press","t_ms":-1.0})).await;
    p.expect_error("invalid_event").await;
    p.send(json!({"type":"chat_message","text":"a".repeat(10_000)})).await;
    assert_eq!(p.recv().await["type"], "chat_message");

    let mut second = Peer::connect(srv.tcp_addr).await;
    second
        .send(json!({"type":"join","session_id":"s","role":"client","user_id":"x"}))
        .await;
    second.expect_error("role_taken").await;
    let mut sup = Peer::connect(srv.tcp_addr).await;
    sup.join("s", "supervisor", "boss").await;
    sup.send(json!({"type":"chat_message","text":"hello"})).await;
    sup.expect_error("not_permitted").await;
}

#[tokio::test]
async fn role_is_released_on_disconnect() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(test_config(dir.path())).await;
    let mut a = Peer::connect(srv.tcp_addr).await;
    a.join("s", "responder", "r1").await;
    drop(a);
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut b = Peer::connect(srv.tcp_addr).await;
    b.join("s", "responder", "r2").await;
}

#[tokio::test]
async fn pending_buffer_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path());
    config.features.max_pending_events = 100;
    let srv = start(config).await;
    let mut p = Peer::connect(srv.tcp_addr).await;
    p.join("flood", "client", "c").await;
    for i in 0..250 {
        p.send(json!({"type":"key_event","key":"a","action":"press","t_ms":i as f64})).await;
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let stats = srv.hub.buffer_stats("flood", "c").await.unwrap();
        if stats.pending as u64 + stats.dropped == 250 {
            assert_eq!(stats.pending, 100);
            assert_eq!(stats.dropped, 150);
            break;
        }
        assert!(Instant::now() < deadline, "{stats:?}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

#[tokio::test]
async fn rapid_messages_get_separate_windows_and_retention_keeps_events() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path());
    config.privacy.retention = true;
    let srv = start(config).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut sup = Peer::connect(srv.tcp_addr).await;
    client.join("rapid", "client", "c").await;
    sup.join("rapid", "supervisor", "s").await;

    let (t1, w1) = synthetic(EmotionCategory::Sadness, 7);
    let (t2, w2) = synthetic(EmotionCategory::Happiness, 8);
    let last = client.type_and_send(&w1, &t1, 0.0).await;
    client.type_and_send(&w2, &t2, last + 50.0).await;
    let mut updates = 0;
    while updates < 2 {
        if sup.recv().await["type"] == "emotion_update" {
            updates += 1;
        }
    }
    tokio::time::sleep(Duration::from_millis(50)).await;
    let records = srv.hub.store().read("rapid").unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].message_id, "m1");
    assert_eq!(records[0].raw_events.as_ref().unwrap().len(), w1.events.len());
    assert_eq!(records[1].raw_events.as_ref().unwrap().len(), w2.events.len());
    assert!(records.iter().all(|r| r.features.kd_valid));
}

#[tokio::test]
async fn three_messages_within_deadline_and_no_raw_events_stored() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(test_config(dir.path())).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut responder = Peer::connect(srv.tcp_addr).await;
    client.join("timed", "client", "c").await;
    responder.join("timed", "responder", "r").await;
    let mut offset = 0.0;
    for (i, c) in [EmotionCategory::Fear, EmotionCategory::Neutral, EmotionCategory::Anger]
        .into_iter()
        .enumerate()
    {
        let (text, window) = synthetic(c, 100 + i as u64);
        offset = client.type_and_send(&window, &text, offset).await + 2_000.0;
        let chat = responder.recv().await;
        let seen = Instant::now();
        assert_eq!(chat["type"], "chat_message");
        let update = responder.recv().await;
        assert!(seen.elapsed() < Duration::from_millis(500), "{:?}", seen.elapsed());
        assert_eq!(update["type"], "emotion_update");
        assert_eq!(update["message_id"], chat["message_id"]);
    }
    tokio::time::sleep(Duration::from_millis(50)).await;
    let path = srv.hub.store().path_for("timed");
    let log = std::fs::read_to_string(path).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(!log.contains("raw_events"));
    assert!(!log.contains("\"t_ms\""));
}

#[tokio::test]
async fn redaction_applies_to_stored_text() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(test_config(dir.path())).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut sup = Peer::connect(srv.tcp_addr).await;
    client.join("pii", "client", "c").await;
    sup.join("pii", "supervisor", "s").await;
    client.send(json!({"type":"chat_message","text":"mail me at jo@example.com"})).await;
    sup.recv().await;
    sup.recv().await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    let records = srv.hub.store().read("pii").unwrap();
    assert!(!records[0].text.contains("jo@example.com"), "{}", records[0].text);
    assert!(records[0].text_redacted);
}

struct Broken;

#[async_trait]
impl TextAnalyzer for Broken {
    async fn analyze(&self, _: &ConversationContext, _: Role, _: &str) -> Result<TextEmotion, AnalyzerError> {
        Err(AnalyzerError::Unavailable("down".into()))
    }
    fn name(&self) -> &'static str {
        "broken"
    }
}

#[tokio::test]
async fn analyzer_failure_is_flagged_degraded() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path());
    let mut engine = build_engine(&config).unwrap();
    engine.analyzer = FallbackAnalyzer::new(Arc::new(Broken));
    let srv = RunningServer::start(Server::bind_with(config, engine).await.unwrap());
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut sup = Peer::connect(srv.tcp_addr).await;
    client.join("d", "client", "c").await;
    sup.join("d", "supervisor", "s").await;
    client.send(json!({"type":"chat_message","text":"I am so angry"})).await;
    sup.recv().await;
    let update = sup.recv().await;
    assert_eq!(update["degraded"], true);
    assert_eq!(update["labels"][0]["label"], "anger");
}

#[tokio::test]
async fn suites_route_typed_and_pasted_messages() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        per_category: [20; 7],
        ..Default::default()
    });
    let rows = label_records(&corpus, DEFAULT_PAUSE_THRESHOLD_MS).unwrap();
    let params = ClassifierParams::Forest(ForestParams {
        n_trees: 5,
        ..ForestParams::default()
    });
    let fusion_dir = dir.path().join("fusion");
    let text_dir = dir.path().join("text");
    save_suite(&train_suite(&rows, Mode::Fusion, &params, 1).unwrap(), &fusion_dir).unwrap();
    save_suite(&train_suite(&rows, Mode::Text, &params, 1).unwrap(), &text_dir).unwrap();

    let mut config = test_config(&dir.path().join("sessions"));
    config.model.model_path = Some(fusion_dir);
    config.model.fallback_model_path = Some(text_dir);
    let srv = start(config).await;
    let mut client = Peer::connect(srv.tcp_addr).await;
    let mut sup = Peer::connect(srv.tcp_addr).await;
    client.join("r", "client", "c").await;
    sup.join("r", "supervisor", "s").await;

    let (text, window) = synthetic(EmotionCategory::Sadness, 3);
    client.type_and_send(&window, &text, 0.0).await;
    sup.recv().await;
    assert_eq!(sup.recv().await["source"], "fusion");
    // Pasted: no keystrokes after the previous send.
    client.send(json!({"type":"chat_message","text":"pasted text"})).await;
    sup.recv().await;
    assert_eq!(sup.recv().await["source"], "text");
}

#[tokio::test]
async fn missing_suite_fails_startup() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path());
    config.model.model_path = Some(dir.path().join("nope"));
    assert!(Server::bind(config).await.is_err());
}
