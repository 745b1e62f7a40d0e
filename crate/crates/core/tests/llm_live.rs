//! The live client against a local stand-in for a chat-completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use dafny_pilot::llm::{CassetteStore, FinishReason, LanguageModel, LlmClient, LlmError, LlmMode, ProviderConfig};
use dafny_pilot::prompt::{Message, RenderedPrompt, Role, TaskKind};

struct Seen {
    authorization: String,
    body: serde_json::Value,
}

/// Serves `replies` (status, body) to consecutive connections.
fn server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0usize, String::new());
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => auth = v.trim().to_string(),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { authorization: auth, body: serde_json::from_slice(&buf).unwrap() });
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "id": "chatcmpl-1",
        "choices": [{ "message": { "role": "assistant", "content": text }, "finish_reason": "stop" }],
        "usage": { "prompt_tokens": 12, "completion_tokens": 5 }
    })
    .to_string()
}

fn prompt() -> RenderedPrompt {
    RenderedPrompt::from_messages(
        TaskKind::Repair,
        1,
        vec![
            Message { role: Role::System, content: "You fix Dafny programs.".into() },
            Message { role: Role::User, content: "method M() { assert false; }".into() },
        ],
    )
}

fn client(url: &str, key_env: &str, mode: LlmMode) -> LlmClient {
    LlmClient::new(ProviderConfig {
        endpoint_url: url.into(),
        api_key_env: key_env.into(),
        mode,
        retry_base_ms: 1,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn request_shape_and_response_parsing() {
    std::env::set_var("PILOT_TEST_KEY_A", "sk-test-shape");
    let (url, seen, h) = server(vec![(200, ok_body("```dafny\nassert true;\n```"))]);
    let r = client(&url, "PILOT_TEST_KEY_A", LlmMode::Live).complete(&prompt()).unwrap();
    h.join().unwrap();
    assert_eq!(r.text, "```dafny\nassert true;\n```");
    assert_eq!(r.finish_reason, FinishReason::Stop);
    assert_eq!(r.usage.unwrap().output_tokens, 5);
    assert_eq!(r.provenance.source, "live:chatcmpl-1");

    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].authorization, "Bearer sk-test-shape");
    let body = &seen[0].body;
    assert_eq!(body["model"], "gpt-4-1106-preview");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["n"], 1);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "method M() { assert false; }");
}

#[test]
fn transient_errors_are_retried() {
    std::env::set_var("PILOT_TEST_KEY_B", "sk-test-retry");
    let (url, seen, h) = server(vec![(429, "{}".into()), (503, "{}".into()), (200, ok_body("ok then"))]);
    let r = client(&url, "PILOT_TEST_KEY_B", LlmMode::Live).complete(&prompt()).unwrap();
    h.join().unwrap();
    assert_eq!(r.text, "ok then");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    std::env::set_var("PILOT_TEST_KEY_C", "sk-test-bounded");
    let (url, seen, h) = server(vec![(500, "{}".into()), (502, "{}".into()), (500, "{}".into())]);
    let err = client(&url, "PILOT_TEST_KEY_C", LlmMode::Live).complete(&prompt()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, LlmError::Network { attempts: 3, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    std::env::set_var("PILOT_TEST_KEY_D", "sk-test-400");
    let (url, seen, h) = server(vec![(400, r#"{"error":"bad"}"#.into())]);
    let err = client(&url, "PILOT_TEST_KEY_D", LlmMode::Live).complete(&prompt()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(&err, LlmError::ProviderError { status: 400, body } if body.contains("bad")), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_key_fails_before_any_request() {
    std::env::remove_var("PILOT_TEST_KEY_UNSET");
    let err = client("http://127.0.0.1:9/none", "PILOT_TEST_KEY_UNSET", LlmMode::Live).complete(&prompt()).unwrap_err();
    assert!(matches!(&err, LlmError::AuthMissing(v) if v == "PILOT_TEST_KEY_UNSET"));
}

#[test]
fn recording_keeps_secrets_out_of_cassettes() {
    let secret = "sk-test-very-secret-value";
    std::env::set_var("PILOT_TEST_KEY_E", secret);
    let dir = tempfile::tempdir().unwrap();
    let (url, _, h) = server(vec![(200, ok_body("first")), (200, ok_body("second"))]);
    let rec = client(&url, "PILOT_TEST_KEY_E", LlmMode::Record(dir.path().to_path_buf()));
    let a = rec.complete(&prompt()).unwrap();
    let b = rec.complete(&prompt()).unwrap();
    h.join().unwrap();
    assert!(a.provenance.source.ends_with("#0") && b.provenance.source.ends_with("#1"));

    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let data = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!data.contains(secret));
    }
    let store = CassetteStore::open(dir.path()).unwrap();
    let key = dafny_pilot::llm::cassette_key("gpt-4-1106-preview", 0.0, &prompt().messages);
    let cassette = store.load(&key).unwrap().unwrap();
    assert_eq!(cassette.recompute_key(), cassette.key);
    assert_eq!(cassette.responses.len(), 2);

    // replay hands them back in order, without a key or a network
    std::env::remove_var("PILOT_TEST_KEY_E");
    let replay = client("http://127.0.0.1:9/none", "PILOT_TEST_KEY_E", LlmMode::Replay(dir.path().to_path_buf()));
    assert_eq!(replay.complete(&prompt()).unwrap().text, "first");
    assert_eq!(replay.complete(&prompt()).unwrap().text, "second");
    assert!(matches!(replay.complete(&prompt()), Err(LlmError::ReplayMiss(_))));
}

#[test]
fn out_of_range_temperature_is_rejected() {
    let err = LlmClient::new(ProviderConfig { temperature: 2.5, ..Default::default() }).unwrap_err();
    assert!(matches!(err, LlmError::InvalidConfig(_)));
}

#[test]
fn replay_needs_an_existing_directory() {
    let err = LlmClient::new(ProviderConfig::replay("/nonexistent/cassettes")).unwrap_err();
    assert!(matches!(err, LlmError::MissingCassetteDir(_)));
}
