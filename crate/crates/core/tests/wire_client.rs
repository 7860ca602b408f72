use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use parking_lot::Mutex;
use serde_json::{json, Value};

use twinflow_core::adapters::{AdapterError, ChatModel, ChatRequest, HttpChatClient, HttpChatConfig};
use twinflow_core::model::{EmotionLabel, ImageRef};
use twinflow_core::prompt::{ConstructedPrompt, MessageRole, PromptMessage};

#[derive(Clone, Default)]
struct Seen {
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

async fn stub(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    seen.auth.lock().push(headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string));
    let last = body["messages"].as_array().and_then(|m| m.last()).cloned().unwrap_or_default();
    seen.bodies.lock().push(body);
    let text = match &last["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts[0]["text"].as_str().unwrap_or_default().to_string(),
        _ => String::new(),
    };
    match text.as_str() {
        "fail" => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "boom"}))),
        "shape" => (StatusCode::OK, Json(json!({"choices": []}))),
        _ => (
            StatusCode::OK,
            Json(json!({
                "choices": [{"message": {"role": "assistant", "content":
                    "The receiver is labeled as part G.\n@@meta emotion=neutral@0.8 objects=receiver(G):true"}}]
            })),
        ),
    }
}

async fn serve() -> (String, Seen) {
    let seen = Seen::default();
    let app = Router::new().route("/v1/chat/completions", post(stub)).with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), seen)
}

fn prompt(user: &str) -> ConstructedPrompt {
    ConstructedPrompt {
        messages: vec![
            PromptMessage::text(MessageRole::System, "system"),
            PromptMessage {
                role: MessageRole::User,
                text: user.into(),
                attachments: vec![ImageRef::Inline { mime: "image/png".into(), data: "AAAA".into() }],
            },
        ],
        total_weight: 0,
    }
}

#[tokio::test]
async fn posts_request_and_parses_trailer() {
    let (base_url, seen) = serve().await;
    std::env::set_var("TWINFLOW_TEST_TOKEN", "secret");
    let client = HttpChatClient::new(HttpChatConfig {
        base_url,
        model: "test-model".into(),
        auth_env: Some("TWINFLOW_TEST_TOKEN".into()),
        timeout_ms: 5_000,
    })
    .unwrap();

    let p = prompt("Which part is the receiver?");
    let env = client.complete(&p).await.unwrap();
    assert_eq!(env.reply_text, "The receiver is labeled as part G.");
    assert_eq!(env.emotion.as_ref().unwrap().label, EmotionLabel::Neutral);
    assert_eq!(env.emotion.as_ref().unwrap().confidence, 0.8);
    assert_eq!(env.objects[0].part_label.unwrap().as_char(), 'G');
    assert!(env.latency_ms >= 0.0);

    let body = seen.bodies.lock()[0].clone();
    assert_eq!(body, serde_json::to_value(ChatRequest::encode("test-model", &p).unwrap()).unwrap());
    let decoded: ChatRequest = serde_json::from_value(body).unwrap();
    assert_eq!(decoded.decode_messages().unwrap(), p.messages);
    assert_eq!(seen.auth.lock()[0].as_deref(), Some("Bearer secret"));
}

#[tokio::test]
async fn backend_errors_are_classified() {
    let (base_url, _) = serve().await;
    let client = HttpChatClient::new(HttpChatConfig { base_url, auth_env: None, ..HttpChatConfig::default() }).unwrap();
    assert!(matches!(client.complete(&prompt("fail")).await, Err(AdapterError::Transport(_))));
    assert!(matches!(client.complete(&prompt("shape")).await, Err(AdapterError::Protocol(_))));
    let empty = ConstructedPrompt { messages: vec![], total_weight: 0 };
    assert!(matches!(client.complete(&empty).await, Err(AdapterError::Protocol(_))));
}

#[tokio::test]
async fn unreachable_backend_is_a_transport_error() {
    let client = HttpChatClient::new(HttpChatConfig {
        base_url: "http://127.0.0.1:1/v1".into(),
        auth_env: None,
        ..HttpChatConfig::default()
    })
    .unwrap();
    assert!(matches!(client.complete(&prompt("hi")).await, Err(AdapterError::Transport(_))));
}
