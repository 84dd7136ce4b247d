//! JSON messages exchanged over a session's websocket. Every message carries
//! a `type` tag; unknown fields are ignored.

use advice_loop::advice::{Advice, AdviceForm};
use advice_loop::ledger::AdviceLedger;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LiveCoach,
    HindsightAnnotate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    Paused,
    EpisodeDone,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Resume,
    Reset,
    EndSession,
    /// Persist the pending annotations of `episode_id` (hindsight mode).
    Submit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    AdviceEvent {
        form: AdviceForm,
        /// The advice fields for `form`, e.g. `{"dx": 1.0, "dy": 0.0}`.
        #[serde(default)]
        payload: Value,
        #[serde(default)]
        client_step: Option<u64>,
    },
    Control {
        action: ControlAction,
        #[serde(default)]
        episode_id: Option<String>,
    },
    AnnotateEvent {
        episode_id: String,
        step: u32,
        advice: Advice,
    },
}

impl ClientMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMsg::AdviceEvent { .. } => "advice_event",
            ClientMsg::Control { .. } => "control",
            ClientMsg::AnnotateEvent { .. } => "annotate_event",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub session: String,
    pub episode: u64,
    pub step: u32,
    pub render: Value,
    pub last_advice: Option<Advice>,
    pub ledger: AdviceLedger,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Frame(Box<Frame>),
    EpisodeEnd {
        session: String,
        episode: u64,
        episode_id: String,
        success: bool,
        steps: u32,
    },
    Ack {
        of: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        client_step: Option<u64>,
        status: SessionStatus,
    },
    AnnotationSaved {
        episode_id: String,
        annotations: usize,
    },
    Error {
        code: String,
        text: String,
    },
}

impl ServerMsg {
    pub fn error(code: &str, text: impl Into<String>) -> ServerMsg {
        ServerMsg::Error {
            code: code.into(),
            text: text.into(),
        }
    }
}

/// Parses one client text message; failures come back as the `Error`
/// message to send.
pub fn parse_client(text: &str) -> Result<ClientMsg, ServerMsg> {
    let v: Value = serde_json::from_str(text).map_err(|e| ServerMsg::error("bad_json", e.to_string()))?;
    serde_json::from_value(v).map_err(|e| ServerMsg::error("bad_message", e.to_string()))
}

/// Builds an advice value from an event's form and payload.
pub fn advice_from_event(form: AdviceForm, payload: &Value) -> Result<Advice, ServerMsg> {
    let mut obj = match payload {
        Value::Object(m) => m.clone(),
        Value::Null => Default::default(),
        _ => return Err(ServerMsg::error("bad_advice", "payload must be a JSON object")),
    };
    obj.insert("form".into(), serde_json::to_value(form).expect("form serializes"));
    obj.remove("age");
    serde_json::from_value(Value::Object(obj)).map_err(|e| ServerMsg::error("bad_advice", e.to_string()))
}
