#![allow(dead_code)]

use std::sync::Arc;

use advice_loop::advice::encode_advice;
use advice_loop::env::EnvConfig;
use advice_loop::gridworld::GridGenConfig;
use advice_loop::nnet::{NetConfig, PolicyNet};
use advice_loop::pointmaze::PointConfig;
use advice_loop_service::{AppState, ServerMsg, ServiceConfig};
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub fn grid_env() -> EnvConfig {
    EnvConfig::gridworld(GridGenConfig::default())
}

pub fn point_env() -> EnvConfig {
    EnvConfig::pointmaze(PointConfig::default())
}

pub fn surrogate(env: &EnvConfig, seed: u64) -> Arc<PolicyNet> {
    let mut cfg = NetConfig::new(env.obs_len(), encode_advice(None, env.n_actions()).unwrap().len(), env.n_actions(), seed);
    cfg.embed = 16;
    cfg.hidden = 16;
    Arc::new(PolicyNet::new(cfg))
}

pub struct TestServer {
    pub base: String,
    pub app: Arc<AppState>,
}

pub async fn start(cfg: ServiceConfig) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = AppState::new(cfg);
    tokio::spawn(advice_loop_service::serve(listener, app.clone()));
    TestServer {
        base: format!("http://{addr}"),
        app,
    }
}

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub async fn connect(server: &TestServer, ws_url: &str) -> Ws {
    let url = format!("{}{}", server.base.replace("http://", "ws://"), ws_url);
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

pub async fn send(ws: &mut Ws, v: serde_json::Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

pub async fn send_raw(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.to_string().into())).await.unwrap();
}

/// Next server message, or None when the socket closes.
pub async fn recv(ws: &mut Ws) -> Option<ServerMsg> {
    loop {
        let msg = tokio::time::timeout(std::time::Duration::from_secs(20), ws.next())
            .await
            .expect("server went quiet")?
            .ok()?;
        match msg {
            Message::Text(t) => return Some(serde_json::from_str(&t).expect("server sent valid protocol JSON")),
            Message::Close(_) => return None,
            _ => continue,
        }
    }
}

/// Skips frames until a message that is not a frame arrives.
pub async fn recv_reply(ws: &mut Ws) -> ServerMsg {
    loop {
        match recv(ws).await.expect("socket closed") {
            ServerMsg::Frame(_) | ServerMsg::EpisodeEnd { .. } => continue,
            m => return m,
        }
    }
}
