//! Live coaching backend: HTTP session management, a websocket stream per
//! session, and hindsight annotation of recorded episodes.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMsg, ControlAction, Frame, Mode, ServerMsg, SessionStatus};
pub use server::{router, serve, AppState, CreateSession, Created, ServiceConfig};
pub use session::{Session, SessionConfig, SessionInfo};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("{0}")]
    Unprocessable(String),

    #[error(transparent)]
    Core(#[from] advice_loop::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
