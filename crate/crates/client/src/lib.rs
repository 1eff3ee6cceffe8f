//! Thin async client for the hexgait service: one method per `/api`
//! operation plus a teleop connection over `/ws`.

use futures::{SinkExt, StreamExt};
use hexgait_core::api::*;
use hexgait_core::teleop::{Command, CommandMessage, Hello, ServerMessage, StateMessage, PROTO_VERSION};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{}: {}", match .0.kind { ErrorKind::Validation => "invalid input", ErrorKind::Runtime => "server error" }, .0.message)]
    Api(ErrorBody),
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn is_validation(&self) -> bool {
        matches!(self, ClientError::Api(ErrorBody { kind: ErrorKind::Validation, .. }))
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_owned(), http: reqwest::Client::new() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        if resp.status().is_success() {
            return Ok(resp.json().await?);
        }
        let status = resp.status();
        let body = resp.text().await?;
        Err(match serde_json::from_str::<ErrorBody>(&body) {
            Ok(e) => ClientError::Api(e),
            Err(_) if status.is_client_error() => ClientError::Api(ErrorBody { kind: ErrorKind::Validation, message: format!("{status}: {body}") }),
            Err(_) => ClientError::Api(ErrorBody { kind: ErrorKind::Runtime, message: format!("{status}: {body}") }),
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<()> {
        self.http.get(format!("{}/health", self.base)).send().await?.error_for_status()?;
        Ok(())
    }

    pub async fn validate(&self, req: &ModelInput) -> Result<ValidateResponse> {
        self.post("/api/validate", req).await
    }

    pub async fn workspace(&self, req: &WorkspaceRequest) -> Result<WorkspaceResponse> {
        self.post("/api/workspace", req).await
    }

    pub async fn trajectory(&self, req: &TrajectoryRequest) -> Result<TrajectoryResponse> {
        self.post("/api/trajectory", req).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse> {
        self.post("/api/run", req).await
    }

    pub async fn sweep(&self, req: &RunRequest) -> Result<SweepResponse> {
        self.post("/api/sweep", req).await
    }

    pub async fn state(&self) -> Result<StateMessage> {
        match Self::decode(self.http.get(format!("{}/state", self.base)).send().await?).await? {
            ServerMessage::State(s) => Ok(s),
            other => Err(ClientError::Protocol(format!("expected state, got {other:?}"))),
        }
    }

    /// Opens a teleop session; the greeting is read before returning.
    pub async fn connect(&self) -> Result<Teleop> {
        let url = format!("{}/ws", self.base.replacen("http", "ws", 1));
        let (stream, _) = tokio_tungstenite::connect_async(url).await?;
        let mut t = Teleop { stream, seq: 0, hello: None };
        match t.next().await? {
            ServerMessage::Hello(h) => t.hello = Some(h),
            other => return Err(ClientError::Protocol(format!("expected hello, got {other:?}"))),
        }
        Ok(t)
    }
}

pub struct Teleop {
    stream: WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>,
    seq: u64,
    hello: Option<Hello>,
}

impl Teleop {
    pub fn hello(&self) -> &Hello {
        self.hello.as_ref().expect("connected")
    }

    /// Sends a command with the next sequence number and returns it.
    pub async fn send(&mut self, command: Command) -> Result<u64> {
        self.seq += 1;
        let msg = CommandMessage { proto: PROTO_VERSION, seq: self.seq, command };
        self.send_raw(serde_json::to_string(&msg).expect("commands serialise")).await?;
        Ok(self.seq)
    }

    /// Sends a text frame as is.
    pub async fn send_raw(&mut self, text: String) -> Result<()> {
        self.stream.send(Message::text(text)).await?;
        Ok(())
    }

    /// Next server frame; control frames are skipped.
    pub async fn next(&mut self) -> Result<ServerMessage> {
        loop {
            match self.stream.next().await {
                Some(Ok(Message::Text(t))) => return serde_json::from_str(t.as_str()).map_err(|e| ClientError::Protocol(e.to_string())),
                Some(Ok(Message::Close(_))) | None => return Err(ClientError::Protocol("connection closed".into())),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            }
        }
    }

    /// Reads until the reply (ack or error) for `seq`, skipping states.
    pub async fn reply(&mut self, seq: u64) -> Result<ServerMessage> {
        loop {
            match self.next().await? {
                m @ ServerMessage::Ack { seq: s, .. } if s == seq => return Ok(m),
                m @ ServerMessage::Error { .. } => return Ok(m),
                _ => continue,
            }
        }
    }

    /// Next streamed state, skipping replies.
    pub async fn state(&mut self) -> Result<StateMessage> {
        loop {
            if let ServerMessage::State(s) = self.next().await? {
                return Ok(s);
            }
        }
    }

    pub async fn close(mut self) -> Result<()> {
        self.stream.close(None).await?;
        Ok(())
    }
}
