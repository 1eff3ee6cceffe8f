use crate::live::{Live, SubmitError};
use crate::{no_live, AppState};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use futures::{SinkExt, StreamExt};
use hexgait_core::teleop::{ErrorCode, ProtoError, ServerMessage, Session, PROTO_VERSION};
use std::sync::Arc;
use tokio::sync::broadcast::error::RecvError;

pub async fn upgrade(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    match s.live {
        Some(live) => ws.on_upgrade(move |socket| connection(socket, live)),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(no_live().0)).into_response(),
    }
}

fn text(m: &ServerMessage) -> Message {
    Message::Text(m.to_json().into())
}

async fn handle(live: &Live, session: &mut Session, frame: &str) -> ServerMessage {
    let id = session.id;
    let error = |seq, code, message: String| ServerMessage::Error { proto: PROTO_VERSION, session: id, error: ProtoError { seq, code, message } };
    let msg = match session.validate(frame) {
        Ok(m) => m,
        Err(e) => return ServerMessage::Error { proto: PROTO_VERSION, session: id, error: e },
    };
    let seq = Some(msg.seq);
    let reply = match live.submit(msg.command) {
        Ok(r) => r,
        Err(SubmitError::Busy) => return error(seq, ErrorCode::Busy, "command mailbox full".into()),
        Err(SubmitError::Stopped) => return error(seq, ErrorCode::Rejected, "control loop stopped".into()),
    };
    match reply.await {
        Ok(Ok((tick_received, tick_applied))) => {
            session.commit(msg.seq);
            ServerMessage::Ack { proto: PROTO_VERSION, seq: msg.seq, tick_received, tick_applied }
        }
        Ok(Err(e)) => error(seq, ErrorCode::Rejected, e.to_string()),
        Err(_) => error(seq, ErrorCode::Rejected, "control loop stopped".into()),
    }
}

async fn connection(socket: WebSocket, live: Arc<Live>) {
    let hello = live.open_session();
    let mut session = Session::new(hello.session);
    let (mut tx, mut rx) = socket.split();
    let mut states = live.subscribe();
    if tx.send(text(&ServerMessage::Hello(hello))).await.is_err() {
        return;
    }
    tracing::debug!(session = session.id, "session opened");
    loop {
        let out = tokio::select! {
            frame = rx.next() => match frame {
                Some(Ok(Message::Text(t))) => handle(&live, &mut session, t.as_str()).await,
                Some(Ok(Message::Binary(_))) => ServerMessage::Error {
                    proto: PROTO_VERSION,
                    session: session.id,
                    error: ProtoError { seq: None, code: ErrorCode::Parse, message: "binary frames are not accepted".into() },
                },
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => continue,
            },
            state = states.recv() => match state {
                Ok(s) => ServerMessage::State((*s).clone()),
                Err(RecvError::Lagged(n)) => {
                    tracing::debug!(session = session.id, dropped = n, "slow reader");
                    continue;
                }
                Err(RecvError::Closed) => break,
            },
        };
        if tx.send(text(&out)).await.is_err() {
            break;
        }
    }
    tracing::debug!(session = session.id, "session closed");
}
