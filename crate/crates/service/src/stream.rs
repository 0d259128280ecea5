use std::time::Duration;

use axum::extract::ws::{close_code, CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use easyrl_core::engine::{Recv, SessionEvent, Subscription};
use futures::{SinkExt, StreamExt};
use serde_json::json;
use tokio::sync::mpsc;

use crate::error::ApiError;
use crate::AppState;

/// How often the bridge thread checks whether the socket went away while
/// the session is quiet.
const POLL: Duration = Duration::from_millis(200);

/// Application close code sent when the session does not exist.
const CLOSE_NOT_FOUND: u16 = 4404;

pub async fn stream_session(
    ws: WebSocketUpgrade,
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Response {
    let subscription = state.engine.subscribe(&id).map_err(ApiError::from);
    ws.on_upgrade(move |socket| async move {
        match subscription {
            Ok(sub) => pump(socket, sub).await,
            Err(err) => reject(socket, err).await,
        }
    })
}

async fn reject(mut socket: WebSocket, err: ApiError) {
    let body = json!({ "event": "error", "code": err.code, "message": err.message });
    let _ = socket.send(Message::Text(body.to_string().into())).await;
    let _ = socket
        .send(Message::Close(Some(CloseFrame {
            code: CLOSE_NOT_FOUND,
            reason: "unknown session".into(),
        })))
        .await;
}

/// Forwards session events to the socket until the session's stream ends or
/// the client leaves. The bridge blocks on a small channel, so a slow client
/// leaves events in its subscription queue, where frames are dropped first.
async fn pump(socket: WebSocket, sub: Subscription) {
    let (tx, mut rx) = mpsc::channel::<SessionEvent>(16);
    let bridge = tokio::task::spawn_blocking(move || loop {
        match sub.recv_timeout(POLL) {
            Recv::Event(ev) => {
                if tx.blocking_send(ev).is_err() {
                    break;
                }
            }
            Recv::Timeout => {
                if tx.is_closed() {
                    break;
                }
            }
            Recv::Closed => break,
        }
    });

    let (mut sink, mut incoming) = socket.split();
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Some(ev) => {
                    let text = serde_json::to_string(&ev).expect("events serialize");
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                None => {
                    let _ = sink
                        .send(Message::Close(Some(CloseFrame {
                            code: close_code::NORMAL,
                            reason: "session ended".into(),
                        })))
                        .await;
                    break;
                }
            },
            msg = incoming.next() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    drop(rx);
    let _ = bridge.await;
}
