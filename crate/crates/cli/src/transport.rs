//! Socket front ends: length-prefixed TCP, WebSocket (one envelope per
//! message) with the static UI alongside, and UDP discovery.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tower_http::services::ServeDir;

use datacube::dataset::export_csv;
use datacube::protocol::{decode_body, encode, encode_body, FrameDecoder, ProtocolError};
use datacube::server::discovery_response;

use crate::hub::{Hub, Outbound};

pub async fn serve_tcp(listener: TcpListener, hub: Hub) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                log::info!("tcp connection from {peer}");
                let _ = stream.set_nodelay(true);
                tokio::spawn(tcp_connection(stream, hub.clone()));
            }
            Err(e) => log::warn!("tcp accept failed: {e}"),
        }
    }
}

async fn tcp_connection(stream: TcpStream, hub: Hub) {
    let (conn, mut outbound) = hub.connect();
    let (mut reader, mut writer) = stream.into_split();
    let mut writer_task = tokio::spawn(async move {
        while let Some(message) = outbound.recv().await {
            match message {
                Outbound::Envelope(envelope) => match encode(&envelope) {
                    Ok(frame) => {
                        if writer.write_all(&frame).await.is_err() {
                            break;
                        }
                    }
                    Err(e) => log::error!("dropping unencodable envelope: {e}"),
                },
                Outbound::Close => break,
            }
        }
        let _ = writer.shutdown().await;
    });

    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut writer_done = false;
    'read: loop {
        tokio::select! {
            read = reader.read(&mut buf) => {
                let n = match read {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                decoder.push(&buf[..n]);
                loop {
                    match decoder.next_frame() {
                        Ok(Some(envelope)) => hub.frame(conn, Ok(envelope)),
                        Ok(None) => break,
                        Err(e @ ProtocolError::FrameTooLarge(_)) => {
                            hub.frame(conn, Err(e));
                            break 'read;
                        }
                        Err(e) => hub.frame(conn, Err(e)),
                    }
                }
            }
            _ = &mut writer_task => {
                writer_done = true;
                break;
            }
        }
    }
    hub.disconnect(conn);
    if !writer_done {
        let _ = writer_task.await;
    }
}

#[derive(Clone)]
struct HttpState {
    hub: Hub,
    strings: Arc<String>,
}

/// `/ws` (session), `/ui` (static web client), `/strings.tsv` (active
/// translation table) and `/dataset.csv` (the session dataset).
pub fn router(hub: Hub, ui_dir: Option<PathBuf>, strings: String) -> Router {
    let mut router = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/strings.tsv", get(strings_tsv))
        .route("/dataset.csv", get(dataset_csv))
        .route("/", get(|| async { Redirect::temporary("/ui/") }));
    if let Some(dir) = ui_dir {
        router = router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    router.with_state(HttpState { hub, strings: Arc::new(strings) })
}

async fn strings_tsv(State(state): State<HttpState>) -> Response {
    ([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], state.strings.as_str().to_owned()).into_response()
}

async fn dataset_csv(State(state): State<HttpState>) -> Response {
    let Some(dataset) = state.hub.dataset().await else {
        return (StatusCode::NOT_FOUND, "no dataset loaded").into_response();
    };
    let rows: Vec<usize> = (0..dataset.len()).collect();
    match export_csv(&dataset, &rows) {
        Ok(text) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<HttpState>) -> Response {
    ws.on_upgrade(move |socket| ws_connection(socket, state.hub))
}

async fn ws_connection(socket: WebSocket, hub: Hub) {
    let (conn, mut outbound) = hub.connect();
    let (mut sink, mut stream) = socket.split();
    let mut writer = tokio::spawn(async move {
        while let Some(message) = outbound.recv().await {
            match message {
                Outbound::Envelope(envelope) => match encode_body(&envelope) {
                    Ok(body) => {
                        let text = String::from_utf8(body).expect("JSON bodies are UTF-8");
                        if sink.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                    Err(e) => log::error!("dropping unencodable envelope: {e}"),
                },
                Outbound::Close => break,
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    loop {
        let message = tokio::select! {
            message = stream.next() => message,
            _ = &mut writer => break,
        };
        let body = match message {
            Some(Ok(Message::Text(text))) => text.as_bytes().to_vec(),
            Some(Ok(Message::Binary(bytes))) => bytes.to_vec(),
            Some(Ok(Message::Close(_)) | Err(_)) | None => break,
            Some(Ok(_)) => continue,
        };
        hub.frame(conn, decode_body(&body));
    }
    hub.disconnect(conn);
    writer.abort();
}

pub async fn serve_discovery(socket: UdpSocket, tcp_port: u16, session_id: String) {
    let mut buf = [0u8; 512];
    loop {
        let (n, peer): (usize, SocketAddr) = match socket.recv_from(&mut buf).await {
            Ok(r) => r,
            Err(e) => {
                log::warn!("discovery receive failed: {e}");
                continue;
            }
        };
        if let Some(reply) = discovery_response(&buf[..n], tcp_port, &session_id) {
            let _ = socket.send_to(&reply, peer).await;
        }
    }
}
