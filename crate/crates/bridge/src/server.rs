//! WebSocket endpoint `/ws`, static files at `/`, and the simulation task.
//!
//! Connection tasks only forward raw frames into one ordered queue; the
//! simulation task owns the session, checks driver authority, applies
//! messages in arrival order and ticks at the configured rate.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::protocol::{encode, parse_client, ClientMsg, ErrorCode, Role, ServerMsg};
use crate::session::{SessionConfig, TeleopSession};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub static_dir: PathBuf,
    pub session: SessionConfig,
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 8765)),
            static_dir: PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/static")),
            session: SessionConfig::default(),
            seed: 0,
        }
    }
}

enum Inbound {
    Join { id: u64, tx: mpsc::UnboundedSender<String> },
    Leave { id: u64 },
    Frame { id: u64, text: String },
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::UnboundedSender<Inbound>,
    next_id: Arc<AtomicU64>,
}

/// A running server. Dropping it leaves the server running until the runtime
/// stops; call `shutdown` to stop it and get the session back.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Vec<oneshot::Sender<()>>,
    sim: JoinHandle<TeleopSession>,
}

impl ServerHandle {
    pub async fn shutdown(self) -> TeleopSession {
        for s in self.stop {
            let _ = s.send(());
        }
        self.sim.await.expect("simulation task panicked")
    }
}

fn router(inbound: mpsc::UnboundedSender<Inbound>, static_dir: PathBuf) -> Router {
    let state = AppState { inbound, next_id: Arc::new(AtomicU64::new(1)) };
    Router::new().route("/ws", get(ws_handler)).fallback_service(ServeDir::new(static_dir)).with_state(state)
}

/// Binds `cfg.addr` and starts serving on the current tokio runtime.
pub async fn serve(cfg: ServeConfig) -> Result<ServerHandle, BridgeError> {
    let listener = tokio::net::TcpListener::bind(cfg.addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            BridgeError::PortInUse(cfg.addr)
        } else {
            BridgeError::Io(e)
        }
    })?;
    let addr = listener.local_addr()?;
    let (tx, rx) = mpsc::unbounded_channel();
    let (stop_http, http_rx) = oneshot::channel::<()>();
    let (stop_sim, sim_rx) = oneshot::channel::<()>();
    let app = router(tx, cfg.static_dir.clone());
    tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = http_rx.await;
            })
            .await;
    });
    let session = TeleopSession::new(cfg.session.clone(), cfg.seed);
    let sim = tokio::spawn(simulate(session, rx, sim_rx));
    Ok(ServerHandle { addr, stop: vec![stop_http, stop_sim], sim })
}

async fn ws_handler(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn client(socket: WebSocket, app: AppState) {
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    if app.inbound.send(Inbound::Join { id, tx }).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        if app.inbound.send(Inbound::Frame { id, text }).is_err() {
            break;
        }
    }
    let _ = app.inbound.send(Inbound::Leave { id });
    writer.abort();
}

struct Clients(BTreeMap<u64, mpsc::UnboundedSender<String>>);

impl Clients {
    /// The longest-connected client drives; everyone else watches.
    fn driver(&self) -> Option<u64> {
        self.0.keys().next().copied()
    }

    fn send(&self, id: u64, msg: &ServerMsg) {
        if let Some(tx) = self.0.get(&id) {
            let _ = tx.send(encode(msg));
        }
    }

    fn broadcast(&self, msg: &ServerMsg) {
        let text = encode(msg);
        for tx in self.0.values() {
            let _ = tx.send(text.clone());
        }
    }
}

async fn simulate(
    mut session: TeleopSession,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    mut stop: oneshot::Receiver<()>,
) -> TeleopSession {
    let tick_hz = session.config().tick_hz;
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / tick_hz));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut clients = Clients(BTreeMap::new());
    loop {
        tokio::select! {
            biased;
            _ = &mut stop => break,
            ev = inbound.recv() => {
                let Some(ev) = ev else { break };
                match ev {
                    Inbound::Join { id, tx } => {
                        clients.0.insert(id, tx);
                        let role = if clients.driver() == Some(id) { Role::Driver } else { Role::Viewer };
                        clients.send(id, &ServerMsg::Hello { role, tick_hz });
                        clients.send(id, &session.state_msg().into());
                    }
                    Inbound::Leave { id } => {
                        let was_driver = clients.driver() == Some(id);
                        clients.0.remove(&id);
                        if let (true, Some(next)) = (was_driver, clients.driver()) {
                            clients.send(next, &ServerMsg::Hello { role: Role::Driver, tick_hz });
                        }
                    }
                    Inbound::Frame { id, text } => match parse_client(&text) {
                        Err(e) => clients.send(id, &e.to_frame()),
                        Ok(_) if clients.driver() != Some(id) => clients.send(
                            id,
                            &ServerMsg::Error { code: ErrorCode::ViewOnly, message: "another client is driving".into() },
                        ),
                        Ok(msg) => {
                            let is_reset = matches!(msg, ClientMsg::Reset { .. });
                            for reply in session.handle(msg) {
                                clients.send(id, &reply);
                            }
                            if is_reset {
                                clients.broadcast(&session.state_msg().into());
                            }
                        }
                    },
                }
            }
            _ = interval.tick() => {
                if clients.driver().is_some() {
                    for frame in session.tick() {
                        clients.broadcast(&frame);
                    }
                }
            }
        }
    }
    session
}

/// Serves until Ctrl-C, then returns the session (with its recordings).
pub fn run_blocking(cfg: ServeConfig) -> Result<TeleopSession, BridgeError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let handle = serve(cfg).await?;
        eprintln!("teleop bridge listening on ws://{}/ws", handle.addr);
        let _ = tokio::signal::ctrl_c().await;
        Ok(handle.shutdown().await)
    })
}
