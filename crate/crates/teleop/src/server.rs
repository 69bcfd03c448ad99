//! Websocket server around a [`TeleopSession`].
//!
//! One loop owns the session and advances it on a fixed interval. Each
//! connection gets a bounded outgoing queue fed with `try_send`, so a slow
//! client can never hold up the simulation. The first client to connect
//! drives; later ones watch. If the driver leaves, the next client to
//! connect takes over.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::mpsc;
use tokio::time::{Instant, MissedTickBehavior};
use tower_http::services::ServeDir;

use terrapref::learner::Dataset;
use terrapref::sim::SimClock;

use crate::protocol::{ClientMessage, Role, ServerMessage, SessionState};
use crate::session::{Rejection, TeleopSession};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    /// Directory served at `/` (the browser UI), if any.
    pub static_dir: Option<PathBuf>,
    /// Where the dataset is written when the session finishes.
    pub dataset_path: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    /// How long the driver's queue may stay full before the session pauses.
    pub stall_timeout: Duration,
    /// Outgoing messages buffered per client.
    pub client_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            static_dir: None,
            dataset_path: None,
            time_scale: 1.0,
            stall_timeout: Duration::from_secs(1),
            client_queue: 32,
        }
    }
}

#[derive(Debug)]
pub struct SessionReport {
    pub reason: String,
    pub dataset: Dataset,
    /// Set when the dataset was written to disk.
    pub dataset_path: Option<PathBuf>,
}

#[derive(Debug)]
enum Outgoing {
    Text(String),
    Close,
}

#[derive(Debug)]
enum Event {
    Connect(u64, mpsc::Sender<Outgoing>),
    Message(u64, String),
    Disconnect(u64),
}

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<Event>,
    client_queue: usize,
    next_id: std::sync::Arc<std::sync::atomic::AtomicU64>,
}

struct Client {
    tx: mpsc::Sender<Outgoing>,
    role: Role,
    /// When the queue was first found full, while it stays full.
    full_since: Option<Instant>,
}

pub struct TeleopServer {
    session: TeleopSession,
    config: ServerConfig,
    listener: TcpListener,
    router: Router,
    events: mpsc::UnboundedReceiver<Event>,
}

impl TeleopServer {
    pub async fn bind(addr: impl ToSocketAddrs, session: TeleopSession, config: ServerConfig) -> anyhow::Result<Self> {
        anyhow::ensure!(
            config.time_scale.is_finite() && config.time_scale > 0.0,
            "time_scale must be positive, got {}",
            config.time_scale
        );
        anyhow::ensure!(config.client_queue > 0, "client_queue must be positive");
        let (events_tx, events) = mpsc::unbounded_channel();
        let state = AppState {
            events: events_tx,
            client_queue: config.client_queue,
            next_id: Default::default(),
        };
        let mut router = Router::new().route("/teleop", get(upgrade)).with_state(state);
        if let Some(dir) = &config.static_dir {
            anyhow::ensure!(dir.is_dir(), "static directory {} does not exist", dir.display());
            router = router.fallback_service(ServeDir::new(dir));
        }
        let listener = TcpListener::bind(addr).await?;
        Ok(Self {
            session,
            config,
            listener,
            router,
            events,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the session finishes (goal, driver request, or
    /// `shutdown` resolving), then writes the dataset.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> anyhow::Result<SessionReport> {
        let Self {
            mut session,
            config,
            listener,
            router,
            mut events,
        } = self;
        let server = tokio::spawn(async move { axum::serve(listener, router).await });

        let period = Duration::from_secs_f64(SimClock::control_period() / config.time_scale);
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
        let mut clients: BTreeMap<u64, Client> = BTreeMap::new();
        tokio::pin!(shutdown);

        while session.state() != SessionState::Finished {
            tokio::select! {
                _ = ticker.tick() => {
                    if let Some(frame) = session.tick()? {
                        broadcast(&mut clients, &ServerMessage::Frame(frame));
                    }
                    if session.state() == SessionState::Driving && driver_stalled(&clients, config.stall_timeout) {
                        session.pause("driver is not keeping up");
                        broadcast(&mut clients, &session.state_message());
                    }
                }
                Some(event) = events.recv() => {
                    let before = session.state();
                    handle_event(&mut session, &mut clients, event);
                    if before != SessionState::Driving && session.state() == SessionState::Driving {
                        // Start the first tick now rather than catching up on idle time.
                        ticker.reset_immediately();
                    }
                }
                _ = &mut shutdown => session.finish("interrupted"),
            }
        }

        let reason = session.reason().to_string();
        let dataset = session.into_dataset();
        let dataset_path = match &config.dataset_path {
            Some(path) => {
                dataset.save(path)?;
                Some(path.clone())
            }
            None => None,
        };
        log::info!("session finished ({reason}) with {} records", dataset.len());
        let done = ServerMessage::Finished {
            records: dataset.len(),
            reason: reason.clone(),
            dataset: dataset_path.as_ref().map(|p| p.display().to_string()),
        };
        broadcast(&mut clients, &done);
        for client in clients.values() {
            // Blocking here is fine: the simulation has stopped.
            let _ = client.tx.send_timeout(Outgoing::Close, Duration::from_secs(1)).await;
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while !clients.is_empty() {
            match tokio::time::timeout_at(deadline, events.recv()).await {
                Ok(Some(Event::Disconnect(id))) => {
                    clients.remove(&id);
                }
                Ok(Some(_)) => {}
                Ok(None) | Err(_) => break,
            }
        }
        server.abort();
        Ok(SessionReport {
            reason,
            dataset,
            dataset_path,
        })
    }
}

fn handle_event(session: &mut TeleopSession, clients: &mut BTreeMap<u64, Client>, event: Event) {
    match event {
        Event::Connect(id, tx) => {
            let role = if clients.values().any(|c| c.role == Role::Driver) {
                Role::Spectator
            } else {
                Role::Driver
            };
            log::info!("client {id} connected as {role:?}");
            let mut client = Client {
                tx,
                role,
                full_since: None,
            };
            send(&mut client, &session.hello(role));
            send(&mut client, &ServerMessage::Frame(session.snapshot()));
            clients.insert(id, client);
        }
        Event::Disconnect(id) => {
            if let Some(client) = clients.remove(&id) {
                log::info!("client {id} disconnected");
                if client.role == Role::Driver && session.pause("driver disconnected") {
                    broadcast(clients, &session.state_message());
                }
            }
        }
        Event::Message(id, text) => {
            let Some(client) = clients.get_mut(&id) else { return };
            let result = match ClientMessage::parse(&text) {
                Err(message) => Err(Rejection { message, fatal: true }),
                Ok(_) if client.role != Role::Driver => Err(Rejection {
                    message: "spectators cannot send input".into(),
                    fatal: false,
                }),
                Ok(ClientMessage::Input { w_raw, bin }) => session.input(w_raw, bin).map(|_| false),
                Ok(ClientMessage::Control { action }) => session.control(action).map(|_| true),
            };
            match result {
                Ok(false) => {}
                Ok(true) => broadcast(clients, &session.state_message()),
                Err(rejection) => {
                    log::warn!("client {id}: {}", rejection.message);
                    send(client, &ServerMessage::Error {
                        message: rejection.message,
                    });
                    if rejection.fatal {
                        let _ = client.tx.try_send(Outgoing::Close);
                    }
                }
            }
        }
    }
}

fn send(client: &mut Client, message: &ServerMessage) {
    match client.tx.try_send(Outgoing::Text(message.to_json())) {
        Ok(()) => client.full_since = None,
        Err(mpsc::error::TrySendError::Full(_)) => {
            client.full_since.get_or_insert_with(Instant::now);
        }
        // The connection task is gone; its disconnect event is on the way.
        Err(mpsc::error::TrySendError::Closed(_)) => {}
    }
}

fn broadcast(clients: &mut BTreeMap<u64, Client>, message: &ServerMessage) {
    for client in clients.values_mut() {
        send(client, message);
    }
}

fn driver_stalled(clients: &BTreeMap<u64, Client>, timeout: Duration) -> bool {
    clients
        .values()
        .filter(|c| c.role == Role::Driver)
        .any(|c| c.full_since.is_some_and(|t| t.elapsed() > timeout))
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::channel(state.client_queue);
    if state.events.send(Event::Connect(id, out_tx)).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            outgoing = out_rx.recv() => match outgoing {
                Some(Outgoing::Text(text)) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Some(Outgoing::Close) | None => {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let _ = state.events.send(Event::Message(id, text.to_string()));
                }
                Some(Ok(Message::Binary(_))) => {
                    let _ = state.events.send(Event::Message(id, "<binary frame>".into()));
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = state.events.send(Event::Disconnect(id));
}
