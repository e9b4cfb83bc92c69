use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use thiserror::Error;
use tokio::net::{TcpListener, UdpSocket};
use tokio::task::JoinHandle;

use datacube::dataset::parse_csv;
use datacube::dataset::synth::{generate_population, PopulationSpec};
use datacube::localization::BUNDLED_TABLE;
use datacube::server::{ArtifactError, ArtifactSummary, Server, ServerConfig};

use crate::hub::{Hub, Inspection};
use crate::transport;

pub const DEFAULT_TCP_PORT: u16 = 47800;
pub const DEFAULT_WS_PORT: u16 = 47801;
pub const DEFAULT_DISCOVERY_PORT: u16 = 47799;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {port} is already in use")]
    PortInUse { port: u16 },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
}

/// Server settings. Readable from a TOML file; command-line flags override
/// individual fields. Port 0 asks the OS for a free port.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub ws_port: u16,
    pub discovery_port: u16,
    pub data_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub individuals: usize,
    pub capacity: usize,
    pub session_id: Option<String>,
    pub ui_dir: Option<PathBuf>,
    pub lang_table: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            port: DEFAULT_TCP_PORT,
            ws_port: DEFAULT_WS_PORT,
            discovery_port: DEFAULT_DISCOVERY_PORT,
            data_dir: PathBuf::from("sessions"),
            dataset: None,
            seed: 42,
            individuals: 40,
            capacity: 6,
            session_id: None,
            ui_dir: None,
            lang_table: None,
        }
    }
}

impl ServeConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServeError> {
        toml::from_str(text).map_err(|e| ServeError::BadConfig(e.to_string()))
    }

    /// Loopback on OS-assigned ports, for tests and the socket simulator.
    pub fn ephemeral(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            ws_port: 0,
            discovery_port: 0,
            data_dir: data_dir.into(),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ServeError> {
        if self.capacity == 0 {
            return Err(ServeError::BadConfig("capacity must be at least 1".into()));
        }
        if let Some(id) = &self.session_id {
            let ok = !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
            if !ok {
                return Err(ServeError::BadConfig(format!("session id `{id}` must be [A-Za-z0-9_-]+")));
            }
        }
        if let Some(dir) = &self.ui_dir {
            if !dir.is_dir() {
                return Err(ServeError::BadConfig(format!("ui directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }
}

fn bind_error(addr: SocketAddr, source: io::Error) -> ServeError {
    if source.kind() == io::ErrorKind::AddrInUse {
        ServeError::PortInUse { port: addr.port() }
    } else {
        ServeError::Bind { addr, source }
    }
}

async fn bind_tcp(ip: IpAddr, port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::new(ip, port);
    TcpListener::bind(addr).await.map_err(|e| bind_error(addr, e))
}

pub fn load_strings(path: Option<&Path>) -> Result<String, ServeError> {
    let Some(path) = path else { return Ok(BUNDLED_TABLE.to_string()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?;
    datacube::localization::TranslationTable::parse(&text)
        .map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?;
    Ok(text)
}

/// A running server. Dropping it leaves the tasks running; call
/// [`ServerHandle::shutdown`] to persist artifacts and stop.
pub struct ServerHandle {
    pub session_id: String,
    pub tcp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    pub discovery_addr: SocketAddr,
    hub: Hub,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub async fn inspect(&self) -> Option<Inspection> {
        self.hub.inspect().await
    }

    pub async fn shutdown(self) -> Result<ArtifactSummary, ArtifactError> {
        let result = self.hub.shutdown().await;
        for task in &self.tasks {
            task.abort();
        }
        result.unwrap_or(Err(ArtifactError::NoDataset))
    }
}

pub async fn start(config: ServeConfig) -> Result<ServerHandle, ServeError> {
    config.validate()?;
    let strings = load_strings(config.lang_table.as_deref())?;
    let dataset = match &config.dataset {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?;
            parse_csv(&text).map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?
        }
        None => generate_population(&PopulationSpec {
            individuals: config.individuals,
            seed: config.seed,
            ..PopulationSpec::default()
        }),
    };
    let session_id = config.session_id.clone().unwrap_or_else(|| {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        format!("session-{secs}")
    });

    let tcp = bind_tcp(config.bind, config.port).await?;
    let ws = bind_tcp(config.bind, config.ws_port).await?;
    let udp_addr = SocketAddr::new(config.bind, config.discovery_port);
    let udp = UdpSocket::bind(udp_addr).await.map_err(|e| bind_error(udp_addr, e))?;
    let _ = udp.set_broadcast(true);
    let local = |r: io::Result<SocketAddr>, addr| r.map_err(|e| ServeError::Bind { addr, source: e });
    let tcp_addr = local(tcp.local_addr(), SocketAddr::new(config.bind, config.port))?;
    let ws_addr = local(ws.local_addr(), SocketAddr::new(config.bind, config.ws_port))?;
    let discovery_addr = local(udp.local_addr(), udp_addr)?;

    let mut server_config = ServerConfig::new(session_id.clone());
    server_config.capacity = config.capacity;
    let mut server = Server::new(server_config);
    server.load_dataset(Arc::new(dataset));
    let hub = Hub::spawn(server, config.data_dir.clone());

    let app = transport::router(hub.clone(), config.ui_dir.clone(), strings);
    let tasks = vec![
        tokio::spawn(transport::serve_tcp(tcp, hub.clone())),
        tokio::spawn(async move {
            if let Err(e) = axum::serve(ws, app).await {
                log::error!("websocket listener stopped: {e}");
            }
        }),
        tokio::spawn(transport::serve_discovery(udp, tcp_addr.port(), session_id.clone())),
    ];
    log::info!("session {session_id}: tcp {tcp_addr}, websocket {ws_addr}, discovery {discovery_addr}");
    Ok(ServerHandle {
        session_id,
        tcp_addr,
        ws_addr,
        discovery_addr,
        hub,
        tasks,
    })
}
