use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{read_frame, write_frame, FrameError};
use super::protocol::{Request, Response};
use crate::codec::ActionCodec;
use crate::policy::{Prediction, TokenPolicy};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("invalid backend: {0}")]
    Backend(String),
}

/// Simulated hardware or precision speed: a fixed delay added to every prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub injected_delay_us: u64,
    pub label: String,
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self::none()
    }
}

impl LatencyProfile {
    pub fn none() -> Self {
        Self {
            injected_delay_us: 0,
            label: "none".into(),
        }
    }

    pub fn new(label: impl Into<String>, delay: Duration) -> Self {
        Self {
            injected_delay_us: delay.as_micros() as u64,
            label: label.into(),
        }
    }

    pub fn delay(&self) -> Duration {
        Duration::from_micros(self.injected_delay_us)
    }
}

/// What the server runs for each predict request.
pub trait InferenceBackend: Send + Sync {
    fn n_dims(&self) -> usize;
    fn decode_mode(&self) -> String;
    fn predict(&self, obs: &[f64], instruction: &str) -> Result<Prediction, String>;
}

/// A trained token policy and its codec.
#[derive(Debug, Clone)]
pub struct LocalBackend {
    pub policy: TokenPolicy,
    pub codec: ActionCodec,
}

impl LocalBackend {
    pub fn new(policy: TokenPolicy, codec: ActionCodec) -> Result<Self, ServeError> {
        if policy.spec != codec.spec {
            return Err(ServeError::Backend(format!(
                "codec spec {:?} does not match policy spec {:?}",
                codec.spec, policy.spec
            )));
        }
        Ok(Self { policy, codec })
    }
}

impl InferenceBackend for LocalBackend {
    fn n_dims(&self) -> usize {
        self.policy.n_dims()
    }

    fn decode_mode(&self) -> String {
        self.policy.decode_mode.to_string()
    }

    fn predict(&self, obs: &[f64], instruction: &str) -> Result<Prediction, String> {
        self.policy
            .predict(obs, instruction, &self.codec)
            .map_err(|e| e.to_string())
    }
}

/// Answers every request with the zero action; for benchmarking transport.
#[derive(Debug, Clone, Copy)]
pub struct StubBackend {
    pub n_dims: usize,
}

impl InferenceBackend for StubBackend {
    fn n_dims(&self) -> usize {
        self.n_dims
    }

    fn decode_mode(&self) -> String {
        "stub".into()
    }

    fn predict(&self, _obs: &[f64], _instruction: &str) -> Result<Prediction, String> {
        Ok(Prediction {
            action: vec![0.0; self.n_dims],
            tokens: vec![0; self.n_dims],
        })
    }
}

type Connections = Arc<Mutex<HashMap<u64, TcpStream>>>;

/// A running server. Dropping it stops the listener and closes every connection.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Connections,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, s) in self.connections.lock().unwrap().drain() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `addr` and serves `backend` on a thread per connection.
pub fn serve<A: ToSocketAddrs + std::fmt::Debug>(
    backend: Arc<dyn InferenceBackend>,
    addr: A,
    profile: LatencyProfile,
) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind {
        addr: format!("{addr:?}"),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: format!("{addr:?}"),
        source,
    })?;
    info!("serving on {local} with profile {}", profile.label);
    let stop = Arc::new(AtomicBool::new(false));
    let connections: Connections = Arc::default();
    let accept = {
        let stop = stop.clone();
        let connections = connections.clone();
        let profile = Arc::new(profile);
        thread::spawn(move || accept_loop(listener, backend, profile, stop, connections))
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        connections,
        accept: Some(accept),
    })
}

fn accept_loop(
    listener: TcpListener,
    backend: Arc<dyn InferenceBackend>,
    profile: Arc<LatencyProfile>,
    stop: Arc<AtomicBool>,
    connections: Connections,
) {
    let next_id = AtomicU64::new(0);
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let id = next_id.fetch_add(1, Ordering::Relaxed);
        if let Ok(clone) = stream.try_clone() {
            connections.lock().unwrap().insert(id, clone);
        }
        let backend = backend.clone();
        let profile = profile.clone();
        let connections = connections.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, backend.as_ref(), &profile) {
                debug!("connection {peer:?} ended: {e}");
            }
            connections.lock().unwrap().remove(&id);
        });
    }
}

fn handle_connection(
    mut stream: TcpStream,
    backend: &dyn InferenceBackend,
    profile: &LatencyProfile,
) -> Result<(), FrameError> {
    loop {
        let payload = match read_frame(&mut stream) {
            Ok(p) => p,
            Err(FrameError::Closed) => return Ok(()),
            Err(e @ FrameError::Oversize(_)) => {
                let _ = write_frame(
                    &mut stream,
                    &Response::error(None, e.to_string()).to_bytes(),
                );
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let request = match Request::from_bytes(&payload) {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("malformed request: {e}");
                write_frame(&mut stream, &Response::error(None, &msg).to_bytes())?;
                warn!("{msg}; closing connection");
                return Ok(());
            }
        };
        let response = respond(request, backend, profile);
        write_frame(&mut stream, &response.to_bytes())?;
    }
}

fn respond(request: Request, backend: &dyn InferenceBackend, profile: &LatencyProfile) -> Response {
    match request {
        Request::Predict {
            id,
            obs,
            instruction,
        } => {
            let start = Instant::now();
            if profile.injected_delay_us > 0 {
                thread::sleep(profile.delay());
            }
            match backend.predict(&obs, &instruction) {
                Ok(p) => Response::Action {
                    id,
                    action: p.action,
                    tokens: p.tokens,
                    latency_us: start.elapsed().as_micros() as u64,
                },
                Err(e) => Response::error(Some(id), e),
            }
        }
        Request::Info => Response::Info {
            n_dims: backend.n_dims(),
            decode_mode: backend.decode_mode(),
            profile: profile.label.clone(),
        },
        Request::Reset => Response::Reset { ok: true },
    }
}
