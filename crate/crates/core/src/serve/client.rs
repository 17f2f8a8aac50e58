use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::frame::{read_frame, write_frame, FrameError};
use super::protocol::{Request, Response};
use crate::simlab::{EndpointError, EndpointReply, PolicyEndpoint, WorldState};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("server closed the connection")]
    Closed,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server error: {0}")]
    Server(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl From<FrameError> for ClientError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Closed => Self::Closed,
            FrameError::Io(e) => match e.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Self::Timeout,
                io::ErrorKind::UnexpectedEof
                | io::ErrorKind::ConnectionReset
                | io::ErrorKind::ConnectionAborted
                | io::ErrorKind::BrokenPipe => Self::Closed,
                _ => Self::Transport(e.to_string()),
            },
            other => Self::Transport(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemotePrediction {
    pub id: u64,
    pub action: Vec<f64>,
    pub tokens: Vec<u32>,
    /// Server-side time from request receipt to response.
    pub server_latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerInfo {
    pub n_dims: usize,
    pub decode_mode: String,
    pub profile: String,
}

/// One connection; requests are strictly sequential.
#[derive(Debug)]
pub struct Client {
    stream: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, ClientError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|source| ClientError::Connect {
                addr: "<unresolved>".into(),
                source,
            })?
            .collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for a in &addrs {
            match TcpStream::connect_timeout(a, timeout) {
                Ok(stream) => {
                    let _ = stream.set_nodelay(true);
                    stream.set_read_timeout(Some(timeout)).map_err(|source| {
                        ClientError::Connect {
                            addr: a.to_string(),
                            source,
                        }
                    })?;
                    stream.set_write_timeout(Some(timeout)).ok();
                    return Ok(Self { stream, next_id: 1 });
                }
                Err(e) => last = e,
            }
        }
        Err(ClientError::Connect {
            addr: format!("{addrs:?}"),
            source: last,
        })
    }

    /// Id the next predict request will carry.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn exchange(&mut self, request: &Request) -> Result<Response, ClientError> {
        write_frame(&mut self.stream, &request.to_bytes())?;
        self.receive()
    }

    fn receive(&mut self) -> Result<Response, ClientError> {
        let payload = read_frame(&mut self.stream)?;
        Response::from_bytes(&payload).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn predict(
        &mut self,
        obs: &[f64],
        instruction: &str,
    ) -> Result<RemotePrediction, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut response = self.exchange(&Request::Predict {
            id,
            obs: obs.to_vec(),
            instruction: instruction.to_string(),
        })?;
        loop {
            match response {
                Response::Action {
                    id: got,
                    action,
                    tokens,
                    latency_us,
                } if got == id => {
                    return Ok(RemotePrediction {
                        id,
                        action,
                        tokens,
                        server_latency_us: latency_us,
                    })
                }
                Response::Error {
                    id: Some(got),
                    message,
                } if got == id => return Err(ClientError::Server(message)),
                Response::Error { id: None, message } => return Err(ClientError::Server(message)),
                // a late answer to an earlier request; keep waiting for ours
                Response::Action { .. } | Response::Error { .. } => {}
                other => return Err(ClientError::Protocol(format!("{other:?}"))),
            }
            response = self.receive()?;
        }
    }

    pub fn info(&mut self) -> Result<ServerInfo, ClientError> {
        match self.exchange(&Request::Info)? {
            Response::Info {
                n_dims,
                decode_mode,
                profile,
            } => Ok(ServerInfo {
                n_dims,
                decode_mode,
                profile,
            }),
            Response::Error { message, .. } => Err(ClientError::Server(message)),
            other => Err(ClientError::Protocol(format!("{other:?}"))),
        }
    }

    pub fn reset(&mut self) -> Result<(), ClientError> {
        match self.exchange(&Request::Reset)? {
            Response::Reset { ok: true } => Ok(()),
            Response::Error { message, .. } => Err(ClientError::Server(message)),
            other => Err(ClientError::Protocol(format!("{other:?}"))),
        }
    }
}

/// A served policy used as a rollout endpoint; latency is the client round trip.
#[derive(Debug)]
pub struct RemoteEndpoint {
    pub client: Client,
}

impl RemoteEndpoint {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            client: Client::connect(addr, timeout)?,
        })
    }
}

fn endpoint_error(e: ClientError) -> EndpointError {
    match e {
        ClientError::Timeout => EndpointError::Timeout,
        other => EndpointError::Failed(other.to_string()),
    }
}

impl PolicyEndpoint for RemoteEndpoint {
    fn query(
        &mut self,
        _state: &WorldState,
        obs: &[f64],
        instruction: &str,
    ) -> Result<EndpointReply, EndpointError> {
        let start = Instant::now();
        let p = self
            .client
            .predict(obs, instruction)
            .map_err(endpoint_error)?;
        Ok(EndpointReply {
            action: p.action,
            tokens: Some(p.tokens),
            latency_s: start.elapsed().as_secs_f64(),
        })
    }

    fn reset(&mut self) -> Result<(), EndpointError> {
        self.client.reset().map_err(endpoint_error)
    }
}
