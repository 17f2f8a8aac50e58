//! Remote inference over TCP.
//!
//! Every message is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON carrying a `"type"` tag. A connection serves one request at a
//! time; the benchmark keeps exactly one request in flight, like a robot
//! control loop waiting on its next action.

mod bench;
mod client;
mod frame;
mod protocol;
mod server;

pub use bench::{bench, BenchReport, BenchRequest, BenchStop};
pub use client::{
    Client, ClientError, RemoteEndpoint, RemotePrediction, ServerInfo, DEFAULT_TIMEOUT,
};
pub use frame::{encode_frame, read_frame, write_frame, FrameError, MAX_FRAME};
pub use protocol::{Request, Response};
pub use server::{
    serve, InferenceBackend, LatencyProfile, LocalBackend, ServeError, ServerHandle, StubBackend,
};
