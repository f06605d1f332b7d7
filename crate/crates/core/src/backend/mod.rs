//! Client side of the model-backend protocol, plus an in-process synthetic
//! backend and a small HTTP front end for it.

pub mod cache;
pub mod client;
pub mod protocol;
pub mod server;
pub mod synthetic;
pub mod transport;

pub use cache::ResponseCache;
pub use client::{BackendClient, BackendEndpoint, BackendError, Backoff, GenerateParams};
pub use synthetic::{sibling_name, SyntheticBackend, FILLER_MODEL, HUMAN_MODEL, SOURCE_MODEL};
pub use transport::{HttpTransport, RawResponse, Transport, TransportError};

pub const ENV_BACKEND_URL: &str = "CURVESCAN_BACKEND_URL";
pub const ENV_CACHE_DIR: &str = "CURVESCAN_CACHE_DIR";
