//! Messages, the byte-metered transport, the server cache, label
//! anonymization and the client lifecycle.

mod anonymizer;
mod cache;
mod client;
mod message;
mod transport;

pub use anonymizer::Anonymizer;
pub use cache::{CacheEntry, ServerCache};
pub use client::{client_state_step, ClientEvent, ClientState};
pub use message::{ControlKind, LabelKind, Labels, Message};
pub use transport::{LogEntry, Party, Transport};
