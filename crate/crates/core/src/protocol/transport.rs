use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::message::{LabelKind, Message};
use crate::error::{Error, Result};
use crate::metrics::{CostLedger, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Client(u32),
    Server,
}

impl Party {
    pub fn is_client(self) -> bool {
        matches!(self, Party::Client(_))
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Client(k) => write!(f, "client:{k}"),
            Party::Server => f.write_str("server"),
        }
    }
}

impl FromStr for Party {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "server" {
            return Ok(Party::Server);
        }
        s.strip_prefix("client:")
            .and_then(|k| k.parse().ok())
            .map(Party::Client)
            .ok_or_else(|| Error::Routing(format!("unknown party `{s}`")))
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One delivered message, as recorded in the transport log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub seq: u64,
    pub from: Party,
    pub to: Party,
    pub variant: String,
    pub bytes: u64,
    pub phase: Phase,
    /// Label mode of an `IntermediateBatch`; absent for other variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelKind>,
}

#[derive(Debug, Clone)]
struct Inner {
    clients: u32,
    phase: Phase,
    ledger: CostLedger,
    log: Vec<LogEntry>,
    queues: BTreeMap<(Party, Party), VecDeque<Vec<u8>>>,
}

/// Lossless in-memory transport. Every send is serialized, metered into the
/// ledger under the current phase, logged, and queued FIFO per link.
/// Receivers get the message decoded from the metered bytes.
#[derive(Debug)]
pub struct Transport {
    inner: Mutex<Inner>,
}

impl Clone for Transport {
    fn clone(&self) -> Self {
        Self { inner: Mutex::new(self.lock().clone()) }
    }
}

impl Transport {
    /// Registers `clients` client parties plus the server.
    pub fn new(clients: u32) -> Self {
        Self {
            inner: Mutex::new(Inner {
                clients,
                phase: Phase::Train,
                ledger: CostLedger::new(),
                log: Vec::new(),
                queues: BTreeMap::new(),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("transport lock poisoned")
    }

    pub fn client_count(&self) -> u32 {
        self.lock().clients
    }

    pub fn is_registered(&self, party: Party) -> bool {
        match party {
            Party::Server => true,
            Party::Client(k) => k < self.lock().clients,
        }
    }

    pub fn phase(&self) -> Phase {
        self.lock().phase
    }

    pub fn set_phase(&self, phase: Phase) {
        self.lock().phase = phase;
    }

    pub fn send(&self, from: Party, to: Party, msg: &Message) -> Result<()> {
        let bytes = msg.serialize()?;
        let mut g = self.lock();
        for p in [from, to] {
            if let Party::Client(k) = p {
                if k >= g.clients {
                    return Err(Error::Routing(format!("{p} is not registered")));
                }
            }
        }
        if from == to {
            return Err(Error::Routing(format!("{from} cannot send to itself")));
        }
        let phase = g.phase;
        let n = bytes.len() as u64;
        g.ledger.add_bytes(phase, from, to, n);
        let seq = g.log.len() as u64;
        g.log.push(LogEntry {
            seq,
            from,
            to,
            variant: msg.variant_name().to_string(),
            bytes: n,
            phase,
            labels: msg.label_kind(),
        });
        g.queues.entry((from, to)).or_default().push_back(bytes);
        Ok(())
    }

    /// Next pending message on the `from -> to` link.
    pub fn recv(&self, from: Party, to: Party) -> Result<Message> {
        let bytes = self
            .lock()
            .queues
            .get_mut(&(from, to))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::Protocol(format!("no pending message from {from} to {to}")))?;
        Message::deserialize(&bytes)
    }

    pub fn pending(&self) -> usize {
        self.lock().queues.values().map(VecDeque::len).sum()
    }

    pub fn record_compute(&self, party: Party, units: u64) {
        let mut g = self.lock();
        let phase = g.phase;
        g.ledger.add_compute(phase, party, units);
    }

    pub fn record_epochs(&self, party: Party, epochs: u64) {
        let mut g = self.lock();
        let phase = g.phase;
        g.ledger.add_epochs(phase, party, epochs);
    }

    /// Snapshot of the ledger.
    pub fn ledger(&self) -> CostLedger {
        self.lock().ledger.clone()
    }

    /// Snapshot of the delivered-message log.
    pub fn log(&self) -> Vec<LogEntry> {
        self.lock().log.clone()
    }

    /// Log as JSON lines (`seq`, `from`, `to`, `variant`, `bytes`, plus
    /// `phase` and, for intermediate batches, `labels`).
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.lock().log.iter() {
            out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }
}
