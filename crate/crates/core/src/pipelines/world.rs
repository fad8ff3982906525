use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::data::{Shard, UnlearnRequest};
use crate::metrics::CostLedger;
use crate::protocol::{Anonymizer, ClientState, ServerCache, Transport};
use crate::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Round-robin split retraining of every party.
    #[serde(rename = "0")]
    Baseline,
    /// Client-k retrain plus one-off cache replacement.
    #[serde(rename = "1")]
    CacheReplacement,
    /// Client-k retrain plus interactive label-free server updates.
    #[serde(rename = "2")]
    Interactive,
}

impl Strategy {
    pub fn number(self) -> u8 {
        match self {
            Strategy::Baseline => 0,
            Strategy::CacheReplacement => 1,
            Strategy::Interactive => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            0 => Some(Strategy::Baseline),
            1 => Some(Strategy::CacheReplacement),
            2 => Some(Strategy::Interactive),
            _ => None,
        }
    }
}

/// A client party: private shard, the lower model it shares activations
/// from, and a private classifier head used only for local training.
#[derive(Debug, Clone)]
pub struct ClientNode {
    pub id: u32,
    pub shard: Shard,
    pub body: MlpModel,
    pub head: MlpModel,
    pub state: ClientState,
    /// Present in non-label-sharing mode; never handed to the server.
    pub anonymizer: Option<Anonymizer>,
}

#[derive(Debug, Clone)]
pub struct ServerNode {
    pub model: MlpModel,
    pub cache: ServerCache,
}

/// What an unlearning strategy did, with the snapshots needed to audit it.
#[derive(Debug, Clone)]
pub struct UnlearnRecord {
    pub strategy: Strategy,
    pub request: UnlearnRequest,
    pub original: Shard,
    pub forgotten: Shard,
    pub ledger_before: CostLedger,
    pub cache_versions_before: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub config: ExperimentConfig,
    pub class_count: usize,
    pub clients: Vec<ClientNode>,
    pub server: ServerNode,
    pub transport: Transport,
    pub unlearned: Option<UnlearnRecord>,
}

impl WorldState {
    pub fn ledger(&self) -> CostLedger {
        self.transport.ledger()
    }

    pub fn client(&self, k: u32) -> Option<&ClientNode> {
        self.clients.get(k as usize)
    }

    pub fn shards(&self) -> Vec<Shard> {
        self.clients.iter().map(|c| c.shard.clone()).collect()
    }

    /// All models (client bodies, client heads, server) compare bit-equal.
    pub fn models_bit_eq(&self, other: &WorldState) -> bool {
        self.clients.len() == other.clients.len()
            && self.clients.iter().zip(&other.clients).all(|(a, b)| a.body.bit_eq(&b.body) && a.head.bit_eq(&b.head))
            && self.server.model.bit_eq(&other.server.model)
    }

    /// Largest absolute parameter difference over every model, or `None`
    /// if the architectures differ.
    pub fn parameter_distance(&self, other: &WorldState) -> Option<f64> {
        if self.clients.len() != other.clients.len() {
            return None;
        }
        let mut worst = self.server.model.max_abs_diff(&other.server.model)?;
        for (a, b) in self.clients.iter().zip(&other.clients) {
            worst = worst.max(a.body.max_abs_diff(&b.body)?);
            worst = worst.max(a.head.max_abs_diff(&b.head)?);
        }
        Some(worst)
    }

    /// Checkpoint bytes of every model, in a fixed order.
    pub fn checkpoint_bytes(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::with_capacity(2 * self.clients.len() + 1);
        for c in &self.clients {
            out.push((format!("client_{}.swpr", c.id), crate::nn::to_bytes(&c.body)));
            out.push((format!("client_{}_head.swpr", c.id), crate::nn::to_bytes(&c.head)));
        }
        out.push(("server.swpr".into(), crate::nn::to_bytes(&self.server.model)));
        out
    }
}
