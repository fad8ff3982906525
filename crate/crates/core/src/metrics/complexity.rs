use serde::{Deserialize, Serialize};

use super::Phase;
use crate::error::{Error, Result};
use crate::pipelines::{Strategy, WorldState};

/// Cost figures of one unlearning run, enough to pair runs for scaling checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub clients: usize,
    pub client_epochs: usize,
    pub server_epochs: usize,
    pub batch_size: usize,
    /// Shard sizes at unlearning time.
    pub shard_sizes: Vec<usize>,
    /// All bytes moved during the unlearning phase.
    pub unlearn_bytes: u64,
    /// Unlearning-phase bytes of per-batch exchanges
    /// (server outputs, output gradients, cut gradients).
    pub interactive_bytes: u64,
    /// Unlearning-phase compute over all clients.
    pub client_compute: u64,
    pub server_compute: u64,
}

impl RunSummary {
    pub fn from_world(world: &WorldState) -> Result<Self> {
        let record =
            world.unlearned.as_ref().ok_or_else(|| Error::Report("world has not run an unlearning strategy".into()))?;
        let delta = world.ledger().delta_since(&record.ledger_before);
        let interactive_bytes = world
            .transport
            .log()
            .iter()
            .filter(|e| e.phase == Phase::Unlearn)
            .filter(|e| matches!(e.variant.as_str(), "ServerOutput" | "OutputGradient" | "CutGradient"))
            .map(|e| e.bytes)
            .sum();
        Ok(Self {
            strategy: record.strategy,
            clients: world.clients.len(),
            client_epochs: world.config.client_epochs,
            server_epochs: world.config.server_epochs,
            batch_size: world.config.batch_size,
            shard_sizes: world.clients.iter().map(|c| c.shard.len()).collect(),
            unlearn_bytes: delta.total_bytes_in(Phase::Unlearn),
            interactive_bytes,
            client_compute: delta.client_compute_in(Phase::Unlearn),
            server_compute: delta.compute_units_in(Phase::Unlearn, crate::protocol::Party::Server),
        })
    }

    fn equal_shards(&self) -> Option<usize> {
        let first = *self.shard_sizes.first()?;
        self.shard_sizes.iter().all(|&s| s == first).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    None,
    ServerEpochs,
    Clients,
    ShardSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub factor: Factor,
    pub passed: bool,
    pub expected_ratio: f64,
    pub measured_ratio: f64,
    pub detail: String,
}

fn factor_between(a: &RunSummary, b: &RunSummary) -> Result<Factor> {
    if a.strategy != b.strategy {
        return Err(Error::Design(format!(
            "runs use different strategies ({} vs {})",
            a.strategy.number(),
            b.strategy.number()
        )));
    }
    if a.client_epochs != b.client_epochs || a.batch_size != b.batch_size {
        return Err(Error::Design("runs differ in client epochs or batch size".into()));
    }
    let m = a.server_epochs != b.server_epochs;
    let k = a.clients != b.clients;
    let shards = !k && a.shard_sizes != b.shard_sizes;
    let mut differing = Vec::new();
    if m {
        differing.push(Factor::ServerEpochs);
    }
    if k {
        match (a.equal_shards(), b.equal_shards()) {
            (Some(x), Some(y)) if x == y => differing.push(Factor::Clients),
            (Some(_), Some(_)) => {
                differing.push(Factor::Clients);
                differing.push(Factor::ShardSize);
            }
            _ => return Err(Error::Design("client count varies but shards are not equal-sized".into())),
        }
    }
    if shards {
        differing.push(Factor::ShardSize);
    }
    match differing.as_slice() {
        [] => Ok(Factor::None),
        [f] => Ok(*f),
        _ => Err(Error::Design(format!("runs differ in more than one factor: {differing:?}"))),
    }
}

fn proportional(name: &str, factor: Factor, a_val: u64, b_val: u64, a_scale: u64, b_scale: u64) -> Check {
    // b/a == b_scale/a_scale, compared exactly in integers.
    let passed = (b_val as u128) * (a_scale as u128) == (a_val as u128) * (b_scale as u128);
    let ratio = |n: u64, d: u64| if d == 0 { f64::NAN } else { n as f64 / d as f64 };
    Check {
        name: name.to_string(),
        factor,
        passed,
        expected_ratio: ratio(b_scale, a_scale),
        measured_ratio: ratio(b_val, a_val),
        detail: format!("{a_val} -> {b_val}"),
    }
}

/// Scaling checks between the first run and each later run. Every later run
/// must differ from the first in at most one of server epochs, client count
/// and shard size.
pub fn complexity_assertions(runs: &[RunSummary]) -> Result<Vec<Check>> {
    if runs.len() < 2 {
        return Err(Error::Design("need at least two runs".into()));
    }
    let base = &runs[0];
    let mut out = Vec::new();
    for other in &runs[1..] {
        let f = factor_between(base, other)?;
        let (sa, sb) = match f {
            Factor::None => (1, 1),
            Factor::ServerEpochs => (base.server_epochs as u64, other.server_epochs as u64),
            Factor::Clients => (base.clients as u64, other.clients as u64),
            Factor::ShardSize => {
                (base.shard_sizes.iter().sum::<usize>() as u64, other.shard_sizes.iter().sum::<usize>() as u64)
            }
        };
        match (base.strategy, f) {
            (Strategy::CacheReplacement, Factor::None | Factor::ServerEpochs) => out.push(proportional(
                "strategy 1 unlearning bytes are independent of M",
                f,
                base.unlearn_bytes,
                other.unlearn_bytes,
                1,
                1,
            )),
            (Strategy::Interactive, Factor::None | Factor::ServerEpochs) => out.push(proportional(
                "strategy 2 interactive bytes scale with M",
                f,
                base.interactive_bytes,
                other.interactive_bytes,
                sa,
                sb,
            )),
            (Strategy::Baseline, _) => {
                out.push(proportional(
                    "strategy 0 client compute scales with M*K*shard",
                    f,
                    base.client_compute,
                    other.client_compute,
                    sa,
                    sb,
                ));
                if matches!(f, Factor::None | Factor::ServerEpochs) {
                    out.push(proportional(
                        "strategy 0 bytes scale with M",
                        f,
                        base.unlearn_bytes,
                        other.unlearn_bytes,
                        sa,
                        sb,
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(out)
}
