//! SISA-style split training: clients train alone, freeze, ship their
//! cut-layer activations once, and the server trains on the cache.

use rayon::prelude::*;

use super::world::{ClientNode, ServerNode, WorldState};
use super::{ExperimentConfig, LabelMode};
use crate::data::{Dataset, Shard};
use crate::error::{Error, Result};
use crate::metrics::Phase;
use crate::nn::{softmax_xent, ActivationPlan, MacPass, Pass};
use crate::protocol::{
    client_state_step, Anonymizer, ClientEvent, ClientState, Labels, Message, Party, ServerCache, Transport,
};
use crate::rng::{derive_key, Domain, SeedStream};
use crate::{MlpModel, Tensor};

/// How the client-local phase is scheduled. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    /// Worker threads for the client phase; 0 or 1 runs sequentially.
    pub threads: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

pub(crate) fn client_body(cfg: &ExperimentConfig, k: u32) -> Result<MlpModel> {
    // Client models never carry dropout: their outputs must be a fixed
    // function of their weights for the one-off cache to stay valid.
    MlpModel::init(
        &cfg.client_dims,
        &ActivationPlan::AllRelu,
        0.0,
        derive_key(cfg.seeds.model, Domain::ClientInit, k as u64),
    )
}

pub(crate) fn client_head(cfg: &ExperimentConfig, k: u32, classes: usize) -> Result<MlpModel> {
    MlpModel::init(
        &[cfg.cut_dim(), classes],
        &ActivationPlan::HiddenRelu,
        0.0,
        derive_key(cfg.seeds.model, Domain::ClientHeadInit, k as u64),
    )
}

pub(crate) fn server_model(cfg: &ExperimentConfig) -> Result<MlpModel> {
    MlpModel::init(
        &cfg.server_dims,
        &ActivationPlan::HiddenRelu,
        cfg.dropout_rate,
        derive_key(cfg.seeds.model, Domain::ServerInit, 0),
    )
}

pub(crate) fn fresh_client(cfg: &ExperimentConfig, shard: Shard, classes: usize) -> Result<ClientNode> {
    let k = shard.client_id();
    let anonymizer = match cfg.label_mode {
        LabelMode::LabelSharing => None,
        LabelMode::NonLabelSharing => Some(Anonymizer::new(cfg.seeds.anonymizer, k, classes)?),
    };
    Ok(ClientNode {
        id: k,
        body: client_body(cfg, k)?,
        head: client_head(cfg, k, classes)?,
        shard,
        state: ClientState::Idle,
        anonymizer,
    })
}

/// Contiguous chunks of `order`, each at most `batch` long.
pub(crate) fn batches(order: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch.max(1))
}

/// MACs spent by one local epoch over `rows` samples.
pub fn local_epoch_macs(node: &ClientNode, rows: usize) -> u64 {
    node.body.mac_count(rows, MacPass::ForwardBackward) + node.head.mac_count(rows, MacPass::ForwardBackward)
}

/// N epochs of local training (body + private head, true labels), then
/// freeze. Touches nothing but `node`; returns the MACs spent.
pub(crate) fn train_client_locally(node: &mut ClientNode, cfg: &ExperimentConfig) -> Result<u64> {
    let data = node.shard.dataset().clone();
    let lr = cfg.lr_client;
    let mut stream = SeedStream::new(cfg.seeds.shuffle, Domain::ClientShuffle, node.id as u64);
    let mut units = 0;
    for _ in 0..cfg.client_epochs {
        node.state = client_state_step(node.state, node.id, ClientEvent::TrainEpoch)?;
        let order = stream.permutation(data.len());
        for idx in batches(&order, cfg.batch_size) {
            let x = data.features().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let (cut, body_trace) = node.body.forward(&x, Pass::Train)?;
            let (logits, head_trace) = node.head.forward(&cut, Pass::Train)?;
            let (_, dlogits) = softmax_xent(&logits, &y)?;
            let head_bw = node.head.backward(&head_trace, &dlogits)?;
            let body_bw = node.body.backward(&body_trace, &head_bw.input_grad)?;
            node.head.sgd_step(&head_bw.params, lr)?;
            node.body.sgd_step(&body_bw.params, lr)?;
        }
        units += local_epoch_macs(node, data.len());
    }
    node.body.set_frozen(true);
    node.head.set_frozen(true);
    node.state = client_state_step(node.state, node.id, ClientEvent::Freeze)?;
    Ok(units)
}

/// Runs local training for every listed client, in parallel when `exec`
/// allows, and records compute in client-id order after the join.
pub(crate) fn local_phase(
    clients: &mut [ClientNode],
    cfg: &ExperimentConfig,
    transport: &Transport,
    exec: Exec,
) -> Result<()> {
    let results: Vec<Result<u64>> = if exec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exec.threads)
            .build()
            .map_err(|e| Error::Protocol(format!("cannot start worker pool: {e}")))?;
        pool.install(|| clients.par_iter_mut().map(|c| train_client_locally(c, cfg)).collect())
    } else {
        clients.iter_mut().map(|c| train_client_locally(c, cfg)).collect()
    };
    for (c, r) in clients.iter().zip(results) {
        let units = r?;
        transport.record_compute(Party::Client(c.id), units);
        transport.record_epochs(Party::Client(c.id), cfg.client_epochs as u64);
    }
    Ok(())
}

/// Client side of the one-off transmission: frozen-model activations over
/// the whole shard, with raw or anonymized labels. `with_labels == false`
/// sends activations only.
pub(crate) fn transmit_activations(node: &mut ClientNode, transport: &Transport, with_labels: bool) -> Result<()> {
    node.state = client_state_step(node.state, node.id, ClientEvent::Transmit)?;
    let data = node.shard.dataset();
    let activations = node.body.predict(data.features())?;
    transport.record_compute(Party::Client(node.id), node.body.mac_count(data.len(), MacPass::Forward));
    let labels = match (&node.anonymizer, with_labels) {
        (_, false) => Labels::Absent,
        (None, true) => Labels::Raw(data.labels().to_vec()),
        (Some(a), true) => Labels::Anonymized(a.apply_all(data.labels())),
    };
    transport.send(
        Party::Client(node.id),
        Party::Server,
        &Message::IntermediateBatch { client_id: node.id, activations, labels },
    )
}

/// Server side: take the next intermediate batch from client `k` into the cache.
pub(crate) fn receive_into_cache(server: &mut ServerNode, transport: &Transport, k: u32) -> Result<()> {
    match transport.recv(Party::Client(k), Party::Server)? {
        Message::IntermediateBatch { client_id, activations, labels } if client_id == k => {
            server.cache.put(k, activations, labels)?;
            Ok(())
        }
        other => Err(Error::Protocol(format!(
            "server expected an intermediate batch from client {k}, got {}",
            other.variant_name()
        ))),
    }
}

/// Labeled rows of the cache, concatenated in client-id order. Entries
/// without labels are skipped, as are those of `exclude`.
pub(crate) fn labeled_cache_rows(cache: &ServerCache, exclude: Option<u32>) -> Result<(Tensor, Vec<usize>)> {
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for (k, entry) in cache.iter() {
        if Some(k) == exclude {
            continue;
        }
        if let Some(v) = entry.labels.values() {
            parts.push(&entry.activations);
            labels.extend_from_slice(v);
        }
    }
    if parts.is_empty() {
        return Ok((Tensor::zeros(0, 0), labels));
    }
    Ok((Tensor::vstack(&parts)?, labels))
}

/// One supervised server step on a batch; returns the MACs spent.
pub(crate) fn server_step(model: &mut MlpModel, x: &Tensor, y: &[usize], lr: f64) -> Result<u64> {
    let (logits, trace) = model.forward(x, Pass::Train)?;
    let (_, dlogits) = softmax_xent(&logits, y)?;
    let bw = model.backward(&trace, &dlogits)?;
    model.sgd_step(&bw.params, lr)?;
    Ok(model.mac_count(x.rows(), MacPass::ForwardBackward))
}

/// M epochs over every labeled cache entry, mini-batches drawn from the
/// server shuffle stream.
pub(crate) fn train_server_on_cache(
    server: &mut ServerNode,
    cfg: &ExperimentConfig,
    transport: &Transport,
) -> Result<()> {
    let (x, y) = labeled_cache_rows(&server.cache, None)?;
    let mut stream = SeedStream::new(cfg.seeds.shuffle, Domain::ServerShuffle, 0);
    for _ in 0..cfg.server_epochs {
        let order = stream.permutation(y.len());
        let mut units = 0;
        for idx in batches(&order, cfg.batch_size) {
            let xb = x.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            units += server_step(&mut server.model, &xb, &yb, cfg.lr_server)?;
        }
        transport.record_compute(Party::Server, units);
    }
    transport.record_epochs(Party::Server, cfg.server_epochs as u64);
    Ok(())
}

/// Partitions `dataset` per the config and runs [`train_shards`].
pub fn run_training(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<WorldState> {
    run_training_with(cfg, dataset, Exec::default())
}

pub fn run_training_with(cfg: &ExperimentConfig, dataset: &Dataset, exec: Exec) -> Result<WorldState> {
    cfg.validate_for(dataset)?;
    let shards = cfg.partition(dataset)?;
    train_shards_with(cfg, shards, exec)
}

/// Client training, freeze, one-off caching, server training over
/// pre-partitioned shards (one per client, ids `0..K`).
pub fn train_shards(cfg: &ExperimentConfig, shards: Vec<Shard>) -> Result<WorldState> {
    train_shards_with(cfg, shards, Exec::default())
}

pub fn train_shards_with(cfg: &ExperimentConfig, shards: Vec<Shard>, exec: Exec) -> Result<WorldState> {
    let classes = check_shards(cfg, &shards)?;
    let transport = Transport::new(shards.len() as u32);
    transport.set_phase(Phase::Train);
    let mut clients = shards.into_iter().map(|s| fresh_client(cfg, s, classes)).collect::<Result<Vec<_>>>()?;
    for c in clients.iter_mut() {
        c.state = client_state_step(c.state, c.id, ClientEvent::BeginTraining)?;
    }
    local_phase(&mut clients, cfg, &transport, exec)?;

    let mut server = ServerNode { model: server_model(cfg)?, cache: ServerCache::new() };
    for c in clients.iter_mut() {
        transmit_activations(c, &transport, true)?;
    }
    for c in &clients {
        receive_into_cache(&mut server, &transport, c.id)?;
    }
    train_server_on_cache(&mut server, cfg, &transport)?;

    Ok(WorldState { config: cfg.clone(), class_count: classes, clients, server, transport, unlearned: None })
}

/// Ground truth for exact unlearning: the whole pipeline rerun from scratch
/// on the post-removal shards with the same seeds.
pub fn retrain_oracle(cfg: &ExperimentConfig, shards_u: Vec<Shard>) -> Result<WorldState> {
    train_shards(cfg, shards_u)
}

pub(crate) fn check_shards(cfg: &ExperimentConfig, shards: &[Shard]) -> Result<usize> {
    cfg.validate()?;
    if shards.len() != cfg.clients {
        return Err(Error::config(
            "clients",
            format!("config names {} clients but {} shards were given", cfg.clients, shards.len()),
        ));
    }
    let classes = shards[0].dataset().class_count();
    for (i, s) in shards.iter().enumerate() {
        if s.client_id() as usize != i {
            return Err(Error::Partition(format!("shard {i} belongs to client {}", s.client_id())));
        }
        if s.dataset().dims() != cfg.client_dims[0] {
            return Err(Error::config("client_dims", "input width differs from shard feature width"));
        }
        if s.dataset().class_count() != classes {
            return Err(Error::Partition("shards disagree on the class count".into()));
        }
    }
    if cfg.server_dims.last() != Some(&classes) {
        return Err(Error::config("server_dims", format!("output width must equal class count {classes}")));
    }
    Ok(classes)
}
