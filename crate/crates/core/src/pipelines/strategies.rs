//! Unlearning strategies 0 (baseline round-robin retrain), 1 (one-off cache
//! replacement) and 2 (interactive, label-free server updates).

use super::train::{
    batches, check_shards, client_body, client_head, fresh_client, labeled_cache_rows, receive_into_cache,
    server_model, server_step, train_client_locally, train_server_on_cache, transmit_activations,
};
use super::world::{ClientNode, ServerNode, Strategy, UnlearnRecord, WorldState};
use super::{ExperimentConfig, LabelMode, ServerInitMode, Strategy2Replay};
use crate::data::{split_unlearn_request, Dataset, Shard, UnlearnRequest};
use crate::error::{Error, Result};
use crate::metrics::{CostLedger, Phase};
use crate::nn::{softmax_xent, MacPass, Pass};
use crate::protocol::{
    client_state_step, ClientEvent, ClientState, ControlKind, Labels, Message, Party, ServerCache, Transport,
};
use crate::rng::{Domain, SeedStream};
use crate::Tensor;

fn check_compatible(world: &WorldState, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate_structure()?;
    let w = &world.config;
    if cfg.clients != world.clients.len() {
        return Err(Error::config("clients", "differs from the trained world"));
    }
    if cfg.client_dims != w.client_dims || cfg.server_dims != w.server_dims {
        return Err(Error::config("client_dims", "model widths differ from the trained world"));
    }
    if cfg.label_mode != w.label_mode {
        return Err(Error::config("label_mode", "differs from the trained world"));
    }
    Ok(())
}

fn check_ready(world: &WorldState, req: &UnlearnRequest) -> Result<()> {
    if req.client_id as usize >= world.clients.len() {
        return Err(Error::Protocol(format!("unknown client {}", req.client_id)));
    }
    for c in &world.clients {
        if c.state != ClientState::Frozen {
            return Err(Error::Protocol(format!("world is not trained: client {} is {:?}", c.id, c.state)));
        }
        if world.server.cache.get(c.id).is_none() {
            return Err(Error::Protocol(format!("world is not trained: no cache entry for client {}", c.id)));
        }
    }
    Ok(())
}

/// Client-k side of Strategies 1 and 2: announce, unfreeze, drop the
/// selected samples, retrain a fresh model for N epochs, freeze.
/// Returns `(original, forgotten)` shards.
fn retrain_requesting_client(
    node: &mut ClientNode,
    cfg: &ExperimentConfig,
    req: &UnlearnRequest,
    transport: &Transport,
) -> Result<(Shard, Shard)> {
    let k = node.id;
    node.state = client_state_step(node.state, k, ClientEvent::BeginUnlearn { client_id: k })?;
    transport.send(
        Party::Client(k),
        Party::Server,
        &Message::Control { kind: ControlKind::BeginUnlearn, client_id: k },
    )?;
    match transport.recv(Party::Client(k), Party::Server)? {
        Message::Control { kind: ControlKind::BeginUnlearn, .. } => {}
        other => return Err(Error::Protocol(format!("unexpected {}", other.variant_name()))),
    }

    let original = node.shard.clone();
    let (kept, forgotten) = split_unlearn_request(&original, req)?;
    node.shard = kept;
    node.body = client_body(cfg, k)?;
    node.head = client_head(cfg, k, node.head.out_dim())?;
    let units = train_client_locally(node, cfg)?;
    transport.record_compute(Party::Client(k), units);
    transport.record_epochs(Party::Client(k), cfg.client_epochs as u64);
    Ok((original, forgotten))
}

fn init_server_for_unlearning(server: &mut ServerNode, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.server_init_mode == ServerInitMode::ColdReinit {
        server.model = server_model(cfg)?;
    }
    Ok(())
}

/// Strategy 1: only client k works; one intermediate batch crosses the
/// wire; the server retrains on the updated cache.
pub fn run_strategy1(mut world: WorldState, cfg: &ExperimentConfig, req: &UnlearnRequest) -> Result<WorldState> {
    check_compatible(&world, cfg)?;
    check_ready(&world, req)?;
    let ledger_before = world.ledger();
    let cache_versions_before = world.server.cache.versions();
    world.transport.set_phase(Phase::Unlearn);
    let k = req.client_id;

    let node = &mut world.clients[k as usize];
    let (original, forgotten) = retrain_requesting_client(node, cfg, req, &world.transport)?;
    transmit_activations(node, &world.transport, true)?;
    receive_into_cache(&mut world.server, &world.transport, k)?;

    init_server_for_unlearning(&mut world.server, cfg)?;
    train_server_on_cache(&mut world.server, cfg, &world.transport)?;

    world.config = cfg.clone();
    world.unlearned = Some(UnlearnRecord {
        strategy: Strategy::CacheReplacement,
        request: req.clone(),
        original,
        forgotten,
        ledger_before,
        cache_versions_before,
    });
    Ok(world)
}

/// Batch tag for the `index`-th fixed-order batch of `epoch`.
fn interactive_tag(epoch: usize, index: usize) -> u64 {
    ((epoch as u64) << 32) | index as u64
}

/// Client-k side of an interactive exchange: score the server's logits
/// against private (anonymized) labels and send the gradient back.
/// Weights are not touched.
fn serve_output_gradient(node: &mut ClientNode, transport: &Transport, batch_size: usize) -> Result<()> {
    let k = node.id;
    let (logits, tag) = match transport.recv(Party::Server, Party::Client(k))? {
        Message::ServerOutput { logits, batch_tag, .. } => (logits, batch_tag),
        other => {
            return Err(Error::Protocol(format!("client {k} expected server output, got {}", other.variant_name())))
        }
    };
    node.state = client_state_step(node.state, k, ClientEvent::ServeGradient)?;
    let start = (tag & 0xFFFF_FFFF) as usize * batch_size;
    let labels = node.shard.dataset().labels();
    let end = start + logits.rows();
    if end > labels.len() {
        return Err(Error::Protocol(format!("batch tag {tag:#x} addresses rows past the shard")));
    }
    let anonymizer = node
        .anonymizer
        .as_ref()
        .ok_or_else(|| Error::Protocol("interactive exchange requires non-label-sharing mode".into()))?;
    let y = anonymizer.apply_all(&labels[start..end]);
    let (_, dlogits) = softmax_xent(&logits, &y)?;
    transport.send(Party::Client(k), Party::Server, &Message::OutputGradient { client_id: k, dlogits, batch_tag: tag })
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Interactive(usize),
    Replay(usize),
}

/// Strategy 2 (non-label-sharing only): client k retrains and sends
/// label-free activations; for M epochs the server sends logits for client
/// k's rows and updates from the gradients client k returns. With cache
/// replay, other clients' anonymized cache entries also drive updates.
pub fn run_strategy2(mut world: WorldState, cfg: &ExperimentConfig, req: &UnlearnRequest) -> Result<WorldState> {
    if cfg.label_mode != LabelMode::NonLabelSharing {
        return Err(Error::config("label_mode", "strategy 2 requires non_label_sharing"));
    }
    check_compatible(&world, cfg)?;
    check_ready(&world, req)?;
    let ledger_before = world.ledger();
    let cache_versions_before = world.server.cache.versions();
    world.transport.set_phase(Phase::Unlearn);
    let k = req.client_id;
    let transport = &world.transport;

    let node = &mut world.clients[k as usize];
    let (original, forgotten) = retrain_requesting_client(node, cfg, req, transport)?;
    transmit_activations(node, transport, false)?;
    receive_into_cache(&mut world.server, transport, k)?;
    init_server_for_unlearning(&mut world.server, cfg)?;

    let server = &mut world.server;
    let xk = server.cache.get(k).expect("just cached").activations.clone();
    let (replay_x, replay_y) = match cfg.strategy2_replay {
        Strategy2Replay::CacheReplay => labeled_cache_rows(&server.cache, Some(k))?,
        Strategy2Replay::InteractiveOnly => (Tensor::zeros(0, 0), Vec::new()),
    };
    let bs = cfg.batch_size;
    let n_interactive = xk.rows().div_ceil(bs);
    let client_order: Vec<usize> = (0..xk.rows()).collect();
    let mut stream = SeedStream::new(cfg.seeds.shuffle, Domain::ServerShuffle, 0);
    for epoch in 0..cfg.server_epochs {
        let replay_order = stream.permutation(replay_y.len());
        let replay_batches: Vec<&[usize]> = batches(&replay_order, bs).collect();
        let mut schedule: Vec<Slot> =
            (0..n_interactive).map(Slot::Interactive).chain((0..replay_batches.len()).map(Slot::Replay)).collect();
        stream.shuffle(&mut schedule);
        let mut units = 0;
        for slot in schedule {
            match slot {
                Slot::Interactive(b) => {
                    let rows = &client_order[b * bs..((b + 1) * bs).min(xk.rows())];
                    let x = xk.select_rows(rows);
                    let (logits, trace) = server.model.forward(&x, Pass::Train)?;
                    let tag = interactive_tag(epoch, b);
                    transport.send(
                        Party::Server,
                        Party::Client(k),
                        &Message::ServerOutput { client_id: k, logits: logits.clone(), batch_tag: tag },
                    )?;
                    serve_output_gradient(&mut world.clients[k as usize], transport, bs)?;
                    let dlogits = match transport.recv(Party::Client(k), Party::Server)? {
                        Message::OutputGradient { dlogits, batch_tag, .. } if batch_tag == tag => dlogits,
                        other => {
                            return Err(Error::Protocol(format!(
                                "server expected output gradient {tag:#x}, got {}",
                                other.variant_name()
                            )))
                        }
                    };
                    if dlogits.shape() != logits.shape() {
                        return Err(Error::Protocol("output gradient shape differs from server output".into()));
                    }
                    let bw = server.model.backward(&trace, &dlogits)?;
                    server.model.sgd_step(&bw.params, cfg.lr_server)?;
                    units += server.model.mac_count(x.rows(), MacPass::ForwardBackward);
                }
                Slot::Replay(b) => {
                    let idx = replay_batches[b];
                    let x = replay_x.select_rows(idx);
                    let y: Vec<usize> = idx.iter().map(|&i| replay_y[i]).collect();
                    units += server_step(&mut server.model, &x, &y, cfg.lr_server)?;
                }
            }
        }
        transport.record_compute(Party::Server, units);
    }
    transport.record_epochs(Party::Server, cfg.server_epochs as u64);

    world.config = cfg.clone();
    world.unlearned = Some(UnlearnRecord {
        strategy: Strategy::Interactive,
        request: req.clone(),
        original,
        forgotten,
        ledger_before,
        cache_versions_before,
    });
    Ok(world)
}

/// Strategy 0 on a dataset partitioned per the config.
pub fn run_strategy0(cfg: &ExperimentConfig, dataset: &Dataset, req: &UnlearnRequest) -> Result<WorldState> {
    cfg.validate_for(dataset)?;
    run_strategy0_on_shards(cfg, cfg.partition(dataset)?, req)
}

/// Strategy 0: conventional round-robin split learning from scratch on the
/// post-removal shards. For M rounds every client in turn runs one
/// interactive epoch with the server; there is no weight synchronization
/// between clients.
pub fn run_strategy0_on_shards(
    cfg: &ExperimentConfig,
    mut shards: Vec<Shard>,
    req: &UnlearnRequest,
) -> Result<WorldState> {
    let classes = check_shards(cfg, &shards)?;
    let k_req = req.client_id as usize;
    if k_req >= shards.len() {
        return Err(Error::Protocol(format!("unknown client {}", req.client_id)));
    }
    let original = shards[k_req].clone();
    let (kept, forgotten) = split_unlearn_request(&original, req)?;
    shards[k_req] = kept;

    let transport = Transport::new(shards.len() as u32);
    let ledger_before = CostLedger::new();
    transport.set_phase(Phase::Unlearn);
    let mut clients = shards.into_iter().map(|s| fresh_client(cfg, s, classes)).collect::<Result<Vec<_>>>()?;
    let mut server = ServerNode { model: server_model(cfg)?, cache: ServerCache::new() };
    let mut streams: Vec<SeedStream> =
        clients.iter().map(|c| SeedStream::new(cfg.seeds.shuffle, Domain::RoundRobinShuffle, c.id as u64)).collect();
    for c in clients.iter_mut() {
        c.state = client_state_step(c.state, c.id, ClientEvent::BeginTraining)?;
    }

    let mut tag = 0u64;
    for _round in 0..cfg.server_epochs {
        for (c, stream) in clients.iter_mut().zip(streams.iter_mut()) {
            let (client_units, server_units) = round_robin_epoch(c, &mut server, stream, cfg, &transport, &mut tag)?;
            transport.record_compute(Party::Client(c.id), client_units);
            transport.record_epochs(Party::Client(c.id), 1);
            transport.record_compute(Party::Server, server_units);
        }
        transport.record_epochs(Party::Server, 1);
    }
    for c in clients.iter_mut() {
        c.body.set_frozen(true);
        c.head.set_frozen(true);
        c.state = client_state_step(c.state, c.id, ClientEvent::Freeze)?;
    }

    Ok(WorldState {
        config: cfg.clone(),
        class_count: classes,
        clients,
        server,
        transport,
        unlearned: Some(UnlearnRecord {
            strategy: Strategy::Baseline,
            request: req.clone(),
            original,
            forgotten,
            ledger_before,
            cache_versions_before: Default::default(),
        }),
    })
}

/// One interactive split epoch of client `c` against the server.
/// Returns `(client MACs, server MACs)`.
fn round_robin_epoch(
    c: &mut ClientNode,
    server: &mut ServerNode,
    stream: &mut SeedStream,
    cfg: &ExperimentConfig,
    transport: &Transport,
    tag: &mut u64,
) -> Result<(u64, u64)> {
    let k = c.id;
    let me = Party::Client(k);
    c.state = client_state_step(c.state, k, ClientEvent::TrainEpoch)?;
    let data = c.shard.dataset().clone();
    let order = stream.permutation(data.len());
    let (mut client_units, mut server_units) = (0, 0);
    for idx in batches(&order, cfg.batch_size) {
        *tag += 1;
        let x = data.features().select_rows(idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();

        let (cut, client_trace) = c.body.forward(&x, Pass::Train)?;
        c.state = client_state_step(c.state, k, ClientEvent::Transmit)?;
        let labels = match cfg.label_mode {
            LabelMode::LabelSharing => Labels::Raw(y.clone()),
            LabelMode::NonLabelSharing => Labels::Absent,
        };
        transport.send(me, Party::Server, &Message::IntermediateBatch { client_id: k, activations: cut, labels })?;

        let (acts, labels) = match transport.recv(me, Party::Server)? {
            Message::IntermediateBatch { activations, labels, .. } => (activations, labels),
            other => return Err(Error::Protocol(format!("unexpected {}", other.variant_name()))),
        };
        let (logits, server_trace) = server.model.forward(&acts, Pass::Train)?;
        let dlogits = match labels {
            Labels::Raw(v) => softmax_xent(&logits, &v)?.1,
            Labels::Absent | Labels::Anonymized(_) => {
                transport.send(Party::Server, me, &Message::ServerOutput { client_id: k, logits, batch_tag: *tag })?;
                let logits = match transport.recv(Party::Server, me)? {
                    Message::ServerOutput { logits, .. } => logits,
                    other => return Err(Error::Protocol(format!("unexpected {}", other.variant_name()))),
                };
                c.state = client_state_step(c.state, k, ClientEvent::ServeGradient)?;
                let anonymizer = c
                    .anonymizer
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("label-free batch in label-sharing mode".into()))?;
                let (_, d) = softmax_xent(&logits, &anonymizer.apply_all(&y))?;
                transport.send(
                    me,
                    Party::Server,
                    &Message::OutputGradient { client_id: k, dlogits: d, batch_tag: *tag },
                )?;
                match transport.recv(me, Party::Server)? {
                    Message::OutputGradient { dlogits, .. } => dlogits,
                    other => return Err(Error::Protocol(format!("unexpected {}", other.variant_name()))),
                }
            }
        };
        let server_bw = server.model.backward(&server_trace, &dlogits)?;
        server.model.sgd_step(&server_bw.params, cfg.lr_server)?;
        server_units += server.model.mac_count(idx.len(), MacPass::ForwardBackward);
        transport.send(
            Party::Server,
            me,
            &Message::CutGradient { client_id: k, grad: server_bw.input_grad, batch_tag: *tag },
        )?;

        let grad = match transport.recv(Party::Server, me)? {
            Message::CutGradient { grad, .. } => grad,
            other => return Err(Error::Protocol(format!("unexpected {}", other.variant_name()))),
        };
        let client_bw = c.body.backward(&client_trace, &grad)?;
        c.body.sgd_step(&client_bw.params, cfg.lr_client)?;
        client_units += c.body.mac_count(idx.len(), MacPass::ForwardBackward);
    }
    Ok((client_units, server_units))
}
