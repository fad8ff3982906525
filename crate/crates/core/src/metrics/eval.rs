use serde::{Deserialize, Serialize};

use crate::data::{Dataset, UnlearnRequest};
use crate::error::{Error, Result};
use crate::nn::MacPass;
use crate::pipelines::{LabelMode, Strategy, WorldState};
use crate::protocol::{Anonymizer, Party};
use crate::MlpModel;

use super::Phase;

/// Largest remaining-set accuracy gap to the oracle still counted as
/// maintained utility.
pub const UTILITY_TOLERANCE: f64 = 0.05;

pub fn accuracy_of(predicted: &[usize], truth: &[usize]) -> Option<f64> {
    if truth.is_empty() || predicted.len() != truth.len() {
        return None;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Some(hits as f64 / truth.len() as f64)
}

/// Top-1 accuracy of `server ∘ body` on `data`, mapping anonymized
/// predictions back through `anonymizer` when one is given.
pub fn evaluate_dataset(
    body: &MlpModel,
    server: &MlpModel,
    anonymizer: Option<&Anonymizer>,
    data: &Dataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Report("cannot evaluate an empty dataset".into()));
    }
    let cut = body.predict(data.features())?;
    let logits = server.predict(&cut)?;
    let predicted: Vec<usize> =
        logits.argmax_rows().into_iter().map(|a| anonymizer.map_or(a, |an| an.invert(a))).collect();
    Ok(accuracy_of(&predicted, data.labels()).expect("nonempty, equal lengths"))
}

/// Accuracy of client `k`'s composed model on `data`, judged from the
/// client's side (de-anonymized in non-label-sharing mode). Eval mode only.
pub fn evaluate_client(world: &WorldState, k: u32, data: &Dataset) -> Result<f64> {
    let c = world.client(k).ok_or_else(|| Error::Report(format!("no client {k}")))?;
    if data.dims() != c.body.in_dim() {
        return Err(Error::Shape(format!("data has {} features, client {k} expects {}", data.dims(), c.body.in_dim())));
    }
    let anonymizer = match world.config.label_mode {
        LabelMode::LabelSharing => None,
        LabelMode::NonLabelSharing => c.anonymizer.as_ref(),
    };
    evaluate_dataset(&c.body, &world.server.model, anonymizer, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client: u32,
    /// Accuracy on the client's current shard; `None` when it is empty.
    pub own: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub forgotten: Option<f64>,
    pub remaining: Option<f64>,
    pub forgotten_delta: Option<f64>,
    pub remaining_delta: Option<f64>,
    /// Largest absolute parameter difference over all models.
    pub parameter_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Pass,
    Fail,
    /// Reported without a pass/fail claim.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCheck {
    pub goal: String,
    pub status: GoalStatus,
    pub value: Option<f64>,
    pub detail: String,
}

/// Low overhead, no interference, effectiveness, utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalAudit {
    pub checks: Vec<GoalCheck>,
}

impl GoalAudit {
    pub fn status(&self, goal: &str) -> Option<GoalStatus> {
        self.checks.iter().find(|c| c.goal == goal).map(|c| c.status)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != GoalStatus::Fail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_client: Vec<ClientEval>,
    pub unlearning_client: Option<u32>,
    /// Accuracy on the forgotten samples through the requesting client.
    pub forgotten: Option<f64>,
    /// Accuracy over every client's remaining data, each through its own
    /// composed model.
    pub remaining: Option<f64>,
    pub oracle: Option<OracleComparison>,
    pub goals: GoalAudit,
}

fn remaining_accuracy(world: &WorldState) -> Result<Option<f64>> {
    let (mut hits, mut total) = (0.0, 0usize);
    for c in &world.clients {
        if c.shard.is_empty() {
            continue;
        }
        let acc = evaluate_client(world, c.id, c.shard.dataset())?;
        hits += acc * c.shard.len() as f64;
        total += c.shard.len();
    }
    Ok((total > 0).then(|| hits / total as f64))
}

fn own_accuracies(world: &WorldState) -> Result<Vec<ClientEval>> {
    world
        .clients
        .iter()
        .map(|c| {
            Ok(ClientEval {
                client: c.id,
                own: if c.shard.is_empty() { None } else { Some(evaluate_client(world, c.id, c.shard.dataset())?) },
            })
        })
        .collect()
}

/// Utility-only report for a world that has not run an unlearning strategy.
pub fn utility_report(world: &WorldState) -> Result<EvalReport> {
    Ok(EvalReport {
        per_client: own_accuracies(world)?,
        unlearning_client: None,
        forgotten: None,
        remaining: remaining_accuracy(world)?,
        oracle: None,
        goals: GoalAudit { checks: Vec::new() },
    })
}

fn check_comparable(a: &WorldState, b: &WorldState) -> Result<()> {
    let (x, y) = (&a.config, &b.config);
    if a.clients.len() != b.clients.len()
        || x.client_dims != y.client_dims
        || x.server_dims != y.server_dims
        || x.label_mode != y.label_mode
        || a.class_count != b.class_count
    {
        return Err(Error::Report("worlds have mismatched configurations".into()));
    }
    for (p, q) in a.clients.iter().zip(&b.clients) {
        if p.shard.origin_indices() != q.shard.origin_indices() {
            return Err(Error::Report(format!("client {} holds different data in the two worlds", p.id)));
        }
    }
    Ok(())
}

/// Forgotten/remaining accuracy of an unlearned world, optionally compared
/// against a retrain oracle, plus the four-goal audit.
pub fn effectiveness_report(
    world_u: &WorldState,
    oracle: Option<&WorldState>,
    req: &UnlearnRequest,
) -> Result<EvalReport> {
    let record =
        world_u.unlearned.as_ref().ok_or_else(|| Error::Report("world has not run an unlearning strategy".into()))?;
    if record.request.client_id != req.client_id {
        return Err(Error::Report(format!(
            "report requested for client {} but world unlearned client {}",
            req.client_id, record.request.client_id
        )));
    }
    let k = req.client_id;
    let forgotten_set = record.forgotten.dataset();
    let forgotten = if forgotten_set.is_empty() { None } else { Some(evaluate_client(world_u, k, forgotten_set)?) };
    let remaining = remaining_accuracy(world_u)?;

    let oracle_cmp = match oracle {
        None => None,
        Some(o) => {
            check_comparable(world_u, o)?;
            let of = if forgotten_set.is_empty() { None } else { Some(evaluate_client(o, k, forgotten_set)?) };
            let or = remaining_accuracy(o)?;
            let parameter_distance =
                world_u.parameter_distance(o).ok_or_else(|| Error::Report("model architectures differ".into()))?;
            Some(OracleComparison {
                forgotten: of,
                remaining: or,
                forgotten_delta: forgotten.zip(of).map(|(a, b)| a - b),
                remaining_delta: remaining.zip(or).map(|(a, b)| a - b),
                parameter_distance,
            })
        }
    };

    let goals = audit_goals(world_u, forgotten, remaining, oracle_cmp.as_ref());
    Ok(EvalReport {
        per_client: own_accuracies(world_u)?,
        unlearning_client: Some(k),
        forgotten,
        remaining,
        oracle: oracle_cmp,
        goals,
    })
}

/// Client compute a full round-robin retrain would need for the world's
/// current shards: M epochs over every client's data.
pub fn baseline_client_macs(world: &WorldState) -> u64 {
    world.clients.iter().map(|c| c.body.mac_count(c.shard.len(), MacPass::ForwardBackward)).sum::<u64>()
        * world.config.server_epochs as u64
}

fn show(acc: Option<f64>) -> String {
    acc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

fn audit_goals(
    world: &WorldState,
    forgotten: Option<f64>,
    remaining: Option<f64>,
    oracle: Option<&OracleComparison>,
) -> GoalAudit {
    let record = world.unlearned.as_ref().expect("checked by caller");
    let k = record.request.client_id;
    let delta = world.ledger().delta_since(&record.ledger_before);
    let mut checks = Vec::with_capacity(4);

    let spent = delta.client_compute_in(Phase::Unlearn);
    let baseline = baseline_client_macs(world);
    let g1 = match record.strategy {
        Strategy::Baseline => GoalStatus::Measured,
        _ if spent < baseline => GoalStatus::Pass,
        _ => GoalStatus::Fail,
    };
    checks.push(GoalCheck {
        goal: "G1".into(),
        status: g1,
        value: Some(spent as f64),
        detail: format!("client compute {spent} MACs vs {baseline} for a full round-robin retrain"),
    });

    let busy: Vec<u32> = world
        .clients
        .iter()
        .map(|c| c.id)
        .filter(|&id| id != k)
        .filter(|&id| delta.activity_in(Phase::Unlearn, Party::Client(id)) != (0, 0, 0, 0))
        .collect();
    let versions = world.server.cache.versions();
    let touched: Vec<u32> = record
        .cache_versions_before
        .iter()
        .filter(|&(&id, v)| id != k && versions.get(&id) != Some(v))
        .map(|(&id, _)| id)
        .collect();
    let g2 = if record.strategy == Strategy::Baseline {
        GoalStatus::Measured
    } else if busy.is_empty() && touched.is_empty() {
        GoalStatus::Pass
    } else {
        GoalStatus::Fail
    };
    checks.push(GoalCheck {
        goal: "G2".into(),
        status: g2,
        value: Some(busy.len() as f64),
        detail: format!("other clients with activity: {busy:?}; other cache entries changed: {touched:?}"),
    });

    let (g3, g3_value, g3_detail) = match oracle {
        Some(o) if o.parameter_distance == 0.0 => {
            (GoalStatus::Pass, Some(0.0), "bit-identical to the retrain oracle".to_string())
        }
        Some(o) => (
            GoalStatus::Measured,
            Some(o.parameter_distance),
            format!(
                "parameter distance to the retrain oracle {:e}; forgotten-set accuracy {} vs oracle {}",
                o.parameter_distance,
                show(forgotten),
                show(o.forgotten)
            ),
        ),
        None => (GoalStatus::Measured, forgotten, "no oracle; forgotten-set accuracy only".to_string()),
    };
    checks.push(GoalCheck { goal: "G3".into(), status: g3, value: g3_value, detail: g3_detail });

    let g4 = match oracle.and_then(|o| o.remaining_delta) {
        Some(d) if d.abs() <= UTILITY_TOLERANCE => (GoalStatus::Pass, Some(d)),
        Some(d) => (GoalStatus::Fail, Some(d)),
        None => (GoalStatus::Measured, remaining),
    };
    checks.push(GoalCheck {
        goal: "G4".into(),
        status: g4.0,
        value: g4.1,
        detail: format!("remaining-set accuracy {}; tolerance {UTILITY_TOLERANCE} vs oracle", show(remaining)),
    });

    GoalAudit { checks }
}
