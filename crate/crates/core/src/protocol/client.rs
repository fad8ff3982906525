use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientState {
    Idle,
    Training,
    Frozen,
    Unlearning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientEvent {
    BeginTraining,
    TrainEpoch,
    Freeze,
    /// Send cut-layer activations to the server.
    Transmit,
    /// Turn a `ServerOutput` into an `OutputGradient` without touching weights.
    ServeGradient,
    BeginUnlearn {
        client_id: u32,
    },
}

/// Client lifecycle: `Idle -> Training -> Frozen -> (Unlearning -> Frozen)*`.
/// An unlearning notice addressed to another client is ignored.
pub fn client_state_step(state: ClientState, own_id: u32, event: ClientEvent) -> Result<ClientState> {
    use ClientEvent as E;
    use ClientState as S;
    let next = match (state, event) {
        (s, E::BeginUnlearn { client_id }) if client_id != own_id => Some(s),
        (S::Idle, E::BeginTraining) => Some(S::Training),
        (S::Training, E::TrainEpoch | E::Transmit | E::ServeGradient) => Some(S::Training),
        (S::Training, E::Freeze) => Some(S::Frozen),
        (S::Frozen, E::Transmit | E::ServeGradient) => Some(S::Frozen),
        (S::Frozen, E::BeginUnlearn { .. }) => Some(S::Unlearning),
        (S::Unlearning, E::TrainEpoch) => Some(S::Unlearning),
        (S::Unlearning, E::Freeze) => Some(S::Frozen),
        _ => None,
    };
    next.ok_or_else(|| Error::Protocol(format!("client {own_id}: event {event:?} is illegal in state {state:?}")))
}
