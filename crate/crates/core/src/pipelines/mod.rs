//! End-to-end orchestration: SISA-style split training, the three
//! unlearning strategies and the retrain-from-scratch oracle.

mod config;
mod strategies;
mod train;
mod world;

pub use config::{
    BlobsSource, CsvSource, DataSource, ExperimentConfig, LabelMode, Partitioner, Seeds, ServerInitMode,
    Strategy2Replay,
};
pub use strategies::{run_strategy0, run_strategy0_on_shards, run_strategy1, run_strategy2};
pub use train::{
    local_epoch_macs, retrain_oracle, run_training, run_training_with, train_shards, train_shards_with, Exec,
};
pub use world::{ClientNode, ServerNode, Strategy, UnlearnRecord, WorldState};

use crate::data::{split_unlearn_request, Shard, UnlearnRequest};
use crate::error::Result;

/// Shards after applying `req` to its client.
pub fn shards_after_request(shards: &[Shard], req: &UnlearnRequest) -> Result<Vec<Shard>> {
    shards
        .iter()
        .map(|s| {
            if s.client_id() == req.client_id {
                split_unlearn_request(s, req).map(|(kept, _)| kept)
            } else {
                Ok(s.clone())
            }
        })
        .collect()
}
