//! Datasets, horizontal non-IID partitioning and unlearning requests.

mod dataset;
mod partition;
mod unlearn;

pub use dataset::{gen_blobs, load_csv, Dataset, BLOB_RADIUS};
pub use partition::{partition_equal, partition_noniid};
pub use unlearn::{apply_unlearn_request, split_unlearn_request, Selector, Shard, UnlearnRequest};
