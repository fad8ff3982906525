use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_blobs, load_csv, partition_equal, partition_noniid, Dataset, Shard};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    LabelSharing,
    NonLabelSharing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerInitMode {
    /// Continue from the server model trained before the request.
    WarmStart,
    /// Draw fresh server weights from the model seed.
    ColdReinit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy2Replay {
    /// Other clients' cached, anonymized entries also drive server updates.
    CacheReplay,
    /// Only the unlearning client's interactive exchanges drive updates.
    InteractiveOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partitioner {
    #[default]
    Dirichlet,
    /// Class-blind split into equally sized shards.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub anonymizer: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSource {
    pub class_count: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs(BlobsSource),
    Csv(CsvSource),
}

/// Everything that determines a run. Unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// K.
    pub clients: usize,
    /// N: local epochs per client.
    pub client_epochs: usize,
    /// M: server epochs; must exceed N.
    pub server_epochs: usize,
    pub lr_client: f64,
    pub lr_server: f64,
    pub batch_size: usize,
    pub label_mode: LabelMode,
    pub server_init_mode: ServerInitMode,
    pub strategy2_replay: Strategy2Replay,
    pub client_dims: Vec<usize>,
    pub server_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seeds: Seeds,
    pub alpha: f64,
    #[serde(default)]
    pub partitioner: Partitioner,
    pub data: DataSource,
}

impl ExperimentConfig {
    /// Desk-scale reference setup: 4 Gaussian blobs in 8 dimensions,
    /// 400 samples per class, 3 clients.
    pub fn reference() -> Self {
        Self {
            clients: 3,
            client_epochs: 5,
            server_epochs: 10,
            lr_client: 0.1,
            lr_server: 0.1,
            batch_size: 32,
            label_mode: LabelMode::LabelSharing,
            server_init_mode: ServerInitMode::ColdReinit,
            strategy2_replay: Strategy2Replay::CacheReplay,
            client_dims: vec![8, 16, 8],
            server_dims: vec![8, 16, 4],
            dropout_rate: 0.0,
            seeds: Seeds { data: 1, model: 2, anonymizer: 3, shuffle: 4 },
            alpha: 0.5,
            partitioner: Partitioner::Dirichlet,
            data: DataSource::Blobs(BlobsSource { class_count: 4, dims: 8, samples_per_class: 400, spread: 1.0 }),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical bytes: fields in declaration order, pretty-printed.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.data {
            DataSource::Blobs(b) => Some(b.class_count),
            DataSource::Csv(_) => None,
        }
    }

    pub fn cut_dim(&self) -> usize {
        self.client_dims.last().copied().unwrap_or(0)
    }

    /// Full validation for a training run, including `M > N`.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.server_epochs <= self.client_epochs {
            return Err(Error::config(
                "server_epochs",
                format!(
                    "M > N is required: server_epochs (M = {}) must exceed client_epochs (N = {})",
                    self.server_epochs, self.client_epochs
                ),
            ));
        }
        Ok(())
    }

    /// Everything except the `M > N` training requirement, which does not
    /// apply to the unlearning-phase epoch counts.
    pub fn validate_structure(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients", "need at least one client (K >= 1)"));
        }
        if self.client_epochs == 0 {
            return Err(Error::config("client_epochs", "must be at least 1"));
        }
        if self.server_epochs == 0 {
            return Err(Error::config("server_epochs", "must be at least 1"));
        }
        for (name, lr) in [("lr_client", self.lr_client), ("lr_server", self.lr_server)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(name, format!("learning rate must be finite and positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (name, dims) in [("client_dims", &self.client_dims), ("server_dims", &self.server_dims)] {
            if dims.len() < 2 {
                return Err(Error::config(name, "need at least an input and an output width"));
            }
            if dims.contains(&0) {
                return Err(Error::config(name, "widths must be at least 1"));
            }
        }
        if self.client_dims.last() != self.server_dims.first() {
            return Err(Error::config(
                "server_dims",
                format!(
                    "cut dimension mismatch: client output {} vs server input {}",
                    self.cut_dim(),
                    self.server_dims[0]
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.partitioner == Partitioner::Dirichlet && !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be finite and positive"));
        }
        match &self.data {
            DataSource::Blobs(b) => {
                if b.class_count == 0 || b.dims == 0 || b.samples_per_class == 0 {
                    return Err(Error::config("data.blobs", "counts must be at least 1"));
                }
                if !(b.spread.is_finite() && b.spread >= 0.0) {
                    return Err(Error::config("data.blobs.spread", "must be finite and non-negative"));
                }
                if b.dims != self.client_dims[0] {
                    return Err(Error::config(
                        "client_dims",
                        format!("input width {} differs from data dims {}", self.client_dims[0], b.dims),
                    ));
                }
                if self.server_dims.last() != Some(&b.class_count) {
                    return Err(Error::config(
                        "server_dims",
                        format!("output width must equal class count {}", b.class_count),
                    ));
                }
                if self.clients > b.class_count * b.samples_per_class {
                    return Err(Error::config("clients", "more clients than samples"));
                }
            }
            DataSource::Csv(c) => {
                if c.label_column.is_empty() {
                    return Err(Error::config("data.csv.label_column", "must not be empty"));
                }
            }
        }
        Ok(())
    }

    /// Checks the config against a loaded dataset.
    pub fn validate_for(&self, ds: &Dataset) -> Result<()> {
        self.validate()?;
        if ds.dims() != self.client_dims[0] {
            return Err(Error::config(
                "client_dims",
                format!("input width {} differs from data dims {}", self.client_dims[0], ds.dims()),
            ));
        }
        if self.server_dims.last() != Some(&ds.class_count()) {
            return Err(Error::config(
                "server_dims",
                format!("output width must equal class count {}", ds.class_count()),
            ));
        }
        if self.clients > ds.len() {
            return Err(Error::config("clients", "more clients than samples"));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Blobs(b) => gen_blobs(b.class_count, b.dims, b.samples_per_class, b.spread, self.seeds.data),
            DataSource::Csv(c) => load_csv(&c.path, &c.label_column),
        }
    }

    pub fn partition(&self, ds: &Dataset) -> Result<Vec<Shard>> {
        match self.partitioner {
            Partitioner::Dirichlet => partition_noniid(ds, self.clients, self.alpha, self.seeds.data),
            Partitioner::Equal => partition_equal(ds, self.clients, self.seeds.data),
        }
    }

    /// Fields that shape the trained world; the unlearning knobs
    /// (server init mode, Strategy 2 replay) are normalized away.
    pub fn training_fingerprint(&self) -> String {
        let mut c = self.clone();
        c.server_init_mode = ServerInitMode::ColdReinit;
        c.strategy2_replay = Strategy2Replay::CacheReplay;
        c.digest()
    }

    /// Replaces every seed with `seed`.
    pub fn with_seed_override(mut self, seed: u64) -> Self {
        self.seeds = Seeds { data: seed, model: seed, anonymizer: seed, shuffle: seed };
        self
    }
}

fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports "unknown field `x`" / "missing field `x`".
    msg.split('`').nth(1).map_or_else(|| "<json>".to_string(), str::to_string)
}
