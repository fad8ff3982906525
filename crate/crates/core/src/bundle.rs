//! Run bundles: the on-disk artifact of one command, checksummed so that
//! later verification detects tampering.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradcheck::GradCheckReport;
use crate::metrics::{complexity_assertions, EvalReport, GoalStatus, LedgerRecords, Phase, RunSummary};
use crate::pipelines::{ExperimentConfig, LabelMode, WorldState};
use crate::protocol::{LabelKind, LogEntry};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const RUN: &str = "run.json";
pub const LEDGER: &str = "ledger.json";
pub const MESSAGES: &str = "messages.jsonl";
pub const METRICS: &str = "metrics.csv";
pub const EVAL: &str = "eval.csv";
pub const REPORT: &str = "report.json";
pub const GRADCHECK: &str = "gradcheck.json";
pub const CHECKPOINTS: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Train,
    Unlearn,
    Gradcheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub run_id: String,
    pub kind: RunKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    /// Run id of the trained world an unlearning run started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunInfo {
    pub fn train(cfg: &ExperimentConfig) -> Self {
        let digest = cfg.digest();
        Self {
            run_id: digest.clone(),
            kind: RunKind::Train,
            config_digest: Some(digest),
            world_run_id: None,
            strategy: None,
            client: None,
            selector: None,
            oracle: false,
            seed: None,
        }
    }

    pub fn unlearn(
        cfg: &ExperimentConfig,
        world_run_id: &str,
        strategy: u8,
        client: u32,
        selector: &str,
        oracle: bool,
    ) -> Self {
        let digest = cfg.digest();
        let run_id = sha256_hex(
            format!("{digest}\nworld={world_run_id}\nstrategy={strategy}\nclient={client}\nselect={selector}\noracle={oracle}\n")
                .as_bytes(),
        );
        Self {
            run_id,
            kind: RunKind::Unlearn,
            config_digest: Some(digest),
            world_run_id: Some(world_run_id.to_string()),
            strategy: Some(strategy),
            client: Some(client),
            selector: Some(selector.to_string()),
            oracle,
            seed: None,
        }
    }

    pub fn gradcheck(seed: u64, draws: usize) -> Self {
        Self {
            run_id: sha256_hex(format!("gradcheck\nseed={seed}\ndraws={draws}\n").as_bytes()),
            kind: RunKind::Gradcheck,
            config_digest: None,
            world_run_id: None,
            strategy: None,
            client: None,
            selector: None,
            oracle: false,
            seed: Some(seed),
        }
    }
}

/// Evaluation and cost summary of a train or unlearn run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub run_id: String,
    pub eval: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Relative path → sha256 hex of the file bytes.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Bundle(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Bundle(e.to_string()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

pub fn metrics_csv(run_id: &str, strategy: Option<u8>, world: &WorldState) -> Result<Vec<u8>> {
    let ledger = world.ledger();
    let strategy = strategy.map_or_else(|| "none".to_string(), |s| s.to_string());
    let mut rows = Vec::new();
    for phase in [Phase::Train, Phase::Unlearn] {
        for party in ledger.parties() {
            let c = ledger.counters_in(phase, party);
            let sent = ledger.bytes_sent_in(phase, party);
            let recv = ledger.bytes_received_in(phase, party);
            if c.compute_units == 0 && c.epochs == 0 && sent == 0 && recv == 0 {
                continue;
            }
            rows.push(vec![
                run_id.to_string(),
                strategy.clone(),
                phase.as_str().to_string(),
                party.to_string(),
                c.compute_units.to_string(),
                sent.to_string(),
                recv.to_string(),
                c.epochs.to_string(),
            ]);
        }
    }
    csv_bytes(
        &["run_id", "strategy", "phase", "party", "compute_units", "bytes_sent", "bytes_received", "epochs"],
        rows,
    )
}

pub fn eval_csv(run_id: &str, report: &EvalReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for c in &report.per_client {
        if let Some(a) = c.own {
            rows.push(vec![run_id.to_string(), c.client.to_string(), "own".into(), fmt_f64(a)]);
        }
    }
    if let (Some(k), Some(a)) = (report.unlearning_client, report.forgotten) {
        rows.push(vec![run_id.to_string(), k.to_string(), "forgotten".into(), fmt_f64(a)]);
    }
    if let Some(a) = report.remaining {
        rows.push(vec![run_id.to_string(), "all".into(), "remaining".into(), fmt_f64(a)]);
    }
    csv_bytes(&["run_id", "client", "split", "accuracy"], rows)
}

/// Files of a bundle before they hit the disk.
#[derive(Debug, Default)]
pub struct BundleWriter {
    files: BTreeMap<String, Vec<u8>>,
}

impl BundleWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) -> &mut Self {
        self.files.insert(name.into(), bytes);
        self
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<&mut Self> {
        let bytes = json_pretty(value)?;
        Ok(self.add(name, bytes))
    }

    /// Config echo, run info, checkpoints, ledger, message log, metrics and
    /// evaluation for a world.
    pub fn add_world(
        &mut self,
        info: &RunInfo,
        cfg: &ExperimentConfig,
        world: &WorldState,
        report: &RunReport,
    ) -> Result<&mut Self> {
        self.add(CONFIG, format!("{}\n", cfg.canonical_json()).into_bytes());
        self.add_json(RUN, info)?;
        for (name, bytes) in world.checkpoint_bytes() {
            self.add(format!("{CHECKPOINTS}/{name}"), bytes);
        }
        self.add_json(LEDGER, &world.ledger().to_records())?;
        self.add(MESSAGES, world.transport.log_jsonl().into_bytes());
        self.add(METRICS, metrics_csv(&info.run_id, info.strategy, world)?);
        self.add(EVAL, eval_csv(&info.run_id, &report.eval)?);
        self.add_json(REPORT, report)?;
        Ok(self)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest { files: self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect() }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        let manifest = self.manifest();
        fs::write(dir.join(MANIFEST), json_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// A bundle read back from disk with every checksum confirmed.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub config: Option<ExperimentConfig>,
    pub ledger: Option<LedgerRecords>,
    pub messages: Vec<LogEntry>,
    pub report: Option<RunReport>,
    pub gradcheck: Option<GradCheckReport>,
    pub checkpoints: BTreeMap<String, Vec<u8>>,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push(name);
        }
    }
    Ok(())
}

fn parse<T: serde::de::DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Bundle(format!("{name}: {e}")))
}

impl LoadedBundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest_bytes = fs::read(dir.join(MANIFEST))
            .map_err(|e| Error::Bundle(format!("{}: cannot read manifest: {e}", dir.display())))?;
        let manifest: Manifest = parse(MANIFEST, &manifest_bytes)?;
        let mut present = Vec::new();
        list_files(&dir, &dir, &mut present)?;
        for name in &present {
            if name != MANIFEST && !manifest.files.contains_key(name) {
                return Err(Error::Bundle(format!("{}: unlisted file {name}", dir.display())));
            }
        }
        let mut files = BTreeMap::new();
        for (name, want) in &manifest.files {
            let bytes = fs::read(dir.join(name))
                .map_err(|e| Error::Bundle(format!("{}: missing {name}: {e}", dir.display())))?;
            if &sha256_hex(&bytes) != want {
                return Err(Error::Bundle(format!("{}: checksum mismatch for {name}", dir.display())));
            }
            files.insert(name.clone(), bytes);
        }

        let info: RunInfo = parse(RUN, files.get(RUN).ok_or_else(|| Error::Bundle("missing run.json".into()))?)?;
        let config = match files.get(CONFIG) {
            Some(b) => Some(
                ExperimentConfig::from_json(std::str::from_utf8(b).map_err(|e| Error::Bundle(e.to_string()))?)
                    .map_err(|e| Error::Bundle(format!("{CONFIG}: {e}")))?,
            ),
            None => None,
        };
        let ledger = files.get(LEDGER).map(|b| parse(LEDGER, b)).transpose()?;
        let messages = match files.get(MESSAGES) {
            Some(b) => std::str::from_utf8(b)
                .map_err(|e| Error::Bundle(e.to_string()))?
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| parse(MESSAGES, l.as_bytes()))
                .collect::<Result<Vec<LogEntry>>>()?,
            None => Vec::new(),
        };
        let report = files.get(REPORT).map(|b| parse(REPORT, b)).transpose()?;
        let gradcheck = files.get(GRADCHECK).map(|b| parse(GRADCHECK, b)).transpose()?;
        let prefix = format!("{CHECKPOINTS}/");
        let checkpoints =
            files.into_iter().filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v))).collect();

        let bundle = Self { dir, info, config, ledger, messages, report, gradcheck, checkpoints };
        bundle.check_shape()?;
        Ok(bundle)
    }

    fn check_shape(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Bundle(format!("{}: {what}", self.dir.display())))
            }
        };
        match self.info.kind {
            RunKind::Gradcheck => need(self.gradcheck.is_some(), "gradcheck bundle without gradcheck.json"),
            RunKind::Train | RunKind::Unlearn => {
                need(self.config.is_some(), "missing config.json")?;
                need(self.ledger.is_some(), "missing ledger.json")?;
                need(self.report.is_some(), "missing report.json")?;
                need(!self.checkpoints.is_empty(), "no checkpoints")
            }
        }
    }

    pub fn label(&self) -> String {
        self.dir.display().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub scope: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

fn row(scope: &str, check: &str, passed: bool, detail: String) -> VerifyRow {
    VerifyRow { scope: scope.to_string(), check: check.to_string(), passed, detail }
}

fn audit_bundle(b: &LoadedBundle) -> Result<Vec<VerifyRow>> {
    let scope = b.label();
    let mut rows = vec![row(&scope, "checksums", true, format!("run {}", b.info.run_id))];
    if let Some(g) = &b.gradcheck {
        rows.push(row(
            &scope,
            "gradient check",
            g.passed && g.max_rel_err < g.tolerance && !g.draws.is_empty(),
            format!(
                "{} draws, max relative error {:.3e} (tolerance {:.0e})",
                g.draws.len(),
                g.max_rel_err,
                g.tolerance
            ),
        ));
        return Ok(rows);
    }

    let ledger = b.ledger.as_ref().expect("checked at load");
    let mut logged: BTreeMap<(Phase, String, String), u64> = BTreeMap::new();
    for m in &b.messages {
        *logged.entry((m.phase, m.from.to_string(), m.to.to_string())).or_default() += m.bytes;
    }
    let metered: BTreeMap<(Phase, String, String), u64> = ledger
        .links
        .iter()
        .filter(|l| l.bytes > 0)
        .map(|l| ((l.phase, l.from.to_string(), l.to.to_string()), l.bytes))
        .collect();
    rows.push(row(
        &scope,
        "ledger bytes match message log",
        logged == metered,
        format!("{} messages over {} links", b.messages.len(), metered.len()),
    ));

    for (name, bytes) in &b.checkpoints {
        if let Err(e) = crate::nn::from_bytes::<f64>(bytes) {
            rows.push(row(&scope, "checkpoint decodes", false, format!("{name}: {e}")));
        }
    }

    let cfg = b.config.as_ref().expect("checked at load");
    if cfg.label_mode == LabelMode::NonLabelSharing {
        let raw = b.messages.iter().filter(|m| m.labels == Some(LabelKind::Raw)).count();
        rows.push(row(&scope, "no raw labels on the wire", raw == 0, format!("{raw} raw-label messages")));
    }

    let report = b.report.as_ref().expect("checked at load");
    for g in &report.eval.goals.checks {
        rows.push(row(
            &scope,
            &format!("goal {}", g.goal),
            g.status != GoalStatus::Fail,
            format!("{:?}: {}", g.status, g.detail),
        ));
    }
    Ok(rows)
}

/// Per-bundle audits, then complexity checks across unlearning bundles of
/// the same strategy. Returns [`Error::Design`] when paired runs differ in
/// more than one factor.
pub fn verify_bundles(bundles: &[LoadedBundle]) -> Result<Vec<VerifyRow>> {
    if bundles.is_empty() {
        return Err(Error::Design("nothing to verify".into()));
    }
    let mut rows = Vec::new();
    for b in bundles {
        rows.extend(audit_bundle(b)?);
    }
    let mut by_strategy: BTreeMap<u8, Vec<RunSummary>> = BTreeMap::new();
    for b in bundles {
        if let Some(s) = b.report.as_ref().and_then(|r| r.summary.clone()) {
            by_strategy.entry(s.strategy.number()).or_default().push(s);
        }
    }
    for (strategy, runs) in by_strategy {
        if runs.len() < 2 {
            continue;
        }
        for c in complexity_assertions(&runs)? {
            rows.push(row(
                &format!("strategy {strategy}"),
                &c.name,
                c.passed,
                format!("expected ratio {} measured {} ({})", c.expected_ratio, c.measured_ratio, c.detail),
            ));
        }
    }
    Ok(rows)
}
