//! Report rows, run metadata and append-only report files.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chainstore::ChainStore;
use crate::coinjoin::Verdict;
use crate::cospend::{ClusterId, ClusterSet};
use crate::expansion::{ClusterEvaluation, RuleSummary};
use crate::features::ClusterFeatureRow;
use crate::peelchain::{Direction, HopRecord};
use crate::validation::PeelChainPartition;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} already exists with different content")]
    Conflict(PathBuf),
    #[error("csv encoding: {0}")]
    Csv(#[from] csv::Error),
}

/// Provenance attached to every report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    meta: &'a ReportMeta,
    report: &'a T,
}

pub fn to_json_report<T: Serialize>(meta: &ReportMeta, report: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(&Wrapped { meta, report }).expect("report serializes");
    v.push(b'\n');
    v
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| ReportError::Csv(e.into()))?;
    Ok(w.into_inner().expect("flushed"))
}

/// Writes report files named after the run's config hash. Existing files are
/// never replaced; rewriting identical bytes is accepted.
#[derive(Clone, Debug)]
pub struct OutputDir {
    dir: PathBuf,
    prefix: String,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>, command: &str, config_hash: &str) -> Self {
        OutputDir {
            dir: dir.into(),
            prefix: format!("{command}-{}", &config_hash[..12]),
        }
    }

    pub fn path_for(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.prefix))
    }

    pub fn write(&self, suffix: &str, bytes: &[u8]) -> Result<PathBuf, ReportError> {
        let path = self.path_for(suffix);
        let io_err = |source| ReportError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(&self.dir).map_err(io_err)?;
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                f.write_all(bytes).map_err(io_err)?;
                Ok(path)
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let existing = std::fs::read(&path).map_err(io_err)?;
                if existing == bytes {
                    Ok(path)
                } else {
                    Err(ReportError::Conflict(path))
                }
            }
            Err(e) => Err(io_err(e)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClusterAddressRow {
    pub cluster_id: ClusterId,
    pub address: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClusterTxRow {
    pub cluster_id: ClusterId,
    pub txid: String,
}

pub fn cluster_rows(store: &ChainStore, clusters: &ClusterSet) -> (Vec<ClusterAddressRow>, Vec<ClusterTxRow>) {
    let mut addrs = Vec::new();
    let mut txs = Vec::new();
    for c in clusters.iter() {
        addrs.extend(c.addresses.iter().map(|&a| ClusterAddressRow {
            cluster_id: c.id,
            address: store.address(a).to_string(),
        }));
        txs.extend(c.transactions.iter().map(|&t| ClusterTxRow {
            cluster_id: c.id,
            txid: store.txid(t).to_hex(),
        }));
    }
    (addrs, txs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureCsvRow {
    pub cluster_id: ClusterId,
    pub prop_segwit_enabled: f64,
    pub prop_locktime_enabled: f64,
    pub prop_v1: f64,
    pub address_type_max_prop: f64,
    pub change_strategy: &'static str,
    pub label: Option<Verdict>,
}

impl FeatureCsvRow {
    pub fn new(row: &ClusterFeatureRow, label: Option<Verdict>) -> Self {
        FeatureCsvRow {
            cluster_id: row.cluster_id,
            prop_segwit_enabled: row.prop_segwit_enabled,
            prop_locktime_enabled: row.prop_locktime_enabled,
            prop_v1: row.prop_v1,
            address_type_max_prop: row.address_type_max_prop,
            change_strategy: row.change_strategy_label(),
            label,
        }
    }
}

/// One `(|T_C|, V)` pair per cluster.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationRow {
    pub cluster_id: ClusterId,
    pub n_txs: usize,
    pub n_chains: usize,
    pub ratio_v: f64,
}

impl From<&PeelChainPartition> for ValidationRow {
    fn from(p: &PeelChainPartition) -> Self {
        ValidationRow {
            cluster_id: p.cluster,
            n_txs: p.n_txs(),
            n_chains: p.n_chains(),
            ratio_v: p.ratio_v(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub cluster_id: ClusterId,
    pub heuristic: String,
    pub n_txs: usize,
    pub n_discovered: usize,
    pub expansion_factor: f64,
    pub false_positives: usize,
    pub fdr: f64,
    pub truncated: bool,
}

impl From<&ClusterEvaluation> for ExpansionRow {
    fn from(e: &ClusterEvaluation) -> Self {
        ExpansionRow {
            cluster_id: e.result.cluster,
            heuristic: e.result.rule.as_str().to_string(),
            n_txs: e.result.n_txs,
            n_discovered: e.result.discovered.len(),
            expansion_factor: e.result.expansion_factor(),
            false_positives: e.eval.false_positives,
            fdr: e.eval.fdr,
            truncated: e.result.truncated,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub heuristic: String,
    #[serde(rename = "mean_E")]
    pub mean_e: f64,
    #[serde(rename = "mean_D")]
    pub mean_d: f64,
}

impl From<&RuleSummary> for ComparisonRow {
    fn from(s: &RuleSummary) -> Self {
        ComparisonRow {
            heuristic: s.heuristic.clone(),
            mean_e: s.mean_e,
            mean_d: s.mean_d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub txid: String,
    pub hop_index: usize,
    pub direction: Direction,
    pub rule: &'static str,
    pub candidate_count: usize,
}

pub fn trace_rows(store: &ChainStore, hops: &[HopRecord]) -> Vec<TraceRow> {
    hops.iter()
        .map(|h| TraceRow {
            txid: store.txid(h.tx).to_hex(),
            hop_index: h.hop_index,
            direction: h.direction,
            rule: h.rule,
            candidate_count: h.candidate_count,
        })
        .collect()
}
