//! Peel-chain partition of a cluster and the validation ratio V.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::chainstore::{ChainStore, TxIdx};
use crate::cospend::{ClusterId, ClusterSet};
use crate::dsu::UnionFind;
use crate::peelchain::{fnext, fprev, HeuristicMode, Tracer};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("cluster {0} has no transactions")]
    EmptyCluster(ClusterId),
    #[error("transaction {0:?} is not part of cluster {1}")]
    NotInCluster(TxIdx, ClusterId),
}

/// Disjoint peel chains covering T_C.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeelChainPartition {
    pub cluster: ClusterId,
    /// Each chain sorted ascending; chains ordered by their first member.
    pub chains: Vec<Vec<TxIdx>>,
    chain_of: HashMap<TxIdx, usize>,
}

impl PeelChainPartition {
    fn from_labels(cluster: ClusterId, txs: &[TxIdx], uf: &mut UnionFind) -> Self {
        let (labels, n) = uf.component_labels();
        let mut chains = vec![Vec::new(); n];
        let mut chain_of = HashMap::with_capacity(txs.len());
        for (i, &t) in txs.iter().enumerate() {
            chains[labels[i] as usize].push(t);
            chain_of.insert(t, labels[i] as usize);
        }
        PeelChainPartition {
            cluster,
            chains,
            chain_of,
        }
    }

    pub fn n_txs(&self) -> usize {
        self.chain_of.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// |chains| / |T_C|
    pub fn ratio_v(&self) -> f64 {
        self.n_chains() as f64 / self.n_txs() as f64
    }

    pub fn chain_of(&self, tx: TxIdx) -> Option<usize> {
        self.chain_of.get(&tx).copied()
    }

    pub fn same_chain(&self, a: TxIdx, b: TxIdx) -> Result<bool, ValidationError> {
        let ca = self
            .chain_of(a)
            .ok_or(ValidationError::NotInCluster(a, self.cluster))?;
        let cb = self
            .chain_of(b)
            .ok_or(ValidationError::NotInCluster(b, self.cluster))?;
        Ok(ca == cb)
    }
}

/// Partitions T_C into merged peel chains.
///
/// The union of `follow_forward` and `follow_backward` from a start is the
/// connected piece of the graph whose edges are the in-cluster `fnext` link
/// and the in-cluster `fprev` links of each transaction, so merging every
/// such set transitively equals joining each transaction with its own links.
/// That costs one `fnext` and one `fprev` per transaction.
pub fn partition_peel_chains(
    store: &ChainStore,
    clusters: &ClusterSet,
    cluster: ClusterId,
) -> Result<PeelChainPartition, ValidationError> {
    let c = clusters.cluster(cluster);
    let txs = &c.transactions;
    if txs.is_empty() {
        return Err(ValidationError::EmptyCluster(cluster));
    }
    let tracer = Tracer::for_cluster(store, clusters, cluster);
    let pos = |t: TxIdx| txs.binary_search(&t).ok();
    let mut uf = UnionFind::new(txs.len());
    for (i, &t) in txs.iter().enumerate() {
        if let Some(j) = fnext(store, t, &tracer.profile).and_then(pos) {
            uf.union(i as u32, j as u32);
        }
        for p in fprev(store, t, &tracer.profile) {
            if let Some(j) = pos(p) {
                uf.union(i as u32, j as u32);
            }
        }
    }
    Ok(PeelChainPartition::from_labels(cluster, txs, &mut uf))
}

/// Runs both traversals from every start and merges overlapping results.
/// Quadratic on long chains; kept as the reference route.
pub fn partition_peel_chains_by_traversal(
    store: &ChainStore,
    clusters: &ClusterSet,
    cluster: ClusterId,
    starts: &[TxIdx],
) -> Result<PeelChainPartition, ValidationError> {
    let c = clusters.cluster(cluster);
    let txs = &c.transactions;
    if txs.is_empty() {
        return Err(ValidationError::EmptyCluster(cluster));
    }
    let tracer = Tracer::for_cluster(store, clusters, cluster);
    let pos = |t: TxIdx| txs.binary_search(&t).expect("validation traversal stays in T_C");
    let mut uf = UnionFind::new(txs.len());
    for &start in starts {
        if clusters.cluster_of_tx(start) != Some(cluster) {
            return Err(ValidationError::NotInCluster(start, cluster));
        }
        let s = pos(start) as u32;
        let fwd = tracer.follow_forward(start, HeuristicMode::Validation);
        let bwd = tracer.follow_backward(start, HeuristicMode::Validation);
        for t in fwd.path.into_iter().chain(bwd.txs) {
            uf.union(s, pos(t) as u32);
        }
    }
    Ok(PeelChainPartition::from_labels(cluster, txs, &mut uf))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub chain_id: usize,
    pub txids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cluster_id: ClusterId,
    pub n_txs: usize,
    pub n_chains: usize,
    pub ratio_v: f64,
    pub chains: Vec<ChainReport>,
}

impl ValidationReport {
    pub fn new(store: &ChainStore, partition: &PeelChainPartition) -> Self {
        ValidationReport {
            cluster_id: partition.cluster,
            n_txs: partition.n_txs(),
            n_chains: partition.n_chains(),
            ratio_v: partition.ratio_v(),
            chains: partition
                .chains
                .iter()
                .enumerate()
                .map(|(i, c)| ChainReport {
                    chain_id: i,
                    txids: c.iter().map(|&t| store.txid(t).to_hex()).collect(),
                })
                .collect(),
        }
    }
}
