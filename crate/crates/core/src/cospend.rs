//! Multi-input (co-spend) clustering.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainstore::{AddrId, ChainStore, TxIdx};
use crate::dsu::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl ClusterId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A co-spend cluster `(A_C, T_C)`. Both member lists are sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub id: ClusterId,
    /// A_C
    pub addresses: Vec<AddrId>,
    /// T_C: every transaction with at least one input address in A_C.
    pub transactions: Vec<TxIdx>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("address {0:?} does not occur in the ledger")]
    UnknownAddress(String),
    #[error("no cluster with id {0}")]
    UnknownCluster(ClusterId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSet {
    of_addr: Vec<ClusterId>,
    of_tx: Vec<Option<ClusterId>>,
    clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// One union per transaction across its input addresses. Cluster ids follow
    /// the first-appearance order of each cluster's earliest address.
    pub fn build(store: &ChainStore) -> ClusterSet {
        let mut uf = UnionFind::new(store.num_addresses());
        for tx in store.transactions() {
            if let Some((first, rest)) = tx.inputs.split_first() {
                for input in rest {
                    uf.union(first.address.0, input.address.0);
                }
            }
        }
        let (labels, count) = uf.component_labels();

        let mut clusters: Vec<Cluster> = (0..count as u32)
            .map(|i| Cluster {
                id: ClusterId(i),
                addresses: Vec::new(),
                transactions: Vec::new(),
            })
            .collect();
        let of_addr: Vec<ClusterId> = labels.into_iter().map(ClusterId).collect();
        for (a, c) in of_addr.iter().enumerate() {
            clusters[c.index()].addresses.push(AddrId(a as u32));
        }
        let mut of_tx = Vec::with_capacity(store.len());
        for (t, tx) in store.transactions().iter().enumerate() {
            let c = tx.inputs.first().map(|i| of_addr[i.address.index()]);
            if let Some(c) = c {
                clusters[c.index()].transactions.push(TxIdx(t as u32));
            }
            of_tx.push(c);
        }
        ClusterSet {
            of_addr,
            of_tx,
            clusters,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter()
    }

    pub fn get(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.get(id.index())
    }

    pub fn cluster(&self, id: ClusterId) -> &Cluster {
        &self.clusters[id.index()]
    }

    #[inline]
    pub fn cluster_of_addr(&self, address: AddrId) -> ClusterId {
        self.of_addr[address.index()]
    }

    /// The cluster whose addresses initiated `tx`; `None` for coinbase transactions.
    #[inline]
    pub fn cluster_of_tx(&self, tx: TxIdx) -> Option<ClusterId> {
        self.of_tx[tx.index()]
    }

    #[inline]
    pub fn contains_tx(&self, cluster: ClusterId, tx: TxIdx) -> bool {
        self.of_tx[tx.index()] == Some(cluster)
    }

    pub fn cluster_of(&self, store: &ChainStore, address: &str) -> Result<ClusterId, ClusterError> {
        store
            .address_id(address)
            .map(|a| self.cluster_of_addr(a))
            .ok_or_else(|| ClusterError::UnknownAddress(address.to_string()))
    }

    pub fn cluster_tuple(&self, id: ClusterId) -> Result<(&[AddrId], &[TxIdx]), ClusterError> {
        self.get(id)
            .map(|c| (c.addresses.as_slice(), c.transactions.as_slice()))
            .ok_or(ClusterError::UnknownCluster(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainstore::test_util::*;

    fn store() -> ChainStore {
        ChainStore::from_records(&[
            coinbase(1, &[("a", 10), ("b", 10), ("c", 10), ("d", 10), ("e", 10)]),
            spend(2, &[(1, 0), (1, 1)], &[("x", 19)]),
            spend(3, &[(1, 2)], &[("y", 9)]),
            coinbase(4, &[("b", 5)]),
            spend(5, &[(4, 0), (3, 0)], &[("z", 13)]),
            spend(6, &[(1, 3), (1, 4)], &[("w", 19)]),
        ])
        .unwrap()
    }

    #[test]
    fn transitive_merge() {
        let s = store();
        let cs = ClusterSet::build(&s);
        let a = cs.cluster_of(&s, "a").unwrap();
        assert_eq!(cs.cluster_of(&s, "b").unwrap(), a);
        // y is co-spent with b in tx 5, and c's tx 3 shares no address with them.
        assert_eq!(cs.cluster_of(&s, "y").unwrap(), a);
        assert_ne!(cs.cluster_of(&s, "c").unwrap(), a);
        assert_ne!(cs.cluster_of(&s, "d").unwrap(), a);
        assert_eq!(cs.cluster_of(&s, "d").unwrap(), cs.cluster_of(&s, "e").unwrap());
    }

    #[test]
    fn tuple_contents() {
        let s = store();
        let cs = ClusterSet::build(&s);
        let a = cs.cluster_of(&s, "a").unwrap();
        let (addrs, txs) = cs.cluster_tuple(a).unwrap();
        let names: Vec<&str> = addrs.iter().map(|&x| s.address(x)).collect();
        assert_eq!(names, vec!["a", "b", "y"]);
        let ids: Vec<_> = txs.iter().map(|&t| s.txid(t)).collect();
        assert_eq!(ids, vec![txid(2), txid(5)]);
    }

    #[test]
    fn output_only_singleton() {
        let s = store();
        let cs = ClusterSet::build(&s);
        let x = cs.cluster_of(&s, "x").unwrap();
        let (addrs, txs) = cs.cluster_tuple(x).unwrap();
        assert_eq!(addrs.len(), 1);
        assert!(txs.is_empty());
        assert_eq!(cs.cluster_of_tx(TxIdx(0)), None);
    }

    #[test]
    fn unknown_lookups() {
        let s = store();
        let cs = ClusterSet::build(&s);
        assert_eq!(
            cs.cluster_of(&s, "nope"),
            Err(ClusterError::UnknownAddress("nope".into()))
        );
        assert!(cs.cluster_tuple(ClusterId(999)).is_err());
    }

    #[test]
    fn ids_follow_first_appearance() {
        let s = store();
        let cs = ClusterSet::build(&s);
        assert_eq!(cs.cluster_of(&s, "a").unwrap(), ClusterId(0));
        for c in cs.iter() {
            for &addr in &c.addresses {
                assert_eq!(cs.cluster_of_addr(addr), c.id);
            }
        }
    }
}
