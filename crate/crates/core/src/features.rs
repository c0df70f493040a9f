//! Transaction, address and cluster features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainstore::{ChainStore, Transaction, TxIdx, SEQUENCE_FINAL};
use crate::cospend::{Cluster, ClusterId};

/// The four binary transaction features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureTuple {
    pub replaceable: bool,
    pub locktime_set: bool,
    /// 1 or 2.
    pub version: u8,
    pub segwit: bool,
}

impl FeatureTuple {
    /// Packs the tuple into `0..16`.
    #[inline]
    pub fn code(self) -> u8 {
        (self.replaceable as u8)
            | (self.locktime_set as u8) << 1
            | ((self.version == 2) as u8) << 2
            | (self.segwit as u8) << 3
    }

    pub fn from_code(code: u8) -> FeatureTuple {
        assert!(code < 16, "feature code out of range");
        FeatureTuple {
            replaceable: code & 1 != 0,
            locktime_set: code & 2 != 0,
            version: if code & 4 != 0 { 2 } else { 1 },
            segwit: code & 8 != 0,
        }
    }

    pub fn all() -> impl Iterator<Item = FeatureTuple> {
        (0..16).map(FeatureTuple::from_code)
    }
}

/// `f_tx`. Coinbase transactions have no inputs and are never replaceable.
pub fn tx_features(tx: &Transaction) -> FeatureTuple {
    FeatureTuple {
        replaceable: tx.inputs.iter().any(|i| i.sequence < SEQUENCE_FINAL),
        locktime_set: tx.locktime_set(),
        version: tx.version,
        segwit: tx.segwit,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AddressType {
    #[serde(rename = "p2pkh_compressed")]
    PubkeyHashCompressed,
    #[serde(rename = "p2pkh_uncompressed")]
    PubkeyHashUncompressed,
    #[serde(rename = "wpkh_compressed")]
    WitnessPubkeyHashCompressed,
    #[serde(rename = "wpkh_uncompressed")]
    WitnessPubkeyHashUncompressed,
    #[serde(rename = "multisig_2of2")]
    Multisig2of2,
    #[serde(rename = "multisig_2of3")]
    Multisig2of3,
    #[serde(rename = "multisig_3of4")]
    Multisig3of4,
    #[serde(rename = "multisig_2of6")]
    Multisig2of6,
    #[serde(rename = "wsh_multisig_2of2")]
    WitnessMultisig2of2,
    #[serde(rename = "wsh_multisig_2of3")]
    WitnessMultisig2of3,
}

impl AddressType {
    pub const ALL: [AddressType; 10] = [
        AddressType::PubkeyHashCompressed,
        AddressType::PubkeyHashUncompressed,
        AddressType::WitnessPubkeyHashCompressed,
        AddressType::WitnessPubkeyHashUncompressed,
        AddressType::Multisig2of2,
        AddressType::Multisig2of3,
        AddressType::Multisig3of4,
        AddressType::Multisig2of6,
        AddressType::WitnessMultisig2of2,
        AddressType::WitnessMultisig2of3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AddressType::PubkeyHashCompressed => "p2pkh_compressed",
            AddressType::PubkeyHashUncompressed => "p2pkh_uncompressed",
            AddressType::WitnessPubkeyHashCompressed => "wpkh_compressed",
            AddressType::WitnessPubkeyHashUncompressed => "wpkh_uncompressed",
            AddressType::Multisig2of2 => "multisig_2of2",
            AddressType::Multisig2of3 => "multisig_2of3",
            AddressType::Multisig3of4 => "multisig_3of4",
            AddressType::Multisig2of6 => "multisig_2of6",
            AddressType::WitnessMultisig2of2 => "wsh_multisig_2of2",
            AddressType::WitnessMultisig2of3 => "wsh_multisig_2of3",
        }
    }

    #[inline]
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_segwit(self) -> bool {
        matches!(
            self,
            AddressType::WitnessPubkeyHashCompressed
                | AddressType::WitnessPubkeyHashUncompressed
                | AddressType::WitnessMultisig2of2
                | AddressType::WitnessMultisig2of3
        )
    }
}

impl fmt::Display for AddressType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown address type {0:?}")]
pub struct UnknownAddressType(pub String);

impl FromStr for AddressType {
    type Err = UnknownAddressType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AddressType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownAddressType(s.to_string()))
    }
}

/// Set of feature tuples (`F_tx`), stored as a 16-bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TxFeatureSet(u16);

impl TxFeatureSet {
    pub fn insert(&mut self, f: FeatureTuple) {
        self.0 |= 1 << f.code();
    }

    #[inline]
    pub fn contains(&self, f: FeatureTuple) -> bool {
        self.0 & (1 << f.code()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(&self, other: &TxFeatureSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(&self, other: &TxFeatureSet) -> TxFeatureSet {
        TxFeatureSet(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = FeatureTuple> + '_ {
        FeatureTuple::all().filter(move |f| self.contains(*f))
    }
}

impl FromIterator<FeatureTuple> for TxFeatureSet {
    fn from_iter<I: IntoIterator<Item = FeatureTuple>>(iter: I) -> Self {
        let mut s = TxFeatureSet::default();
        for f in iter {
            s.insert(f);
        }
        s
    }
}

/// Set of address types (`F_addr`), stored as a 10-bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AddrTypeSet(u16);

impl AddrTypeSet {
    pub fn insert(&mut self, t: AddressType) {
        self.0 |= 1 << t.code();
    }

    #[inline]
    pub fn contains(&self, t: AddressType) -> bool {
        self.0 & (1 << t.code()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(&self, other: &AddrTypeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(&self, other: &AddrTypeSet) -> AddrTypeSet {
        AddrTypeSet(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = AddressType> + '_ {
        AddressType::ALL.into_iter().filter(move |t| self.contains(*t))
    }
}

impl FromIterator<AddressType> for AddrTypeSet {
    fn from_iter<I: IntoIterator<Item = AddressType>>(iter: I) -> Self {
        let mut s = AddrTypeSet::default();
        for t in iter {
            s.insert(t);
        }
        s
    }
}

/// Where a cluster habitually places its change output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeStrategy {
    /// -1
    Last,
    /// 0
    First,
    /// 1: first or last
    Either,
    None,
}

impl ChangeStrategy {
    /// The numeric encoding (-1, 0, 1); `None` has none.
    pub fn code(self) -> Option<i8> {
        match self {
            ChangeStrategy::Last => Some(-1),
            ChangeStrategy::First => Some(0),
            ChangeStrategy::Either => Some(1),
            ChangeStrategy::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeStrategy::Last => "last",
            ChangeStrategy::First => "first",
            ChangeStrategy::Either => "either",
            ChangeStrategy::None => "none",
        }
    }

    pub const ALL: [ChangeStrategy; 4] = [
        ChangeStrategy::Last,
        ChangeStrategy::First,
        ChangeStrategy::Either,
        ChangeStrategy::None,
    ];
}

impl fmt::Display for ChangeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position class of an output index within its transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    First,
    Last,
    /// Single-output transaction: index 0 is also index -1.
    Both,
    Interior,
}

impl Position {
    pub fn of(index: usize, n_outputs: usize) -> Position {
        match (index == 0, index + 1 == n_outputs) {
            (true, true) => Position::Both,
            (true, false) => Position::First,
            (false, true) => Position::Last,
            (false, false) => Position::Interior,
        }
    }
}

/// `(S, F_tx, F_addr)` of one cluster: everything the peel-chain rules read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterProfile {
    pub strategy: ChangeStrategy,
    pub tx_features: TxFeatureSet,
    pub addr_features: AddrTypeSet,
}

impl ClusterProfile {
    pub fn of(store: &ChainStore, cluster: &Cluster) -> ClusterProfile {
        let (tx_features, addr_features) = cluster_feature_sets(store, cluster);
        ClusterProfile {
            strategy: infer_change_strategy(store, cluster),
            tx_features,
            addr_features,
        }
    }
}

/// `F_tx` over T_C and `F_addr` over A_C.
pub fn cluster_feature_sets(store: &ChainStore, cluster: &Cluster) -> (TxFeatureSet, AddrTypeSet) {
    let ftx = cluster
        .transactions
        .iter()
        .map(|&t| tx_features(store.tx(t)))
        .collect();
    let faddr = cluster
        .addresses
        .iter()
        .map(|&a| store.address_type(a))
        .collect();
    (ftx, faddr)
}

/// Change strategy from the transactions in T_C that have exactly one output
/// paying back into A_C. No qualifying transaction yields `None`.
pub fn infer_change_strategy(store: &ChainStore, cluster: &Cluster) -> ChangeStrategy {
    let in_cluster = |a| cluster.addresses.binary_search(&a).is_ok();
    let mut seen_first = false;
    let mut seen_last = false;
    let mut any = false;
    for &t in &cluster.transactions {
        let tx = store.tx(t);
        let mut hit = None;
        let mut count = 0;
        for (i, o) in tx.outputs.iter().enumerate() {
            if in_cluster(o.address) {
                count += 1;
                hit = Some(i);
            }
        }
        if count != 1 {
            continue;
        }
        any = true;
        match Position::of(hit.unwrap(), tx.outputs.len()) {
            Position::Interior => return ChangeStrategy::None,
            Position::First => seen_first = true,
            Position::Last => seen_last = true,
            Position::Both => {}
        }
    }
    match (any, seen_first, seen_last) {
        (false, _, _) => ChangeStrategy::None,
        (true, false, _) => ChangeStrategy::Last,
        (true, true, false) => ChangeStrategy::First,
        (true, true, true) => ChangeStrategy::Either,
    }
}

/// Aggregated per-cluster features for external classifier training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeatureRow {
    pub cluster_id: ClusterId,
    pub prop_segwit_enabled: f64,
    pub prop_locktime_enabled: f64,
    pub prop_v1: f64,
    pub address_type_max_prop: f64,
    /// False iff S = None.
    pub has_change_strategy: bool,
}

impl ClusterFeatureRow {
    pub fn change_strategy_label(&self) -> &'static str {
        if self.has_change_strategy {
            "strategy"
        } else {
            "none"
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cluster {0} has no transactions")]
    EmptyCluster(ClusterId),
}

/// Address-type proportions count input occurrences across T_C.
pub fn ml_feature_row(store: &ChainStore, cluster: &Cluster) -> Result<ClusterFeatureRow, FeatureError> {
    let n = cluster.transactions.len();
    if n == 0 {
        return Err(FeatureError::EmptyCluster(cluster.id));
    }
    let (mut segwit, mut locktime, mut v1) = (0usize, 0usize, 0usize);
    let mut type_counts = [0usize; 10];
    let mut n_inputs = 0usize;
    for &t in &cluster.transactions {
        let tx = store.tx(t);
        segwit += tx.segwit as usize;
        locktime += tx.locktime_set() as usize;
        v1 += (tx.version == 1) as usize;
        for i in &tx.inputs {
            type_counts[store.address_type(i.address).code() as usize] += 1;
            n_inputs += 1;
        }
    }
    let max_type = type_counts.iter().copied().max().unwrap_or(0);
    let nf = n as f64;
    Ok(ClusterFeatureRow {
        cluster_id: cluster.id,
        prop_segwit_enabled: segwit as f64 / nf,
        prop_locktime_enabled: locktime as f64 / nf,
        prop_v1: v1 as f64 / nf,
        address_type_max_prop: if n_inputs == 0 {
            0.0
        } else {
            max_type as f64 / n_inputs as f64
        },
        has_change_strategy: infer_change_strategy(store, cluster) != ChangeStrategy::None,
    })
}

/// Feature tuple of the transaction behind a handle.
#[inline]
pub fn tx_features_at(store: &ChainStore, tx: TxIdx) -> FeatureTuple {
    tx_features(store.tx(tx))
}
