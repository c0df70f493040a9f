//! Address clustering, peel-chain tracing and cluster expansion over a
//! transaction ledger.

pub mod baseline;
pub mod chainstore;
pub mod cli;
pub mod coinjoin;
pub mod cospend;
pub mod dsu;
pub mod expansion;
pub mod features;
pub mod peelchain;
pub mod report;
pub mod synthgen;
pub mod validation;

pub use chainstore::{AddrId, ChainStore, IngestError, Transaction, TxIdx, TxRecord, Txid};
pub use cospend::{Cluster, ClusterId, ClusterSet};
pub use features::{AddressType, ChangeStrategy, ClusterProfile};
pub use peelchain::{ChangeRule, HeuristicMode, TraversalLimits, Tracer};
