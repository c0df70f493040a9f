//! Ledger ingestion and the linked transaction store.
//!
//! The on-disk format is one JSON transaction record per line. Records must
//! arrive in `(height, index)` order, and every input must reference an output
//! of an earlier record. Ingest resolves each input to its creating output and
//! records the spender on that output, so both directions of the spend graph
//! are available as plain index lookups afterwards.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::features::AddressType;

/// Sequence value that marks an input as final (not replaceable).
pub const SEQUENCE_FINAL: u32 = 0xffff_ffff;

/// 32-byte transaction identifier, hex encoded in files.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", self.to_hex())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid txid {0:?}: expected 64 hex characters")]
pub struct ParseTxidError(pub String);

impl FromStr for Txid {
    type Err = ParseTxidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 {
            return Err(ParseTxidError(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ParseTxidError(s.to_string()))?;
        Ok(Txid(out))
    }
}

impl Serialize for Txid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Txid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense handle of a transaction inside a [`ChainStore`]; equals its global order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxIdx(pub u32);

impl TxIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense handle of an address, assigned in first-appearance order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddrId(pub u32);

impl AddrId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub prev_txid: Txid,
    pub prev_index: u32,
    pub sequence: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub address: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub value: u64,
}

/// One line of the ledger file. Field order is the serialization order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub txid: Txid,
    pub version: u32,
    pub locktime: u32,
    pub segwit: bool,
    pub height: u64,
    pub index: u32,
    pub coinbase: bool,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl TxRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

// ---------------------------------------------------------------------------
// Linked store
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxInput {
    pub prev_tx: TxIdx,
    pub prev_index: u32,
    pub sequence: u32,
    pub address: AddrId,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutput {
    pub address: AddrId,
    pub value: u64,
    pub next_hop: Option<TxIdx>,
}

impl TxOutput {
    #[inline]
    pub fn is_spent(&self) -> bool {
        self.next_hop.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub txid: Txid,
    pub version: u8,
    pub locktime: u32,
    pub segwit: bool,
    pub block_height: u64,
    pub tx_index_in_block: u32,
    pub is_coinbase: bool,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    #[inline]
    pub fn locktime_set(&self) -> bool {
        self.locktime > 0
    }

    pub fn input_value(&self) -> u64 {
        self.inputs.iter().map(|i| i.value).sum()
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    /// Zero for coinbase transactions.
    pub fn fee(&self) -> u64 {
        if self.is_coinbase {
            0
        } else {
            self.input_value() - self.output_value()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct AddressInfo {
    name: String,
    kind: AddressType,
    first_seen: TxIdx,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading ledger: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record{}: {reason}", fmt_txid(.txid))]
    Malformed {
        line: usize,
        txid: Option<String>,
        reason: String,
    },
    #[error("line {line}: duplicate txid {txid}")]
    DuplicateTxid { line: usize, txid: Txid },
    #[error("line {line}: tx {txid} spends unknown output {prev_txid}:{prev_index}")]
    DanglingReference {
        line: usize,
        txid: Txid,
        prev_txid: Txid,
        prev_index: u32,
    },
    #[error(
        "line {line}: double spend of {prev_txid}:{prev_index} by {txid} (already spent by {first_spender})"
    )]
    DoubleSpend {
        line: usize,
        txid: Txid,
        first_spender: Txid,
        prev_txid: Txid,
        prev_index: u32,
    },
    #[error("line {line}: tx {txid} is out of (height, index) order")]
    OutOfOrder { line: usize, txid: Txid },
}

fn fmt_txid(txid: &Option<String>) -> String {
    match txid {
        Some(t) => format!(" (txid {t})"),
        None => String::new(),
    }
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Io(_) => None,
            IngestError::Malformed { line, .. }
            | IngestError::DuplicateTxid { line, .. }
            | IngestError::DanglingReference { line, .. }
            | IngestError::DoubleSpend { line, .. }
            | IngestError::OutOfOrder { line, .. } => Some(*line),
        }
    }
}

/// Immutable, fully linked view of a ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainStore {
    txs: Vec<Transaction>,
    by_txid: HashMap<Txid, TxIdx>,
    addresses: Vec<AddressInfo>,
    by_address: HashMap<String, AddrId>,
}

impl ChainStore {
    /// Reads newline-delimited records. Blank lines are skipped; line numbers are 1-based.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<ChainStore, IngestError> {
        let mut builder = StoreBuilder::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: TxRecord =
                serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                    line: lineno,
                    txid: sniff_txid(&line),
                    reason: e.to_string(),
                })?;
            builder.push(&record, lineno)?;
        }
        Ok(builder.finish())
    }

    pub fn from_records<'a, I>(records: I) -> Result<ChainStore, IngestError>
    where
        I: IntoIterator<Item = &'a TxRecord>,
    {
        let mut builder = StoreBuilder::new();
        for (n, record) in records.into_iter().enumerate() {
            builder.push(record, n + 1)?;
        }
        Ok(builder.finish())
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn num_addresses(&self) -> usize {
        self.addresses.len()
    }

    #[inline]
    pub fn tx(&self, idx: TxIdx) -> &Transaction {
        &self.txs[idx.index()]
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn tx_indices(&self) -> impl Iterator<Item = TxIdx> + '_ {
        (0..self.txs.len() as u32).map(TxIdx)
    }

    pub fn lookup(&self, txid: &Txid) -> Option<TxIdx> {
        self.by_txid.get(txid).copied()
    }

    pub fn txid(&self, idx: TxIdx) -> Txid {
        self.txs[idx.index()].txid
    }

    pub fn address_id(&self, address: &str) -> Option<AddrId> {
        self.by_address.get(address).copied()
    }

    pub fn address(&self, id: AddrId) -> &str {
        &self.addresses[id.index()].name
    }

    #[inline]
    pub fn address_type(&self, id: AddrId) -> AddressType {
        self.addresses[id.index()].kind
    }

    /// Transaction in which the address first received coins.
    pub fn first_seen(&self, id: AddrId) -> TxIdx {
        self.addresses[id.index()].first_seen
    }

    pub fn address_ids(&self) -> impl Iterator<Item = AddrId> + '_ {
        (0..self.addresses.len() as u32).map(AddrId)
    }

    /// The transaction spending `tx.outputs[index]`, if any.
    pub fn next_hop(&self, tx: TxIdx, index: usize) -> Option<TxIdx> {
        self.txs[tx.index()].outputs[index].next_hop
    }

    /// Creating transaction and output position of `tx.inputs[input]`.
    ///
    /// Coinbase transactions have no inputs; calling this on one panics on the
    /// out-of-range index like any other invalid reference.
    pub fn prev_hop(&self, tx: TxIdx, input: usize) -> (TxIdx, u32) {
        let i = &self.txs[tx.index()].inputs[input];
        (i.prev_tx, i.prev_index)
    }

    /// True iff the address's first appearance anywhere in the ledger is as an
    /// output of `at`.
    pub fn is_fresh(&self, address: AddrId, at: TxIdx) -> bool {
        self.addresses[address.index()].first_seen == at
    }
}

fn sniff_txid(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("txid")?.as_str().map(str::to_string)
}

/// Incremental single-writer ingest.
#[derive(Debug, Default)]
pub struct StoreBuilder {
    store: ChainStore,
    last_order: Option<(u64, u32)>,
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &TxRecord, line: usize) -> Result<TxIdx, IngestError> {
        let malformed = |reason: String| IngestError::Malformed {
            line,
            txid: Some(record.txid.to_hex()),
            reason,
        };
        let txid = record.txid;

        if self.store.by_txid.contains_key(&txid) {
            return Err(IngestError::DuplicateTxid { line, txid });
        }
        let order = (record.height, record.index);
        if let Some(last) = self.last_order {
            if order <= last {
                return Err(IngestError::OutOfOrder { line, txid });
            }
        }
        if record.version != 1 && record.version != 2 {
            return Err(malformed(format!("version must be 1 or 2, got {}", record.version)));
        }
        if record.outputs.is_empty() {
            return Err(malformed("transaction has no outputs".into()));
        }
        if record.coinbase && !record.inputs.is_empty() {
            return Err(malformed("coinbase transaction with inputs".into()));
        }
        if !record.coinbase && record.inputs.is_empty() {
            return Err(malformed("non-coinbase transaction without inputs".into()));
        }

        let mut kinds = Vec::with_capacity(record.outputs.len());
        for (i, out) in record.outputs.iter().enumerate() {
            if out.value == 0 {
                return Err(malformed(format!("output {i} has zero value")));
            }
            if out.address.is_empty() {
                return Err(malformed(format!("output {i} has an empty address")));
            }
            let kind: AddressType = out
                .kind
                .parse()
                .map_err(|_| malformed(format!("output {i} has unknown address type {:?}", out.kind)))?;
            if let Some(&id) = self.store.by_address.get(&out.address) {
                let declared = self.store.address_type(id);
                if declared != kind {
                    return Err(malformed(format!(
                        "address {} declared as {} but first seen as {}",
                        out.address, kind, declared
                    )));
                }
            }
            kinds.push(kind);
        }

        // Resolve inputs before mutating anything so a failed record leaves no trace.
        let mut inputs = Vec::with_capacity(record.inputs.len());
        let mut seen_in_tx: Vec<(TxIdx, u32)> = Vec::with_capacity(record.inputs.len());
        for input in &record.inputs {
            let dangling = || IngestError::DanglingReference {
                line,
                txid,
                prev_txid: input.prev_txid,
                prev_index: input.prev_index,
            };
            let prev = *self.store.by_txid.get(&input.prev_txid).ok_or_else(dangling)?;
            let prev_tx = &self.store.txs[prev.index()];
            let out = prev_tx
                .outputs
                .get(input.prev_index as usize)
                .ok_or_else(dangling)?;
            let double = |first_spender: Txid| IngestError::DoubleSpend {
                line,
                txid,
                first_spender,
                prev_txid: input.prev_txid,
                prev_index: input.prev_index,
            };
            if let Some(spender) = out.next_hop {
                return Err(double(self.store.txs[spender.index()].txid));
            }
            if seen_in_tx.contains(&(prev, input.prev_index)) {
                return Err(double(txid));
            }
            seen_in_tx.push((prev, input.prev_index));
            inputs.push(TxInput {
                prev_tx: prev,
                prev_index: input.prev_index,
                sequence: input.sequence,
                address: out.address,
                value: out.value,
            });
        }

        let in_sum: u128 = inputs.iter().map(|i| i.value as u128).sum();
        let out_sum: u128 = record.outputs.iter().map(|o| o.value as u128).sum();
        if !record.coinbase && out_sum > in_sum {
            return Err(malformed(format!(
                "outputs ({out_sum}) exceed inputs ({in_sum})"
            )));
        }
        if out_sum > u64::MAX as u128 {
            return Err(malformed("output total overflows".into()));
        }

        // Commit.
        let idx = TxIdx(self.store.txs.len() as u32);
        for input in &inputs {
            self.store.txs[input.prev_tx.index()].outputs[input.prev_index as usize].next_hop =
                Some(idx);
        }
        let mut outputs = Vec::with_capacity(record.outputs.len());
        for (out, kind) in record.outputs.iter().zip(kinds) {
            let id = match self.store.by_address.get(&out.address) {
                Some(&id) => id,
                None => {
                    let id = AddrId(self.store.addresses.len() as u32);
                    self.store.addresses.push(AddressInfo {
                        name: out.address.clone(),
                        kind,
                        first_seen: idx,
                    });
                    self.store.by_address.insert(out.address.clone(), id);
                    id
                }
            };
            outputs.push(TxOutput {
                address: id,
                value: out.value,
                next_hop: None,
            });
        }
        self.store.txs.push(Transaction {
            txid,
            version: record.version as u8,
            locktime: record.locktime,
            segwit: record.segwit,
            block_height: record.height,
            tx_index_in_block: record.index,
            is_coinbase: record.coinbase,
            inputs,
            outputs,
        });
        self.store.by_txid.insert(txid, idx);
        self.last_order = Some(order);
        Ok(idx)
    }

    pub fn finish(self) -> ChainStore {
        self.store
    }
}
