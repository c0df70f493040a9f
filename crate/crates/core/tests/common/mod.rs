#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use peeltrace::chainstore::{InputRecord, OutputRecord, SEQUENCE_FINAL};
use peeltrace::features::{AddrTypeSet, FeatureTuple, TxFeatureSet};
use peeltrace::{AddressType, ChainStore, ChangeStrategy, ClusterProfile, TxRecord, Txid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn txid(seed: u64, n: u64) -> Txid {
    let mut b = [0u8; 32];
    b[..8].copy_from_slice(&seed.to_be_bytes());
    b[24..].copy_from_slice(&n.to_be_bytes());
    Txid(b)
}

/// Shape knobs for `random_ledger`.
#[derive(Clone, Copy, Debug)]
pub struct LedgerShape {
    pub n_txs: usize,
    /// Probability that an output goes to an already used address.
    pub reuse: f64,
    pub max_inputs: usize,
    pub max_outputs: usize,
}

impl LedgerShape {
    pub fn small(n_txs: usize) -> Self {
        LedgerShape {
            n_txs,
            reuse: 0.3,
            max_inputs: 4,
            max_outputs: 4,
        }
    }
}

/// Address `a{n}` always has the same type.
pub fn addr_type(n: usize) -> AddressType {
    AddressType::ALL[(n * 7 + n / 3) % AddressType::ALL.len()]
}

/// A valid, topologically ordered ledger with random co-spends, address
/// reuse, output positions and transaction features.
pub fn random_ledger(seed: u64, shape: LedgerShape) -> Vec<TxRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utxos: Vec<(Txid, u32, u64)> = Vec::new();
    let mut n_addr = 0usize;
    let mut records = Vec::with_capacity(shape.n_txs);
    let mut pick_addr = |rng: &mut ChaCha8Rng| {
        let n = if n_addr > 0 && rng.gen_bool(shape.reuse) {
            rng.gen_range(0..n_addr)
        } else {
            n_addr += 1;
            n_addr - 1
        };
        OutputRecord {
            address: format!("a{n}"),
            kind: addr_type(n).as_str().to_string(),
            value: 0,
        }
    };
    for i in 0..shape.n_txs {
        let coinbase = utxos.len() < 2 || rng.gen_bool(0.08);
        let (inputs, total) = if coinbase {
            (Vec::new(), 5_000_000_000u64)
        } else {
            let k = rng.gen_range(1..=shape.max_inputs.min(utxos.len()));
            let mut ins = Vec::with_capacity(k);
            let mut total = 0;
            for _ in 0..k {
                let j = rng.gen_range(0..utxos.len());
                let (t, idx, v) = utxos.swap_remove(j);
                total += v;
                ins.push(InputRecord {
                    prev_txid: t,
                    prev_index: idx,
                    sequence: *[SEQUENCE_FINAL, SEQUENCE_FINAL, SEQUENCE_FINAL - 1, 0xffff_fffd]
                        .choose(&mut rng)
                        .unwrap(),
                });
            }
            (ins, total)
        };
        let fee = if coinbase { 0 } else { total / 1000 };
        let spendable = total - fee;
        // dust cannot be split further
        let n_out = if spendable < 1_000 { 1 } else { rng.gen_range(1..=shape.max_outputs) };
        let mut cuts: Vec<u64> = (0..n_out - 1).map(|_| rng.gen_range(1..spendable)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut values = Vec::new();
        let mut prev = 0;
        for c in cuts.into_iter().chain(std::iter::once(spendable)) {
            values.push(c - prev);
            prev = c;
        }
        let id = txid(seed, i as u64);
        let outputs: Vec<OutputRecord> = values
            .iter()
            .map(|&v| {
                let mut o = pick_addr(&mut rng);
                o.value = v;
                o
            })
            .collect();
        for (j, o) in outputs.iter().enumerate() {
            // a few outputs stay unspent forever
            if rng.gen_bool(0.9) {
                utxos.push((id, j as u32, o.value));
            }
        }
        records.push(TxRecord {
            txid: id,
            version: if rng.gen_bool(0.5) { 1 } else { 2 },
            locktime: if rng.gen_bool(0.3) { rng.gen_range(1..600_000) } else { 0 },
            segwit: rng.gen_bool(0.4),
            height: i as u64 / 4,
            index: (i % 4) as u32,
            coinbase,
            inputs,
            outputs,
        });
    }
    records
}

pub fn random_store(seed: u64, n_txs: usize) -> ChainStore {
    ChainStore::from_records(&random_ledger(seed, LedgerShape::small(n_txs))).unwrap()
}

/// Connected components of the address graph where co-spent input addresses
/// are adjacent. Returns one sorted address list per component, sorted.
pub fn bfs_address_components(records: &[TxRecord]) -> Vec<Vec<String>> {
    let mut addr_of: HashMap<(Txid, u32), &str> = HashMap::new();
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in records {
        for (i, o) in r.outputs.iter().enumerate() {
            addr_of.insert((r.txid, i as u32), o.address.as_str());
            adj.entry(o.address.as_str()).or_default();
        }
        let ins: Vec<&str> = r
            .inputs
            .iter()
            .map(|i| addr_of[&(i.prev_txid, i.prev_index)])
            .collect();
        for a in &ins {
            for b in &ins {
                if a != b {
                    adj.get_mut(a).unwrap().push(b);
                }
            }
        }
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut comps = Vec::new();
    let mut starts: Vec<&str> = adj.keys().copied().collect();
    starts.sort_unstable();
    for s in starts {
        if !seen.insert(s) {
            continue;
        }
        let mut comp = vec![s.to_string()];
        let mut q = VecDeque::from([s]);
        while let Some(a) = q.pop_front() {
            for &b in &adj[a] {
                if seen.insert(b) {
                    comp.push(b.to_string());
                    q.push_back(b);
                }
            }
        }
        comp.sort();
        comps.push(comp);
    }
    comps.sort();
    comps
}

/// The library's clusters in the same shape as `bfs_address_components`.
pub fn library_components(store: &ChainStore, clusters: &peeltrace::ClusterSet) -> Vec<Vec<String>> {
    let mut comps: Vec<Vec<String>> = clusters
        .iter()
        .map(|c| {
            let mut v: Vec<String> = c.addresses.iter().map(|&a| store.address(a).to_string()).collect();
            v.sort();
            v
        })
        .collect();
    comps.sort();
    comps
}

/// Raw-record view used by the line-by-line reimplementations.
pub struct RawLedger<'a> {
    pub by_id: HashMap<Txid, &'a TxRecord>,
    pub spender: HashMap<(Txid, u32), Txid>,
}

impl<'a> RawLedger<'a> {
    pub fn new(records: &'a [TxRecord]) -> Self {
        let mut by_id = HashMap::new();
        let mut spender = HashMap::new();
        for r in records {
            by_id.insert(r.txid, r);
            for i in &r.inputs {
                spender.insert((i.prev_txid, i.prev_index), r.txid);
            }
        }
        RawLedger { by_id, spender }
    }

    pub fn f_tx(&self, id: &Txid) -> TupleKey {
        let r = self.by_id[id];
        let replaceable = r.inputs.iter().any(|i| i.sequence < 0xffff_ffff);
        (replaceable, r.locktime > 0, r.version, r.segwit)
    }
}

/// Feature tuple as plain values: (replaceable, locktime set, version, segwit).
pub type TupleKey = (bool, bool, u32, bool);

pub fn tuple_key(f: FeatureTuple) -> TupleKey {
    (f.replaceable, f.locktime_set, u32::from(f.version), f.segwit)
}

/// Forward change step, transcribed from its pseudocode line by line.
///
/// ```text
/// C ← ∅
/// for idx in indices(S):
///     o ← tx.outputs[idx]
///     if o is spent and f_addr(o) ∈ F_addr and f_tx(next(o)) ∈ F_tx:
///         C ← C ∪ {next(o)}
/// return the element of C if |C| = 1 else ⊥
/// ```
pub fn oracle_fnext(
    raw: &RawLedger,
    tx: &Txid,
    s: ChangeStrategy,
    f_tx: &HashSet<TupleKey>,
    f_addr: &HashSet<String>,
) -> Option<Txid> {
    let r = raw.by_id[tx];
    let n = r.outputs.len() as i64;
    let indices: Vec<i64> = match s {
        ChangeStrategy::First => vec![0],
        ChangeStrategy::Last => vec![n - 1],
        ChangeStrategy::Either => {
            if n - 1 == 0 {
                vec![0]
            } else {
                vec![0, n - 1]
            }
        }
        ChangeStrategy::None => (0..n).collect(),
    };
    let mut c: Vec<Txid> = Vec::new();
    for idx in indices {
        let o = &r.outputs[idx as usize];
        let Some(next) = raw.spender.get(&(*tx, idx as u32)) else {
            continue;
        };
        if !f_addr.contains(&o.kind) {
            continue;
        }
        if !f_tx.contains(&raw.f_tx(next)) {
            continue;
        }
        if !c.contains(next) {
            c.push(*next);
        }
    }
    if c.len() == 1 {
        Some(c[0])
    } else {
        None
    }
}

/// Backward input isolation, transcribed from its pseudocode line by line.
///
/// ```text
/// P_first, P_last, P_all ← ∅
/// for in in tx.inputs:
///     p ← prev(in); h ← index of in within p
///     if f_tx(p) ∉ F_tx: continue
///     P_all ← P_all ∪ {p}
///     if h = 0: P_first ← P_first ∪ {p}
///     if h = |p.outputs| − 1: P_last ← P_last ∪ {p}
/// return P_first | P_last | P_first ∪ P_last | P_all   by S
/// ```
pub fn oracle_fprev(
    raw: &RawLedger,
    tx: &Txid,
    s: ChangeStrategy,
    f_tx: &HashSet<TupleKey>,
) -> Vec<Txid> {
    let r = raw.by_id[tx];
    let mut p_first = HashSet::new();
    let mut p_last = HashSet::new();
    let mut p_all = HashSet::new();
    for input in &r.inputs {
        let p = input.prev_txid;
        let h = input.prev_index as usize;
        if !f_tx.contains(&raw.f_tx(&p)) {
            continue;
        }
        p_all.insert(p);
        if h == 0 {
            p_first.insert(p);
        }
        if h == raw.by_id[&p].outputs.len() - 1 {
            p_last.insert(p);
        }
    }
    let set = match s {
        ChangeStrategy::First => p_first,
        ChangeStrategy::Last => p_last,
        ChangeStrategy::Either => p_first.union(&p_last).copied().collect(),
        ChangeStrategy::None => p_all,
    };
    let mut v: Vec<Txid> = set.into_iter().collect();
    v.sort_by_key(|t| t.0);
    v
}

/// A random profile: each of the 16 tuples and 10 types kept with probability `keep`.
pub fn random_profile(rng: &mut ChaCha8Rng, keep: f64) -> ClusterProfile {
    let strategy = *[
        ChangeStrategy::First,
        ChangeStrategy::Last,
        ChangeStrategy::Either,
        ChangeStrategy::None,
    ]
    .choose(rng)
    .unwrap();
    let tx_features: TxFeatureSet = FeatureTuple::all().filter(|_| rng.gen_bool(keep)).collect();
    let addr_features: AddrTypeSet = AddressType::ALL.into_iter().filter(|_| rng.gen_bool(keep)).collect();
    ClusterProfile {
        strategy,
        tx_features,
        addr_features,
    }
}

pub fn profile_sets(p: &ClusterProfile) -> (HashSet<TupleKey>, HashSet<String>) {
    (
        p.tx_features.iter().map(tuple_key).collect(),
        p.addr_features.iter().map(|t| t.as_str().to_string()).collect(),
    )
}

/// Change-strategy case analysis spelled out over position labels.
pub fn oracle_strategy(store: &ChainStore, cluster: &peeltrace::Cluster) -> ChangeStrategy {
    let members: HashSet<_> = cluster.addresses.iter().copied().collect();
    let mut labels: Vec<&str> = Vec::new();
    for &t in &cluster.transactions {
        let tx = store.tx(t);
        let own: Vec<usize> = (0..tx.outputs.len())
            .filter(|&i| members.contains(&tx.outputs[i].address))
            .collect();
        if own.len() != 1 {
            continue;
        }
        let i = own[0];
        let n = tx.outputs.len();
        labels.push(if n == 1 {
            "both"
        } else if i == 0 {
            "first"
        } else if i == n - 1 {
            "last"
        } else {
            "interior"
        });
    }
    if labels.is_empty() || labels.contains(&"interior") {
        ChangeStrategy::None
    } else if labels.iter().all(|l| *l == "last" || *l == "both") {
        ChangeStrategy::Last
    } else if labels.iter().all(|l| *l == "first" || *l == "both") {
        ChangeStrategy::First
    } else {
        ChangeStrategy::Either
    }
}
