//! Forward expansion of clusters along peel chains, counterparty collection,
//! and evaluation against an address tag oracle.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chainstore::{AddrId, ChainStore, TxIdx};
use crate::cospend::{Cluster, ClusterId, ClusterSet};
use crate::peelchain::{BackwardTrace, ChangeRule, ForwardTrace, HeuristicMode, TraversalLimits, Tracer};

#[derive(Debug, Error)]
pub enum TagError {
    #[error("tags csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("tags csv line {line}: address {address:?} tagged twice ({first} and {second})")]
    Conflict {
        line: u64,
        address: String,
        first: String,
        second: String,
    },
}

/// Address → entity labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagStore {
    by_address: HashMap<String, String>,
}

impl TagStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads `address,entity` rows with a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<TagStore, TagError> {
        let mut tags = TagStore::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let (address, entity) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
            if let Some(prev) = tags.by_address.get(address) {
                if prev != entity {
                    return Err(TagError::Conflict {
                        line,
                        address: address.to_string(),
                        first: prev.clone(),
                        second: entity.to_string(),
                    });
                }
                continue;
            }
            tags.by_address.insert(address.to_string(), entity.to_string());
        }
        Ok(tags)
    }

    pub fn insert(&mut self, address: impl Into<String>, entity: impl Into<String>) {
        self.by_address.insert(address.into(), entity.into());
    }

    pub fn len(&self) -> usize {
        self.by_address.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_address.is_empty()
    }

    pub fn entity_of(&self, address: &str) -> Option<&str> {
        self.by_address.get(address).map(String::as_str)
    }

    /// The first input tag of `tx` that names an entity outside `own`.
    pub fn foreign_tag<'a>(&'a self, store: &ChainStore, tx: TxIdx, own: &[&str]) -> Option<&'a str> {
        store
            .tx(tx)
            .inputs
            .iter()
            .filter_map(|i| self.entity_of(store.address(i.address)))
            .find(|e| !own.contains(e))
    }

    /// Distinct tags carried by the cluster's addresses, sorted.
    pub fn cluster_entities(&self, store: &ChainStore, cluster: &Cluster) -> Vec<&str> {
        let mut v: Vec<&str> = cluster
            .addresses
            .iter()
            .filter_map(|&a| self.entity_of(store.address(a)))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Most frequent tag among the cluster's addresses; ties go to the
    /// lexicographically smaller label.
    pub fn dominant_entity(&self, store: &ChainStore, cluster: &Cluster) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &a in &cluster.addresses {
            if let Some(e) = self.entity_of(store.address(a)) {
                *counts.entry(e).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(e, _)| e)
    }
}

/// Transactions reached by forward expansion of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionResult {
    pub cluster: ClusterId,
    pub rule: ChangeRule,
    pub n_txs: usize,
    /// Exp_C: reached transactions outside T_C, ascending.
    pub discovered: Vec<TxIdx>,
    /// Non-change output addresses at followed hops, counted once per hop.
    pub counterparties: BTreeMap<AddrId, usize>,
    pub truncated: bool,
}

impl ExpansionResult {
    /// E = 100 · |Exp_C| / |T_C|
    pub fn expansion_factor(&self) -> f64 {
        if self.n_txs == 0 {
            0.0
        } else {
            100.0 * self.discovered.len() as f64 / self.n_txs as f64
        }
    }

    /// Counterparties by descending count, then address id.
    pub fn top_counterparties(&self, n: usize) -> Vec<(AddrId, usize)> {
        let mut v: Vec<_> = self.counterparties.iter().map(|(&a, &c)| (a, c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpansionError {
    #[error("cluster {0} has no transactions")]
    EmptyCluster(ClusterId),
}

fn record_counterparties(
    store: &ChainStore,
    tx: TxIdx,
    change: &[usize],
    into: &mut BTreeMap<AddrId, usize>,
) {
    let mut seen: Vec<AddrId> = Vec::new();
    for (i, o) in store.tx(tx).outputs.iter().enumerate() {
        if change.contains(&i) || seen.contains(&o.address) {
            continue;
        }
        seen.push(o.address);
        *into.entry(o.address).or_default() += 1;
    }
}

/// Follows peel chains forward from every transaction of the cluster and
/// collects what lies outside it.
pub fn expand_cluster(
    store: &ChainStore,
    clusters: &ClusterSet,
    cluster: ClusterId,
    rule: ChangeRule,
    limits: TraversalLimits,
) -> Result<ExpansionResult, ExpansionError> {
    let c = clusters.cluster(cluster);
    if c.transactions.is_empty() {
        return Err(ExpansionError::EmptyCluster(cluster));
    }
    let tracer = Tracer::for_cluster(store, clusters, cluster)
        .with_rule(rule)
        .with_limits(limits);
    let mut reached: HashSet<TxIdx> = HashSet::new();
    let mut counterparties = BTreeMap::new();
    let mut truncated = false;

    if limits.max_hops.is_none() {
        // Walks are deterministic per transaction, so a walk can stop where an
        // earlier one already passed.
        for &start in &c.transactions {
            let mut cur = Some(start);
            while let Some(tx) = cur {
                if !reached.insert(tx) {
                    break;
                }
                let out = tracer.step(tx);
                if out.next.is_some() {
                    record_counterparties(store, tx, &out.change_outputs, &mut counterparties);
                }
                cur = out.next;
            }
        }
    } else {
        let mut counted: HashSet<TxIdx> = HashSet::new();
        for &start in &c.transactions {
            let ForwardTrace {
                path,
                steps,
                truncated: t,
                ..
            } = tracer.follow_forward(start, HeuristicMode::Expansion);
            truncated |= t;
            reached.extend(path);
            for (tx, change) in steps {
                if counted.insert(tx) {
                    record_counterparties(store, tx, &change, &mut counterparties);
                }
            }
        }
    }

    let mut discovered: Vec<TxIdx> = reached
        .into_iter()
        .filter(|&t| !clusters.contains_tx(cluster, t))
        .collect();
    discovered.sort_unstable();
    Ok(ExpansionResult {
        cluster,
        rule,
        n_txs: c.transactions.len(),
        discovered,
        counterparties,
        truncated,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub false_positives: usize,
    pub unknown_positives: usize,
    /// False positives over |Exp_C|; 0 when nothing was discovered.
    pub fdr: f64,
}

/// A discovered transaction is a false positive when one of its inputs is
/// tagged with an entity not in `own_entities`.
pub fn evaluate_expansion(
    store: &ChainStore,
    result: &ExpansionResult,
    tags: &TagStore,
    own_entities: &[&str],
) -> EvalReport {
    let fp = result
        .discovered
        .iter()
        .filter(|&&t| tags.foreign_tag(store, t, own_entities).is_some())
        .count();
    let n = result.discovered.len();
    EvalReport {
        false_positives: fp,
        unknown_positives: n - fp,
        fdr: if n == 0 { 0.0 } else { fp as f64 / n as f64 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterpartyCount {
    pub address: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub cluster_id: ClusterId,
    pub n_txs: usize,
    pub n_discovered: usize,
    pub expansion_factor: f64,
    pub fdr: f64,
    pub truncated: bool,
    pub counterparties_top: Vec<CounterpartyCount>,
}

impl ExpansionReport {
    pub fn new(store: &ChainStore, result: &ExpansionResult, eval: &EvalReport, top: usize) -> Self {
        ExpansionReport {
            cluster_id: result.cluster,
            n_txs: result.n_txs,
            n_discovered: result.discovered.len(),
            expansion_factor: result.expansion_factor(),
            fdr: eval.fdr,
            truncated: result.truncated,
            counterparties_top: result
                .top_counterparties(top)
                .into_iter()
                .map(|(a, count)| CounterpartyCount {
                    address: store.address(a).to_string(),
                    count,
                })
                .collect(),
        }
    }
}

/// Per-cluster expansion outcome used for rule comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterEvaluation {
    pub result: ExpansionResult,
    pub eval: EvalReport,
}

/// Expands and evaluates each listed cluster under `rule`, in parallel. The
/// own entities of a cluster are the tags found on its addresses.
pub fn evaluate_clusters(
    store: &ChainStore,
    clusters: &ClusterSet,
    ids: &[ClusterId],
    rule: ChangeRule,
    limits: TraversalLimits,
    tags: &TagStore,
) -> Vec<ClusterEvaluation> {
    ids.par_iter()
        .filter_map(|&id| {
            let result = expand_cluster(store, clusters, id, rule, limits).ok()?;
            let own = tags.cluster_entities(store, clusters.cluster(id));
            let eval = evaluate_expansion(store, &result, tags, &own);
            Some(ClusterEvaluation { result, eval })
        })
        .collect()
}

/// One row of the rule comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleSummary {
    pub heuristic: String,
    pub mean_e: f64,
    pub mean_d: f64,
    pub n_clusters: usize,
    /// Clusters whose expansion hit `max_hops`.
    pub truncated: usize,
}

impl RuleSummary {
    pub fn from_evaluations(rule: ChangeRule, evals: &[ClusterEvaluation]) -> Self {
        let n = evals.len();
        let (e, d) = evals.iter().fold((0.0, 0.0), |(e, d), ev| {
            (e + ev.result.expansion_factor(), d + ev.eval.fdr)
        });
        RuleSummary {
            heuristic: rule.as_str().to_string(),
            mean_e: if n == 0 { 0.0 } else { e / n as f64 },
            mean_d: if n == 0 { 0.0 } else { d / n as f64 },
            n_clusters: n,
            truncated: evals.iter().filter(|ev| ev.result.truncated).count(),
        }
    }
}

/// Mean E and mean D (as a fraction) of every rule over the same clusters.
pub fn compare_rules(
    store: &ChainStore,
    clusters: &ClusterSet,
    ids: &[ClusterId],
    rules: &[ChangeRule],
    limits: TraversalLimits,
    tags: &TagStore,
) -> Vec<RuleSummary> {
    rules
        .iter()
        .map(|&rule| {
            let evals = evaluate_clusters(store, clusters, ids, rule, limits, tags);
            RuleSummary::from_evaluations(rule, &evals)
        })
        .collect()
}

/// Traces from a single seed transaction using the profile of the cluster that
/// initiated it. Backward tracing is only meant for single seeds.
pub fn trace_from_seed(
    store: &ChainStore,
    clusters: &ClusterSet,
    seed: TxIdx,
    rule: ChangeRule,
    limits: TraversalLimits,
) -> Option<(ForwardTrace, BackwardTrace)> {
    let cluster = clusters.cluster_of_tx(seed)?;
    let tracer = Tracer::for_cluster(store, clusters, cluster)
        .with_rule(rule)
        .with_limits(limits);
    Some((
        tracer.follow_forward(seed, HeuristicMode::Expansion),
        tracer.follow_backward(seed, HeuristicMode::Expansion),
    ))
}
