//! Single-hop change identification and peel-chain traversal.
//!
//! `fnext` picks the unique next hop reachable through a change output that
//! matches the cluster's strategy and features; `fprev` isolates the previous
//! hops whose outputs the cluster itself created. `Tracer` chains these into
//! forward walks and backward breadth-first searches.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_change, BaselineHeuristic};
use crate::chainstore::{ChainStore, TxIdx};
use crate::cospend::{ClusterId, ClusterSet};
use crate::features::{tx_features, ChangeStrategy, ClusterProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicMode {
    /// Never leaves T_C.
    Validation,
    Expansion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Candidate output indices for a strategy, deduplicated when first and last coincide.
pub fn candidate_indices(strategy: ChangeStrategy, n_outputs: usize) -> Vec<usize> {
    if n_outputs == 0 {
        return Vec::new();
    }
    let last = n_outputs - 1;
    match strategy {
        ChangeStrategy::First => vec![0],
        ChangeStrategy::Last => vec![last],
        ChangeStrategy::Either if last == 0 => vec![0],
        ChangeStrategy::Either => vec![0, last],
        ChangeStrategy::None => (0..n_outputs).collect(),
    }
}

/// Full result of one forward step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: Option<TxIdx>,
    /// Distinct next-hop transactions that survived the checks.
    pub candidate_count: usize,
    /// Output indices treated as change (those leading to `next`).
    pub change_outputs: Vec<usize>,
}

impl StepOutcome {
    fn none(candidate_count: usize) -> StepOutcome {
        StepOutcome {
            next: None,
            candidate_count,
            change_outputs: Vec::new(),
        }
    }
}

pub fn fnext_detailed(store: &ChainStore, tx: TxIdx, profile: &ClusterProfile) -> StepOutcome {
    let t = store.tx(tx);
    let mut hops: Vec<TxIdx> = Vec::with_capacity(2);
    let mut via: Vec<(usize, TxIdx)> = Vec::with_capacity(2);
    for i in candidate_indices(profile.strategy, t.outputs.len()) {
        let o = &t.outputs[i];
        // Checks short-circuit: the next hop's features only exist if the output is spent.
        let Some(next) = o.next_hop else { continue };
        if !profile.addr_features.contains(store.address_type(o.address)) {
            continue;
        }
        if !profile.tx_features.contains(tx_features(store.tx(next))) {
            continue;
        }
        if !hops.contains(&next) {
            hops.push(next);
        }
        via.push((i, next));
    }
    if hops.len() == 1 {
        let next = hops[0];
        StepOutcome {
            next: Some(next),
            candidate_count: 1,
            change_outputs: via.into_iter().filter(|&(_, n)| n == next).map(|(i, _)| i).collect(),
        }
    } else {
        StepOutcome::none(hops.len())
    }
}

/// Next hop of `tx`'s peel chain, or `None` when zero or several candidates remain.
pub fn fnext(store: &ChainStore, tx: TxIdx, profile: &ClusterProfile) -> Option<TxIdx> {
    fnext_detailed(store, tx, profile).next
}

/// The distinct input addresses of `tx` make up its whole co-spend cluster.
pub fn spans_whole_cluster(store: &ChainStore, clusters: &ClusterSet, tx: TxIdx) -> bool {
    let Some(c) = clusters.cluster_of_tx(tx) else {
        return false;
    };
    let mut addrs: Vec<_> = store.tx(tx).inputs.iter().map(|i| i.address).collect();
    addrs.sort_unstable();
    addrs.dedup();
    addrs.len() == clusters.cluster(c).addresses.len()
}

/// `fnext` restricted to next hops whose inputs were only ever co-spent with each other.
pub fn fnext2_detailed(
    store: &ChainStore,
    clusters: &ClusterSet,
    tx: TxIdx,
    profile: &ClusterProfile,
) -> StepOutcome {
    let out = fnext_detailed(store, tx, profile);
    match out.next {
        Some(n) if !spans_whole_cluster(store, clusters, n) => StepOutcome::none(out.candidate_count),
        _ => out,
    }
}

pub fn fnext2(
    store: &ChainStore,
    clusters: &ClusterSet,
    tx: TxIdx,
    profile: &ClusterProfile,
) -> Option<TxIdx> {
    fnext2_detailed(store, clusters, tx, profile).next
}

/// Previous hops of `tx` created by the same entity, per the cluster's strategy.
/// Sorted ascending, no duplicates.
pub fn fprev(store: &ChainStore, tx: TxIdx, profile: &ClusterProfile) -> Vec<TxIdx> {
    let t = store.tx(tx);
    let mut first = Vec::new();
    let mut last = Vec::new();
    let mut all = Vec::new();
    for input in &t.inputs {
        let prev = store.tx(input.prev_tx);
        if !profile.tx_features.contains(tx_features(prev)) {
            continue;
        }
        let i = input.prev_index as usize;
        if i == 0 {
            first.push(input.prev_tx);
        }
        if i + 1 == prev.outputs.len() {
            last.push(input.prev_tx);
        }
        all.push(input.prev_tx);
    }
    let mut out = match profile.strategy {
        ChangeStrategy::First => first,
        ChangeStrategy::Last => last,
        ChangeStrategy::Either => {
            first.extend(last);
            first
        }
        ChangeStrategy::None => all,
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// Change identification used for forward steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeRule {
    Fnext,
    Fnext2,
    #[serde(untagged)]
    Baseline(BaselineHeuristic),
}

impl ChangeRule {
    pub const ALL: [ChangeRule; 6] = [
        ChangeRule::Fnext,
        ChangeRule::Fnext2,
        ChangeRule::Baseline(BaselineHeuristic::Androulaki),
        ChangeRule::Baseline(BaselineHeuristic::Meiklejohn),
        ChangeRule::Baseline(BaselineHeuristic::Goldfeder),
        ChangeRule::Baseline(BaselineHeuristic::Ermilov),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeRule::Fnext => "fnext",
            ChangeRule::Fnext2 => "fnext2",
            ChangeRule::Baseline(h) => h.as_str(),
        }
    }
}

impl std::fmt::Display for ChangeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChangeRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fnext" => Ok(ChangeRule::Fnext),
            "fnext2" => Ok(ChangeRule::Fnext2),
            other => other
                .parse::<BaselineHeuristic>()
                .map(ChangeRule::Baseline)
                .map_err(|_| format!("unknown change rule {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalLimits {
    /// Forward steps per walk; `None` walks until the chain ends.
    pub max_hops: Option<usize>,
    /// Backward BFS depth in expansion mode.
    pub max_depth: usize,
    /// Backward BFS queue length in expansion mode.
    pub max_frontier: usize,
}

impl Default for TraversalLimits {
    fn default() -> Self {
        TraversalLimits {
            max_hops: None,
            max_depth: 16,
            max_frontier: 10_000,
        }
    }
}

/// One traversal decision, kept for audit export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopRecord {
    pub tx: TxIdx,
    pub hop_index: usize,
    pub direction: Direction,
    pub rule: &'static str,
    pub candidate_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Visited transactions in walk order, starting with `tx_start`.
    pub path: Vec<TxIdx>,
    /// Change outputs chosen at each step that moved on, as `(tx, output indices)`.
    pub steps: Vec<(TxIdx, Vec<usize>)>,
    pub hops: Vec<HopRecord>,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BackwardTrace {
    /// Result set in BFS discovery order, starting with `tx_start`.
    pub txs: Vec<TxIdx>,
    /// BFS depth of each entry of `txs`.
    pub depths: Vec<usize>,
    pub hops: Vec<HopRecord>,
    pub truncated: bool,
}

impl BackwardTrace {
    pub fn depth_of(&self, tx: TxIdx) -> Option<usize> {
        self.txs.iter().position(|&t| t == tx).map(|i| self.depths[i])
    }
}

/// Forward and backward traversal for one cluster under analysis.
#[derive(Clone, Copy, Debug)]
pub struct Tracer<'a> {
    pub store: &'a ChainStore,
    pub clusters: &'a ClusterSet,
    /// The cluster whose T_C bounds validation mode.
    pub cluster: Option<ClusterId>,
    pub profile: ClusterProfile,
    pub rule: ChangeRule,
    pub limits: TraversalLimits,
}

impl<'a> Tracer<'a> {
    pub fn for_cluster(store: &'a ChainStore, clusters: &'a ClusterSet, cluster: ClusterId) -> Self {
        Tracer {
            store,
            clusters,
            cluster: Some(cluster),
            profile: ClusterProfile::of(store, clusters.cluster(cluster)),
            rule: ChangeRule::Fnext,
            limits: TraversalLimits::default(),
        }
    }

    pub fn with_rule(mut self, rule: ChangeRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_limits(mut self, limits: TraversalLimits) -> Self {
        self.limits = limits;
        self
    }

    #[inline]
    fn in_scope(&self, tx: TxIdx) -> bool {
        match self.cluster {
            Some(c) => self.clusters.contains_tx(c, tx),
            None => false,
        }
    }

    /// One forward step under the configured rule.
    pub fn step(&self, tx: TxIdx) -> StepOutcome {
        match self.rule {
            ChangeRule::Fnext => fnext_detailed(self.store, tx, &self.profile),
            ChangeRule::Fnext2 => fnext2_detailed(self.store, self.clusters, tx, &self.profile),
            ChangeRule::Baseline(h) => match baseline_change(self.store, tx, h) {
                Some(i) => match self.store.next_hop(tx, i) {
                    Some(n) => StepOutcome {
                        next: Some(n),
                        candidate_count: 1,
                        change_outputs: vec![i],
                    },
                    None => StepOutcome::none(1),
                },
                None => StepOutcome::none(0),
            },
        }
    }

    /// Follows the chain forward until the step rule abstains. In validation
    /// mode the walk stops before the first transaction outside T_C.
    pub fn follow_forward(&self, start: TxIdx, mode: HeuristicMode) -> ForwardTrace {
        let mut trace = ForwardTrace::default();
        let mut visited: HashSet<TxIdx> = HashSet::new();
        let mut cur = Some(start);
        while let Some(tx) = cur {
            if mode == HeuristicMode::Validation && !self.in_scope(tx) {
                break;
            }
            if !visited.insert(tx) {
                break;
            }
            trace.path.push(tx);
            let out = self.step(tx);
            trace.hops.push(HopRecord {
                tx,
                hop_index: trace.path.len() - 1,
                direction: Direction::Forward,
                rule: self.rule.as_str(),
                candidate_count: out.candidate_count,
            });
            if out.next.is_some() {
                if self.limits.max_hops.is_some_and(|max| trace.steps.len() >= max) {
                    trace.truncated = true;
                    break;
                }
                trace.steps.push((tx, out.change_outputs));
            }
            cur = out.next;
        }
        trace
    }

    /// Breadth-first search over `fprev`. Validation mode keeps only previous
    /// hops inside T_C and ignores the depth and frontier limits.
    pub fn follow_backward(&self, start: TxIdx, mode: HeuristicMode) -> BackwardTrace {
        let mut trace = BackwardTrace::default();
        let mut seen: HashSet<TxIdx> = HashSet::new();
        let mut queue: VecDeque<(TxIdx, usize)> = VecDeque::new();
        seen.insert(start);
        queue.push_back((start, 0));
        let bounded = mode == HeuristicMode::Expansion;
        while let Some((tx, depth)) = queue.pop_front() {
            trace.txs.push(tx);
            trace.depths.push(depth);
            let mut prev = fprev(self.store, tx, &self.profile);
            if mode == HeuristicMode::Validation {
                prev.retain(|&p| self.in_scope(p));
            }
            trace.hops.push(HopRecord {
                tx,
                hop_index: depth,
                direction: Direction::Backward,
                rule: "fprev",
                candidate_count: prev.len(),
            });
            for p in prev {
                if seen.contains(&p) {
                    continue;
                }
                if bounded && (depth >= self.limits.max_depth || queue.len() >= self.limits.max_frontier) {
                    trace.truncated = true;
                    continue;
                }
                seen.insert(p);
                queue.push_back((p, depth + 1));
            }
        }
        trace
    }
}
