//! Freshness- and value-based change heuristics from earlier clustering work,
//! used as comparison baselines for peel-chain expansion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chainstore::{ChainStore, TxIdx};
use crate::coinjoin::is_coinjoin;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineHeuristic {
    Androulaki,
    Meiklejohn,
    Goldfeder,
    Ermilov,
}

impl BaselineHeuristic {
    pub const ALL: [BaselineHeuristic; 4] = [
        BaselineHeuristic::Androulaki,
        BaselineHeuristic::Meiklejohn,
        BaselineHeuristic::Goldfeder,
        BaselineHeuristic::Ermilov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineHeuristic::Androulaki => "androulaki",
            BaselineHeuristic::Meiklejohn => "meiklejohn",
            BaselineHeuristic::Goldfeder => "goldfeder",
            BaselineHeuristic::Ermilov => "ermilov",
        }
    }
}

impl fmt::Display for BaselineHeuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineHeuristic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselineHeuristic::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| format!("unknown baseline heuristic {s:?}"))
    }
}

/// Satoshis per unit of the fourth BTC decimal place.
const FOURTH_DECIMAL: u64 = 10_000;

/// The value carries non-zero digits below the fourth decimal place.
pub fn significant_past_fourth_decimal(value: u64) -> bool {
    !value.is_multiple_of(FOURTH_DECIMAL)
}

/// Index of the single output whose address is fresh in `tx`, if exactly one
/// address is fresh and it occupies exactly one output.
pub fn only_fresh_output(store: &ChainStore, tx: TxIdx) -> Option<usize> {
    let t = store.tx(tx);
    let mut found: Option<(usize, crate::chainstore::AddrId)> = None;
    for (i, o) in t.outputs.iter().enumerate() {
        if !store.is_fresh(o.address, tx) {
            continue;
        }
        match found {
            None => found = Some((i, o.address)),
            Some(_) => return None,
        }
    }
    found.map(|(i, _)| i)
}

/// Some address is both spent from and paid to in `tx`.
pub fn has_self_change(store: &ChainStore, tx: TxIdx) -> bool {
    let t = store.tx(tx);
    t.outputs
        .iter()
        .any(|o| t.inputs.iter().any(|i| i.address == o.address))
}

/// Output index identified as change by `algo`, or `None`.
pub fn baseline_change(store: &ChainStore, tx: TxIdx, algo: BaselineHeuristic) -> Option<usize> {
    let t = store.tx(tx);
    match algo {
        BaselineHeuristic::Androulaki => {
            if t.outputs.len() != 2 {
                return None;
            }
            only_fresh_output(store, tx)
        }
        BaselineHeuristic::Meiklejohn => meiklejohn(store, tx),
        BaselineHeuristic::Goldfeder => {
            if is_coinjoin(t) {
                return None;
            }
            meiklejohn(store, tx)
        }
        BaselineHeuristic::Ermilov => {
            if t.outputs.len() != 2 || t.inputs.len() == 2 || has_self_change(store, tx) {
                return None;
            }
            let i = only_fresh_output(store, tx)?;
            significant_past_fourth_decimal(t.outputs[i].value).then_some(i)
        }
    }
}

fn meiklejohn(store: &ChainStore, tx: TxIdx) -> Option<usize> {
    if store.tx(tx).is_coinbase || has_self_change(store, tx) {
        return None;
    }
    only_fresh_output(store, tx)
}
