//! Coinjoin detection and the cluster-level classifier built on it.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chainstore::{ChainStore, Transaction};
use crate::cospend::Cluster;

/// Thresholds of the equal-output Coinjoin detector.
///
/// A transaction is flagged when it has at least `min_inputs` inputs and
/// `min_outputs` outputs, its most frequent output value `v` occurs `k >=
/// min_equal_outputs` times, at least `k` distinct addresses fund it, and (with
/// `require_denomination_max`) no output is worth more than `v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinjoinRule {
    pub min_inputs: usize,
    pub min_outputs: usize,
    pub min_equal_outputs: usize,
    pub require_denomination_max: bool,
}

impl Default for CoinjoinRule {
    fn default() -> Self {
        CoinjoinRule {
            min_inputs: 2,
            min_outputs: 3,
            min_equal_outputs: 2,
            require_denomination_max: true,
        }
    }
}

impl CoinjoinRule {
    pub fn matches(&self, tx: &Transaction) -> bool {
        if tx.inputs.len() < self.min_inputs || tx.outputs.len() < self.min_outputs {
            return false;
        }
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for o in &tx.outputs {
            *counts.entry(o.value).or_default() += 1;
        }
        // Highest count wins; among equal counts the larger value.
        let (value, k) = counts
            .into_iter()
            .max_by_key(|&(v, c)| (c, v))
            .expect("at least one output");
        if k < self.min_equal_outputs {
            return false;
        }
        let mut addrs: Vec<_> = tx.inputs.iter().map(|i| i.address).collect();
        addrs.sort_unstable();
        addrs.dedup();
        if addrs.len() < k {
            return false;
        }
        if self.require_denomination_max && tx.outputs.iter().any(|o| o.value > value) {
            return false;
        }
        true
    }
}

/// Default detector.
pub fn is_coinjoin(tx: &Transaction) -> bool {
    CoinjoinRule::default().matches(tx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::TruePositive => "TP",
            Verdict::FalsePositive => "FP",
        })
    }
}

/// A cluster is a false positive as soon as one of its transactions looks like a Coinjoin.
pub fn classify_cluster(store: &ChainStore, cluster: &Cluster, rule: &CoinjoinRule) -> Verdict {
    if cluster
        .transactions
        .iter()
        .any(|&t| rule.matches(store.tx(t)))
    {
        Verdict::FalsePositive
    } else {
        Verdict::TruePositive
    }
}

/// Predictions in rows, truth in columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub pred_fp_truth_fp: usize,
    pub pred_fp_truth_tp: usize,
    pub pred_tp_truth_fp: usize,
    pub pred_tp_truth_tp: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: Verdict, truth: Verdict) {
        match (predicted, truth) {
            (Verdict::FalsePositive, Verdict::FalsePositive) => self.pred_fp_truth_fp += 1,
            (Verdict::FalsePositive, Verdict::TruePositive) => self.pred_fp_truth_tp += 1,
            (Verdict::TruePositive, Verdict::FalsePositive) => self.pred_tp_truth_fp += 1,
            (Verdict::TruePositive, Verdict::TruePositive) => self.pred_tp_truth_tp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pred_fp_truth_fp + self.pred_fp_truth_tp + self.pred_tp_truth_fp + self.pred_tp_truth_tp
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.pred_fp_truth_fp + self.pred_tp_truth_tp, self.total())
    }

    /// Share of the FP-predicted row that is wrong.
    pub fn fp_class_error(&self) -> f64 {
        ratio(self.pred_fp_truth_tp, self.pred_fp_truth_fp + self.pred_fp_truth_tp)
    }

    pub fn tp_class_error(&self) -> f64 {
        ratio(self.pred_tp_truth_fp, self.pred_tp_truth_fp + self.pred_tp_truth_tp)
    }

    /// Two-by-two table with a per-row class error column.
    pub fn to_table(&self) -> String {
        format!(
            "prediction,truth_FP,truth_TP,class_error\nFP,{},{},{:.1}%\nTP,{},{},{:.1}%\n",
            self.pred_fp_truth_fp,
            self.pred_fp_truth_tp,
            100.0 * self.fp_class_error(),
            self.pred_tp_truth_fp,
            self.pred_tp_truth_tp,
            100.0 * self.tp_class_error(),
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
