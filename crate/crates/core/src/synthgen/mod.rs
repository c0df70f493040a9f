//! Deterministic generator of labeled synthetic ledgers.
//!
//! A [`ScenarioSpec`] describes peel-chain entities, services that consolidate
//! deposits, Coinjoin splices between entities, and an optional hand-built
//! case-study topology. [`generate`] turns it into ledger records plus a
//! [`GroundTruth`] that labels every transaction and address.

mod engine;
mod library;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainstore::TxRecord;
use crate::expansion::TagStore;
use crate::features::{AddressType, ChangeStrategy, FeatureTuple};

pub use library::{scenario, ScenarioParams, SCENARIO_NAMES};

/// Entity label used for the external sink that never spends.
pub const WORLD: &str = "world";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("unknown scenario {0:?} (known: {known})", known = SCENARIO_NAMES.join(", "))]
    UnknownScenario(String),
    #[error("coinjoin schedule cannot complete: {0}")]
    Deadlock(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub value: T,
    pub weight: f64,
}

impl<T> Weighted<T> {
    pub fn one(value: T) -> Vec<Weighted<T>> {
        vec![Weighted { value, weight: 1.0 }]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentValues {
    /// Probability that a payment is a multiple of `round_unit` satoshis.
    pub round_prob: f64,
    pub round_unit: u64,
    pub min: u64,
    pub max: u64,
}

impl Default for PaymentValues {
    fn default() -> Self {
        PaymentValues {
            round_prob: 0.5,
            round_unit: 100_000,
            min: 100_000,
            max: 20_000_000,
        }
    }
}

fn one_u32() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

/// An entity that moves funds through peel chains.
///
/// Every in-cluster hop co-spends an output of the entity's hot address, so the
/// whole chain lands in one co-spend cluster. Tail hops spend only the previous
/// change and therefore fall outside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityProfile {
    pub entity_id: String,
    pub feature_tuples: Vec<Weighted<FeatureTuple>>,
    pub address_types: Vec<Weighted<AddressType>>,
    pub change_strategy: ChangeStrategy,
    #[serde(default = "one_u32")]
    pub chains: u32,
    /// In-cluster hops per chain, inclusive.
    pub chain_length_range: [u32; 2],
    #[serde(default)]
    pub tail_hops_range: [u32; 2],
    #[serde(default)]
    pub payment: PaymentValues,
    /// Entity ids paid by this entity; empty means the world sink.
    #[serde(default)]
    pub payees: Vec<String>,
    #[serde(default = "one_f64")]
    pub payment_fresh_prob: f64,
    /// Change returned to the hot address, which is also an input.
    #[serde(default)]
    pub self_change_prob: f64,
    /// Change returned to an older address of the entity that is not an input.
    #[serde(default)]
    pub reused_change_prob: f64,
    #[serde(default)]
    pub extra_input_prob: f64,
    /// Probability of a second payment output in a hop.
    #[serde(default)]
    pub batch_prob: f64,
    /// Received payments are co-spent in the next in-cluster hop.
    #[serde(default)]
    pub spend_received: bool,
    /// Service that receives the remainder of each chain's final hop.
    #[serde(default)]
    pub sweep_to: Option<String>,
    /// Per-hop probability of placing change off-strategy.
    #[serde(default)]
    pub noise: f64,
}

impl EntityProfile {
    pub fn new(
        entity_id: impl Into<String>,
        tuple: FeatureTuple,
        address_type: AddressType,
        strategy: ChangeStrategy,
        length: [u32; 2],
    ) -> Self {
        EntityProfile {
            entity_id: entity_id.into(),
            feature_tuples: Weighted::one(tuple),
            address_types: Weighted::one(address_type),
            change_strategy: strategy,
            chains: 1,
            chain_length_range: length,
            tail_hops_range: [0, 0],
            payment: PaymentValues::default(),
            payees: Vec::new(),
            payment_fresh_prob: 1.0,
            self_change_prob: 0.0,
            reused_change_prob: 0.0,
            extra_input_prob: 0.0,
            batch_prob: 0.0,
            spend_received: false,
            sweep_to: None,
            noise: 0.0,
        }
    }
}

/// A custodial service: deposits land on fresh addresses and are periodically
/// consolidated together with the service's hot address.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub entity_id: String,
    pub feature_tuples: Vec<Weighted<FeatureTuple>>,
    pub address_types: Vec<Weighted<AddressType>>,
    /// Deposits funded from outside the scenario's entities.
    #[serde(default)]
    pub outside_deposits: u32,
    pub consolidate_every: u32,
}

/// Splices the first chain of each participant through one Coinjoin, which
/// takes the place of in-cluster hop `at_hop`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinjoinSpec {
    pub participants: Vec<String>,
    pub at_hop: u32,
}

/// Withdrawal from an exchange, a hop that splits into two fresh outputs,
/// branches that rejoin in a multi-input deposit to a mixer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudySpec {
    pub exchange: String,
    pub user: String,
    pub mixer: String,
    /// Backward distance from the deposit to the withdrawal.
    pub origin_depth: u32,
    pub deposit_inputs: u32,
    pub feature_tuple: FeatureTuple,
    pub address_type: AddressType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub entities: Vec<EntityProfile>,
    #[serde(default)]
    pub services: Vec<ServiceProfile>,
    #[serde(default)]
    pub coinjoins: Vec<CoinjoinSpec>,
    #[serde(default)]
    pub case_study: Option<CaseStudySpec>,
    /// Upper bound of the height increment when a new block starts.
    #[serde(default = "one_u32")]
    pub max_height_gap: u32,
    /// Size of the pool of reused world addresses paid by tail hops.
    #[serde(default = "default_world_pool")]
    pub world_pool: u32,
}

fn default_world_pool() -> u32 {
    8
}

fn check_prob(what: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::InvalidSpec(format!("{what} = {p} is not a probability")))
    }
}

fn check_weights<T>(what: &str, w: &[Weighted<T>]) -> Result<(), SynthError> {
    if w.is_empty() {
        return Err(SynthError::InvalidSpec(format!("{what} is empty")));
    }
    if w.iter().any(|x| !(x.weight.is_finite() && x.weight > 0.0)) {
        return Err(SynthError::InvalidSpec(format!("{what} has a non-positive weight")));
    }
    Ok(())
}

fn check_range(what: &str, r: [u32; 2], min: u32) -> Result<(), SynthError> {
    if r[0] > r[1] || r[0] < min {
        return Err(SynthError::InvalidSpec(format!(
            "{what} [{}, {}] must satisfy {min} <= min <= max",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<ScenarioSpec, SynthError> {
        let spec: ScenarioSpec =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Appends another scenario's actors. Ids must stay distinct.
    pub fn merged(mut self, other: ScenarioSpec, name: &str) -> ScenarioSpec {
        self.name = name.to_string();
        self.entities.extend(other.entities);
        self.services.extend(other.services);
        self.coinjoins.extend(other.coinjoins);
        if self.case_study.is_none() {
            self.case_study = other.case_study;
        }
        self.max_height_gap = self.max_height_gap.max(other.max_height_gap);
        self.world_pool = self.world_pool.max(other.world_pool);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidSpec(m));
        if self.entities.is_empty() && self.services.is_empty() && self.case_study.is_none() {
            return invalid("scenario has no entities".into());
        }
        if self.max_height_gap == 0 {
            return invalid("max_height_gap must be positive".into());
        }
        let mut ids = BTreeSet::new();
        let all_ids = self
            .entities
            .iter()
            .map(|e| &e.entity_id)
            .chain(self.services.iter().map(|s| &s.entity_id));
        for id in all_ids {
            if id.is_empty() || id == WORLD || id.contains('/') {
                return invalid(format!("entity id {id:?} is reserved or malformed"));
            }
            if !ids.insert(id.as_str()) {
                return invalid(format!("duplicate entity id {id:?}"));
            }
        }
        let services: BTreeSet<&str> = self.services.iter().map(|s| s.entity_id.as_str()).collect();
        for e in &self.entities {
            let id = &e.entity_id;
            check_weights(&format!("{id}.feature_tuples"), &e.feature_tuples)?;
            check_weights(&format!("{id}.address_types"), &e.address_types)?;
            if e.feature_tuples.iter().any(|t| !matches!(t.value.version, 1 | 2)) {
                return invalid(format!("{id}: transaction version must be 1 or 2"));
            }
            if e.chains == 0 {
                return invalid(format!("{id}: chains must be positive"));
            }
            check_range(&format!("{id}.chain_length_range"), e.chain_length_range, 1)?;
            check_range(&format!("{id}.tail_hops_range"), e.tail_hops_range, 0)?;
            let p = &e.payment;
            if p.min == 0 || p.min > p.max || p.round_unit == 0 {
                return invalid(format!("{id}: payment range must satisfy 0 < min <= max"));
            }
            check_prob(&format!("{id}.payment.round_prob"), p.round_prob)?;
            check_prob(&format!("{id}.payment_fresh_prob"), e.payment_fresh_prob)?;
            check_prob(&format!("{id}.self_change_prob"), e.self_change_prob)?;
            check_prob(&format!("{id}.reused_change_prob"), e.reused_change_prob)?;
            check_prob(&format!("{id}.extra_input_prob"), e.extra_input_prob)?;
            check_prob(&format!("{id}.batch_prob"), e.batch_prob)?;
            check_prob(&format!("{id}.noise"), e.noise)?;
            if e.self_change_prob + e.reused_change_prob > 1.0 {
                return invalid(format!("{id}: self and reused change probabilities exceed 1"));
            }
            for payee in &e.payees {
                if payee != WORLD && !ids.contains(payee.as_str()) {
                    return invalid(format!("{id}: unknown payee {payee:?}"));
                }
            }
            if let Some(s) = &e.sweep_to {
                if !services.contains(s.as_str()) {
                    return invalid(format!("{id}: sweep_to {s:?} is not a service"));
                }
            }
        }
        for s in &self.services {
            check_weights(&format!("{}.feature_tuples", s.entity_id), &s.feature_tuples)?;
            check_weights(&format!("{}.address_types", s.entity_id), &s.address_types)?;
            if s.consolidate_every == 0 {
                return invalid(format!("{}: consolidate_every must be positive", s.entity_id));
            }
        }
        let mut slots = BTreeSet::new();
        for (j, cj) in self.coinjoins.iter().enumerate() {
            let distinct: BTreeSet<&str> = cj.participants.iter().map(String::as_str).collect();
            if distinct.len() < 2 || distinct.len() != cj.participants.len() {
                return invalid(format!("coinjoin {j} needs at least two distinct participants"));
            }
            for p in &cj.participants {
                let Some(e) = self.entities.iter().find(|e| &e.entity_id == p) else {
                    return invalid(format!("coinjoin {j}: unknown participant {p:?}"));
                };
                if cj.at_hop == 0 || cj.at_hop + 1 >= e.chain_length_range[0] {
                    return invalid(format!(
                        "coinjoin {j}: at_hop {} must lie strictly inside {p}'s shortest chain",
                        cj.at_hop
                    ));
                }
                if !slots.insert((p.as_str(), cj.at_hop)) {
                    return invalid(format!("coinjoin {j}: {p} already joins at hop {}", cj.at_hop));
                }
            }
        }
        if let Some(cs) = &self.case_study {
            if cs.origin_depth < 3 {
                return invalid("case_study.origin_depth must be at least 3".into());
            }
            if cs.deposit_inputs < 2 {
                return invalid("case_study.deposit_inputs must be at least 2".into());
            }
            let names = [&cs.exchange, &cs.user, &cs.mixer];
            for n in names {
                if n.is_empty() || n == WORLD || ids.contains(n.as_str()) {
                    return invalid(format!("case_study entity {n:?} clashes with another id"));
                }
            }
            if cs.exchange == cs.user || cs.user == cs.mixer || cs.exchange == cs.mixer {
                return invalid("case_study entities must be distinct".into());
            }
        }
        Ok(())
    }
}

/// Labels for every generated transaction and address.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tx_entity: BTreeMap<String, String>,
    pub tx_chain: BTreeMap<String, String>,
    pub tx_coinjoin: BTreeMap<String, bool>,
    pub address_entity: BTreeMap<String, String>,
    /// "peeler", "service", "world", "coinjoin" or a case-study role.
    pub entity_kind: BTreeMap<String, String>,
    /// Ordered transactions of each chain, including Coinjoins spliced into it.
    pub chains: BTreeMap<String, Vec<String>>,
}

impl GroundTruth {
    pub fn to_tag_store(&self) -> TagStore {
        let mut tags = TagStore::new();
        for (a, e) in &self.address_entity {
            tags.insert(a.clone(), e.clone());
        }
        tags
    }

    /// txid → the transaction that follows it in its chain.
    pub fn successors(&self) -> BTreeMap<&str, &str> {
        let mut next = BTreeMap::new();
        for txs in self.chains.values() {
            for w in txs.windows(2) {
                next.insert(w[0].as_str(), w[1].as_str());
            }
        }
        next
    }

    pub fn entities_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entity_kind
            .iter()
            .filter(move |(_, k)| k.as_str() == kind)
            .map(|(e, _)| e.as_str())
    }
}

/// Generates the ledger for `spec`. Identical `(spec, seed)` pairs produce
/// identical output.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<(Vec<TxRecord>, GroundTruth), SynthError> {
    spec.validate()?;
    engine::Engine::new(spec, seed).run()
}

/// Serializes records as JSON lines.
pub fn to_jsonl(records: &[TxRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}
