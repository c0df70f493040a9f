use std::collections::BTreeMap;

use super::{
    CaseStudySpec, CoinjoinSpec, EntityProfile, ScenarioSpec, ServiceProfile, SynthError, Weighted,
};
use crate::features::{AddressType, ChangeStrategy, FeatureTuple};

/// Integer knobs of the built-in scenarios, e.g. `length=50`.
pub type ScenarioParams = BTreeMap<String, u64>;

pub const SCENARIO_NAMES: [&str; 9] = [
    "single-chain",
    "k-disjoint-chains",
    "coinjoin-merge",
    "adversarial-fresh-outputs",
    "service-sink",
    "fig3-replica",
    "balanced-60-60",
    "composite",
    "bulk",
];

const TUPLES: [FeatureTuple; 4] = [
    FeatureTuple {
        replaceable: false,
        locktime_set: false,
        version: 1,
        segwit: false,
    },
    FeatureTuple {
        replaceable: false,
        locktime_set: false,
        version: 2,
        segwit: true,
    },
    FeatureTuple {
        replaceable: true,
        locktime_set: true,
        version: 2,
        segwit: true,
    },
    FeatureTuple {
        replaceable: false,
        locktime_set: true,
        version: 2,
        segwit: false,
    },
];

const TYPES: [AddressType; 4] = [
    AddressType::PubkeyHashCompressed,
    AddressType::WitnessPubkeyHashCompressed,
    AddressType::Multisig2of3,
    AddressType::WitnessMultisig2of3,
];

struct Params<'a> {
    name: &'a str,
    given: &'a ScenarioParams,
    known: Vec<&'static str>,
}

impl Params<'_> {
    fn get(&mut self, key: &'static str, default: u64) -> u64 {
        self.known.push(key);
        self.given.get(key).copied().unwrap_or(default)
    }

    fn finish(self) -> Result<(), SynthError> {
        match self.given.keys().find(|k| !self.known.contains(&k.as_str())) {
            Some(k) => Err(SynthError::InvalidSpec(format!(
                "scenario {} has no parameter {k:?} (accepts: {})",
                self.name,
                self.known.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

fn u32_param(v: u64) -> u32 {
    v.min(u64::from(u32::MAX)) as u32
}

/// Builds a named scenario from the library.
pub fn scenario(name: &str, params: &ScenarioParams) -> Result<ScenarioSpec, SynthError> {
    let mut p = Params {
        name,
        given: params,
        known: Vec::new(),
    };
    let spec = match name {
        "single-chain" => {
            let length = u32_param(p.get("length", 10));
            let tail = u32_param(p.get("tail", 0));
            single_chain(length, tail)
        }
        "k-disjoint-chains" => {
            let k = u32_param(p.get("k", 3));
            let length = u32_param(p.get("length", 6));
            k_disjoint_chains(k, length)
        }
        "coinjoin-merge" => {
            let groups = p.get("groups", 4) as usize;
            let size = p.get("size", 3) as usize;
            let length = u32_param(p.get("length", 8));
            coinjoin_merge(groups, size, length)
        }
        "adversarial-fresh-outputs" => {
            let pairs = p.get("pairs", 3) as usize;
            let length = u32_param(p.get("length", 12));
            adversarial(pairs, length)
        }
        "service-sink" => {
            let depositors = p.get("depositors", 3) as usize;
            let length = u32_param(p.get("length", 6));
            let tail = u32_param(p.get("tail", 2));
            service_sink(depositors, length, tail)
        }
        "fig3-replica" => {
            let depth = u32_param(p.get("depth", 7));
            let inputs = u32_param(p.get("inputs", 3));
            fig3_replica(depth, inputs)
        }
        "balanced-60-60" => {
            let tp = p.get("tp", 60) as usize;
            let fp = p.get("fp", 60) as usize;
            balanced(tp, fp)
        }
        "composite" => {
            let pairs = p.get("pairs", 3) as usize;
            let groups = p.get("groups", 4) as usize;
            adversarial(pairs, 12).merged(coinjoin_merge(groups, 3, 8), "composite")
        }
        "bulk" => {
            let txs = p.get("txs", 100_000);
            bulk(txs)
        }
        other => return Err(SynthError::UnknownScenario(other.to_string())),
    };
    p.finish()?;
    spec.validate()?;
    Ok(spec)
}

fn empty(name: &str) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        entities: Vec::new(),
        services: Vec::new(),
        coinjoins: Vec::new(),
        case_study: None,
        max_height_gap: 1,
        world_pool: 8,
    }
}

fn single_chain(length: u32, tail: u32) -> ScenarioSpec {
    let mut e = EntityProfile::new("alice", TUPLES[0], TYPES[0], ChangeStrategy::Last, [length, length]);
    e.tail_hops_range = [tail, tail];
    ScenarioSpec {
        entities: vec![e],
        ..empty("single-chain")
    }
}

fn k_disjoint_chains(k: u32, length: u32) -> ScenarioSpec {
    let mut e = EntityProfile::new("alice", TUPLES[1], TYPES[1], ChangeStrategy::Last, [length, length]);
    e.chains = k;
    ScenarioSpec {
        entities: vec![e],
        ..empty("k-disjoint-chains")
    }
}

/// Two entities with identical profiles pay each other with fresh addresses
/// on both outputs and co-spend what they receive.
fn adversarial(pairs: usize, length: u32) -> ScenarioSpec {
    let mut spec = empty("adversarial-fresh-outputs");
    for i in 0..pairs {
        let (a, b) = (format!("adv{i}a"), format!("adv{i}b"));
        for (me, other) in [(&a, &b), (&b, &a)] {
            let mut e = EntityProfile::new(
                me.clone(),
                TUPLES[i % TUPLES.len()],
                TYPES[i % TYPES.len()],
                ChangeStrategy::Either,
                [length, length + 4],
            );
            e.payees = vec![other.clone()];
            e.spend_received = true;
            e.tail_hops_range = [1, 3];
            spec.entities.push(e);
        }
    }
    spec
}

/// Groups of individuals with mixed habits, each group merged by one Coinjoin.
/// Payments go to members of other groups, who co-spend them later.
fn coinjoin_merge(groups: usize, size: usize, length: u32) -> ScenarioSpec {
    let mut spec = empty("coinjoin-merge");
    let name = |g: usize, m: usize| format!("cj{g}m{m}");
    for g in 0..groups {
        for m in 0..size {
            let strategy = [ChangeStrategy::Last, ChangeStrategy::First][m % 2];
            let mut e = EntityProfile::new(
                name(g, m),
                TUPLES[(g + m) % TUPLES.len()],
                TYPES[(g + m) % TYPES.len()],
                strategy,
                [length, length + 4],
            );
            e.tail_hops_range = [1, 3];
            e.payees = (0..groups)
                .filter(|&h| h != g)
                .flat_map(|h| (0..size).map(move |n| name(h, n)))
                .collect();
            e.spend_received = true;
            e.payment_fresh_prob = 0.7;
            e.self_change_prob = 0.25;
            e.reused_change_prob = 0.35;
            e.extra_input_prob = 0.35;
            e.payment.round_prob = 0.4;
            spec.entities.push(e);
        }
        if size >= 2 {
            spec.coinjoins.push(CoinjoinSpec {
                participants: (0..size).map(|m| name(g, m)).collect(),
                at_hop: 3.min(length.saturating_sub(2)).max(1),
            });
        }
    }
    spec
}

/// Chains whose final hop sweeps the remainder into an exchange that
/// consolidates deposits with features identical to the depositors'.
fn service_sink(depositors: usize, length: u32, tail: u32) -> ScenarioSpec {
    let mut spec = empty("service-sink");
    for i in 0..depositors {
        let mut e = EntityProfile::new(format!("dep{i}"), TUPLES[0], TYPES[0], ChangeStrategy::Last, [length, length]);
        e.tail_hops_range = [tail, tail];
        e.sweep_to = Some("exchange".into());
        spec.entities.push(e);
    }
    spec.services.push(ServiceProfile {
        entity_id: "exchange".into(),
        feature_tuples: Weighted::one(TUPLES[0]),
        address_types: Weighted::one(TYPES[0]),
        outside_deposits: 6,
        consolidate_every: 3,
    });
    spec
}

fn fig3_replica(depth: u32, inputs: u32) -> ScenarioSpec {
    ScenarioSpec {
        case_study: Some(CaseStudySpec {
            exchange: "exchange".into(),
            user: "user".into(),
            mixer: "mixer".into(),
            origin_depth: depth,
            deposit_inputs: inputs,
            feature_tuple: TUPLES[1],
            address_type: TYPES[1],
        }),
        ..empty("fig3-replica")
    }
}

/// `tp` long-chained single entities next to `fp` groups of three to five
/// short-chained individuals merged by a Coinjoin, all interleaved in time.
fn balanced(tp: usize, fp: usize) -> ScenarioSpec {
    let mut spec = empty("balanced-60-60");
    let strategies = [ChangeStrategy::Last, ChangeStrategy::First, ChangeStrategy::Either];
    for i in 0..tp {
        let mut e = EntityProfile::new(
            format!("tp{i}"),
            TUPLES[i % TUPLES.len()],
            TYPES[(i / 4) % TYPES.len()],
            strategies[i % 3],
            [16, 24],
        );
        e.chains = 1 + (i % 2) as u32;
        spec.entities.push(e);
    }
    for g in 0..fp {
        let size = 3 + g % 3;
        let members: Vec<String> = (0..size).map(|m| format!("fp{g}m{m}")).collect();
        for (m, id) in members.iter().enumerate() {
            let mut e = EntityProfile::new(
                id.clone(),
                TUPLES[(g + m) % TUPLES.len()],
                TYPES[(g + 2 * m) % TYPES.len()],
                [ChangeStrategy::Last, ChangeStrategy::First][m % 2],
                [3, 4],
            );
            e.chains = 3;
            spec.entities.push(e);
        }
        spec.coinjoins.push(CoinjoinSpec {
            participants: members,
            at_hop: 1,
        });
    }
    spec
}

/// Large mixed ledger for throughput runs.
fn bulk(txs: u64) -> ScenarioSpec {
    let mut spec = empty("bulk");
    let strategies = [ChangeStrategy::Last, ChangeStrategy::First, ChangeStrategy::Either];
    // about 47 transactions per entity on average
    let n = (txs / 40).max(1) as usize;
    for i in 0..n {
        let mut e = EntityProfile::new(
            format!("e{i}"),
            TUPLES[i % TUPLES.len()],
            TYPES[(i / 4) % TYPES.len()],
            strategies[i % 3],
            [30, 60],
        );
        e.tail_hops_range = [0, 4];
        e.payment_fresh_prob = 0.8;
        e.reused_change_prob = 0.1;
        e.batch_prob = 0.1;
        if i % 10 == 9 {
            e.payees = vec![format!("e{}", i - 1)];
            e.spend_received = true;
        }
        spec.entities.push(e);
    }
    for g in 0..n / 50 {
        spec.coinjoins.push(CoinjoinSpec {
            participants: (0..3).map(|m| format!("e{}", g * 50 + m)).collect(),
            at_hop: 5,
        });
    }
    spec
}
