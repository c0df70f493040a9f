use std::collections::{HashMap, VecDeque};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CaseStudySpec, GroundTruth, ScenarioSpec, SynthError, Weighted, WORLD};
use crate::chainstore::{InputRecord, OutputRecord, TxRecord, Txid, SEQUENCE_FINAL};
use crate::features::{AddressType, ChangeStrategy, FeatureTuple};

const SEED_VALUE: u64 = 20_000_000_000;
const HOT_UTXO_VALUE: u64 = 50_000;
const SERVICE_FLOAT: u64 = 100_000_000;
const REPLACEABLE_SEQUENCE: u32 = 0xffff_fffd;

#[derive(Clone, Debug)]
struct Utxo {
    txid: Txid,
    vout: u32,
    value: u64,
    address: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    InCluster { extra: u32 },
    Tail,
    Coinjoin(usize),
}

struct ChainRun {
    id: String,
    steps: Vec<Step>,
    pos: usize,
    current: Option<Utxo>,
}

struct Peeler {
    hot: String,
    hot_utxos: VecDeque<Utxo>,
    chains: Vec<ChainRun>,
    inbox: Vec<Utxo>,
    reusable: Vec<String>,
    either_first: bool,
    hops_done: u64,
    tuples: WeightedIndex<f64>,
    types: WeightedIndex<f64>,
}

struct Service {
    hot: String,
    hot_utxo: Option<Utxo>,
    pending: Vec<Utxo>,
    scheduled: bool,
    tuples: WeightedIndex<f64>,
    types: WeightedIndex<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Action {
    Hop(usize, usize),
    Coinjoin(usize),
    Deposit(usize),
    Consolidate(usize),
}

#[derive(Clone, Copy, Debug)]
enum Party {
    World,
    Peeler(usize),
    Service(usize),
}

fn weights<T>(w: &[Weighted<T>]) -> WeightedIndex<f64> {
    WeightedIndex::new(w.iter().map(|x| x.weight)).expect("weights validated")
}

pub(super) struct Engine<'s> {
    spec: &'s ScenarioSpec,
    seed: u64,
    rng: ChaCha8Rng,
    records: Vec<TxRecord>,
    truth: GroundTruth,
    addr_type: HashMap<String, AddressType>,
    height: u64,
    index: u32,
    started: bool,
    tx_counter: u64,
    addr_counter: u64,
    world_pool: Vec<String>,
    peelers: Vec<Peeler>,
    services: Vec<Service>,
    parties: HashMap<&'s str, Party>,
    arrived: Vec<usize>,
    ready: Vec<Action>,
}

impl<'s> Engine<'s> {
    pub(super) fn new(spec: &'s ScenarioSpec, seed: u64) -> Self {
        let mut parties = HashMap::new();
        parties.insert(WORLD, Party::World);
        for (i, e) in spec.entities.iter().enumerate() {
            parties.insert(e.entity_id.as_str(), Party::Peeler(i));
        }
        for (i, s) in spec.services.iter().enumerate() {
            parties.insert(s.entity_id.as_str(), Party::Service(i));
        }
        Engine {
            spec,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            records: Vec::new(),
            truth: GroundTruth::default(),
            addr_type: HashMap::new(),
            height: 0,
            index: 0,
            started: false,
            tx_counter: 0,
            addr_counter: 0,
            world_pool: Vec::new(),
            peelers: Vec::new(),
            services: Vec::new(),
            parties,
            arrived: vec![0; spec.coinjoins.len()],
            ready: Vec::new(),
        }
    }

    fn digest(&self, domain: &[u8], counter: u64) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(domain);
        h.update(self.seed.to_le_bytes());
        h.update(counter.to_le_bytes());
        h.finalize().to_vec()
    }

    fn new_address(&mut self, entity: &str, ty: AddressType) -> String {
        self.addr_counter += 1;
        let d = self.digest(b"address", self.addr_counter);
        let address = hex::encode(&d[..20]);
        self.addr_type.insert(address.clone(), ty);
        self.truth
            .address_entity
            .insert(address.clone(), entity.to_string());
        address
    }

    fn advance(&mut self) {
        if !self.started {
            self.started = true;
            self.height = 1;
            self.index = 0;
        } else if self.rng.gen_bool(0.5) {
            self.height += u64::from(self.rng.gen_range(1..=self.spec.max_height_gap));
            self.index = 0;
        } else {
            self.index += 1;
        }
    }

    /// Appends a transaction. `tuple` is `None` for coinbase records.
    fn emit(
        &mut self,
        entity: &str,
        chain: &str,
        track: bool,
        tuple: Option<FeatureTuple>,
        inputs: &[Utxo],
        outputs: &[(String, u64)],
    ) -> Txid {
        self.advance();
        self.tx_counter += 1;
        let d = self.digest(b"transaction", self.tx_counter);
        let txid = Txid(d.try_into().expect("sha256 is 32 bytes"));
        let (version, locktime, segwit, sequence) = match tuple {
            None => (1, 0, false, SEQUENCE_FINAL),
            Some(t) => (
                u32::from(t.version),
                if t.locktime_set { self.height as u32 } else { 0 },
                t.segwit,
                if t.replaceable {
                    REPLACEABLE_SEQUENCE
                } else {
                    SEQUENCE_FINAL
                },
            ),
        };
        let record = TxRecord {
            txid,
            version,
            locktime,
            segwit,
            height: self.height,
            index: self.index,
            coinbase: tuple.is_none(),
            inputs: inputs
                .iter()
                .map(|u| InputRecord {
                    prev_txid: u.txid,
                    prev_index: u.vout,
                    sequence,
                })
                .collect(),
            outputs: outputs
                .iter()
                .map(|(a, v)| OutputRecord {
                    address: a.clone(),
                    kind: self.addr_type[a].as_str().to_string(),
                    value: *v,
                })
                .collect(),
        };
        self.records.push(record);
        let hex = txid.to_hex();
        self.truth.tx_entity.insert(hex.clone(), entity.to_string());
        self.truth.tx_chain.insert(hex.clone(), chain.to_string());
        self.truth.tx_coinjoin.insert(hex.clone(), false);
        if track {
            self.truth.chains.entry(chain.to_string()).or_default().push(hex);
        }
        txid
    }

    fn utxo(txid: Txid, vout: usize, outputs: &[(String, u64)]) -> Utxo {
        Utxo {
            txid,
            vout: vout as u32,
            value: outputs[vout].1,
            address: outputs[vout].0.clone(),
        }
    }

    pub(super) fn run(mut self) -> Result<(Vec<TxRecord>, GroundTruth), SynthError> {
        let spec = self.spec;
        self.truth.entity_kind.insert(WORLD.into(), "world".into());
        if spec.world_pool > 0 {
            let outs: Vec<(String, u64)> = (0..spec.world_pool)
                .map(|_| (self.new_address(WORLD, AddressType::PubkeyHashCompressed), 546))
                .collect();
            self.world_pool = outs.iter().map(|(a, _)| a.clone()).collect();
            self.emit(WORLD, "world/funding", false, None, &[], &outs);
        }
        for p in 0..spec.entities.len() {
            self.setup_peeler(p);
        }
        for s in 0..spec.services.len() {
            self.setup_service(s);
        }

        while !self.ready.is_empty() {
            let i = self.rng.gen_range(0..self.ready.len());
            let action = self.ready.swap_remove(i);
            match action {
                Action::Hop(p, c) => self.hop(p, c),
                Action::Coinjoin(j) => self.coinjoin(j),
                Action::Deposit(s) => self.outside_deposit(s),
                Action::Consolidate(s) => self.consolidate(s),
            }
        }

        let stuck: Vec<&str> = self
            .peelers
            .iter()
            .flat_map(|p| p.chains.iter())
            .filter(|c| c.pos < c.steps.len())
            .map(|c| c.id.as_str())
            .collect();
        if !stuck.is_empty() {
            return Err(SynthError::Deadlock(format!("chains waiting: {}", stuck.join(", "))));
        }
        for s in 0..self.services.len() {
            if !self.services[s].pending.is_empty() {
                self.consolidate(s);
            }
        }
        if let Some(cs) = &spec.case_study {
            self.case_study(cs);
        }
        Ok((self.records, self.truth))
    }

    fn setup_peeler(&mut self, p: usize) {
        let profile = &self.spec.entities[p];
        let id = profile.entity_id.as_str();
        self.truth.entity_kind.insert(id.into(), "peeler".into());
        let tuples = weights(&profile.feature_tuples);
        let types = weights(&profile.address_types);
        let hot_type = profile.address_types[types.sample(&mut self.rng)].value;
        let hot = self.new_address(id, hot_type);
        let mut chains = Vec::new();
        let mut hot_utxos = VecDeque::new();
        for c in 0..profile.chains {
            let [lo, hi] = profile.chain_length_range;
            let len = self.rng.gen_range(lo..=hi) as usize;
            let [tlo, thi] = profile.tail_hops_range;
            let tail = self.rng.gen_range(tlo..=thi) as usize;
            let mut steps = Vec::with_capacity(len + tail);
            for _ in 0..len {
                let extra = u32::from(self.rng.gen_bool(profile.extra_input_prob));
                steps.push(Step::InCluster { extra });
            }
            steps.extend(std::iter::repeat_n(Step::Tail, tail));
            if c == 0 {
                for (j, cj) in self.spec.coinjoins.iter().enumerate() {
                    if cj.participants.iter().any(|x| x == id) {
                        steps[cj.at_hop as usize] = Step::Coinjoin(j);
                    }
                }
            }
            let needed: u32 = steps
                .iter()
                .enumerate()
                .map(|(i, s)| match *s {
                    Step::InCluster { extra } => extra + u32::from(i > 0),
                    Step::Tail => 0,
                    Step::Coinjoin(_) => 1,
                })
                .sum();
            let mut outs = vec![(hot.clone(), SEED_VALUE)];
            for _ in 0..needed {
                let v = HOT_UTXO_VALUE + self.rng.gen_range(0..HOT_UTXO_VALUE);
                outs.push((hot.clone(), v));
            }
            let chain_id = format!("{id}/{c}");
            let txid = self.emit(id, &format!("{id}/funding"), false, None, &[], &outs);
            for vout in 1..outs.len() {
                hot_utxos.push_back(Self::utxo(txid, vout, &outs));
            }
            chains.push(ChainRun {
                id: chain_id,
                steps,
                pos: 0,
                current: Some(Self::utxo(txid, 0, &outs)),
            });
            self.ready.push(Action::Hop(p, c as usize));
        }
        self.peelers.push(Peeler {
            hot,
            hot_utxos,
            chains,
            inbox: Vec::new(),
            reusable: Vec::new(),
            either_first: true,
            hops_done: 0,
            tuples,
            types,
        });
    }

    fn setup_service(&mut self, s: usize) {
        let profile = &self.spec.services[s];
        let id = profile.entity_id.as_str();
        self.truth.entity_kind.insert(id.into(), "service".into());
        let tuples = weights(&profile.feature_tuples);
        let types = weights(&profile.address_types);
        let ty = profile.address_types[types.sample(&mut self.rng)].value;
        let hot = self.new_address(id, ty);
        let outs = vec![(hot.clone(), SERVICE_FLOAT)];
        let txid = self.emit(id, &format!("{id}/funding"), false, None, &[], &outs);
        self.services.push(Service {
            hot,
            hot_utxo: Some(Self::utxo(txid, 0, &outs)),
            pending: Vec::new(),
            scheduled: false,
            tuples,
            types,
        });
        for _ in 0..profile.outside_deposits {
            self.ready.push(Action::Deposit(s));
        }
    }

    fn peeler_address(&mut self, p: usize) -> String {
        let profile = &self.spec.entities[p];
        let ty = profile.address_types[self.peelers[p].types.sample(&mut self.rng)].value;
        self.new_address(&profile.entity_id, ty)
    }

    fn service_address(&mut self, s: usize) -> String {
        let profile = &self.spec.services[s];
        let ty = profile.address_types[self.services[s].types.sample(&mut self.rng)].value;
        self.new_address(&profile.entity_id, ty)
    }

    fn payment_value(&mut self, p: usize, cap: u64) -> u64 {
        let pv = &self.spec.entities[p].payment;
        let mut v = self.rng.gen_range(pv.min..=pv.max);
        if self.rng.gen_bool(pv.round_prob) {
            v = (v / pv.round_unit).max(1) * pv.round_unit;
        }
        v.min(cap).max(1)
    }

    /// Address paying `payee`; reused addresses are the payee's hot address or
    /// a world pool address.
    fn payee_address(&mut self, payer: usize, payee: Party, fresh: bool) -> String {
        match payee {
            Party::World => {
                if fresh || self.world_pool.is_empty() {
                    let profile = &self.spec.entities[payer];
                    let ty = profile.address_types[self.peelers[payer].types.sample(&mut self.rng)].value;
                    self.new_address(WORLD, ty)
                } else {
                    self.world_pool[self.rng.gen_range(0..self.world_pool.len())].clone()
                }
            }
            Party::Peeler(q) if fresh => self.peeler_address(q),
            Party::Peeler(q) => self.peelers[q].hot.clone(),
            Party::Service(s) if fresh => self.service_address(s),
            Party::Service(s) => self.services[s].hot.clone(),
        }
    }

    fn deliver(&mut self, payee: Party, utxo: Utxo) {
        match payee {
            Party::World => {}
            Party::Peeler(q) => {
                if self.spec.entities[q].spend_received {
                    self.peelers[q].inbox.push(utxo);
                }
            }
            Party::Service(s) => {
                self.services[s].pending.push(utxo);
                self.note_deposit(s);
            }
        }
    }

    fn note_deposit(&mut self, s: usize) {
        let svc = &mut self.services[s];
        if !svc.scheduled && svc.pending.len() >= self.spec.services[s].consolidate_every as usize {
            svc.scheduled = true;
            self.ready.push(Action::Consolidate(s));
        }
    }

    fn change_index(&mut self, p: usize, n_outputs: usize) -> usize {
        let profile = &self.spec.entities[p];
        let last = n_outputs - 1;
        let peeler = &mut self.peelers[p];
        let mut idx = match profile.change_strategy {
            ChangeStrategy::First => 0,
            ChangeStrategy::Last => last,
            ChangeStrategy::Either => {
                let first = peeler.either_first;
                peeler.either_first = !first;
                if first {
                    0
                } else {
                    last
                }
            }
            ChangeStrategy::None if peeler.hops_done == 0 => 1.min(last),
            ChangeStrategy::None => self.rng.gen_range(0..n_outputs),
        };
        if n_outputs > 1 && self.rng.gen_bool(profile.noise) {
            idx = (idx + self.rng.gen_range(1..n_outputs)) % n_outputs;
        }
        idx
    }

    /// Moves a chain to its next step after the current one completed.
    fn advance_chain(&mut self, p: usize, c: usize) {
        let chain = &mut self.peelers[p].chains[c];
        chain.pos += 1;
        match chain.steps.get(chain.pos) {
            None => {}
            Some(Step::Coinjoin(j)) => {
                let j = *j;
                self.arrived[j] += 1;
                if self.arrived[j] == self.spec.coinjoins[j].participants.len() {
                    self.ready.push(Action::Coinjoin(j));
                }
            }
            Some(_) => self.ready.push(Action::Hop(p, c)),
        }
    }

    fn hop(&mut self, p: usize, c: usize) {
        let spec = self.spec;
        let profile = &spec.entities[p];
        let id = profile.entity_id.as_str();
        let (step, pos, is_final) = {
            let chain = &self.peelers[p].chains[c];
            (chain.steps[chain.pos], chain.pos, chain.pos + 1 == chain.steps.len())
        };
        let tuple = profile.feature_tuples[self.peelers[p].tuples.sample(&mut self.rng)].value;

        let mut inputs = vec![self.peelers[p].chains[c]
            .current
            .take()
            .expect("chain holds a utxo")];
        let in_cluster = matches!(step, Step::InCluster { .. });
        if let Step::InCluster { extra } = step {
            let peeler = &mut self.peelers[p];
            let hot_inputs = extra as usize + usize::from(pos > 0);
            for _ in 0..hot_inputs {
                inputs.push(peeler.hot_utxos.pop_front().expect("funded hot utxo"));
            }
            if profile.spend_received {
                inputs.append(&mut peeler.inbox);
            }
        }
        let total_in: u64 = inputs.iter().map(|u| u.value).sum();
        let fee = self.rng.gen_range(500..5000);
        let available = total_in - fee;

        let n_pay = if profile.change_strategy == ChangeStrategy::None || self.rng.gen_bool(profile.batch_prob) {
            2
        } else {
            1
        };
        let cap = available / (4 * n_pay as u64);
        let mut payments: Vec<(String, u64, Party)> = Vec::with_capacity(n_pay);
        for _ in 0..n_pay {
            let (payee, fresh) = if is_final {
                (Party::World, true)
            } else if !in_cluster {
                (Party::World, false)
            } else {
                let payee = if profile.payees.is_empty() {
                    Party::World
                } else {
                    let name = &profile.payees[self.rng.gen_range(0..profile.payees.len())];
                    self.parties[name.as_str()]
                };
                (payee, self.rng.gen_bool(profile.payment_fresh_prob))
            };
            let address = self.payee_address(p, payee, fresh);
            let value = self.payment_value(p, cap);
            payments.push((address, value, payee));
        }
        let paid: u64 = payments.iter().map(|x| x.1).sum();
        let remainder = available - paid;

        let (change_addr, change_party) = match (&profile.sweep_to, is_final) {
            (Some(svc), true) => {
                let party = self.parties[svc.as_str()];
                (self.payee_address(p, party, true), Some(party))
            }
            _ if in_cluster && !is_final => (self.in_cluster_change(p, &inputs), None),
            _ => (self.peeler_address(p), None),
        };

        let n_out = n_pay + 1;
        let change_idx = self.change_index(p, n_out);
        let mut outputs: Vec<(String, u64)> = Vec::with_capacity(n_out);
        let mut owners: Vec<Option<Party>> = Vec::with_capacity(n_out);
        let mut pay_iter = payments.into_iter();
        for i in 0..n_out {
            if i == change_idx {
                outputs.push((change_addr.clone(), remainder));
                owners.push(change_party);
            } else {
                let (a, v, party) = pay_iter.next().expect("payment per slot");
                outputs.push((a, v));
                owners.push(Some(party));
            }
        }

        let chain_id = self.peelers[p].chains[c].id.clone();
        let txid = self.emit(id, &chain_id, true, Some(tuple), &inputs, &outputs);
        for (i, owner) in owners.iter().enumerate() {
            if let Some(party) = owner {
                self.deliver(*party, Self::utxo(txid, i, &outputs));
            }
        }
        if !is_final {
            self.peelers[p].chains[c].current = Some(Self::utxo(txid, change_idx, &outputs));
        }
        self.peelers[p].hops_done += 1;
        self.advance_chain(p, c);
    }

    fn in_cluster_change(&mut self, p: usize, inputs: &[Utxo]) -> String {
        let profile = &self.spec.entities[p];
        let r: f64 = self.rng.gen();
        if r < profile.self_change_prob {
            return self.peelers[p].hot.clone();
        }
        if r < profile.self_change_prob + profile.reused_change_prob {
            let candidates: Vec<&String> = self.peelers[p]
                .reusable
                .iter()
                .filter(|a| inputs.iter().all(|u| &u.address != *a))
                .collect();
            if !candidates.is_empty() {
                return candidates[self.rng.gen_range(0..candidates.len())].clone();
            }
        }
        let fresh = self.peeler_address(p);
        self.peelers[p].reusable.push(fresh.clone());
        fresh
    }

    fn coinjoin(&mut self, j: usize) {
        let spec = self.spec;
        let cj = &spec.coinjoins[j];
        let label = format!("coinjoin-{j}");
        self.truth.entity_kind.insert(label.clone(), "coinjoin".into());
        let members: Vec<usize> = cj
            .participants
            .iter()
            .map(|name| match self.parties[name.as_str()] {
                Party::Peeler(p) => p,
                _ => unreachable!("participants validated as entities"),
            })
            .collect();

        let mut inputs = Vec::new();
        let mut budgets = Vec::new();
        for &p in &members {
            let peeler = &mut self.peelers[p];
            let cur = peeler.chains[0].current.take().expect("chain holds a utxo");
            let hot = peeler.hot_utxos.pop_front().expect("funded hot utxo");
            let fee = self.rng.gen_range(300..1000);
            budgets.push(cur.value + hot.value - fee);
            inputs.push(cur);
            inputs.push(hot);
        }
        let min_budget = *budgets.iter().min().expect("participants");
        let mut denomination = min_budget * 4 / 5 / 100_000 * 100_000;
        if denomination == 0 {
            denomination = (min_budget / 2).max(1);
        }

        // (address, value, participant whose chain continues here)
        let mut outs: Vec<(String, u64, Option<usize>)> = Vec::new();
        for (k, &p) in members.iter().enumerate() {
            let a = self.peeler_address(p);
            outs.push((a, denomination, Some(p)));
            let rest = budgets[k] - denomination;
            let pieces = rest / denomination + 1;
            let piece = rest / pieces;
            if piece > 0 {
                for _ in 0..pieces {
                    let a = self.peeler_address(p);
                    outs.push((a, piece, None));
                }
            }
        }
        inputs.shuffle(&mut self.rng);
        outs.shuffle(&mut self.rng);

        let first = members[0];
        let tuple = spec.entities[first].feature_tuples[self.peelers[first].tuples.sample(&mut self.rng)].value;
        let outputs: Vec<(String, u64)> = outs.iter().map(|(a, v, _)| (a.clone(), *v)).collect();
        let txid = self.emit(&label, &label, false, Some(tuple), &inputs, &outputs);
        self.truth.tx_coinjoin.insert(txid.to_hex(), true);
        for (i, (_, _, owner)) in outs.iter().enumerate() {
            if let Some(p) = *owner {
                let chain_id = self.peelers[p].chains[0].id.clone();
                self.truth.chains.entry(chain_id).or_default().push(txid.to_hex());
                self.peelers[p].chains[0].current = Some(Self::utxo(txid, i, &outputs));
                self.advance_chain(p, 0);
            }
        }
    }

    fn outside_deposit(&mut self, s: usize) {
        let address = self.service_address(s);
        let value = self.rng.gen_range(1_000_000..100_000_000);
        let outs = vec![(address, value)];
        let txid = self.emit(WORLD, "world/funding", false, None, &[], &outs);
        self.services[s].pending.push(Self::utxo(txid, 0, &outs));
        self.note_deposit(s);
    }

    fn consolidate(&mut self, s: usize) {
        let spec = self.spec;
        let profile = &spec.services[s];
        let tuple = profile.feature_tuples[self.services[s].tuples.sample(&mut self.rng)].value;
        let svc = &mut self.services[s];
        svc.scheduled = false;
        let mut inputs = vec![svc.hot_utxo.take().expect("service float")];
        inputs.append(&mut svc.pending);
        let total: u64 = inputs.iter().map(|u| u.value).sum();
        let fee = self.rng.gen_range(500..5000).min(total - 1);
        let outputs = vec![(self.services[s].hot.clone(), total - fee)];
        let id = &profile.entity_id;
        let txid = self.emit(id, &format!("{id}/0"), true, Some(tuple), &inputs, &outputs);
        self.services[s].hot_utxo = Some(Self::utxo(txid, 0, &outputs));
    }

    fn case_study(&mut self, cs: &CaseStudySpec) {
        let (ex, user, mixer) = (cs.exchange.as_str(), cs.user.as_str(), cs.mixer.as_str());
        self.truth.entity_kind.insert(ex.into(), "exchange".into());
        self.truth.entity_kind.insert(user.into(), "user".into());
        self.truth.entity_kind.insert(mixer.into(), "mixer".into());
        let (t, ty) = (Some(cs.feature_tuple), cs.address_type);
        let fee = 1_000;

        let hot = self.new_address(ex, ty);
        let outs = vec![(hot.clone(), 5_000_000_000)];
        let cb = self.emit(ex, &format!("{ex}/funding"), false, None, &[], &outs);
        let float = Self::utxo(cb, 0, &outs);

        let withdrawal = 1_000_000_000 + self.rng.gen_range(0..100_000_000);
        let u0 = self.new_address(user, ty);
        let outs = vec![(u0, withdrawal), (hot, float.value - withdrawal - fee)];
        let tx1 = self.emit(ex, &format!("{ex}/withdrawal"), false, t, &[float], &outs);
        let received = Self::utxo(tx1, 0, &outs);

        let split = received.value / 2 + self.rng.gen_range(0..received.value / 4);
        let outs = vec![
            (self.new_address(user, ty), split),
            (self.new_address(user, ty), received.value - split - fee),
        ];
        let trace = format!("{user}/trace");
        let tx2 = self.emit(user, &trace, false, t, &[received], &outs);
        self.truth.chains.entry(trace).or_default().extend([tx1.to_hex(), tx2.to_hex()]);

        // The first branch fans out so that `deposit_inputs` branches reach the deposit.
        let levels = cs.origin_depth as usize - 2;
        let mut ends: Vec<Utxo> = Vec::new();
        for (b, start) in [Self::utxo(tx2, 0, &outs), Self::utxo(tx2, 1, &outs)].into_iter().enumerate() {
            let width = if b == 0 { cs.deposit_inputs as usize - 1 } else { 1 };
            let share = (start.value - fee) / width as u64;
            let fan: Vec<(String, u64)> = (0..width).map(|_| (self.new_address(user, ty), share)).collect();
            let branch = format!("{user}/branch-{b}");
            let txid = self.emit(user, &branch, false, t, &[start], &fan);
            ends.extend((0..width).map(|i| Self::utxo(txid, i, &fan)));
        }
        for _ in 1..levels {
            for end in ends.iter_mut() {
                let outs = vec![(self.new_address(user, ty), end.value - fee)];
                let txid = self.emit(user, &format!("{user}/branch"), false, t, std::slice::from_ref(end), &outs);
                *end = Self::utxo(txid, 0, &outs);
            }
        }
        let total: u64 = ends.iter().map(|u| u.value).sum();
        let outs = vec![(self.new_address(mixer, ty), total - fee)];
        self.emit(user, &format!("{user}/deposit"), false, t, &ends, &outs);
    }
}
