//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use common::*;
use peeltrace::cli::{execute, Cli};
use peeltrace::expansion::{compare_rules, expand_cluster, RuleSummary, TagStore};
use peeltrace::features::infer_change_strategy;
use peeltrace::peelchain::{fnext, fnext_detailed, fprev};
use peeltrace::synthgen::{generate, scenario, GroundTruth, ScenarioParams, SCENARIO_NAMES};
use peeltrace::validation::partition_peel_chains;
use peeltrace::{
    ChainStore, ChangeRule, ChangeStrategy, ClusterId, ClusterProfile, ClusterSet, HeuristicMode, TraversalLimits,
    Tracer, TxIdx,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Files = Vec<(String, Vec<u8>)>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn params(kv: &[(&str, u64)]) -> ScenarioParams {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn build(name: &str, kv: &[(&str, u64)], seed: u64) -> (ChainStore, GroundTruth) {
    let spec = scenario(name, &params(kv)).unwrap();
    let (records, truth) = generate(&spec, seed).unwrap();
    (ChainStore::from_records(&records).unwrap(), truth)
}

fn idx(store: &ChainStore, hex: &str) -> TxIdx {
    store.lookup(&hex.parse().unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut clustering = Duration::ZERO;
    let mut total_txs = 0;
    for fixture in 0..20 {
        let n = rng.gen_range(1_000..=10_000);
        let shape = LedgerShape {
            n_txs: n,
            reuse: rng.gen_range(0.05..0.5),
            max_inputs: rng.gen_range(2..=6),
            max_outputs: rng.gen_range(1..=5),
        };
        let records = random_ledger(1_000 + fixture, shape);
        let store = ChainStore::from_records(&records).unwrap();
        let t = Instant::now();
        let clusters = ClusterSet::build(&store);
        clustering += t.elapsed();
        total_txs += n;
        check(
            library_components(&store, &clusters) == bfs_address_components(&records),
            || format!("fixture {fixture} ({n} txs) differs from BFS components"),
        )?;
    }
    check(clustering < Duration::from_secs(5), || format!("clustering took {clustering:?}"))?;
    Ok(format!("20 fixtures, {total_txs} txs, union-find total {clustering:.2?}"))
}

fn criterion_2() -> Outcome {
    let records = random_ledger(2, LedgerShape::small(5_000));
    let store = ChainStore::from_records(&records).unwrap();
    let raw = RawLedger::new(&records);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spends: Vec<_> = store.tx_indices().filter(|&t| !store.tx(t).is_coinbase).collect();
    let strategies = [ChangeStrategy::First, ChangeStrategy::Last, ChangeStrategy::Either, ChangeStrategy::None];
    let mut linked = 0;
    for i in 0..1_000 {
        let t = spends[rng.gen_range(0..spends.len())];
        let mut p = random_profile(&mut rng, 0.75);
        p.strategy = strategies[i % 4];
        let (ftx, faddr) = profile_sets(&p);
        let id = store.txid(t);
        let got = fnext(&store, t, &p).map(|n| store.txid(n));
        check(got == oracle_fnext(&raw, &id, p.strategy, &ftx, &faddr), || {
            format!("fnext differs at {id} with S={}", p.strategy)
        })?;
        linked += usize::from(got.is_some());
        let mut got: Vec<_> = fprev(&store, t, &p).into_iter().map(|n| store.txid(n)).collect();
        got.sort_by_key(|t| t.0);
        check(got == oracle_fprev(&raw, &id, p.strategy, &ftx), || {
            format!("fprev differs at {id} with S={}", p.strategy)
        })?;
    }
    Ok(format!("1000 transactions, 250 per strategy, {linked} with a next hop"))
}

fn criterion_3() -> Outcome {
    let mut n = 0;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut tally = |store: &ChainStore, clusters: &ClusterSet, label: &str| -> Result<(), String> {
        for c in clusters.iter() {
            let s = infer_change_strategy(store, c);
            check(s == oracle_strategy(store, c), || format!("{label}: cluster {} differs", c.id))?;
            *seen.entry(s.to_string()).or_default() += 1;
            n += 1;
        }
        Ok(())
    };
    for seed in 0..5 {
        let store = random_store(300 + seed, 2_000);
        tally(&store, &ClusterSet::build(&store), "random")?;
    }
    for name in SCENARIO_NAMES {
        let kv: &[(&str, u64)] = if name == "bulk" { &[("txs", 5_000)] } else { &[] };
        let (store, _) = build(name, kv, 3);
        tally(&store, &ClusterSet::build(&store), name)?;
    }
    Ok(format!("{n} clusters, strategies {seen:?}"))
}

fn criterion_4() -> Outcome {
    let mut hops = 0;
    for length in [5u64, 10, 25, 50, 100, 150, 200] {
        for seed in 0..3 {
            let (store, truth) = build("single-chain", &[("length", length)], seed);
            let chain: Vec<TxIdx> = truth.chains["alice/0"].iter().map(|h| idx(&store, h)).collect();
            let clusters = ClusterSet::build(&store);
            let c = clusters.cluster_of_tx(chain[0]).unwrap();
            let tracer = Tracer::for_cluster(&store, &clusters, c);
            let fwd = tracer.follow_forward(chain[0], HeuristicMode::Validation);
            check(fwd.path == chain, || {
                format!("length {length} seed {seed}: walked {} of {} txs", fwd.path.len(), chain.len())
            })?;
            hops += chain.len() - 1;
        }
    }

    let (mut ambiguous, mut links, mut false_links) = (0, 0, 0);
    for seed in 0..5 {
        let (store, truth) = build("adversarial-fresh-outputs", &[], seed);
        let clusters = ClusterSet::build(&store);
        let next = truth.successors();
        for c in clusters.iter() {
            let profile = ClusterProfile::of(&store, c);
            for &t in &c.transactions {
                if truth.entity_kind[&truth.tx_entity[&store.txid(t).to_hex()]] != "peeler" {
                    continue;
                }
                let out = fnext_detailed(&store, t, &profile);
                if out.candidate_count > 1 {
                    ambiguous += 1;
                    check(out.next.is_none(), || "fnext linked an ambiguous hop".into())?;
                }
                if let Some(n) = out.next {
                    links += 1;
                    let hex = store.txid(t).to_hex();
                    if next.get(hex.as_str()) != Some(&store.txid(n).to_hex().as_str()) {
                        false_links += 1;
                    }
                }
            }
        }
    }
    check(ambiguous > 0, || "no ambiguous hop in the adversarial corpus".into())?;
    check(false_links == 0, || format!("{false_links} false links out of {links}"))?;
    Ok(format!(
        "{hops} single-chain hops recovered; adversarial: {ambiguous} ambiguous hops abstained, {links} links, 0 false"
    ))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut triples = 0;
    let mut detail = Vec::new();
    for k in [1u64, 3, 10] {
        let (store, truth) = build("k-disjoint-chains", &[("k", k)], k);
        let clusters = ClusterSet::build(&store);
        let first = idx(&store, &truth.chains["alice/0"][0]);
        let c = clusters.cluster_of_tx(first).unwrap();
        let p = partition_peel_chains(&store, &clusters, c).unwrap();
        let n_tc = clusters.cluster(c).transactions.len();
        check(p.n_chains() == k as usize, || format!("k={k}: {} chains", p.n_chains()))?;
        check(p.ratio_v() == k as f64 / n_tc as f64, || format!("k={k}: V={}", p.ratio_v()))?;
        // every ground-truth chain is one partition block
        for (_, txs) in truth.chains.iter().filter(|(name, _)| name.starts_with("alice/")) {
            let blocks: HashSet<_> = txs.iter().map(|h| p.chain_of(idx(&store, h))).collect();
            check(blocks.len() == 1, || format!("k={k}: a chain is split"))?;
        }
        detail.push(format!("k={k} V={}/{n_tc}", p.n_chains()));

        let txs = &clusters.cluster(c).transactions;
        for _ in 0..10_000 / 3 + 1 {
            let [a, b, x] = [0; 3].map(|_| txs[rng.gen_range(0..txs.len())]);
            let ab = p.same_chain(a, b).unwrap();
            check(p.same_chain(a, a).unwrap(), || "not reflexive".into())?;
            check(ab == p.same_chain(b, a).unwrap(), || "not symmetric".into())?;
            if ab && p.same_chain(b, x).unwrap() {
                check(p.same_chain(a, x).unwrap(), || "not transitive".into())?;
            }
            triples += 1;
        }
    }
    Ok(format!("{}; same_chain checked on {triples} triples", detail.join(", ")))
}

/// (mean V of single-entity clusters, mean V of Coinjoin-merged clusters, counts).
fn balanced_means(seed: u64) -> (f64, f64, usize, usize) {
    let (store, truth) = build("balanced-60-60", &[], seed);
    let clusters = ClusterSet::build(&store);
    let (mut tp, mut fp) = (Vec::new(), Vec::new());
    for c in clusters.iter().filter(|c| !c.transactions.is_empty()) {
        let hexes: Vec<String> = c.transactions.iter().map(|&t| store.txid(t).to_hex()).collect();
        let entities: HashSet<&str> = hexes.iter().map(|h| truth.tx_entity[h].as_str()).collect();
        let mixed = hexes.iter().any(|h| truth.tx_coinjoin[h]);
        let v = partition_peel_chains(&store, &clusters, c.id).unwrap().ratio_v();
        if mixed {
            fp.push(v);
        } else if entities.len() == 1 && entities.iter().all(|e| e.starts_with("tp")) {
            tp.push(v);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&tp), mean(&fp), tp.len(), fp.len())
}

fn criterion_6() -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let (v_tp, v_fp, n_tp, n_fp) = balanced_means(seed);
        check(n_tp == 60 && n_fp == 60, || format!("seed {seed}: {n_tp} TP and {n_fp} FP clusters"))?;
        check(v_fp >= 2.0 * v_tp, || format!("seed {seed}: V_FP {v_fp:.3} < 2 x V_TP {v_tp:.3}"))?;
        lines.push(format!("{:.1}x", v_fp / v_tp));
    }
    Ok(format!("V_FP / V_TP per seed: {}", lines.join(" ")))
}

fn nonempty(clusters: &ClusterSet, min: usize) -> Vec<ClusterId> {
    clusters
        .iter()
        .filter(|c| !c.transactions.is_empty() && c.transactions.len() >= min)
        .map(|c| c.id)
        .collect()
}

fn criterion_7() -> Outcome {
    // (a) E and D recomputed from the CLI's report rows and the tag file
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let gen = cli(&["generate", "--scenario", "composite", "--seed", "7", "--out", out.to_str().unwrap()])?;
    let ledger = gen.iter().find(|p| p.ends_with("-ledger.jsonl")).unwrap().clone();
    let tags_path = gen.iter().find(|p| p.ends_with("-tags.csv")).unwrap().clone();
    let reports = cli(&[
        "expand", "--ledger", &ledger, "--tags", &tags_path, "--format", "json", "--out", out.to_str().unwrap(),
    ])?;
    let rows_path = reports.iter().find(|p| p.ends_with(".json") && !p.contains("-reports") && !p.contains("-manifest")).unwrap();
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(rows_path).unwrap()).unwrap();
    let store = ChainStore::read_jsonl(std::io::BufReader::new(std::fs::File::open(&ledger).unwrap())).unwrap();
    let clusters = ClusterSet::build(&store);
    let tags = TagStore::read_csv(std::fs::File::open(&tags_path).unwrap()).unwrap();
    let mut n_rows = 0;
    for row in rows["report"].as_array().unwrap() {
        let id = ClusterId(row["cluster_id"].as_u64().unwrap() as u32);
        let c = clusters.cluster(id);
        let n_txs = row["n_txs"].as_u64().unwrap() as f64;
        let n_disc = row["n_discovered"].as_u64().unwrap() as f64;
        let fp = row["false_positives"].as_u64().unwrap() as f64;
        check(n_txs as usize == c.transactions.len(), || format!("cluster {id}: n_txs"))?;
        check(row["expansion_factor"].as_f64().unwrap() == 100.0 * n_disc / n_txs, || format!("cluster {id}: E"))?;
        let d = if n_disc == 0.0 { 0.0 } else { fp / n_disc };
        check(row["fdr"].as_f64().unwrap() == d, || format!("cluster {id}: D"))?;
        // discoveries recounted with a fresh walk and the raw tag file
        let r = expand_cluster(&store, &clusters, id, ChangeRule::Fnext, TraversalLimits::default()).unwrap();
        let own: HashSet<&str> = c.addresses.iter().filter_map(|&a| tags.entity_of(store.address(a))).collect();
        let recount = r
            .discovered
            .iter()
            .filter(|&&t| {
                store.tx(t).inputs.iter().any(|i| tags.entity_of(store.address(i.address)).is_some_and(|e| !own.contains(e)))
            })
            .count();
        check(r.discovered.len() as f64 == n_disc && recount as f64 == fp, || format!("cluster {id}: recount"))?;
        n_rows += 1;
    }

    // (b) fnext2 discoveries within fnext discoveries
    let mut fixtures = 0;
    let mut subset = |store: &ChainStore| -> Result<(), String> {
        let clusters = ClusterSet::build(store);
        for id in nonempty(&clusters, 1) {
            let a = expand_cluster(store, &clusters, id, ChangeRule::Fnext, TraversalLimits::default()).unwrap();
            let b = expand_cluster(store, &clusters, id, ChangeRule::Fnext2, TraversalLimits::default()).unwrap();
            let a: HashSet<_> = a.discovered.into_iter().collect();
            check(b.discovered.iter().all(|t| a.contains(t)), || format!("cluster {id}: fnext2 found more"))?;
        }
        fixtures += 1;
        Ok(())
    };
    for seed in 0..5 {
        subset(&random_store(700 + seed, 2_000))?;
    }
    for name in SCENARIO_NAMES {
        let kv: &[(&str, u64)] = if name == "bulk" { &[("txs", 5_000)] } else { &[] };
        subset(&build(name, kv, 7).0)?;
    }

    // (c) service sink
    let mut sink = Vec::new();
    for seed in 1..=5 {
        let (store, truth) = build("service-sink", &[], seed);
        let clusters = ClusterSet::build(&store);
        let tags = truth.to_tag_store();
        let ids: Vec<ClusterId> = nonempty(&clusters, 1)
            .into_iter()
            .filter(|&id| {
                let c = clusters.cluster(id);
                truth.tx_entity[&store.txid(c.transactions[0]).to_hex()].starts_with("dep")
            })
            .collect();
        let rules = [ChangeRule::Fnext, ChangeRule::Fnext2];
        let s = compare_rules(&store, &clusters, &ids, &rules, TraversalLimits::default(), &tags);
        check(s[1].mean_d == 0.0 && s[0].mean_d > 0.0, || {
            format!("seed {seed}: fnext D {:.3}, fnext2 D {:.3}", s[0].mean_d, s[1].mean_d)
        })?;
        sink.push(format!("{:.2}/{:.2}", s[0].mean_d, s[1].mean_d));
    }
    Ok(format!(
        "{n_rows} report rows recomputed; subset on {fixtures} fixtures; service-sink D fnext/fnext2 {}",
        sink.join(" ")
    ))
}

fn ordering_holds(s: &[RuleSummary]) -> bool {
    let d: HashMap<&str, f64> = s.iter().map(|r| (r.heuristic.as_str(), r.mean_d)).collect();
    d["fnext2"] <= d["fnext"]
        && d["fnext"] < d["ermilov"]
        && d["ermilov"] < d["goldfeder"]
        && d["goldfeder"] <= d["meiklejohn"]
        && d["meiklejohn"] < d["androulaki"]
}

fn criterion_8() -> Outcome {
    let mut held = 0;
    let mut notes = Vec::new();
    for seed in 1..=5 {
        let (store, truth) = build("composite", &[], seed);
        let clusters = ClusterSet::build(&store);
        let ids = nonempty(&clusters, 5);
        let s = compare_rules(&store, &clusters, &ids, &ChangeRule::ALL, TraversalLimits::default(), &truth.to_tag_store());
        let ok = ordering_holds(&s);
        held += usize::from(ok);
        let ds: Vec<String> = s.iter().map(|r| format!("{}={:.3}", r.heuristic, r.mean_d)).collect();
        notes.push(format!("seed {seed} {}: {}", if ok { "ok" } else { "violated" }, ds.join(" ")));
    }
    check(held >= 4, || format!("ordering held on {held}/5 seeds; {}", notes.join("; ")))?;
    Ok(format!("ordering held on {held}/5 seeds ({})", notes[0]))
}

fn criterion_9() -> Outcome {
    let (store, truth) = build("fig3-replica", &[], 9);
    let clusters = ClusterSet::build(&store);
    let only = |chain: &str| {
        let v: Vec<&String> = truth.tx_chain.iter().filter(|(_, c)| *c == chain).map(|(t, _)| t).collect();
        assert_eq!(v.len(), 1, "{chain}");
        idx(&store, v[0])
    };
    let (tx1, tx3) = (only("exchange/withdrawal"), only("user/deposit"));
    let tx2 = idx(&store, &truth.chains["user/trace"][1]);
    let c = clusters.cluster_of_tx(tx3).unwrap();
    let tracer = Tracer::for_cluster(&store, &clusters, c);
    let bwd = tracer.follow_backward(tx3, HeuristicMode::Expansion);
    let depth = bwd.depth_of(tx1);
    check(depth.is_some_and(|d| d <= 7), || format!("withdrawal depth {depth:?}"))?;
    let fwd = tracer.follow_forward(tx1, HeuristicMode::Expansion);
    check(fwd.path == vec![tx1, tx2], || format!("forward path has {} txs", fwd.path.len()))?;
    let last = fwd.hops.last().unwrap();
    check(last.tx == tx2 && last.candidate_count == 2 && !fwd.truncated, || {
        format!("stopped with {} candidates", last.candidate_count)
    })?;
    Ok(format!(
        "withdrawal found at depth {} among {} backward txs; forward stops at the split with 2 candidates",
        depth.unwrap(),
        bwd.txs.len()
    ))
}

/// Runs the CLI in-process and returns the written paths.
fn cli(args: &[&str]) -> Result<Vec<String>, String> {
    let parsed = Cli::try_parse_from(std::iter::once("peeltrace").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let outcome = execute(&parsed).map_err(|e| e.to_string())?;
    Ok(outcome.written.iter().map(|p| p.display().to_string()).collect())
}

fn pipeline(dir: &Path) -> Result<(Duration, Files), String> {
    let start = Instant::now();
    std::env::set_current_dir(dir).unwrap();
    let gen = cli(&["generate", "--scenario", "bulk", "--seed", "10", "--out", "out"])?;
    let ledger = gen.iter().find(|p| p.ends_with("-ledger.jsonl")).unwrap().clone();
    cli(&["ingest", "--ledger", &ledger, "--out", "out"])?;
    cli(&["cluster", "--ledger", &ledger, "--out", "out"])?;
    cli(&["validate", "--ledger", &ledger, "--out", "out"])?;
    let elapsed = start.elapsed();
    let mut files: Files = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    Ok((elapsed, files))
}

fn criterion_10() -> Outcome {
    let cwd = std::env::current_dir().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    std::env::set_current_dir(cwd).unwrap();
    let (t1, f1) = first?;
    let (t2, f2) = second?;
    let ledger = f1.iter().find(|(n, _)| n.ends_with("-ledger.jsonl")).unwrap();
    let n_txs = ledger.1.iter().filter(|&&b| b == b'\n').count();
    check(n_txs >= 100_000, || format!("ledger has {n_txs} txs"))?;
    check(f1 == f2, || "outputs differ between runs".into())?;
    check(t1 < Duration::from_secs(60) && t2 < Duration::from_secs(60), || format!("runs took {t1:?} and {t2:?}"))?;
    let bytes: usize = f1.iter().map(|(_, b)| b.len()).sum();
    Ok(format!(
        "{n_txs} txs, {} files ({bytes} bytes) identical, runs {t1:.1?} and {t2:.1?}",
        f1.len()
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("clustering equals BFS components", criterion_1),
        ("fnext/fprev match the transcribed algorithms", criterion_2),
        ("change strategy matches the case analysis", criterion_3),
        ("peel-chain recovery and abstention", criterion_4),
        ("validation partition of disjoint chains", criterion_5),
        ("V of merged clusters at least twice V of single-entity clusters", criterion_6),
        ("expansion metrics, fnext2 subset, service sink", criterion_7),
        ("baseline FDR ordering", criterion_8),
        ("case-study backward and forward trace", criterion_9),
        ("determinism and throughput at 1e5 txs", criterion_10),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.is_some_and(|only| only != n) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        match result {
            Ok(detail) => println!("PASS criterion {n:>2} [{took:.1?}] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} [{took:.1?}] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
