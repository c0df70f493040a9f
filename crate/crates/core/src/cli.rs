//! Command-line front end. Every subcommand reads its inputs, calls the
//! library, and writes reports named after the hash of its configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chainstore::{ChainStore, TxIdx, Txid};
use crate::coinjoin::{classify_cluster, CoinjoinRule, ConfusionMatrix, Verdict};
use crate::cospend::{ClusterId, ClusterSet};
use crate::expansion::{compare_rules, evaluate_clusters, ExpansionReport, TagStore};
use crate::features::ml_feature_row;
use crate::peelchain::{ChangeRule, HeuristicMode, TraversalLimits, Tracer};
use crate::report::{
    cluster_rows, sha256_hex, to_csv, to_json_report, trace_rows, ComparisonRow, ExpansionRow,
    FeatureCsvRow, OutputDir, ReportError, ReportMeta, ValidationRow, TOOL, VERSION,
};
use crate::synthgen::{self, GroundTruth, ScenarioParams, ScenarioSpec};
use crate::validation::{partition_peel_chains, ValidationReport};

#[derive(Debug, Parser)]
#[command(name = "peeltrace", version, about = "Co-spend clustering and peel-chain tracing over a JSONL ledger")]
pub struct Cli {
    /// Directory receiving report files.
    #[arg(long, global = true, env = "PEELTRACE_OUT", default_value = "reports")]
    pub out: PathBuf,
    /// Worker threads for per-cluster work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for generation; recorded in every report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Encoding of tabular reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Load and check a ledger, report its size.
    Ingest(LedgerArgs),
    /// Export co-spend clusters.
    Cluster(LedgerArgs),
    /// Export per-cluster features for classifier training.
    Features(FeaturesArgs),
    /// Partition clusters into peel chains and report V.
    Validate(ValidateArgs),
    /// Expand clusters forward and measure E and D.
    Expand(ExpandArgs),
    /// Compare change rules by mean E and D.
    Evaluate(EvaluateArgs),
    /// Trace from one transaction forward and optionally backward.
    Trace(TraceArgs),
    /// Write a synthetic ledger with ground truth.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct LedgerArgs {
    #[arg(long)]
    pub ledger: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    /// Ground truth from `generate`; labels clusters containing a Coinjoin as FP.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Labels clusters whose addresses carry more than one tag as FP.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_txs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub cluster: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub min_txs: usize,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
pub struct LimitArgs {
    #[arg(long)]
    pub max_hops: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_frontier: usize,
    /// Exit with status 3 when a traversal hit a limit.
    #[arg(long)]
    pub strict: bool,
}

impl LimitArgs {
    fn limits(&self) -> TraversalLimits {
        TraversalLimits {
            max_hops: self.max_hops,
            max_depth: self.max_depth,
            max_frontier: self.max_frontier,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ExpandArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long, default_value = "fnext")]
    pub rule: ChangeRule,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub cluster: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub min_txs: usize,
    #[command(flatten)]
    pub limits: LimitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub tags: PathBuf,
    /// Rules to compare; all six when omitted.
    #[arg(long = "rule")]
    pub rules: Vec<ChangeRule>,
    #[arg(long, default_value_t = 1)]
    pub min_txs: usize,
    #[command(flatten)]
    pub limits: LimitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub seed_tx: String,
    /// Also run the backward breadth-first trace.
    #[arg(long)]
    pub backward: bool,
    #[arg(long, default_value = "fnext")]
    pub rule: ChangeRule,
    #[command(flatten)]
    pub limits: LimitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "scenario_file")]
    pub scenario: Option<String>,
    /// Scenario spec as JSON.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    /// Scenario parameter as key=value; repeatable.
    #[arg(long = "param")]
    pub params: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) | CliError::Report(_) => 2,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'a Command,
    seed: u64,
    format: Format,
    inputs: &'a BTreeMap<String, String>,
}

/// Inputs read up front, with their digests.
struct Inputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn read(paths: &[&Path]) -> Result<Inputs, CliError> {
        for p in paths {
            if !p.is_file() {
                return Err(CliError::Input(format!("{}: no such file", p.display())));
            }
        }
        let mut files = BTreeMap::new();
        let mut digests = BTreeMap::new();
        for p in paths {
            let bytes = std::fs::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            digests.insert(p.display().to_string(), sha256_hex(&bytes));
            files.insert(p.to_path_buf(), bytes);
        }
        Ok(Inputs { files, digests })
    }

    fn bytes(&self, p: &Path) -> &[u8] {
        &self.files[p]
    }

    fn ledger(&self, p: &Path) -> Result<ChainStore, CliError> {
        ChainStore::read_jsonl(self.bytes(p)).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    }

    fn tags(&self, p: &Path) -> Result<TagStore, CliError> {
        TagStore::read_csv(self.bytes(p)).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    }

    fn truth(&self, p: &Path) -> Result<GroundTruth, CliError> {
        serde_json::from_slice(self.bytes(p)).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    }
}

/// Files written by a run and whether any traversal was cut short.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub truncated: bool,
    /// `--strict` was given: truncation turns into exit status 3.
    pub strict: bool,
    pub notes: Vec<String>,
}

struct Ctx<'a> {
    cli: &'a Cli,
    meta: ReportMeta,
    out: OutputDir,
    outcome: Outcome,
    manifest: Vec<(String, String)>,
}

impl Ctx<'_> {
    fn write(&mut self, suffix: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.write(suffix, bytes)?;
        self.manifest.push((
            path.file_name().unwrap().to_string_lossy().into_owned(),
            sha256_hex(bytes),
        ));
        self.outcome.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, suffix: &str, report: &T) -> Result<(), CliError> {
        let bytes = to_json_report(&self.meta, report);
        self.write(suffix, &bytes)
    }

    /// Tabular output in the selected format.
    fn table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<(), CliError> {
        match self.cli.format {
            Format::Csv => {
                let bytes = to_csv(rows)?;
                self.write(&format!("{stem}.csv"), &bytes)
            }
            Format::Json => self.json(&format!("{stem}.json"), &rows),
        }
    }

    fn finish(mut self) -> Result<Outcome, CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            outputs: BTreeMap<&'a str, &'a str>,
        }
        let outputs = self
            .manifest
            .iter()
            .map(|(f, d)| (f.as_str(), d.as_str()))
            .collect();
        let bytes = to_json_report(&self.meta, &Manifest { outputs });
        let path = self.out.write("-manifest.json", &bytes)?;
        self.outcome.written.push(path);
        Ok(self.outcome)
    }
}

fn parse_cluster(clusters: &ClusterSet, id: u32) -> Result<ClusterId, CliError> {
    let id = ClusterId(id);
    clusters
        .get(id)
        .map(|c| c.id)
        .ok_or_else(|| CliError::Input(format!("unknown cluster {id}")))
}

fn selected_clusters(clusters: &ClusterSet, one: Option<u32>, min_txs: usize) -> Result<Vec<ClusterId>, CliError> {
    match one {
        Some(id) => Ok(vec![parse_cluster(clusters, id)?]),
        None => Ok(clusters
            .iter()
            .filter(|c| !c.transactions.is_empty() && c.transactions.len() >= min_txs)
            .map(|c| c.id)
            .collect()),
    }
}

fn parse_params(raw: &[String]) -> Result<ScenarioParams, CliError> {
    let mut params = ScenarioParams::new();
    for kv in raw {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--param {kv:?} is not key=value")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("--param {k}: {v:?} is not an unsigned integer")))?;
        params.insert(k.to_string(), v);
    }
    Ok(params)
}

/// Runs the parsed command and writes its reports.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let paths: Vec<&Path> = match &cli.command {
        Command::Ingest(a) | Command::Cluster(a) => vec![&a.ledger],
        Command::Features(a) => std::iter::once(a.ledger.as_path())
            .chain(a.truth.as_deref())
            .chain(a.tags.as_deref())
            .collect(),
        Command::Validate(a) => vec![&a.ledger],
        Command::Expand(a) => std::iter::once(a.ledger.as_path()).chain(a.tags.as_deref()).collect(),
        Command::Evaluate(a) => vec![&a.ledger, &a.tags],
        Command::Trace(a) => vec![&a.ledger],
        Command::Generate(a) => a.scenario_file.iter().map(PathBuf::as_path).collect(),
    };
    if let Command::Generate(a) = &cli.command {
        if a.scenario.is_none() && a.scenario_file.is_none() {
            return Err(CliError::Usage("generate needs --scenario or --scenario-file".into()));
        }
    }
    let inputs = Inputs::read(&paths)?;
    let config = RunConfig {
        command: &cli.command,
        seed: cli.seed,
        format: cli.format,
        inputs: &inputs.digests,
    };
    let config_hash = sha256_hex(&serde_json::to_vec(&config).expect("config serializes"));
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Cluster(_) => "cluster",
        Command::Features(_) => "features",
        Command::Validate(_) => "validate",
        Command::Expand(_) => "expand",
        Command::Evaluate(_) => "evaluate",
        Command::Trace(_) => "trace",
        Command::Generate(_) => "generate",
    };
    let mut ctx = Ctx {
        cli,
        meta: ReportMeta {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: name.into(),
            config_hash: config_hash.clone(),
            seed: cli.seed,
            inputs: inputs.digests.clone(),
        },
        out: OutputDir::new(&cli.out, name, &config_hash),
        outcome: Outcome::default(),
        manifest: Vec::new(),
    };

    match &cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, &inputs, a)?,
        Command::Cluster(a) => cmd_cluster(&mut ctx, &inputs, a)?,
        Command::Features(a) => cmd_features(&mut ctx, &inputs, a)?,
        Command::Validate(a) => cmd_validate(&mut ctx, &inputs, a)?,
        Command::Expand(a) => cmd_expand(&mut ctx, &inputs, a)?,
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, &inputs, a)?,
        Command::Trace(a) => cmd_trace(&mut ctx, &inputs, a)?,
        Command::Generate(a) => cmd_generate(&mut ctx, &inputs, a)?,
    }
    ctx.finish()
}

#[derive(Serialize)]
struct IngestSummary {
    n_txs: usize,
    n_coinbase: usize,
    n_addresses: usize,
    n_inputs: usize,
    n_outputs: usize,
    first_height: Option<u64>,
    last_height: Option<u64>,
}

fn cmd_ingest(ctx: &mut Ctx, inputs: &Inputs, a: &LedgerArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let txs = store.transactions();
    let summary = IngestSummary {
        n_txs: store.len(),
        n_coinbase: txs.iter().filter(|t| t.is_coinbase).count(),
        n_addresses: store.num_addresses(),
        n_inputs: txs.iter().map(|t| t.inputs.len()).sum(),
        n_outputs: txs.iter().map(|t| t.outputs.len()).sum(),
        first_height: txs.first().map(|t| t.block_height),
        last_height: txs.last().map(|t| t.block_height),
    };
    ctx.json(".json", &summary)
}

#[derive(Serialize)]
struct ClusterSummary {
    n_clusters: usize,
    n_clusters_with_txs: usize,
    largest_n_addresses: usize,
    largest_n_txs: usize,
}

fn cmd_cluster(ctx: &mut Ctx, inputs: &Inputs, a: &LedgerArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    let (addrs, txs) = cluster_rows(&store, &clusters);
    ctx.table("-addresses", &addrs)?;
    ctx.table("-txs", &txs)?;
    let summary = ClusterSummary {
        n_clusters: clusters.len(),
        n_clusters_with_txs: clusters.iter().filter(|c| !c.transactions.is_empty()).count(),
        largest_n_addresses: clusters.iter().map(|c| c.addresses.len()).max().unwrap_or(0),
        largest_n_txs: clusters.iter().map(|c| c.transactions.len()).max().unwrap_or(0),
    };
    ctx.json("-summary.json", &summary)
}

fn cmd_features(ctx: &mut Ctx, inputs: &Inputs, a: &FeaturesArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    let truth = a.truth.as_deref().map(|p| inputs.truth(p)).transpose()?;
    let tags = a.tags.as_deref().map(|p| inputs.tags(p)).transpose()?;
    let ids = selected_clusters(&clusters, None, a.min_txs)?;
    let rule = CoinjoinRule::default();
    let labelled: Vec<(FeatureCsvRow, Verdict)> = ids
        .par_iter()
        .map(|&id| {
            let c = clusters.cluster(id);
            let row = ml_feature_row(&store, c).expect("selected clusters have transactions");
            let label = if let Some(t) = &truth {
                let mixed = c
                    .transactions
                    .iter()
                    .any(|&x| t.tx_coinjoin.get(&store.txid(x).to_hex()).copied().unwrap_or(false));
                Some(if mixed { Verdict::FalsePositive } else { Verdict::TruePositive })
            } else {
                tags.as_ref().map(|tags| {
                    if tags.cluster_entities(&store, c).len() > 1 {
                        Verdict::FalsePositive
                    } else {
                        Verdict::TruePositive
                    }
                })
            };
            (FeatureCsvRow::new(&row, label), classify_cluster(&store, c, &rule))
        })
        .collect();
    let rows: Vec<FeatureCsvRow> = labelled.iter().map(|(r, _)| r.clone()).collect();
    ctx.table("", &rows)?;
    if labelled.iter().any(|(r, _)| r.label.is_some()) {
        let mut m = ConfusionMatrix::default();
        for (r, predicted) in &labelled {
            if let Some(truth) = r.label {
                m.record(*predicted, truth);
            }
        }
        ctx.write("-confusion.csv", m.to_table().as_bytes())?;
        ctx.outcome
            .notes
            .push(format!("coinjoin classifier accuracy {:.1}%", 100.0 * m.accuracy()));
    }
    Ok(())
}

fn cmd_validate(ctx: &mut Ctx, inputs: &Inputs, a: &ValidateArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    if let Some(id) = a.cluster {
        let id = parse_cluster(&clusters, id)?;
        let p = partition_peel_chains(&store, &clusters, id).map_err(input_err)?;
        return ctx.json(&format!("-cluster-{id}.json"), &ValidationReport::new(&store, &p));
    }
    let skipped = clusters.iter().filter(|c| c.transactions.is_empty()).count();
    if skipped > 0 {
        ctx.outcome
            .notes
            .push(format!("warning: skipped {skipped} clusters without transactions"));
    }
    let ids = selected_clusters(&clusters, None, a.min_txs)?;
    let rows: Vec<ValidationRow> = ids
        .par_iter()
        .map(|&id| {
            let p = partition_peel_chains(&store, &clusters, id).expect("selected clusters have transactions");
            ValidationRow::from(&p)
        })
        .collect();
    ctx.table("", &rows)
}

fn cmd_expand(ctx: &mut Ctx, inputs: &Inputs, a: &ExpandArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    let tags = match &a.tags {
        Some(p) => inputs.tags(p)?,
        None => TagStore::new(),
    };
    let ids = selected_clusters(&clusters, a.cluster, a.min_txs)?;
    let evals = evaluate_clusters(&store, &clusters, &ids, a.rule, a.limits.limits(), &tags);
    let rows: Vec<ExpansionRow> = evals.iter().map(ExpansionRow::from).collect();
    let reports: Vec<ExpansionReport> = evals
        .iter()
        .map(|e| ExpansionReport::new(&store, &e.result, &e.eval, 10))
        .collect();
    ctx.outcome.truncated = evals.iter().any(|e| e.result.truncated);
    ctx.table("", &rows)?;
    ctx.json("-reports.json", &reports)?;
    ctx.outcome.strict = a.limits.strict;
    let n = evals.iter().filter(|e| e.result.truncated).count();
    if n > 0 {
        ctx.outcome.notes.push(format!("{n} cluster expansions hit --max-hops"));
    }
    Ok(())
}

fn cmd_evaluate(ctx: &mut Ctx, inputs: &Inputs, a: &EvaluateArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    let tags = inputs.tags(&a.tags)?;
    let rules: Vec<ChangeRule> = if a.rules.is_empty() {
        ChangeRule::ALL.to_vec()
    } else {
        a.rules.clone()
    };
    let ids = selected_clusters(&clusters, None, a.min_txs)?;
    let summaries = compare_rules(&store, &clusters, &ids, &rules, a.limits.limits(), &tags);
    let rows: Vec<ComparisonRow> = summaries.iter().map(ComparisonRow::from).collect();
    ctx.table("", &rows)?;
    ctx.outcome.strict = a.limits.strict;
    ctx.outcome.truncated = summaries.iter().any(|s| s.truncated > 0);
    ctx.outcome
        .notes
        .push(format!("{} clusters with at least {} transactions", ids.len(), a.min_txs));
    Ok(())
}

#[derive(Serialize)]
struct TraceSummary {
    seed_txid: String,
    cluster_id: ClusterId,
    rule: ChangeRule,
    forward: Vec<String>,
    forward_truncated: bool,
    backward: Option<Vec<(String, usize)>>,
    backward_truncated: bool,
}

fn cmd_trace(ctx: &mut Ctx, inputs: &Inputs, a: &TraceArgs) -> Result<(), CliError> {
    let store = inputs.ledger(&a.ledger)?;
    let clusters = ClusterSet::build(&store);
    let txid: Txid = a.seed_tx.parse().map_err(input_err)?;
    let seed: TxIdx = store
        .lookup(&txid)
        .ok_or_else(|| CliError::Input(format!("transaction {txid} is not in the ledger")))?;
    let cluster = clusters
        .cluster_of_tx(seed)
        .ok_or_else(|| CliError::Input(format!("transaction {txid} is a coinbase and has no cluster")))?;
    let tracer = Tracer::for_cluster(&store, &clusters, cluster)
        .with_rule(a.rule)
        .with_limits(a.limits.limits());
    let fwd = tracer.follow_forward(seed, HeuristicMode::Expansion);
    let bwd = a
        .backward
        .then(|| tracer.follow_backward(seed, HeuristicMode::Expansion));
    let mut hops = trace_rows(&store, &fwd.hops);
    if let Some(b) = &bwd {
        hops.extend(trace_rows(&store, &b.hops));
    }
    let summary = TraceSummary {
        seed_txid: txid.to_hex(),
        cluster_id: cluster,
        rule: a.rule,
        forward: fwd.path.iter().map(|&t| store.txid(t).to_hex()).collect(),
        forward_truncated: fwd.truncated,
        backward: bwd.as_ref().map(|b| {
            b.txs
                .iter()
                .zip(&b.depths)
                .map(|(&t, &d)| (store.txid(t).to_hex(), d))
                .collect()
        }),
        backward_truncated: bwd.as_ref().is_some_and(|b| b.truncated),
    };
    ctx.outcome.truncated = summary.forward_truncated || summary.backward_truncated;
    ctx.json("-hops.json", &hops)?;
    ctx.json("-summary.json", &summary)?;
    ctx.outcome.strict = a.limits.strict;
    Ok(())
}

fn cmd_generate(ctx: &mut Ctx, inputs: &Inputs, a: &GenerateArgs) -> Result<(), CliError> {
    let spec = match (&a.scenario, &a.scenario_file) {
        (Some(name), None) => synthgen::scenario(name, &parse_params(&a.params)?).map_err(input_err)?,
        (None, Some(path)) => {
            if !a.params.is_empty() {
                return Err(CliError::Usage("--param applies to built-in scenarios only".into()));
            }
            let text = std::str::from_utf8(inputs.bytes(path)).map_err(input_err)?;
            ScenarioSpec::from_json(text).map_err(input_err)?
        }
        _ => unreachable!("checked before reading inputs"),
    };
    let (records, truth) = synthgen::generate(&spec, ctx.cli.seed).map_err(input_err)?;
    let ledger = synthgen::to_jsonl(&records);
    let mut tags = String::from("address,entity\n");
    for (addr, entity) in &truth.address_entity {
        tags.push_str(&format!("{addr},{entity}\n"));
    }
    let mut truth_json = serde_json::to_vec_pretty(&truth).expect("truth serializes");
    truth_json.push(b'\n');
    let mut spec_json = serde_json::to_vec_pretty(&spec).expect("spec serializes");
    spec_json.push(b'\n');
    ctx.write("-ledger.jsonl", ledger.as_bytes())?;
    ctx.write("-truth.json", &truth_json)?;
    ctx.write("-tags.csv", tags.as_bytes())?;
    ctx.write("-spec.json", &spec_json)?;
    let digest = &ctx.manifest[0].1;
    ctx.outcome
        .notes
        .push(format!("{} transactions, ledger sha256 {digest}", records.len()));
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => execute(&cli),
    };
    match result {
        Ok(outcome) => {
            for p in &outcome.written {
                println!("wrote {}", p.display());
            }
            for n in &outcome.notes {
                eprintln!("{n}");
            }
            if outcome.truncated && outcome.strict {
                eprintln!("error: traversal limits reached with --strict");
                3
            } else {
                if outcome.truncated {
                    eprintln!("note: some traversals were truncated (see truncated fields)");
                }
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
