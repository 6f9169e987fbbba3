//! `cdvgae` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cdvgae::autodiff::{finite_diff_check, six_node_fixture};
use cdvgae::dataset::{fallback_features, load_concepts, load_relations};
use cdvgae::eval::{concept_neighbors, sample_negatives, train_graph_model};
use cdvgae::graph::{EdgeWeighting, NeighborDirection, NeighborScope};
use cdvgae::synthetic::planted_config;
use cdvgae::{
    generate, make_split, run_protocol, run_seed, train_cls, Dataset, Domain, EmbeddingTable,
    ModelKind, PlantedSpec, ProtocolConfig, SeededRng,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cdvgae", version, about = "Cross-domain prerequisite prediction with graph autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the source domain and save it.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long, default_value = "cdvgae")]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the seeded evaluation protocol and write a JSON report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long, default_value = "cdvgae")]
        model: ModelKind,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Seeds run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Predict every ordered target pair and write the positive ones.
    Recover {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long, default_value = "cdvgae")]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the prerequisites and successors of one concept.
    Neighbors {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Domain directory under `--data`.
        #[arg(long)]
        domain: String,
        #[arg(long)]
        concept: String,
        /// Relations file to read instead of the domain's gold relations,
        /// e.g. the output of `recover`.
        #[arg(long)]
        relations: Option<PathBuf>,
    },
    /// Write the seeded train/validation/test split of a domain.
    Split {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on small fixtures.
    CheckGrad {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Generate a planted two-domain corpus.
    Synth {
        #[arg(long, default_value_t = 20)]
        n_source: usize,
        #[arg(long, default_value_t = 20)]
        n_target: usize,
        #[arg(long, default_value_t = 10)]
        n_shared: usize,
        #[arg(long, default_value_t = 0.15)]
        density: f64,
        #[arg(long, default_value_t = 0.9)]
        mirror: f64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

#[derive(Args, Serialize)]
struct DataArgs {
    /// Directory holding one subdirectory per domain.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "nlp")]
    source: String,
    #[arg(long)]
    target: String,
    /// Embedding file covering every concept and resource. Without it,
    /// hashed token features are used.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Seed of the hashed token features.
    #[arg(long, default_value_t = 0)]
    feature_seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ScopeArg {
    Global,
    PerTarget,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum DirectionArg {
    Both,
    TargetOnly,
}

#[derive(Args, Serialize)]
struct ProtocolArgs {
    /// JSON protocol configuration; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dn_keep_fraction: Option<f64>,
    #[arg(long)]
    dn_scope: Option<ScopeArg>,
    #[arg(long)]
    dn_direction: Option<DirectionArg>,
    /// Sum neighbour messages without degree normalisation.
    #[arg(long)]
    exact_sum: bool,
    /// Ignore edge weights when passing messages.
    #[arg(long)]
    binary_edges: bool,
    /// Share of source relations held out for model selection.
    #[arg(long)]
    source_val_fraction: Option<f64>,
}

/// Errors in how the command was invoked rather than in the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl ProtocolArgs {
    fn resolve(&self) -> Result<ProtocolConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ProtocolConfig::default(),
        };
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.patience {
            c.train.patience = v;
        }
        if let Some(v) = self.dn_keep_fraction {
            c.train.dn_keep_fraction = v;
        }
        if let Some(v) = self.dn_scope {
            c.graph.dn_scope = match v {
                ScopeArg::Global => NeighborScope::Global,
                ScopeArg::PerTarget => NeighborScope::PerTarget,
            };
        }
        if let Some(v) = self.dn_direction {
            c.train.dn_direction = match v {
                DirectionArg::Both => NeighborDirection::Both,
                DirectionArg::TargetOnly => NeighborDirection::TargetOnly,
            };
        }
        if self.exact_sum {
            c.train.exact_sum = true;
        }
        if self.binary_edges {
            c.train.weighting = EdgeWeighting::Binary;
        }
        if let Some(v) = self.source_val_fraction {
            c.source_val_fraction = v;
        }
        c.train.validate().map_err(|e| usage(e.to_string()))?;
        if !(0.0..1.0).contains(&c.source_val_fraction) {
            return Err(usage("source-val-fraction must lie in [0, 1)"));
        }
        Ok(c)
    }
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, EmbeddingTable)> {
        let dataset = Dataset::load(&self.data, &self.source, &self.target)?;
        let table = match &self.embeddings {
            Some(path) => dataset.load_embeddings(path, self.dim)?,
            None => fallback_features(
                &[&dataset.source.concepts, &dataset.target.concepts],
                &dataset.resources,
                self.dim,
                self.feature_seed,
            ),
        };
        Ok((dataset, table))
    }
}

/// Prints the resolved invocation to stderr as one JSON line.
fn echo(command: &str, value: serde_json::Value) {
    eprintln!("{}", json!({ "command": command, "resolved": value }));
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(data: DataArgs, protocol: ProtocolArgs, model: ModelKind, seed: u64, out: PathBuf) -> Result<()> {
    let config = protocol.resolve()?.resolved(model, seed);
    echo("train", json!({ "data": data, "model": model, "seed": seed, "out": out, "config": config }));
    let (dataset, table) = data.load()?;
    match model {
        ModelKind::Cdvgae | ModelKind::Vgae => {
            let run = train_graph_model(&dataset, &table, model, &config, seed)?;
            let ckpt = out.join(format!("{model}.ckpt"));
            write_text(&ckpt, &run.model.params.to_checkpoint())?;
            write_text(&out.join(format!("{model}_log.jsonl")), &run.model.log_jsonl())?;
            println!(
                "{}",
                json!({ "checkpoint": ckpt, "best_epoch": run.model.best_epoch, "epochs_run": run.model.log.len() })
            );
        }
        ModelKind::Cls => {
            let source = &dataset.source.relations;
            let mut rng = SeededRng::new(seed).fork(8);
            let neg = sample_negatives(source.n_concepts, source.pairs(), source.len(), &mut rng)?;
            let (m, history) = train_cls(source.pairs(), &neg, &table, Domain::Source, &config.cls)?;
            let path = out.join("cls.json");
            write_text(&path, &serde_json::to_string_pretty(&m)?)?;
            println!("{}", json!({ "model": path, "final_loss": history.last() }));
        }
    }
    Ok(())
}

fn eval(
    data: DataArgs,
    protocol: ProtocolArgs,
    model: ModelKind,
    seeds: Vec<u64>,
    jobs: usize,
    out: PathBuf,
) -> Result<()> {
    if seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    let config = protocol.resolve()?;
    echo(
        "eval",
        json!({ "data": data, "model": model, "seeds": seeds, "jobs": jobs, "out": out, "config": config }),
    );
    let (dataset, table) = data.load()?;
    let start = Instant::now();
    let report = run_protocol(&dataset, &table, model, &seeds, &config, jobs)?;
    let path = out.join(format!("report_{model}_{}_{}.json", data.source, data.target));
    write_text(&path, &report.to_json())?;
    eprintln!("elapsed_seconds {:.2}", start.elapsed().as_secs_f64());
    println!(
        "{}",
        json!({ "report": path, "f1": report.mean.f1, "acc": report.mean.acc, "pre": report.mean.pre, "rec": report.mean.rec })
    );
    Ok(())
}

fn recover(data: DataArgs, protocol: ProtocolArgs, model: ModelKind, seed: u64, out: PathBuf) -> Result<()> {
    let config = protocol.resolve()?;
    echo(
        "recover",
        json!({ "data": data, "model": model, "seed": seed, "out": out, "config": config.resolved(model, seed) }),
    );
    let (dataset, table) = data.load()?;
    let outcome = run_seed(&dataset, &table, model, seed, &config)?;
    let tsv = out.join(format!("recovered_{model}_{}.tsv", data.target));
    write_text(&tsv, &outcome.recovered.to_tsv())?;
    let summary = json!({
        "model": model,
        "source": data.source,
        "target": data.target,
        "seed": seed,
        "recovered_edges": outcome.recovered.len(),
        "gold_edges": dataset.target.relations.len(),
        "test": outcome.entry.metrics,
        "relations": tsv,
    });
    let path = out.join(format!("recovered_{model}_{}.json", data.target));
    write_text(&path, &serde_json::to_string_pretty(&summary)?)?;
    println!("{summary}");
    Ok(())
}

fn neighbors(data: PathBuf, domain: String, concept: String, relations: Option<PathBuf>) -> Result<()> {
    echo(
        "neighbors",
        json!({ "data": data, "domain": domain, "concept": concept, "relations": relations }),
    );
    let dir = data.join(&domain);
    let vocab = load_concepts(&dir.join("concepts.tsv"), Domain::Target)?;
    let rel = load_relations(&relations.unwrap_or_else(|| dir.join("relations.tsv")), &vocab)?;
    let Some(id) = vocab.find(&concept) else {
        bail!("concept '{concept}' not found in {}", dir.display());
    };
    let (pre, suc) = concept_neighbors(&rel, id)?;
    let names = |ids: Vec<usize>| -> Vec<String> {
        ids.into_iter()
            .map(|i| vocab.name(i).unwrap_or_default().to_owned())
            .collect()
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "concept": concept,
            "prerequisites": names(pre),
            "successors": names(suc),
        }))?
    );
    Ok(())
}

fn split(data: PathBuf, domain: String, seed: u64, out: PathBuf) -> Result<()> {
    echo("split", json!({ "data": data, "domain": domain, "seed": seed, "out": out }));
    let dir = data.join(&domain);
    let vocab = load_concepts(&dir.join("concepts.tsv"), Domain::Target)?;
    let rel = load_relations(&dir.join("relations.tsv"), &vocab)?;
    let s = make_split(&rel, seed)?;
    let path = out.join(format!("split_{domain}_{seed}.json"));
    write_text(&path, &serde_json::to_string_pretty(&s)?)?;
    println!(
        "{}",
        json!({
            "split": path,
            "train": s.train_pos.len(),
            "val": s.val_pos.len(),
            "test": s.test_pos.len(),
        })
    );
    Ok(())
}

fn check_grad(seeds: Vec<u64>, eps: f64, tol: f64) -> Result<()> {
    echo("check-grad", json!({ "seeds": seeds, "eps": eps, "tol": tol }));
    let mut failed = Vec::new();
    for &seed in &seeds {
        let (problem, params) = six_node_fixture(seed);
        let report = finite_diff_check(&problem, &params, eps).map_err(|e| usage(e.to_string()))?;
        let pass = report.passes(tol);
        if !pass {
            failed.push(seed);
        }
        println!("{}", json!({ "seed": seed, "max_rel_err": report.max_rel_err(), "pass": pass, "blocks": report.blocks }));
    }
    if !failed.is_empty() {
        bail!("gradient check failed for seeds {failed:?}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    n_source: usize,
    n_target: usize,
    n_shared: usize,
    density: f64,
    mirror: f64,
    dim: usize,
    noise: f64,
    seed: u64,
    out: PathBuf,
) -> Result<()> {
    let spec = PlantedSpec::new(n_source, n_target, n_shared, density, mirror, dim, noise, seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    echo("synth", json!({ "spec": spec, "out": out }));
    let planted = generate(&spec)?;
    let emb = planted.write(&out)?;
    let config = out.join("config.json");
    write_text(&config, &serde_json::to_string_pretty(&planted_config(&spec))?)?;
    println!(
        "{}",
        json!({
            "data": out,
            "source": planted.dataset.source.name,
            "target": planted.dataset.target.name,
            "embeddings": emb,
            "dim": dim,
            "config": config,
            "source_edges": planted.dataset.source.relations.len(),
            "target_edges": planted.dataset.target.relations.len(),
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            protocol,
            model,
            seed,
            out,
        } => train(data, protocol, model, seed, out),
        Command::Eval {
            data,
            protocol,
            model,
            seeds,
            jobs,
            out,
        } => eval(data, protocol, model, seeds, jobs, out),
        Command::Recover {
            data,
            protocol,
            model,
            seed,
            out,
        } => recover(data, protocol, model, seed, out),
        Command::Neighbors {
            data,
            domain,
            concept,
            relations,
        } => neighbors(data, domain, concept, relations),
        Command::Split { data, domain, seed, out } => split(data, domain, seed, out),
        Command::CheckGrad { seeds, eps, tol } => check_grad(seeds, eps, tol),
        Command::Synth {
            n_source,
            n_target,
            n_shared,
            density,
            mirror,
            dim,
            noise,
            seed,
            out,
        } => synth(n_source, n_target, n_shared, density, mirror, dim, noise, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
