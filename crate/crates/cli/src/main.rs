use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use cadvae::checkpoint::{Checkpoint, VERSION};
use cadvae::data::{
    binarize_and_filter, load_concept_schema, load_ratings, read_processed, split_users, write_processed, SplitKind,
};
use cadvae::eval::{evaluate, export_projection, ProjectionMethod};
use cadvae::synthetic::{gen_synthetic, SyntheticSpec};
use cadvae::trainer::{concept_independence, sha256_hex, spearman, sweep, train_with, TrainConfig};
use cadvae::Error;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

const MANIFEST: &str = "manifest.json";
const CHECKPOINT: &str = "model.safetensors";
const METRICS_LOG: &str = "metrics.jsonl";

#[derive(Parser)]
#[command(name = "cadvae", version, about = "Causally disentangled VAE for implicit-feedback recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize ratings, split users and build the concept schema.
    Prepare {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0.8)]
        foldin: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prior edges as `from:to` pairs, replacing the default director:genre,genre:actor.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<String>>,
        /// The ratings file starts with a header line.
        #[arg(long)]
        header: bool,
    },
    /// Train a model and write the best checkpoint plus a per-epoch metrics log.
    Train {
        #[arg(long, env = "CADVAE_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ranking metrics and per-concept independence on a held-out split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "CADVAE_DATA_DIR")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitKind,
        #[arg(long, value_delimiter = ',', default_values_t = [20, 50, 100])]
        k: Vec<usize>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D projection of every user's concept representations.
    Project {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "CADVAE_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "tsne")]
        method: ProjectionMethod,
    },
    /// Generate a synthetic dataset from a known three-node chain SCM.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        clicks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One training run per beta value; writes a results table.
    Sweep {
        #[arg(long, env = "CADVAE_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 5.0, 10.0, 20.0, 50.0])]
        beta: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        Some(Error::Shape(_) | Error::Checkpoint(_)) => 4,
        Some(
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyFile(_)
            | Error::EmptyDataset
            | Error::Split(_)
            | Error::Cycle(_)
            | Error::Config(_)
            | Error::Toml(_)
            | Error::Json(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            ratings,
            metadata,
            out,
            ratios,
            foldin,
            seed,
            edges,
            header,
        } => prepare(&ratings, &metadata, &out, &ratios, foldin, seed, edges, header),
        Command::Train { data, config, out, seed } => train_cmd(&data, config.as_deref(), &out, seed),
        Command::Eval { ckpt, data, split, k, out } => eval_cmd(&ckpt, &data, split, &k, out.as_deref()),
        Command::Project { ckpt, data, out, method } => project_cmd(&ckpt, &data, &out, method),
        Command::Synth {
            out,
            users,
            items,
            d,
            clicks,
            seed,
        } => synth_cmd(&out, users, items, d, clicks, seed),
        Command::Sweep { data, config, beta, out } => sweep_cmd(&data, config.as_deref(), &beta, &out),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Every run records what produced it; no timestamps, so reruns match.
fn manifest(command: &str, config_hash: &str, seed: u64, extra: Value) -> Value {
    json!({
        "command": command,
        "version": VERSION,
        "config_hash": config_hash,
        "seed": seed,
        "details": extra,
    })
}

fn hash_str(s: &str) -> String {
    sha256_hex(s.as_bytes())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    ratings: &Path,
    metadata: &Path,
    out: &Path,
    ratios: &[f64],
    foldin: f64,
    seed: u64,
    edges: Option<Vec<String>>,
    header: bool,
) -> Result<()> {
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| Error::Config(format!("--ratios needs three values, got {}", ratios.len())))?;
    let edges: Option<Vec<(String, String)>> = edges
        .map(|list| {
            list.iter()
                .map(|e| {
                    e.split_once(':')
                        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                        .ok_or_else(|| Error::Config(format!("edge {e:?} is not from:to")))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    if !metadata.exists() {
        return Err(Error::Io {
            path: metadata.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "metadata file not found"),
        }
        .into());
    }
    let table = load_ratings(ratings, header)?;
    let dataset = binarize_and_filter(&table)?;
    let dataset = split_users(&dataset, ratios, foldin, seed)?;
    let schema = load_concept_schema(metadata, &dataset.item_ids, edges.as_deref())?;
    create_dir(out)?;
    write_processed(out, &dataset, &schema)?;

    let args = json!({
        "ratings": ratings,
        "metadata": metadata,
        "ratios": ratios,
        "foldin": foldin,
        "edges": edges,
    });
    let details = json!({
        "args": args,
        "n_users": dataset.n_users(),
        "n_items": dataset.n_items(),
        "n_interactions": dataset.n_interactions(),
        "concepts": schema.concept_names(),
        "category_counts": schema.category_counts(),
    });
    let hash = hash_str(&args.to_string());
    write_json(&out.join(MANIFEST), &manifest("prepare", &hash, seed, details))?;
    println!(
        "{} users, {} items, {} interactions -> {}",
        dataset.n_users(),
        dataset.n_items(),
        dataset.n_interactions(),
        out.display()
    );
    Ok(())
}

fn train_cmd(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (dataset, schema) = read_processed(data)?;
    create_dir(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let log_path = out.join(METRICS_LOG);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let result = train_with(&dataset, &schema, &cfg, |record| {
        let line = serde_json::to_string(record)?;
        writeln!(log, "{line}").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        eprintln!(
            "epoch {:>3}  loss {:>10.3}  beta {:>6.2}  val ndcg@100 {:.4}",
            record.epoch, record.loss.total, record.beta, record.validation["ndcg@100"]
        );
        Ok(())
    });
    let base = json!({ "data": data, "config": cfg });
    match result {
        Ok(ckpt) => {
            ckpt.save(out.join(CHECKPOINT))?;
            let best = ckpt.meta.history[ckpt.meta.epoch].validation.clone();
            let details = json!({ "inputs": base, "best_epoch": ckpt.meta.epoch, "validation": best });
            write_json(&out.join(MANIFEST), &manifest("train", &cfg.hash(), cfg.seed, details))?;
            println!("{}", serde_json::to_string_pretty(&best)?);
            Ok(())
        }
        Err(Error::Diverged { step, reason, last_good }) => {
            if let Some(ckpt) = &last_good {
                ckpt.save(out.join(CHECKPOINT))?;
            }
            let report = json!({ "step": step, "reason": reason, "checkpoint_saved": last_good.is_some() });
            write_json(&out.join("divergence.json"), &report)?;
            let details = json!({ "inputs": base, "diverged": report });
            write_json(&out.join(MANIFEST), &manifest("train", &cfg.hash(), cfg.seed, details))?;
            Err(Error::Diverged {
                step,
                reason,
                last_good: None,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_cmd(ckpt_path: &Path, data: &Path, split: SplitKind, ks: &[usize], out: Option<&Path>) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        bail!(Error::Config("--k needs positive cutoffs".into()));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (dataset, schema) = read_processed(data)?;
    if ckpt.model.config().concept_names != schema.concept_names()
        || ckpt.model.config().category_counts != schema.category_counts()
    {
        bail!(Error::Shape("checkpoint concepts do not match the dataset schema".into()));
    }
    let result = evaluate(&ckpt.model, &dataset, &schema, split, ks)?;
    let independence = concept_independence(&ckpt.model, &dataset, &schema)?;
    let per_concept: BTreeMap<String, f64> = schema.concept_names().into_iter().zip(independence.iter().copied()).collect();
    let report = json!({
        "split": split.to_string(),
        "k": ks,
        "metrics": result.mean,
        "independence": per_concept,
        "independence_mean": independence.iter().sum::<f64>() / independence.len() as f64,
        "n_users": result.per_user.len(),
        "skipped_users": result.skipped,
        "config_hash": ckpt.meta.config_hash,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn project_cmd(ckpt_path: &Path, data: &Path, out: &Path, method: ProjectionMethod) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (dataset, schema) = read_processed(data)?;
    let projection = export_projection(&ckpt.model, &dataset, &schema, method, out)?;
    println!(
        "{} rows -> {} (silhouette {:.4})",
        projection.coords.nrows(),
        out.display(),
        projection.silhouette
    );
    Ok(())
}

fn synth_cmd(out: &Path, users: usize, items: usize, d: usize, clicks: usize, seed: u64) -> Result<()> {
    let mut spec = SyntheticSpec::chain(users, seed);
    spec.n_items = items;
    spec.d = d;
    spec.clicks_per_user = clicks;
    let data = gen_synthetic(&spec)?;
    create_dir(out)?;
    write_processed(out, &data.dataset, &data.schema)?;
    let truth = json!({
        "weights": data.truth.weights.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "g": data.truth.g.params.iter().map(|p| p.coefficients()).collect::<Vec<_>>(),
        "d": d,
    });
    write_json(&out.join("truth.json"), &truth)?;
    let args = json!({ "users": users, "items": items, "d": d, "clicks": clicks });
    write_json(&out.join(MANIFEST), &manifest("synth", &hash_str(&args.to_string()), seed, args))?;
    println!("{} users, {} items -> {}", users, items, out.display());
    Ok(())
}

fn sweep_cmd(data: &Path, config: Option<&Path>, betas: &[f64], out: &Path) -> Result<()> {
    if betas.is_empty() {
        return Err(anyhow!(Error::Config("--beta needs at least one value".into())));
    }
    let cfg = load_config(config)?;
    let (dataset, schema) = read_processed(data)?;
    create_dir(out)?;
    let rows = sweep(&dataset, &schema, &cfg, betas);
    let mut table = String::from("beta\tindependence\tndcg@100\trecall@20\tconfig_hash\terror\n");
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.beta,
            fmt(r.independence),
            fmt(r.ndcg_at_100),
            fmt(r.recall_at_20),
            r.config_hash,
            r.error.as_deref().unwrap_or("")
        ));
    }
    fs::write(out.join("sweep.tsv"), &table)?;
    let ok: Vec<_> = rows.iter().filter_map(|r| Some((r.independence?, r.ndcg_at_100?))).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = ok.into_iter().unzip();
    let rho = spearman(&x, &y);
    let details = json!({ "data": data, "betas": betas, "rows": rows, "spearman": rho });
    write_json(&out.join(MANIFEST), &manifest("sweep", &cfg.hash(), cfg.seed, details))?;
    print!("{table}");
    println!("spearman(independence, ndcg@100) = {}", rho.map_or("undefined".into(), |v| format!("{v:.4}")));
    Ok(())
}
