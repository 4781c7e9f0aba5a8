use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use retroknn::adapter::train_adapter;
use retroknn::backbone::train_backbone;
use retroknn::config::PipelineConfig;
use retroknn::graphio::{build_few_shot_split, build_zero_shot_split, generate_synthetic_with, parse_dataset};
use retroknn::harness::{bench_latency, evaluate_topk, grid_search_fixed, DEFAULT_KS};
use retroknn::retrieve::{read_predictions, write_predictions, Fusion, RecordContext};
use retroknn::store::{build_stores, TemplateStore};
use retroknn::{Adapter, Backbone};

#[derive(Parser)]
#[command(name = "retroknn", version, about = "Retrieval-augmented local template prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Neighbors retrieved per site.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Args)]
struct Models {
    #[arg(long)]
    backbone: PathBuf,
    #[arg(long)]
    atom_store: PathBuf,
    #[arg(long)]
    bond_store: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded synthetic train/val/test JSONL files.
    GenSynth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    TrainBackbone {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the atom and bond stores from a training set.
    BuildStore {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        atom_out: PathBuf,
        #[arg(long)]
        bond_out: PathBuf,
    },
    /// Fixed (T, lambda) search by validation loss.
    GridSearch {
        #[arg(long)]
        val: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    TrainAdapter {
        #[arg(long)]
        val: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank templates for every record; fusion is adaptive with --adapter,
    /// fixed with --temperature/--lambda, classifier-only otherwise.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long, requires = "lambda")]
        temperature: Option<f64>,
        #[arg(long, requires = "temperature")]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop (or down-sample with --keep-fraction) the held classes.
    SplitFewshot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        held: Option<Vec<u8>>,
        #[arg(long, default_value_t = 0.0)]
        keep_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg.synced())
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load_models(m: &Models) -> Result<(Backbone, TemplateStore, TemplateStore)> {
    Ok((
        Backbone::load(&m.backbone).with_context(|| format!("loading {}", m.backbone.display()))?,
        TemplateStore::load(&m.atom_store).with_context(|| format!("loading {}", m.atom_store.display()))?,
        TemplateStore::load(&m.bond_store).with_context(|| format!("loading {}", m.bond_store.display()))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.cmd {
        Cmd::GenSynth { out_dir } => {
            std::fs::create_dir_all(&out_dir)?;
            let (train, val, test) = generate_synthetic_with(&cfg.synth)?;
            for (name, d) in [("train", &train), ("val", &val), ("test", &test)] {
                d.write_jsonl(out_dir.join(format!("{name}.jsonl")))?;
                println!("{name}: {} records", d.len());
            }
        }
        Cmd::TrainBackbone { train, val, out } => {
            let (train, val) = (parse_dataset(&train)?, parse_dataset(&val)?);
            let outcome = train_backbone::<f64>(&train, &val, &cfg.backbone)?;
            for e in &outcome.history {
                match e.val_loss {
                    Some(v) => println!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, v),
                    None => println!("epoch {:>3}  train {:.6}", e.epoch, e.train_loss),
                }
            }
            println!("best epoch {}", outcome.best_epoch);
            outcome.params.save(&out)?;
        }
        Cmd::BuildStore {
            train,
            backbone,
            atom_out,
            bond_out,
        } => {
            let train = parse_dataset(&train)?;
            let bb = Backbone::load(&backbone)?;
            let (a, b) = build_stores(&train, &bb, &cfg.index)?;
            a.save(&atom_out)?;
            b.save(&bond_out)?;
            println!("atom store: {} entries, bond store: {} entries", a.len(), b.len());
        }
        Cmd::GridSearch { val, models, out } => {
            let val = parse_dataset(&val)?;
            let (bb, a, b) = load_models(&models)?;
            let g = grid_search_fixed(&val, &bb, &a, &b, cfg.k, &cfg.grid.temperatures, &cfg.grid.lambdas)?;
            print!("{}", g.table_text());
            write_json(&g, out.as_deref())?;
        }
        Cmd::TrainAdapter { val, models, out } => {
            let val = parse_dataset(&val)?;
            let (bb, a, b) = load_models(&models)?;
            let outcome = train_adapter(&val, &bb, &a, &b, &cfg.adapter)?;
            for (e, l) in outcome.losses.iter().enumerate() {
                println!("epoch {e:>3}  val {l:.6}");
            }
            println!("best epoch {}", outcome.best_epoch);
            outcome.params.save(&out)?;
        }
        Cmd::Predict {
            data,
            models,
            adapter,
            temperature,
            lambda,
            out,
        } => {
            let data = parse_dataset(&data)?;
            let (bb, a, b) = load_models(&models)?;
            let adapter = adapter.map(Adapter::load).transpose()?;
            if adapter.is_some() && temperature.is_some() {
                bail!("--adapter and --temperature/--lambda are exclusive");
            }
            let fusion = match (&adapter, temperature, lambda) {
                (Some(p), _, _) => Some(Fusion::Adaptive(p)),
                (None, Some(t), Some(l)) => Some(Fusion::Fixed {
                    temperature: t,
                    lambda: l,
                }),
                _ => None,
            };
            let preds = data
                .records
                .iter()
                .map(|r| {
                    let ctx = RecordContext::build(r, &bb, &a, &b, cfg.k)?;
                    match &fusion {
                        Some(f) => ctx.predict(f, cfg.top_n),
                        None => Ok(ctx.predict_gnn_only(cfg.top_n)),
                    }
                })
                .collect::<retroknn::Result<Vec<_>>>()?;
            write_predictions(&preds, &out)?;
            println!("{} predictions written to {}", preds.len(), out.display());
        }
        Cmd::Evaluate { predictions, data, out } => {
            let preds = read_predictions(&predictions)?;
            let data = parse_dataset(&data)?;
            let report = evaluate_topk(&preds, &data, &DEFAULT_KS)?;
            print!("{}", report.table());
            write_json(&report, out.as_deref())?;
        }
        Cmd::SplitFewshot {
            data,
            held,
            keep_fraction,
            out,
        } => {
            let d = parse_dataset(&data)?;
            let held: BTreeSet<u8> = match held {
                Some(h) => h.into_iter().collect(),
                None => cfg.fewshot.held_classes.clone(),
            };
            if held.iter().any(|c| !(1..=10).contains(c)) {
                bail!("held classes must lie in 1..=10");
            }
            let split = if keep_fraction <= 0.0 {
                build_zero_shot_split(&d, &held)
            } else {
                build_few_shot_split(&d, &held, keep_fraction, cfg.backbone.seed)
            };
            split.write_jsonl(&out)?;
            println!("kept {} of {} records", split.len(), d.len());
        }
        Cmd::Bench {
            data,
            models,
            adapter,
            runs,
            out,
        } => {
            let data = parse_dataset(&data)?;
            let (bb, a, b) = load_models(&models)?;
            let ad = Adapter::load(&adapter)?;
            let (fused, gnn) = bench_latency(&data, &bb, &a, &b, &ad, cfg.k, cfg.top_n, runs.unwrap_or(cfg.bench_runs))?;
            println!("{fused}\n{gnn}");
            write_json(&[&fused, &gnn], out.as_deref())?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
